#include "mobcast/param_store.hpp"

#include <cmath>

namespace mobcast {

Param& ParamStore::add(const std::string& name, Index rows, Index cols) {
    if (index_.count(name))
        throw StateError("duplicate parameter name: " + name);
    Param p;
    p.name = name;
    p.value = Matrix::Zero(rows, cols);
    p.grad = Matrix::Zero(rows, cols);
    p.m = Matrix::Zero(rows, cols);
    p.v = Matrix::Zero(rows, cols);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back();
}

Param& ParamStore::add_uniform(const std::string& name, Index rows, Index cols, RngStream& rng) {
    Param& p = add(name, rows, cols);
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c)
            p.value(r, c) = rng.uniform(-bound, bound);
    return p;
}

Param& ParamStore::operator[](const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
        throw StateError("unknown parameter: " + name);
    return params_[it->second];
}

const Param& ParamStore::operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
        throw StateError("unknown parameter: " + name);
    return params_[it->second];
}

void ParamStore::zero_grads() {
    for (Param& p : params_)
        p.grad.setZero();
    grads_ready_ = false;
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
    if (!store.grads_ready_)
        throw StateError("adam_step called without populated gradients");
    store.adam_t_ += 1;
    const double t = static_cast<double>(store.adam_t_);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (Param& p : store.params_) {
        ensure_finite(p.grad, "gradient of " + p.name);
        p.m = cfg.beta1 * p.m + (1.0 - cfg.beta1) * p.grad;
        p.v = cfg.beta2 * p.v.array().matrix() + (1.0 - cfg.beta2) * p.grad.array().square().matrix();
        const Matrix m_hat = p.m / bc1;
        const Matrix v_hat = p.v / bc2;
        p.value.array() -= cfg.lr * m_hat.array() / (v_hat.array().sqrt() + cfg.eps);
        ensure_finite(p.value, "parameter " + p.name);
    }
    store.grads_ready_ = false;
}

}  // namespace mobcast
