#pragma once

#include "mobcast/rng.hpp"
#include "mobcast/types.hpp"

#include <string>
#include <deque>
#include <unordered_map>
#include <vector>

namespace mobcast {

struct Param {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix m;  // Adam first moment
    Matrix v;  // Adam second moment
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Named parameter matrices with paired gradient and moment buffers.
// Iteration order is insertion order, which makes initialization and
// optimizer sweeps deterministic.
class ParamStore {
public:
    Param& add(const std::string& name, Index rows, Index cols);

    // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) with fan_in = rows.
    Param& add_uniform(const std::string& name, Index rows, Index cols, RngStream& rng);

    Param& operator[](const std::string& name);
    const Param& operator[](const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::deque<Param>& params() { return params_; }
    const std::deque<Param>& params() const { return params_; }
    std::size_t size() const { return params_.size(); }

    void zero_grads();
    void mark_grads_ready() { grads_ready_ = true; }
    bool grads_ready() const { return grads_ready_; }

    std::int64_t adam_t() const { return adam_t_; }
    void set_adam_t(std::int64_t t) { adam_t_ = t; }

    friend void adam_step(ParamStore& store, const AdamConfig& cfg);

private:
    std::deque<Param> params_;
    std::unordered_map<std::string, std::size_t> index_;
    std::int64_t adam_t_ = 0;
    bool grads_ready_ = false;
};

// Bias-corrected Adam update over every parameter. Requires gradients to have
// been produced since the last step; moments persist across steps.
void adam_step(ParamStore& store, const AdamConfig& cfg);

}  // namespace mobcast
