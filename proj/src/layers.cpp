#include "mobcast/layers.hpp"

namespace mobcast {

Matrix affine_forward(const Matrix& x, const Matrix& w, const RowVector& b) {
    if (x.cols() != w.rows())
        throw DimensionError("affine_forward: x is " + std::to_string(x.rows()) + "x" +
                             std::to_string(x.cols()) + " but w has " + std::to_string(w.rows()) +
                             " rows");
    if (b.size() != w.cols())
        throw DimensionError("affine_forward: bias length " + std::to_string(b.size()) +
                             " != output width " + std::to_string(w.cols()));
    return (x * w).rowwise() + b;
}

AffineGrads affine_backward(const Matrix& x, const Matrix& w, const Matrix& dy) {
    if (dy.rows() != x.rows() || dy.cols() != w.cols())
        throw DimensionError("affine_backward: upstream gradient shape mismatch");
    AffineGrads g;
    g.dx = dy * w.transpose();
    g.dw = x.transpose() * dy;
    g.db = dy.colwise().sum();
    return g;
}

GruParams make_gru_params(ParamStore& store, const std::string& prefix, Index input_dim,
                          Index hidden_dim, RngStream& rng) {
    GruParams p;
    p.wxu = &store.add_uniform(prefix + ".wxu", input_dim, hidden_dim, rng);
    p.whu = &store.add_uniform(prefix + ".whu", hidden_dim, hidden_dim, rng);
    p.bu = &store.add(prefix + ".bu", 1, hidden_dim);
    p.wxr = &store.add_uniform(prefix + ".wxr", input_dim, hidden_dim, rng);
    p.whr = &store.add_uniform(prefix + ".whr", hidden_dim, hidden_dim, rng);
    p.br = &store.add(prefix + ".br", 1, hidden_dim);
    p.wxc = &store.add_uniform(prefix + ".wxc", input_dim, hidden_dim, rng);
    p.whc = &store.add_uniform(prefix + ".whc", hidden_dim, hidden_dim, rng);
    p.bc = &store.add(prefix + ".bc", 1, hidden_dim);
    return p;
}

GruParams bind_gru_params(ParamStore& store, const std::string& prefix) {
    GruParams p;
    p.wxu = &store[prefix + ".wxu"];
    p.whu = &store[prefix + ".whu"];
    p.bu = &store[prefix + ".bu"];
    p.wxr = &store[prefix + ".wxr"];
    p.whr = &store[prefix + ".whr"];
    p.br = &store[prefix + ".br"];
    p.wxc = &store[prefix + ".wxc"];
    p.whc = &store[prefix + ".whc"];
    p.bc = &store[prefix + ".bc"];
    return p;
}

Matrix gru_cell_forward(const Matrix& x, const Matrix& h_prev, const GruParams& p,
                        GruCellCache* cache) {
    if (x.cols() != p.input_dim())
        throw DimensionError("gru_cell_forward: input dim " + std::to_string(x.cols()) +
                             " != " + std::to_string(p.input_dim()));
    if (h_prev.cols() != p.hidden_dim() || h_prev.rows() != x.rows())
        throw DimensionError("gru_cell_forward: hidden state shape mismatch");

    const RowVector bu = p.bu->value.row(0);
    const RowVector br = p.br->value.row(0);
    const RowVector bc = p.bc->value.row(0);

    Matrix u = sigmoid((x * p.wxu->value + h_prev * p.whu->value).rowwise() + bu);
    Matrix r = sigmoid((x * p.wxr->value + h_prev * p.whr->value).rowwise() + br);
    Matrix rh = r.cwiseProduct(h_prev);
    Matrix c = ((x * p.wxc->value + rh * p.whc->value).rowwise() + bc).array().tanh().matrix();
    Matrix h = u.cwiseProduct(h_prev) + (1.0 - u.array()).matrix().cwiseProduct(c);

    if (cache) {
        cache->x = x;
        cache->h_prev = h_prev;
        cache->u = std::move(u);
        cache->r = std::move(r);
        cache->c = std::move(c);
        cache->rh = std::move(rh);
    }
    return h;
}

GruCellGrads gru_cell_backward(const GruCellCache& cache, const GruParams& p, const Matrix& dh) {
    const Matrix& u = cache.u;
    const Matrix& r = cache.r;
    const Matrix& c = cache.c;

    const Matrix du = dh.cwiseProduct(cache.h_prev - c);
    const Matrix dc = dh.cwiseProduct((1.0 - u.array()).matrix());

    // pre-activation gradients
    const Matrix dc_hat = dc.cwiseProduct((1.0 - c.array().square()).matrix());
    const Matrix du_hat = du.cwiseProduct(u.cwiseProduct((1.0 - u.array()).matrix()));

    const Matrix drh = dc_hat * p.whc->value.transpose();
    const Matrix dr = drh.cwiseProduct(cache.h_prev);
    const Matrix dr_hat = dr.cwiseProduct(r.cwiseProduct((1.0 - r.array()).matrix()));

    p.wxc->grad += cache.x.transpose() * dc_hat;
    p.whc->grad += cache.rh.transpose() * dc_hat;
    p.bc->grad.row(0) += dc_hat.colwise().sum();
    p.wxu->grad += cache.x.transpose() * du_hat;
    p.whu->grad += cache.h_prev.transpose() * du_hat;
    p.bu->grad.row(0) += du_hat.colwise().sum();
    p.wxr->grad += cache.x.transpose() * dr_hat;
    p.whr->grad += cache.h_prev.transpose() * dr_hat;
    p.br->grad.row(0) += dr_hat.colwise().sum();

    GruCellGrads g;
    g.dx = du_hat * p.wxu->value.transpose() + dr_hat * p.wxr->value.transpose() +
           dc_hat * p.wxc->value.transpose();
    g.dh_prev = dh.cwiseProduct(u) + drh.cwiseProduct(r) + du_hat * p.whu->value.transpose() +
                dr_hat * p.whr->value.transpose();
    return g;
}

Matrix gru_sequence_forward(const std::vector<Matrix>& steps, const GruParams& p,
                            std::vector<GruCellCache>* caches) {
    if (steps.empty())
        throw DimensionError("gru_sequence_forward: empty sequence");
    Matrix h = Matrix::Zero(steps.front().rows(), p.hidden_dim());
    if (caches)
        caches->resize(steps.size());
    for (std::size_t t = 0; t < steps.size(); ++t)
        h = gru_cell_forward(steps[t], h, p, caches ? &(*caches)[t] : nullptr);
    return h;
}

void gru_sequence_backward(const std::vector<GruCellCache>& caches, const GruParams& p,
                           const Matrix& dh_final) {
    Matrix dh = dh_final;
    for (std::size_t t = caches.size(); t > 0; --t)
        dh = gru_cell_backward(caches[t - 1], p, dh).dh_prev;
}

Matrix gcn_forward(const Matrix& x, const Matrix& adj, const Matrix& w1, const Matrix& w2,
                   bool relu, GcnCache* cache) {
    if (adj.rows() != adj.cols() || adj.rows() != x.rows())
        throw DimensionError("gcn_forward: adjacency must be n x n matching rows of x");
    if (x.cols() != w1.rows() || w1.cols() != w2.rows())
        throw DimensionError("gcn_forward: weight shapes incompatible");

    Matrix m1 = adj * x;
    Matrix m2 = m1 * w1;
    Matrix m2a = relu ? m2.cwiseMax(0.0) : m2;
    Matrix m3 = adj * m2a;
    Matrix out = m3 * w2;
    if (cache) {
        cache->m1 = std::move(m1);
        cache->m2 = std::move(m2);
        cache->m2a = std::move(m2a);
        cache->m3 = std::move(m3);
        cache->relu = relu;
    }
    return out;
}

GcnGrads gcn_backward(const Matrix& adj, const Matrix& w1, const Matrix& w2,
                      const GcnCache& cache, const Matrix& dout) {
    GcnGrads g;
    g.dw2 = cache.m3.transpose() * dout;
    const Matrix dm3 = dout * w2.transpose();
    Matrix dm2 = adj.transpose() * dm3;
    if (cache.relu)
        dm2 = dm2.cwiseProduct((cache.m2.array() > 0.0).cast<double>().matrix());
    g.dw1 = cache.m1.transpose() * dm2;
    const Matrix dm1 = dm2 * w1.transpose();
    g.dx = adj.transpose() * dm1;
    return g;
}

}  // namespace mobcast
