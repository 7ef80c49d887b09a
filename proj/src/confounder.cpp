#include "mobcast/confounder.hpp"

namespace mobcast {

ConfounderParams register_confounder_params(ParamStore& store, const ConfounderDims& dims,
                                            RngStream& rng) {
    ConfounderParams p;
    p.hour_emb = &store.add_uniform("time.hour", 24, dims.c, rng);
    p.dow_emb = &store.add_uniform("time.dow", 7, dims.c, rng);
    p.region_emb = &store.add_uniform("region.emb", dims.n, dims.d_reg, rng);
    p.gcn_w1 = &store.add_uniform("gcn.w1", dims.input_dim(), dims.gcn_hidden, rng);
    p.gcn_w2 = &store.add_uniform("gcn.w2", dims.gcn_hidden, dims.input_dim(), rng);
    return p;
}

ConfounderParams bind_confounder_params(ParamStore& store) {
    ConfounderParams p;
    p.hour_emb = &store["time.hour"];
    p.dow_emb = &store["time.dow"];
    p.region_emb = &store["region.emb"];
    p.gcn_w1 = &store["gcn.w1"];
    p.gcn_w2 = &store["gcn.w2"];
    return p;
}

Matrix unit_sum_rows(const Matrix& poi) {
    Matrix out = poi;
    for (Index i = 0; i < out.rows(); ++i) {
        const double s = out.row(i).sum();
        if (s > 0.0)
            out.row(i) /= s;
    }
    return out;
}

RowVector poi_reweight(const RowVector& mean_time_emb, const RowVector& poi) {
    if (mean_time_emb.size() != poi.size())
        throw DimensionError("poi_reweight: embedding width " +
                             std::to_string(mean_time_emb.size()) + " != POI width " +
                             std::to_string(poi.size()));
    return mean_time_emb.cwiseProduct(poi);
}

RowVector mean_time_embedding(const ConfounderParams& p, const std::vector<int>& hods,
                              const std::vector<int>& dows) {
    if (hods.empty() || hods.size() != dows.size())
        throw DimensionError("mean_time_embedding: hour/day lists must be equal and non-empty");
    RowVector acc = RowVector::Zero(p.hour_emb->value.cols());
    for (std::size_t k = 0; k < hods.size(); ++k)
        acc += p.hour_emb->value.row(hods[k]) + p.dow_emb->value.row(dows[k]);
    return acc / static_cast<double>(hods.size());
}

Matrix assemble_confounder_input(const Matrix& flows_window, const Matrix& poi_norm,
                                 const RowVector& mean_time_emb, const ConfounderParams& p) {
    const Index n = flows_window.rows();
    if (poi_norm.rows() != n || p.region_emb->value.rows() != n)
        throw DimensionError("assemble_confounder_input: region count mismatch");
    const Index c = poi_norm.cols();
    const Index t_in = flows_window.cols();
    const Index d_reg = p.region_emb->value.cols();

    Matrix xhat(n, t_in + 2 * c + d_reg);
    xhat.block(0, 0, n, t_in) = flows_window;
    for (Index i = 0; i < n; ++i)
        xhat.block(i, t_in, 1, c) = poi_reweight(mean_time_emb, poi_norm.row(i));
    xhat.block(0, t_in + c, n, c) = mean_time_emb.replicate(n, 1);
    xhat.block(0, t_in + 2 * c, n, d_reg) = p.region_emb->value;
    return xhat;
}

Matrix confounder_forward(const Matrix& flows_window, const Matrix& poi_norm, const Matrix& adj,
                          const std::vector<int>& hods, const std::vector<int>& dows,
                          const ConfounderParams& p, const ConfounderDims& dims,
                          ConfounderCache* cache) {
    const RowVector xbar = mean_time_embedding(p, hods, dows);
    Matrix xhat = assemble_confounder_input(flows_window, poi_norm, xbar, p);
    GcnCache gcn_cache;
    Matrix z = gcn_forward(xhat, adj, p.gcn_w1->value, p.gcn_w2->value, dims.gcn_relu,
                           cache ? &gcn_cache : nullptr) +
               xhat;
    if (cache) {
        cache->xbar = xbar;
        cache->hods = hods;
        cache->dows = dows;
        cache->xhat = std::move(xhat);
        cache->adj = adj;
        cache->gcn = std::move(gcn_cache);
    }
    return z;
}

void confounder_backward(const ConfounderCache& cache, const Matrix& poi_norm,
                         const ConfounderParams& p, const ConfounderDims& dims, const Matrix& dz) {
    GcnGrads g = gcn_backward(cache.adj, p.gcn_w1->value, p.gcn_w2->value, cache.gcn, dz);
    p.gcn_w1->grad += g.dw1;
    p.gcn_w2->grad += g.dw2;
    const Matrix dxhat = g.dx + dz;  // residual path

    const Index n = dxhat.rows();
    const Index c = dims.c;
    const Index t_in = dims.t_in;

    // flows block carries no parameters
    RowVector dxbar = RowVector::Zero(c);
    for (Index i = 0; i < n; ++i) {
        dxbar += dxhat.block(i, t_in, 1, c).row(0).cwiseProduct(poi_norm.row(i));
        dxbar += dxhat.block(i, t_in + c, 1, c).row(0);
    }
    p.region_emb->grad += dxhat.block(0, t_in + 2 * c, n, p.region_emb->value.cols());

    const RowVector per_hour = dxbar / static_cast<double>(cache.hods.size());
    for (std::size_t k = 0; k < cache.hods.size(); ++k) {
        p.hour_emb->grad.row(cache.hods[k]) += per_hour;
        p.dow_emb->grad.row(cache.dows[k]) += per_hour;
    }
}

}  // namespace mobcast
