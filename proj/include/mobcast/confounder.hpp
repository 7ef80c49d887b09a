#pragma once

#include "mobcast/layers.hpp"
#include "mobcast/param_store.hpp"
#include "mobcast/types.hpp"

#include <vector>

namespace mobcast {

// Learnable tables feeding the confounder: hour-of-day and day-of-week
// embeddings of the POI-category width, plus a free embedding per region.
struct ConfounderParams {
    Param* hour_emb;    // 24 x c
    Param* dow_emb;     // 7 x c
    Param* region_emb;  // n x d_reg
    Param* gcn_w1;      // D x H
    Param* gcn_w2;      // H x D
};

struct ConfounderDims {
    Index n = 0;
    Index c = 0;
    Index t_in = 0;
    Index d_reg = 16;
    Index gcn_hidden = 64;
    bool gcn_relu = false;

    // flows (t_in) | reweighted POI (c) | mean time embedding (c) | region (d_reg)
    Index input_dim() const { return t_in + 2 * c + d_reg; }
};

ConfounderParams register_confounder_params(ParamStore& store, const ConfounderDims& dims,
                                            RngStream& rng);
ConfounderParams bind_confounder_params(ParamStore& store);

// Rows scaled to unit sum; all-zero rows stay zero.
Matrix unit_sum_rows(const Matrix& poi);

// Static POI profile re-weighted by the window-mean time embedding.
RowVector poi_reweight(const RowVector& mean_time_emb, const RowVector& poi);

// Mean time embedding over the input-window hours.
RowVector mean_time_embedding(const ConfounderParams& p, const std::vector<int>& hods,
                              const std::vector<int>& dows);

// Concatenation in fixed order: flows | X_P | mean time embedding | region.
Matrix assemble_confounder_input(const Matrix& flows_window, const Matrix& poi_norm,
                                 const RowVector& mean_time_emb, const ConfounderParams& p);

struct ConfounderCache {
    RowVector xbar;
    std::vector<int> hods, dows;
    Matrix xhat;
    Matrix adj;
    GcnCache gcn;
};

// z = f_gcn(x_hat, adj) + x_hat (residual, keeps output width D).
Matrix confounder_forward(const Matrix& flows_window, const Matrix& poi_norm, const Matrix& adj,
                          const std::vector<int>& hods, const std::vector<int>& dows,
                          const ConfounderParams& p, const ConfounderDims& dims,
                          ConfounderCache* cache = nullptr);

// Accumulates parameter gradients for one sample given dL/dz.
void confounder_backward(const ConfounderCache& cache, const Matrix& poi_norm,
                         const ConfounderParams& p, const ConfounderDims& dims, const Matrix& dz);

}  // namespace mobcast
