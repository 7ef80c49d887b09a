#pragma once

#include "mobcast/confounder.hpp"
#include "mobcast/data_model.hpp"
#include "mobcast/layers.hpp"
#include "mobcast/param_store.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace mobcast {

struct ModelConfig {
    Index n = 0;      // regions
    Index c = 0;      // POI categories
    Index t_in = 0;   // input window
    Index t_out = 0;  // output window
    Index d_reg = 16;
    Index gcn_hidden = 64;
    Index treat_hidden = 64;  // GRU hidden width for treatment encoding
    Index head_hidden = 64;
    Index n_bins = 20;  // fixed 0.1-wide similarity bins over [-1, 1]
    double alpha = 1.0;
    bool gcn_relu = false;
    bool use_events = true;
    bool use_llm_intentions = true;  // false: binary presence instead of scores
    bool use_reweight = true;
    bool use_cf_loss = true;
    bool weighted_mmd = false;
    bool cf_normalize_by_total_bins = false;  // divide by n_bins instead of non-empty count
    double mmd_bandwidth = 0.0;               // <= 0: median heuristic per pair

    Index confounder_dim() const { return t_in + 2 * c + d_reg; }
    ConfounderDims confounder_dims() const {
        return ConfounderDims{n, c, t_in, d_reg, gcn_hidden, gcn_relu};
    }

    std::string canonical_json() const;
    std::string hash() const;
};

// A model-ready sample: normalized input flows, normalized targets, the
// window-mean re-normalized adjacency, calendar features of the input window
// and the nonzero treatment slots per region (slot index over t_in + t_out).
struct SampleData {
    Matrix flows_in;  // n x t_in
    Matrix targets;   // n x t_out
    Matrix adj;       // n x n
    std::vector<int> hods, dows;
    std::vector<std::vector<std::pair<Index, RowVector>>> treat;
};

// ---------------------------------------------------------------------------
// Similarity binning

struct SimilarityBinning {
    int num_bins = 20;
    double width = 0.1;
};

// Cosine similarity against the baseline representation and its bin index.
// A zero-norm operand is treated as the baseline itself (similarity 1).
std::pair<double, int> cosine_bin(const RowVector& rep, const RowVector& baseline,
                                  const SimilarityBinning& binning = {});

// ---------------------------------------------------------------------------
// Losses

// Re-weighted factual loss: mean over rows of w_i * mean_horizon((yhat-y)^2).
double factual_loss(const Matrix& preds, const Matrix& targets, const Vector& weights);

// Squared maximum mean discrepancy, biased V-statistic with an RBF kernel.
// bandwidth <= 0 selects the median pairwise distance over the union.
// Optional per-row weights are normalized to sum one within each set.
double mmd(const Matrix& a, const Matrix& b, double bandwidth = 0.0,
           const Vector* wa = nullptr, const Vector* wb = nullptr);

struct MmdGrads {
    double value = 0.0;
    double bandwidth = 0.0;
    Matrix da, db;
};

// Gradient w.r.t. the sample vectors; the bandwidth and any weights are
// treated as constants.
MmdGrads mmd_with_grad(const Matrix& a, const Matrix& b, double bandwidth = 0.0,
                       const Vector* wa = nullptr, const Vector* wb = nullptr);

struct CfLossResult {
    double value = 0.0;
    int qualifying_bins = 0;  // bins with >= 2 members
    Matrix dz;                // filled when with_grad
};

// For each bin with >= 2 members, the maximum MMD against any other such bin,
// averaged over the qualifying bins (or divided by the total bin count when
// normalize_by_total). Fewer than two qualifying bins yields zero. bandwidth
// <= 0 selects the per-pair median heuristic, which gradients treat as a
// constant; a positive value pins the kernel width for every pair.
CfLossResult counterfactual_loss(const Matrix& z, const std::vector<int>& bins, int n_bins,
                                 bool normalize_by_total = false, const Vector* weights = nullptr,
                                 bool with_grad = false, double bandwidth = 0.0);

inline double total_loss(double factual, double counterfactual, double alpha) {
    return factual + alpha * counterfactual;
}

// ---------------------------------------------------------------------------
// The full model

struct BatchResult {
    double loss = 0.0;
    double factual = 0.0;
    double counterfactual = 0.0;
    Matrix preds;            // (batch*n) x t_out, sample-major
    Vector weights;          // normalized, mean 1
    Matrix z;                // (batch*n) x D
    Matrix reps;             // (batch*n) x treat_hidden
    RowVector baseline_rep;  // treat_hidden
    Vector cos;              // similarity to baseline per row
    std::vector<int> bins;
};

class Model {
public:
    Model(const ModelConfig& cfg, const Matrix& poi_counts, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }
    const Matrix& poi_norm() const { return poi_norm_; }

    // Forward over a batch; with_cache keeps everything backward() needs.
    BatchResult forward(const std::vector<const SampleData*>& batch, bool with_cache = false);

    // Backpropagates the last cached forward into the store's gradients.
    void backward();

    // Predictions only: skips the re-weighting head and both losses.
    Matrix predict(const std::vector<const SampleData*>& batch);

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    // --- analysis-oriented entry points (no caching, no gradients) ---
    Matrix forward_confounder(const SampleData& sample) const;
    RowVector encode_sequence(const std::vector<std::pair<Index, RowVector>>& slots,
                              Index length) const;
    RowVector baseline_rep(Index length) const;
    RowVector infer_row(const RowVector& z_row, const RowVector& rep) const;
    double reweight_raw(const RowVector& z_row, const RowVector& rep) const;

private:
    struct HeadCache {
        Matrix u;        // inputs (rows x D + h_T)
        Matrix inf_a;    // tanh activations
        Matrix rwt_a;
        Vector rwt_s;    // pre-softplus scalar
        Vector w_raw;
    };

    struct BatchCache {
        std::vector<const SampleData*> batch;
        std::vector<ConfounderCache> confounder;
        std::vector<GruCellCache> zero_caches;
        std::vector<GruCellCache> nz_caches;  // stacked nonzero rows
        std::vector<Index> nz_rows;           // row ids of stacked sequences
        HeadCache heads;
        Matrix cf_dz;  // counterfactual-loss gradient w.r.t. z
        BatchResult result;
        bool valid = false;
    };

    Matrix build_step(const std::vector<const SampleData*>& batch,
                      const std::vector<Index>& rows, Index step) const;

    ModelConfig cfg_;
    Matrix poi_norm_;
    ParamStore store_;
    ConfounderParams cparams_;
    GruParams gru_;
    BatchCache cache_;
};

}  // namespace mobcast
