#pragma once

#include "mobcast/param_store.hpp"
#include "mobcast/types.hpp"

#include <vector>

namespace mobcast {

inline Matrix sigmoid(const Matrix& x) {
    return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

inline double softplus(double x) {
    // log1p(exp(x)) with the overflow-safe branch
    return x > 30.0 ? x : std::log1p(std::exp(x));
}

inline double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// Affine layer: y = x * w + b, bias broadcast over rows.

Matrix affine_forward(const Matrix& x, const Matrix& w, const RowVector& b);

struct AffineGrads {
    Matrix dx;
    Matrix dw;
    RowVector db;
};

AffineGrads affine_backward(const Matrix& x, const Matrix& w, const Matrix& dy);

// ---------------------------------------------------------------------------
// GRU cell. Rows of x/h are independent sequences processed in lockstep.
//   u = sigmoid(x Wxu + h Whu + bu)          update gate
//   r = sigmoid(x Wxr + h Whr + br)          reset gate
//   c = tanh(x Wxc + (r .* h) Whc + bc)      candidate
//   h' = u .* h + (1 - u) .* c

struct GruParams {
    Param* wxu;
    Param* whu;
    Param* bu;
    Param* wxr;
    Param* whr;
    Param* br;
    Param* wxc;
    Param* whc;
    Param* bc;

    Index input_dim() const { return wxu->value.rows(); }
    Index hidden_dim() const { return wxu->value.cols(); }
};

// Registers the nine GRU parameter matrices under `prefix` and returns refs.
GruParams make_gru_params(ParamStore& store, const std::string& prefix, Index input_dim,
                          Index hidden_dim, RngStream& rng);
GruParams bind_gru_params(ParamStore& store, const std::string& prefix);

struct GruCellCache {
    Matrix x, h_prev, u, r, c, rh;
};

Matrix gru_cell_forward(const Matrix& x, const Matrix& h_prev, const GruParams& p,
                        GruCellCache* cache = nullptr);

struct GruCellGrads {
    Matrix dx;
    Matrix dh_prev;
};

// Accumulates parameter gradients into the store; returns input gradients.
GruCellGrads gru_cell_backward(const GruCellCache& cache, const GruParams& p, const Matrix& dh);

// Unrolled sequence: steps[t] is (rows x input_dim) input at step t.
// Returns the final hidden state (rows x hidden_dim).
Matrix gru_sequence_forward(const std::vector<Matrix>& steps, const GruParams& p,
                            std::vector<GruCellCache>* caches = nullptr);

// Backpropagates d(final hidden) through the whole unroll.
void gru_sequence_backward(const std::vector<GruCellCache>& caches, const GruParams& p,
                           const Matrix& dh_final);

// ---------------------------------------------------------------------------
// Two-layer graph convolution: f(X, A) = A [ act( (A X) W1 ) ] W2.
// The inner activation is identity by default; ReLU optionally.

struct GcnCache {
    Matrix m1;   // A X
    Matrix m2;   // M1 W1 (pre-activation)
    Matrix m2a;  // activated
    Matrix m3;   // A M2a
    bool relu = false;
};

Matrix gcn_forward(const Matrix& x, const Matrix& adj, const Matrix& w1, const Matrix& w2,
                   bool relu = false, GcnCache* cache = nullptr);

struct GcnGrads {
    Matrix dx;
    Matrix dw1;
    Matrix dw2;
};

GcnGrads gcn_backward(const Matrix& adj, const Matrix& w1, const Matrix& w2,
                      const GcnCache& cache, const Matrix& dout);

}  // namespace mobcast
