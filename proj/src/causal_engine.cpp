#include "mobcast/causal_engine.hpp"

#include "mobcast/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mobcast {

std::string ModelConfig::canonical_json() const {
    std::ostringstream os;
    os << "{\"n\":" << n << ",\"c\":" << c << ",\"t_in\":" << t_in << ",\"t_out\":" << t_out
       << ",\"d_reg\":" << d_reg << ",\"gcn_hidden\":" << gcn_hidden
       << ",\"treat_hidden\":" << treat_hidden << ",\"head_hidden\":" << head_hidden
       << ",\"n_bins\":" << n_bins << ",\"alpha\":" << alpha << ",\"gcn_relu\":" << gcn_relu
       << ",\"use_events\":" << use_events << ",\"use_llm_intentions\":" << use_llm_intentions
       << ",\"use_reweight\":" << use_reweight << ",\"use_cf_loss\":" << use_cf_loss
       << ",\"weighted_mmd\":" << weighted_mmd
       << ",\"cf_normalize_by_total_bins\":" << cf_normalize_by_total_bins
       << ",\"mmd_bandwidth\":" << mmd_bandwidth << "}";
    return os.str();
}

std::string ModelConfig::hash() const { return fnv1a64_hex(canonical_json()); }

std::pair<double, int> cosine_bin(const RowVector& rep, const RowVector& baseline,
                                  const SimilarityBinning& binning) {
    if (rep.size() != baseline.size())
        throw DimensionError("cosine_bin: representation widths differ");
    double sim;
    if (rep == baseline) {
        sim = 1.0;
    } else {
        const double na = rep.norm();
        const double nb = baseline.norm();
        if (na < 1e-300 || nb < 1e-300)
            sim = 1.0;
        else
            sim = std::clamp(rep.dot(baseline) / (na * nb), -1.0, 1.0);
    }
    const int bin = std::clamp(static_cast<int>(std::floor((sim + 1.0) / binning.width)), 0,
                               binning.num_bins - 1);
    return {sim, bin};
}

double factual_loss(const Matrix& preds, const Matrix& targets, const Vector& weights) {
    if (preds.rows() != targets.rows() || preds.cols() != targets.cols())
        throw DimensionError("factual_loss: prediction/target shape mismatch");
    if (weights.size() != preds.rows())
        throw DimensionError("factual_loss: weight length mismatch");
    const double horizon = static_cast<double>(preds.cols());
    double acc = 0.0;
    for (Index i = 0; i < preds.rows(); ++i)
        acc += weights(i) * (preds.row(i) - targets.row(i)).squaredNorm() / horizon;
    return acc / static_cast<double>(preds.rows());
}

namespace {

Matrix pairwise_sqdist(const Matrix& x) {
    const Vector sq = x.rowwise().squaredNorm();
    Matrix d = (-2.0 * (x * x.transpose())).colwise() + sq;
    d.rowwise() += sq.transpose();
    return d.cwiseMax(0.0);
}

double median_distance(const Matrix& sqdist) {
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(sqdist.rows() * (sqdist.rows() - 1) / 2));
    for (Index i = 0; i < sqdist.rows(); ++i)
        for (Index j = i + 1; j < sqdist.cols(); ++j)
            dists.push_back(std::sqrt(sqdist(i, j)));
    if (dists.empty())
        return 1.0;
    const std::size_t mid = dists.size() / 2;
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid),
                     dists.end());
    const double med = dists[mid];
    return med > 0.0 ? med : 1.0;
}

Vector normalized_weights(Index rows, const Vector* w) {
    if (!w)
        return Vector::Constant(rows, 1.0 / static_cast<double>(rows));
    if (w->size() != rows)
        throw DimensionError("mmd: weight length mismatch");
    const double s = w->sum();
    if (s <= 0.0)
        throw ValidationError("mmd: weights must have positive sum");
    return *w / s;
}

struct MmdEval {
    double value;
    double bandwidth;
};

MmdEval mmd_impl(const Matrix& a, const Matrix& b, double bandwidth, const Vector* wa,
                 const Vector* wb, Matrix* da, Matrix* db) {
    if (a.rows() < 2 || b.rows() < 2)
        throw ValidationError("mmd: each set needs at least 2 vectors");
    if (a.cols() != b.cols())
        throw DimensionError("mmd: vector dimensions differ");

    const Index m = a.rows();
    const Index n = b.rows();
    Matrix u(m + n, a.cols());
    u.topRows(m) = a;
    u.bottomRows(n) = b;
    const Matrix sq = pairwise_sqdist(u);
    if (bandwidth <= 0.0)
        bandwidth = median_distance(sq);
    const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    const Matrix k = (-gamma * sq.array()).exp().matrix();

    const Vector va = normalized_weights(m, wa);
    const Vector vb = normalized_weights(n, wb);

    double kaa = 0.0, kbb = 0.0, kab = 0.0;
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < m; ++j)
            kaa += va(i) * va(j) * k(i, j);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            kbb += vb(i) * vb(j) * k(m + i, m + j);
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < n; ++j)
            kab += va(i) * vb(j) * k(i, m + j);
    const double value = kaa + kbb - 2.0 * kab;

    if (da && db) {
        *da = Matrix::Zero(m, a.cols());
        *db = Matrix::Zero(n, b.cols());
        // d k(x,y)/dx = -2 gamma (x - y) k(x,y)
        for (Index i = 0; i < m; ++i) {
            for (Index j = 0; j < m; ++j) {
                if (i == j)
                    continue;
                const double coef = -2.0 * gamma * 2.0 * va(i) * va(j) * k(i, j);
                da->row(i) += coef * (a.row(i) - a.row(j));
            }
        }
        for (Index i = 0; i < n; ++i) {
            for (Index j = 0; j < n; ++j) {
                if (i == j)
                    continue;
                const double coef = -2.0 * gamma * 2.0 * vb(i) * vb(j) * k(m + i, m + j);
                db->row(i) += coef * (b.row(i) - b.row(j));
            }
        }
        for (Index i = 0; i < m; ++i) {
            for (Index j = 0; j < n; ++j) {
                const double coef = 4.0 * gamma * va(i) * vb(j) * k(i, m + j);
                da->row(i) += coef * (a.row(i) - b.row(j));
                db->row(j) -= coef * (a.row(i) - b.row(j));
            }
        }
    }
    return {value, bandwidth};
}

}  // namespace

double mmd(const Matrix& a, const Matrix& b, double bandwidth, const Vector* wa,
           const Vector* wb) {
    return mmd_impl(a, b, bandwidth, wa, wb, nullptr, nullptr).value;
}

MmdGrads mmd_with_grad(const Matrix& a, const Matrix& b, double bandwidth, const Vector* wa,
                       const Vector* wb) {
    MmdGrads g;
    const MmdEval ev = mmd_impl(a, b, bandwidth, wa, wb, &g.da, &g.db);
    g.value = ev.value;
    g.bandwidth = ev.bandwidth;
    return g;
}

CfLossResult counterfactual_loss(const Matrix& z, const std::vector<int>& bins, int n_bins,
                                 bool normalize_by_total, const Vector* weights, bool with_grad,
                                 double bandwidth) {
    if (static_cast<Index>(bins.size()) != z.rows())
        throw DimensionError("counterfactual_loss: bin list length mismatch");

    std::vector<std::vector<Index>> members(static_cast<std::size_t>(n_bins));
    for (Index r = 0; r < z.rows(); ++r) {
        const int b = bins[static_cast<std::size_t>(r)];
        if (b < 0 || b >= n_bins)
            throw ValidationError("counterfactual_loss: bin index out of range");
        members[static_cast<std::size_t>(b)].push_back(r);
    }
    std::vector<int> qualifying;
    for (int b = 0; b < n_bins; ++b)
        if (members[static_cast<std::size_t>(b)].size() >= 2)
            qualifying.push_back(b);

    CfLossResult result;
    if (with_grad)
        result.dz = Matrix::Zero(z.rows(), z.cols());
    result.qualifying_bins = static_cast<int>(qualifying.size());
    if (qualifying.size() < 2)
        return result;

    auto gather = [&](int b) {
        const auto& rows = members[static_cast<std::size_t>(b)];
        Matrix out(static_cast<Index>(rows.size()), z.cols());
        for (std::size_t i = 0; i < rows.size(); ++i)
            out.row(static_cast<Index>(i)) = z.row(rows[i]);
        return out;
    };
    auto gather_w = [&](int b) {
        Vector out;
        if (!weights)
            return out;
        const auto& rows = members[static_cast<std::size_t>(b)];
        out.resize(static_cast<Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i)
            out(static_cast<Index>(i)) = (*weights)(rows[i]);
        return out;
    };

    // mmd is symmetric; evaluate each unordered pair once.
    std::vector<std::vector<double>> pair_value(qualifying.size(),
                                                std::vector<double>(qualifying.size(), 0.0));
    for (std::size_t i = 0; i < qualifying.size(); ++i) {
        const Matrix zi = gather(qualifying[i]);
        const Vector wi = gather_w(qualifying[i]);
        for (std::size_t j = i + 1; j < qualifying.size(); ++j) {
            const Matrix zj = gather(qualifying[j]);
            const Vector wj = gather_w(qualifying[j]);
            const double v =
                mmd(zi, zj, bandwidth, weights ? &wi : nullptr, weights ? &wj : nullptr);
            pair_value[i][j] = v;
            pair_value[j][i] = v;
        }
    }

    const double norm = normalize_by_total ? static_cast<double>(n_bins)
                                           : static_cast<double>(qualifying.size());
    double total = 0.0;
    for (std::size_t i = 0; i < qualifying.size(); ++i) {
        std::size_t best_j = qualifying.size();
        double best = -1.0;
        for (std::size_t j = 0; j < qualifying.size(); ++j) {
            if (j == i)
                continue;
            if (pair_value[i][j] > best) {
                best = pair_value[i][j];
                best_j = j;
            }
        }
        total += best;
        if (with_grad) {
            const Matrix zi = gather(qualifying[i]);
            const Matrix zj = gather(qualifying[best_j]);
            const Vector wi = gather_w(qualifying[i]);
            const Vector wj = gather_w(qualifying[best_j]);
            const MmdGrads g = mmd_with_grad(zj, zi, bandwidth, weights ? &wj : nullptr,
                                             weights ? &wi : nullptr);
            const auto& rows_i = members[static_cast<std::size_t>(qualifying[i])];
            const auto& rows_j = members[static_cast<std::size_t>(qualifying[best_j])];
            for (std::size_t r = 0; r < rows_j.size(); ++r)
                result.dz.row(rows_j[r]) += g.da.row(static_cast<Index>(r)) / norm;
            for (std::size_t r = 0; r < rows_i.size(); ++r)
                result.dz.row(rows_i[r]) += g.db.row(static_cast<Index>(r)) / norm;
        }
    }
    result.value = total / norm;
    return result;
}

// ---------------------------------------------------------------------------

Model::Model(const ModelConfig& cfg, const Matrix& poi_counts, std::uint64_t seed) : cfg_(cfg) {
    if (poi_counts.rows() != cfg.n || poi_counts.cols() != cfg.c)
        throw DimensionError("Model: POI matrix must be n x c");
    poi_norm_ = unit_sum_rows(poi_counts);

    RngStream rng(seed);
    cparams_ = register_confounder_params(store_, cfg.confounder_dims(), rng);
    gru_ = make_gru_params(store_, "treat", kIntentionDim, cfg.treat_hidden, rng);

    const Index u_dim = cfg.confounder_dim() + cfg.treat_hidden;
    store_.add_uniform("inf.w1", u_dim, cfg.head_hidden, rng);
    store_.add("inf.b1", 1, cfg.head_hidden);
    store_.add_uniform("inf.w2", cfg.head_hidden, cfg.t_out, rng);
    store_.add("inf.b2", 1, cfg.t_out);
    store_.add_uniform("rwt.w1", u_dim, cfg.head_hidden, rng);
    store_.add("rwt.b1", 1, cfg.head_hidden);
    store_.add_uniform("rwt.w2", cfg.head_hidden, 1, rng);
    store_.add("rwt.b2", 1, 1);
}

Matrix Model::build_step(const std::vector<const SampleData*>& batch,
                         const std::vector<Index>& rows, Index step) const {
    Matrix x = Matrix::Zero(static_cast<Index>(rows.size()), kIntentionDim);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const Index row = rows[k];
        const Index s = row / cfg_.n;
        const Index i = row % cfg_.n;
        for (const auto& [slot, vec] : batch[static_cast<std::size_t>(s)]->treat[
                 static_cast<std::size_t>(i)]) {
            if (slot == step) {
                x.row(static_cast<Index>(k)) = vec;
                break;
            }
        }
    }
    return x;
}

BatchResult Model::forward(const std::vector<const SampleData*>& batch, bool with_cache) {
    if (batch.empty())
        throw StateError("Model::forward: empty batch");
    const Index n = cfg_.n;
    const Index d = cfg_.confounder_dim();
    const Index h_t = cfg_.treat_hidden;
    const Index rows = static_cast<Index>(batch.size()) * n;
    const Index seq_len = cfg_.t_in + cfg_.t_out;

    cache_ = BatchCache{};
    BatchResult res;
    res.z.resize(rows, d);

    // confounders, one graph pass per sample
    const ConfounderDims cdims = cfg_.confounder_dims();
    if (with_cache)
        cache_.confounder.resize(batch.size());
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const SampleData& sd = *batch[s];
        Matrix z = confounder_forward(sd.flows_in, poi_norm_, sd.adj, sd.hods, sd.dows, cparams_,
                                      cdims, with_cache ? &cache_.confounder[s] : nullptr);
        res.z.middleRows(static_cast<Index>(s) * n, n) = z;
    }

    // treatment encoding: rows whose sequence is all zero share the baseline
    std::vector<Index> nz_rows;
    if (cfg_.use_events) {
        for (Index row = 0; row < rows; ++row) {
            const Index s = row / n;
            const Index i = row % n;
            if (!batch[static_cast<std::size_t>(s)]->treat[static_cast<std::size_t>(i)].empty())
                nz_rows.push_back(row);
        }
    }

    std::vector<Matrix> zero_steps(static_cast<std::size_t>(seq_len),
                                   Matrix::Zero(1, kIntentionDim));
    Matrix tb = gru_sequence_forward(zero_steps, gru_, with_cache ? &cache_.zero_caches : nullptr);
    res.baseline_rep = tb.row(0);

    res.reps = tb.row(0).replicate(rows, 1);
    if (!nz_rows.empty()) {
        std::vector<Matrix> steps(static_cast<std::size_t>(seq_len));
        for (Index t = 0; t < seq_len; ++t)
            steps[static_cast<std::size_t>(t)] = build_step(batch, nz_rows, t);
        Matrix reps_nz =
            gru_sequence_forward(steps, gru_, with_cache ? &cache_.nz_caches : nullptr);
        for (std::size_t k = 0; k < nz_rows.size(); ++k)
            res.reps.row(nz_rows[k]) = reps_nz.row(static_cast<Index>(k));
    }

    res.cos.resize(rows);
    res.bins.resize(static_cast<std::size_t>(rows));
    const SimilarityBinning binning{static_cast<int>(cfg_.n_bins), 2.0 / cfg_.n_bins};
    std::vector<bool> is_nz(static_cast<std::size_t>(rows), false);
    for (Index row : nz_rows)
        is_nz[static_cast<std::size_t>(row)] = true;
    for (Index row = 0; row < rows; ++row) {
        if (!is_nz[static_cast<std::size_t>(row)]) {
            res.cos(row) = 1.0;
            res.bins[static_cast<std::size_t>(row)] = static_cast<int>(cfg_.n_bins) - 1;
        } else {
            const auto [sim, bin] = cosine_bin(res.reps.row(row), res.baseline_rep, binning);
            res.cos(row) = sim;
            res.bins[static_cast<std::size_t>(row)] = bin;
        }
    }

    // heads
    Matrix u(rows, d + h_t);
    u.leftCols(d) = res.z;
    u.rightCols(h_t) = res.reps;

    Matrix inf_a = ((u * store_["inf.w1"].value).rowwise() + store_["inf.b1"].value.row(0))
                       .array()
                       .tanh()
                       .matrix();
    res.preds = (inf_a * store_["inf.w2"].value).rowwise() + store_["inf.b2"].value.row(0);

    Matrix rwt_a;
    Vector rwt_s;
    Vector w_raw;
    if (cfg_.use_reweight) {
        rwt_a = ((u * store_["rwt.w1"].value).rowwise() + store_["rwt.b1"].value.row(0))
                    .array()
                    .tanh()
                    .matrix();
        const Matrix s_col = (rwt_a * store_["rwt.w2"].value).rowwise() +
                             store_["rwt.b2"].value.row(0);
        rwt_s = s_col.col(0);
        w_raw.resize(rows);
        for (Index i = 0; i < rows; ++i)
            w_raw(i) = 1.0 + softplus(rwt_s(i));
        res.weights = w_raw / w_raw.mean();
    } else {
        res.weights = Vector::Ones(rows);
    }

    // losses
    Matrix targets(rows, cfg_.t_out);
    for (std::size_t s = 0; s < batch.size(); ++s)
        targets.middleRows(static_cast<Index>(s) * n, n) = batch[s]->targets;
    res.factual = factual_loss(res.preds, targets, res.weights);

    const double alpha_eff = cfg_.use_cf_loss ? cfg_.alpha : 0.0;
    CfLossResult cf;
    if (alpha_eff != 0.0) {
        cf = counterfactual_loss(res.z, res.bins, static_cast<int>(cfg_.n_bins),
                                 cfg_.cf_normalize_by_total_bins,
                                 cfg_.weighted_mmd ? &res.weights : nullptr, with_cache,
                                 cfg_.mmd_bandwidth);
        res.counterfactual = cf.value;
    }
    res.loss = total_loss(res.factual, res.counterfactual, alpha_eff);
    ensure_finite(res.loss, "batch loss");

    if (with_cache) {
        cache_.batch = batch;
        cache_.nz_rows = std::move(nz_rows);
        cache_.heads.u = std::move(u);
        cache_.heads.inf_a = std::move(inf_a);
        cache_.heads.rwt_a = std::move(rwt_a);
        cache_.heads.rwt_s = std::move(rwt_s);
        cache_.heads.w_raw = std::move(w_raw);
        cache_.result = res;
        if (alpha_eff != 0.0)
            cache_.cf_dz = std::move(cf.dz);
        cache_.valid = true;
    }
    return res;
}

void Model::backward() {
    if (!cache_.valid)
        throw StateError("Model::backward: no cached forward pass");
    const BatchResult& res = cache_.result;
    const auto& batch = cache_.batch;
    const Index n = cfg_.n;
    const Index d = cfg_.confounder_dim();
    const Index h_t = cfg_.treat_hidden;
    const Index rows = res.preds.rows();
    const double n_rows = static_cast<double>(rows);
    const double horizon = static_cast<double>(cfg_.t_out);
    const double alpha_eff = cfg_.use_cf_loss ? cfg_.alpha : 0.0;

    Matrix targets(rows, cfg_.t_out);
    for (std::size_t s = 0; s < batch.size(); ++s)
        targets.middleRows(static_cast<Index>(s) * n, n) = batch[s]->targets;

    // dL/dpred and dL/dw
    Matrix dpred(rows, cfg_.t_out);
    Vector dw = Vector::Zero(rows);
    for (Index i = 0; i < rows; ++i) {
        const RowVector err = res.preds.row(i) - targets.row(i);
        dpred.row(i) = (2.0 * res.weights(i) / (n_rows * horizon)) * err;
        dw(i) = err.squaredNorm() / (horizon * n_rows);
    }

    Matrix du = Matrix::Zero(rows, d + h_t);

    // inference head
    {
        const Matrix& a = cache_.heads.inf_a;
        store_["inf.w2"].grad += a.transpose() * dpred;
        store_["inf.b2"].grad.row(0) += dpred.colwise().sum();
        Matrix da = dpred * store_["inf.w2"].value.transpose();
        Matrix da_pre = da.cwiseProduct((1.0 - a.array().square()).matrix());
        store_["inf.w1"].grad += cache_.heads.u.transpose() * da_pre;
        store_["inf.b1"].grad.row(0) += da_pre.colwise().sum();
        du += da_pre * store_["inf.w1"].value.transpose();
    }

    // re-weighting head through the mean-one normalization
    if (cfg_.use_reweight) {
        const Vector& w_raw = cache_.heads.w_raw;
        const double mean_raw = w_raw.mean();
        const double weighted_sum = dw.dot(res.weights);
        Vector dw_raw(rows);
        for (Index i = 0; i < rows; ++i)
            dw_raw(i) = (dw(i) - weighted_sum / n_rows) / mean_raw;
        Vector ds(rows);
        for (Index i = 0; i < rows; ++i)
            ds(i) = dw_raw(i) * sigmoid_scalar(cache_.heads.rwt_s(i));

        const Matrix& a = cache_.heads.rwt_a;
        store_["rwt.w2"].grad += a.transpose() * ds;
        store_["rwt.b2"].grad(0, 0) += ds.sum();
        Matrix da = ds * store_["rwt.w2"].value.transpose();
        Matrix da_pre = da.cwiseProduct((1.0 - a.array().square()).matrix());
        store_["rwt.w1"].grad += cache_.heads.u.transpose() * da_pre;
        store_["rwt.b1"].grad.row(0) += da_pre.colwise().sum();
        du += da_pre * store_["rwt.w1"].value.transpose();
    }

    Matrix dz = du.leftCols(d);
    if (alpha_eff != 0.0 && cache_.cf_dz.size() > 0)
        dz += alpha_eff * cache_.cf_dz;
    Matrix drep = du.rightCols(h_t);

    // treatment encoder
    std::vector<bool> is_nz(static_cast<std::size_t>(rows), false);
    for (Index row : cache_.nz_rows)
        is_nz[static_cast<std::size_t>(row)] = true;
    if (!cache_.nz_rows.empty()) {
        Matrix drep_nz(static_cast<Index>(cache_.nz_rows.size()), h_t);
        for (std::size_t k = 0; k < cache_.nz_rows.size(); ++k)
            drep_nz.row(static_cast<Index>(k)) = drep.row(cache_.nz_rows[k]);
        gru_sequence_backward(cache_.nz_caches, gru_, drep_nz);
    }
    RowVector dtb = RowVector::Zero(h_t);
    for (Index row = 0; row < rows; ++row)
        if (!is_nz[static_cast<std::size_t>(row)])
            dtb += drep.row(row);
    if (dtb.squaredNorm() > 0.0)
        gru_sequence_backward(cache_.zero_caches, gru_, dtb);

    // confounders
    const ConfounderDims cdims = cfg_.confounder_dims();
    for (std::size_t s = 0; s < batch.size(); ++s)
        confounder_backward(cache_.confounder[s], poi_norm_, cparams_, cdims,
                            dz.middleRows(static_cast<Index>(s) * n, n));

    store_.mark_grads_ready();
    cache_.valid = false;
}

Matrix Model::predict(const std::vector<const SampleData*>& batch) {
    if (batch.empty())
        throw StateError("Model::predict: empty batch");
    const Index n = cfg_.n;
    const Index d = cfg_.confounder_dim();
    const Index h_t = cfg_.treat_hidden;
    const Index rows = static_cast<Index>(batch.size()) * n;
    const Index seq_len = cfg_.t_in + cfg_.t_out;

    Matrix u(rows, d + h_t);
    const ConfounderDims cdims = cfg_.confounder_dims();
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const SampleData& sd = *batch[s];
        u.block(static_cast<Index>(s) * n, 0, n, d) = confounder_forward(
            sd.flows_in, poi_norm_, sd.adj, sd.hods, sd.dows, cparams_, cdims, nullptr);
    }

    std::vector<Index> nz_rows;
    if (cfg_.use_events) {
        for (Index row = 0; row < rows; ++row) {
            const Index s = row / n;
            const Index i = row % n;
            if (!batch[static_cast<std::size_t>(s)]->treat[static_cast<std::size_t>(i)].empty())
                nz_rows.push_back(row);
        }
    }
    std::vector<Matrix> zero_steps(static_cast<std::size_t>(seq_len),
                                   Matrix::Zero(1, kIntentionDim));
    const Matrix tb = gru_sequence_forward(zero_steps, gru_, nullptr);
    u.rightCols(h_t) = tb.row(0).replicate(rows, 1);
    if (!nz_rows.empty()) {
        std::vector<Matrix> steps(static_cast<std::size_t>(seq_len));
        for (Index t = 0; t < seq_len; ++t)
            steps[static_cast<std::size_t>(t)] = build_step(batch, nz_rows, t);
        const Matrix reps_nz = gru_sequence_forward(steps, gru_, nullptr);
        for (std::size_t k = 0; k < nz_rows.size(); ++k)
            u.block(nz_rows[k], d, 1, h_t) = reps_nz.row(static_cast<Index>(k));
    }

    const Matrix a = ((u * store_["inf.w1"].value).rowwise() + store_["inf.b1"].value.row(0))
                         .array()
                         .tanh()
                         .matrix();
    return (a * store_["inf.w2"].value).rowwise() + store_["inf.b2"].value.row(0);
}

Matrix Model::forward_confounder(const SampleData& sample) const {
    return confounder_forward(sample.flows_in, poi_norm_, sample.adj, sample.hods, sample.dows,
                              cparams_, cfg_.confounder_dims(), nullptr);
}

RowVector Model::encode_sequence(const std::vector<std::pair<Index, RowVector>>& slots,
                                 Index length) const {
    std::vector<Matrix> steps(static_cast<std::size_t>(length), Matrix::Zero(1, kIntentionDim));
    for (const auto& [slot, vec] : slots) {
        if (slot < 0 || slot >= length)
            throw DimensionError("encode_sequence: slot outside window");
        steps[static_cast<std::size_t>(slot)] = vec;
    }
    return gru_sequence_forward(steps, gru_, nullptr).row(0);
}

RowVector Model::baseline_rep(Index length) const { return encode_sequence({}, length); }

RowVector Model::infer_row(const RowVector& z_row, const RowVector& rep) const {
    RowVector u(z_row.size() + rep.size());
    u << z_row, rep;
    const RowVector a =
        ((u * store_["inf.w1"].value).row(0) + store_["inf.b1"].value.row(0)).array().tanh();
    return (a * store_["inf.w2"].value).row(0) + store_["inf.b2"].value.row(0);
}

double Model::reweight_raw(const RowVector& z_row, const RowVector& rep) const {
    RowVector u(z_row.size() + rep.size());
    u << z_row, rep;
    const RowVector a =
        ((u * store_["rwt.w1"].value).row(0) + store_["rwt.b1"].value.row(0)).array().tanh();
    const double s = (a * store_["rwt.w2"].value)(0, 0) + store_["rwt.b2"].value(0, 0);
    return 1.0 + softplus(s);
}

}  // namespace mobcast
