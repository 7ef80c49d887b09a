#include "mobcast/train_eval.hpp"

#include "mobcast/time_util.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

namespace mobcast {

ModelConfig TrainConfig::model_config(Index n, Index c) const {
    ModelConfig mc;
    mc.n = n;
    mc.c = c;
    mc.t_in = t_in;
    mc.t_out = t_out;
    mc.d_reg = d_reg;
    mc.gcn_hidden = hidden;
    mc.treat_hidden = hidden;
    mc.head_hidden = hidden;
    mc.alpha = alpha;
    mc.gcn_relu = gcn_relu;
    mc.use_events = use_events;
    mc.use_llm_intentions = use_llm_intentions;
    mc.use_reweight = use_reweight;
    mc.use_cf_loss = use_cf_loss;
    mc.weighted_mmd = weighted_mmd;
    mc.cf_normalize_by_total_bins = cf_normalize_by_total_bins;
    return mc;
}

std::string TrainConfig::task_name() const {
    return "in" + std::to_string(t_in) + "-out" + std::to_string(t_out);
}

TrainConfig train_config_from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is)
        throw IoError("cannot open config " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw ValidationError("config " + path + ": " + e.what());
    }
    TrainConfig cfg;
    cfg.t_in = j.value("t_in", cfg.t_in);
    cfg.t_out = j.value("t_out", cfg.t_out);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.lr_decay = j.value("lr_decay", cfg.lr_decay);
    cfg.batch = j.value("batch", cfg.batch);
    cfg.hidden = j.value("hidden", cfg.hidden);
    cfg.d_reg = j.value("d_reg", cfg.d_reg);
    cfg.alpha = j.value("alpha", cfg.alpha);
    cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
    cfg.early_stop_threshold = j.value("early_stop_threshold", cfg.early_stop_threshold);
    cfg.patience = j.value("patience", cfg.patience);
    if (j.contains("seeds")) {
        cfg.seeds.clear();
        for (const auto& s : j["seeds"])
            cfg.seeds.push_back(s.get<std::uint64_t>());
    }
    cfg.use_events = j.value("use_events", cfg.use_events);
    cfg.use_llm_intentions = j.value("use_llm_intentions", cfg.use_llm_intentions);
    cfg.use_reweight = j.value("use_reweight", cfg.use_reweight);
    cfg.use_cf_loss = j.value("use_cf_loss", cfg.use_cf_loss);
    cfg.gcn_relu = j.value("gcn_relu", cfg.gcn_relu);
    cfg.weighted_mmd = j.value("weighted_mmd", cfg.weighted_mmd);
    cfg.cf_normalize_by_total_bins =
        j.value("cf_normalize_by_total_bins", cfg.cf_normalize_by_total_bins);
    return cfg;
}

MetricsReport compute_metrics(const Matrix& predictions, const Matrix& targets) {
    if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
        throw DimensionError("compute_metrics: shape mismatch");
    MetricsReport m;
    double sq = 0.0, abs_sum = 0.0, ape = 0.0;
    std::int64_t count = 0, nonzero = 0;
    for (Index i = 0; i < predictions.rows(); ++i) {
        for (Index j = 0; j < predictions.cols(); ++j) {
            const double err = predictions(i, j) - targets(i, j);
            sq += err * err;
            abs_sum += std::abs(err);
            ++count;
            if (targets(i, j) != 0.0) {
                ape += std::abs(err) / std::abs(targets(i, j));
                ++nonzero;
            }
        }
    }
    if (count == 0)
        throw ValidationError("compute_metrics: empty input");
    m.rmse = std::sqrt(sq / static_cast<double>(count));
    m.mae = abs_sum / static_cast<double>(count);
    m.mape = nonzero > 0 ? ape / static_cast<double>(nonzero) * 100.0 : 0.0;
    return m;
}

// ---------------------------------------------------------------------------

DataPipeline::DataPipeline(const World& world, const TrainConfig& cfg, std::uint64_t seed,
                           const FlowScaler* fixed_scaler)
    : world_(&world), cfg_(cfg) {
    samples_ = make_samples(world, cfg.t_in, cfg.t_out, 1);
    split_ = split_samples(samples_.size(), RngStream(seed).split(0x5711).seed());
    if (fixed_scaler) {
        scaler_ = *fixed_scaler;
    } else {
        std::vector<Sample> train_samples;
        for (std::size_t idx : split_.train)
            train_samples.push_back(samples_[idx]);
        scaler_ = fit_scaler(world, train_samples);
    }
    slots_ = build_event_slots(world);
    normalized_flows_ = scaler_.transform(world.mobility.flows);

    // window-mean adjacency via prefix sums
    const Index n = world.n_regions();
    const Index t = world.mobility.n_hours();
    std::vector<Matrix> prefix(static_cast<std::size_t>(t) + 1, Matrix::Zero(n, n));
    for (Index h = 0; h < t; ++h)
        prefix[static_cast<std::size_t>(h) + 1] =
            prefix[static_cast<std::size_t>(h)] + world.mobility.adjacency[
                static_cast<std::size_t>(h)];

    const Index seq_len = cfg.t_in + cfg.t_out;
    data_.reserve(samples_.size());
    for (const Sample& s : samples_) {
        SampleData sd;
        sd.flows_in = normalized_flows_.block(0, s.anchor, n, s.t_in);
        sd.targets = normalized_flows_.block(0, s.anchor + s.t_in, n, s.t_out);
        sd.adj = (prefix[static_cast<std::size_t>(s.anchor + s.t_in)] -
                  prefix[static_cast<std::size_t>(s.anchor)]) /
                 static_cast<double>(s.t_in);
        sd.hods.reserve(static_cast<std::size_t>(s.t_in));
        sd.dows.reserve(static_cast<std::size_t>(s.t_in));
        for (Index h = s.anchor; h < s.anchor + s.t_in; ++h) {
            const std::int64_t ts = world.mobility.timestamps[static_cast<std::size_t>(h)];
            sd.hods.push_back(hour_of_day(ts));
            sd.dows.push_back(day_of_week(ts));
        }
        sd.treat.resize(static_cast<std::size_t>(n));
        if (cfg.use_events) {
            for (Index i = 0; i < n; ++i) {
                for (Index slot = 0; slot < seq_len; ++slot) {
                    const Index h = s.anchor + slot;
                    const RowVector* v = slot < s.t_in
                                             ? slots_.find_all(static_cast<int>(i), h)
                                             : slots_.find_predictable(static_cast<int>(i), h);
                    if (!v)
                        continue;
                    RowVector entry = cfg.use_llm_intentions
                                          ? *v
                                          : RowVector::Ones(kIntentionDim).eval();
                    sd.treat[static_cast<std::size_t>(i)].emplace_back(slot, std::move(entry));
                }
            }
        }
        data_.push_back(std::move(sd));
    }
}

Matrix DataPipeline::poi_counts() const {
    const Index n = world_->n_regions();
    const Index c = world_->poi_categories();
    Matrix poi(n, c);
    for (Index i = 0; i < n; ++i)
        poi.row(i) = world_->regions[static_cast<std::size_t>(i)].poi_profile.transpose();
    return poi;
}

Matrix DataPipeline::raw_targets(std::size_t idx) const {
    const Sample& s = samples_[idx];
    return world_->mobility.flows.block(0, s.anchor + s.t_in, world_->n_regions(), s.t_out);
}

Matrix DataPipeline::denormalize_rows(const Matrix& preds) const {
    const Index n = world_->n_regions();
    Matrix out = preds;
    for (Index r = 0; r < out.rows(); ++r) {
        const Index region = r % n;
        out.row(r) = out.row(r).array() * scaler_.std(region) + scaler_.mean(region);
    }
    return out;
}

// ---------------------------------------------------------------------------

Matrix predict_samples(Model& model, const DataPipeline& pipeline,
                       const std::vector<std::size_t>& sample_indices) {
    const Index n = pipeline.world().n_regions();
    const Index t_out = pipeline.config().t_out;
    Matrix preds(static_cast<Index>(sample_indices.size()) * n, t_out);
    const std::size_t chunk = 64;
    for (std::size_t begin = 0; begin < sample_indices.size(); begin += chunk) {
        const std::size_t end = std::min(begin + chunk, sample_indices.size());
        std::vector<const SampleData*> batch;
        batch.reserve(end - begin);
        for (std::size_t k = begin; k < end; ++k)
            batch.push_back(&pipeline.sample_data(sample_indices[k]));
        preds.middleRows(static_cast<Index>(begin) * n, static_cast<Index>(end - begin) * n) =
            model.predict(batch);
    }
    return preds;
}

namespace {

Matrix poi_matrix(const World& world) {
    const Index n = world.n_regions();
    const Index c = world.poi_categories();
    Matrix poi(n, c);
    for (Index i = 0; i < n; ++i)
        poi.row(i) = world.regions[static_cast<std::size_t>(i)].poi_profile.transpose();
    return poi;
}

}  // namespace

Trainer::Trainer(const World& world, const TrainConfig& cfg, std::uint64_t seed)
    : seed_(seed),
      pipeline_(world, cfg, seed),
      model_(cfg.model_config(world.n_regions(), world.poi_categories()), poi_matrix(world),
             seed),
      lr_(cfg.lr) {}

Trainer::EpochStats Trainer::run_epoch_stats(int epoch) {
    const TrainConfig& cfg = pipeline_.config();
    std::vector<std::size_t> order = pipeline_.split().train;
    RngStream rng = RngStream(seed_).split(0xE50000ULL + static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);

    AdamConfig adam;
    adam.lr = lr_;

    EpochStats stats;
    int batches = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.batch)) {
        const std::size_t end =
            std::min(begin + static_cast<std::size_t>(cfg.batch), order.size());
        std::vector<const SampleData*> batch;
        batch.reserve(end - begin);
        for (std::size_t k = begin; k < end; ++k)
            batch.push_back(&pipeline_.sample_data(order[k]));
        const BatchResult res = model_.forward(batch, true);
        model_.store().zero_grads();
        model_.backward();
        adam_step(model_.store(), adam);
        stats.mean_loss += res.loss;
        stats.mean_factual += res.factual;
        stats.mean_counterfactual += res.counterfactual;
        ++batches;
    }
    if (batches > 0) {
        stats.mean_loss /= batches;
        stats.mean_factual /= batches;
        stats.mean_counterfactual /= batches;
    }
    return stats;
}

double Trainer::validation_mse() {
    const auto& val = pipeline_.split().val;
    if (val.empty())
        throw ValidationError("validation split is empty");
    const Matrix preds = predict_samples(model_, pipeline_, val);
    const Index n = pipeline_.world().n_regions();
    double sq = 0.0;
    Index count = 0;
    for (std::size_t k = 0; k < val.size(); ++k) {
        const Matrix& target = pipeline_.sample_data(val[k]).targets;
        sq += (preds.middleRows(static_cast<Index>(k) * n, n) - target).squaredNorm();
        count += target.size();
    }
    return sq / static_cast<double>(count);
}

MetricsReport Trainer::evaluate(const std::vector<std::size_t>& sample_indices) {
    if (sample_indices.empty())
        throw ValidationError("evaluate: empty split");
    const Matrix preds = pipeline_.denormalize_rows(
        predict_samples(model_, pipeline_, sample_indices));
    const Index n = pipeline_.world().n_regions();
    Matrix targets(preds.rows(), preds.cols());
    for (std::size_t k = 0; k < sample_indices.size(); ++k)
        targets.middleRows(static_cast<Index>(k) * n, n) =
            pipeline_.raw_targets(sample_indices[k]);
    return compute_metrics(preds, targets);
}

namespace {

struct StoreSnapshot {
    std::vector<Matrix> values, ms, vs;
    std::int64_t adam_t = 0;

    void capture(const ParamStore& store) {
        values.clear();
        ms.clear();
        vs.clear();
        for (const Param& p : store.params()) {
            values.push_back(p.value);
            ms.push_back(p.m);
            vs.push_back(p.v);
        }
        adam_t = store.adam_t();
    }

    void restore(ParamStore& store) const {
        std::size_t i = 0;
        for (Param& p : store.params()) {
            p.value = values[i];
            p.m = ms[i];
            p.v = vs[i];
            ++i;
        }
        store.set_adam_t(adam_t);
    }
};

}  // namespace

TrainOutcome Trainer::run() {
    const auto t0 = std::chrono::steady_clock::now();
    const TrainConfig& cfg = pipeline_.config();

    StoreSnapshot best;
    best.capture(model_.store());
    double best_val = std::numeric_limits<double>::infinity();
    int epochs_since_best = 0;
    int epochs_run = 0;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        run_epoch(epoch);
        const double val = validation_mse();
        epochs_run = epoch;
        if (best_val - val > cfg.early_stop_threshold) {
            best_val = val;
            best.capture(model_.store());
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
            if (epochs_since_best % cfg.patience == 0)
                lr_ *= cfg.lr_decay;
            if (epochs_since_best >= 2 * cfg.patience)
                break;
        }
    }
    best.restore(model_.store());

    TrainOutcome outcome;
    outcome.best_val_mse = best_val;
    outcome.epochs_run = epochs_run;
    outcome.test_metrics = evaluate(pipeline_.split().test);
    outcome.test_metrics.epochs = epochs_run;
    outcome.test_metrics.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    outcome.wall_seconds = outcome.test_metrics.wall_seconds;
    return outcome;
}

void Trainer::save(const std::string& path, int epoch) const {
    save_model_checkpoint(path, model_, pipeline_.scaler(), seed_, epoch);
}

// ---------------------------------------------------------------------------

void save_model_checkpoint(const std::string& path, const Model& model, const FlowScaler& scaler,
                           std::uint64_t seed, int epoch) {
    CheckpointHeader header;
    header.seed = seed;
    header.config_hash = model.config().hash();
    header.epoch = epoch;
    header.adam_t = model.store().adam_t();
    std::vector<std::pair<std::string, Matrix>> extras;
    extras.emplace_back("scaler.mean", scaler.mean.transpose());
    extras.emplace_back("scaler.std", scaler.std.transpose());
    save_checkpoint(path, header, model.store(), extras);
}

LoadedModel load_model_checkpoint(const std::string& path, const World& world,
                                  const TrainConfig& cfg) {
    const ModelConfig mc = cfg.model_config(world.n_regions(), world.poi_categories());
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.header.config_hash != mc.hash())
        throw ValidationError("checkpoint config hash " + ckpt.header.config_hash +
                              " does not match current configuration " + mc.hash() +
                              "; refusing to load");
    const Index n = world.n_regions();
    Model model(mc, poi_matrix(world), ckpt.header.seed);
    restore_params(ckpt, model.store());

    FlowScaler scaler;
    scaler.mean = ckpt.require("scaler.mean").row(0).transpose();
    scaler.std = ckpt.require("scaler.std").row(0).transpose();
    if (scaler.mean.size() != n)
        throw ValidationError("checkpoint scaler does not match region count");
    return LoadedModel{std::move(model), std::move(scaler), ckpt.header};
}

// ---------------------------------------------------------------------------

TrainConfig apply_variant(const TrainConfig& base, const std::string& variant) {
    TrainConfig cfg = base;
    if (variant == "full")
        return cfg;
    if (variant == "naive") {
        cfg.use_events = false;
        return cfg;
    }
    if (variant == "wo_llm") {
        cfg.use_llm_intentions = false;
        return cfg;
    }
    if (variant == "wo_reweight") {
        cfg.use_reweight = false;
        return cfg;
    }
    if (variant == "wo_cf") {
        cfg.use_cf_loss = false;
        return cfg;
    }
    throw ValidationError("unknown ablation variant '" + variant + "'");
}

std::vector<MetricsReport> AblationTable::variant_metrics(const std::string& variant) const {
    std::vector<MetricsReport> out;
    for (const AblationCell& cell : cells)
        if (cell.variant == variant)
            out.push_back(cell.metrics);
    return out;
}

AblationTable run_ablation_matrix(const std::string& world_dir, const TrainConfig& base,
                                  const std::vector<std::string>& variants) {
    AblationTable table;
    for (const std::string& variant : variants) {
        const TrainConfig cfg = apply_variant(base, variant);
        // the naive variant must never touch events.jsonl
        const World world = load_world(world_dir, LoadOptions{cfg.use_events});
        for (const std::uint64_t seed : cfg.seeds) {
            Trainer trainer(world, cfg, seed);
            const TrainOutcome outcome = trainer.run();
            table.cells.push_back(AblationCell{variant, seed, outcome.test_metrics});
        }
    }
    return table;
}

double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs)
        s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double sample_std_of(const std::vector<double>& xs) {
    if (xs.size() < 2)
        return 0.0;
    const double mu = mean_of(xs);
    double acc = 0.0;
    for (double x : xs)
        acc += (x - mu) * (x - mu);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

void write_ablation_csv(const std::string& path, const AblationTable& table) {
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw IoError("cannot open " + path + " for writing");
    os << "row,variant,seed,rmse,mae,mape,epochs,wall_seconds\n";
    std::vector<std::string> seen;
    for (const AblationCell& cell : table.cells) {
        os << "run," << cell.variant << ',' << cell.seed << ',' << cell.metrics.rmse << ','
           << cell.metrics.mae << ',' << cell.metrics.mape << ',' << cell.metrics.epochs << ','
           << cell.metrics.wall_seconds << "\n";
        bool present = false;
        for (const auto& v : seen)
            present = present || v == cell.variant;
        if (!present)
            seen.push_back(cell.variant);
    }
    for (const std::string& variant : seen) {
        std::vector<double> rmse, mae, mape;
        for (const MetricsReport& m : table.variant_metrics(variant)) {
            rmse.push_back(m.rmse);
            mae.push_back(m.mae);
            mape.push_back(m.mape);
        }
        os << "summary," << variant << ",," << mean_of(rmse) << '/' << sample_std_of(rmse) << ','
           << mean_of(mae) << '/' << sample_std_of(mae) << ',' << mean_of(mape) << '/'
           << sample_std_of(mape) << ",,\n";
    }
}

void write_metrics_json(const std::string& path, const std::string& task, std::uint64_t seed,
                        const MetricsReport& metrics) {
    nlohmann::json j;
    j["task"] = task;
    j["seed"] = seed;
    j["rmse"] = metrics.rmse;
    j["mae"] = metrics.mae;
    j["mape"] = metrics.mape;
    j["epochs"] = metrics.epochs;
    j["wall_seconds"] = metrics.wall_seconds;
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw IoError("cannot open " + path + " for writing");
    os << j.dump(2) << "\n";
}

}  // namespace mobcast
