#pragma once

#include "mobcast/causal_engine.hpp"
#include "mobcast/checkpoint.hpp"
#include "mobcast/data_model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mobcast {

struct TrainConfig {
    Index t_in = 12;
    Index t_out = 6;
    double lr = 1e-3;
    double lr_decay = 0.5;
    Index batch = 24;
    Index hidden = 64;  // GCN, treatment GRU and head width
    Index d_reg = 16;
    double alpha = 1.0;
    int max_epochs = 300;
    double early_stop_threshold = 9e-6;
    int patience = 10;
    std::vector<std::uint64_t> seeds = {1111, 2222, 3333, 4444, 5555};

    bool use_events = true;
    bool use_llm_intentions = true;
    bool use_reweight = true;
    bool use_cf_loss = true;
    bool gcn_relu = false;
    bool weighted_mmd = false;
    bool cf_normalize_by_total_bins = false;

    ModelConfig model_config(Index n, Index c) const;
    std::string task_name() const;
};

TrainConfig train_config_from_json_file(const std::string& path);

// Metrics on the raw (de-normalized) flow scale. MAPE skips zero targets.
struct MetricsReport {
    double rmse = 0.0;
    double mae = 0.0;
    double mape = 0.0;  // percent
    int epochs = 0;
    double wall_seconds = 0.0;
};

MetricsReport compute_metrics(const Matrix& predictions, const Matrix& targets);

// ---------------------------------------------------------------------------
// Sample preparation shared by training, evaluation and the analyses.

class DataPipeline {
public:
    // Fits the scaler on the training split unless one is supplied (analyses
    // over a checkpoint must reuse the scaler it was trained with).
    DataPipeline(const World& world, const TrainConfig& cfg, std::uint64_t seed,
                 const FlowScaler* fixed_scaler = nullptr);

    const World& world() const { return *world_; }
    const TrainConfig& config() const { return cfg_; }
    const std::vector<Sample>& samples() const { return samples_; }
    const SplitIndices& split() const { return split_; }
    const FlowScaler& scaler() const { return scaler_; }
    const EventSlots& slots() const { return slots_; }
    Matrix poi_counts() const;

    const SampleData& sample_data(std::size_t idx) const { return data_[idx]; }

    // Raw-scale targets of a sample's output window.
    Matrix raw_targets(std::size_t idx) const;

    // De-normalizes model output rows (sample-major region blocks).
    Matrix denormalize_rows(const Matrix& preds) const;

private:
    const World* world_;
    TrainConfig cfg_;
    std::vector<Sample> samples_;
    SplitIndices split_;
    FlowScaler scaler_;
    EventSlots slots_;
    Matrix normalized_flows_;
    std::vector<SampleData> data_;
};

// ---------------------------------------------------------------------------
// Training loop: seeded shuffling, Adam, plateau-driven learning-rate decay
// and early stopping on validation MSE, best-validation restore.

struct TrainOutcome {
    MetricsReport test_metrics;
    double best_val_mse = 0.0;
    int epochs_run = 0;
    double wall_seconds = 0.0;
};

class Trainer {
public:
    Trainer(const World& world, const TrainConfig& cfg, std::uint64_t seed);

    TrainOutcome run();

    struct EpochStats {
        double mean_loss = 0.0;
        double mean_factual = 0.0;
        double mean_counterfactual = 0.0;
    };

    // One seeded epoch over the training split.
    EpochStats run_epoch_stats(int epoch);
    double run_epoch(int epoch) { return run_epoch_stats(epoch).mean_loss; }

    double validation_mse();
    MetricsReport evaluate(const std::vector<std::size_t>& sample_indices);

    Model& model() { return model_; }
    DataPipeline& pipeline() { return pipeline_; }
    double learning_rate() const { return lr_; }

    void save(const std::string& path, int epoch) const;

private:
    std::uint64_t seed_;
    DataPipeline pipeline_;
    Model model_;
    double lr_;
};

// Batched predictions for a list of samples; rows are sample-major.
Matrix predict_samples(Model& model, const DataPipeline& pipeline,
                       const std::vector<std::size_t>& sample_indices);

// ---------------------------------------------------------------------------
// Checkpoint round trip with config-hash verification and scaler payload.

void save_model_checkpoint(const std::string& path, const Model& model, const FlowScaler& scaler,
                           std::uint64_t seed, int epoch);

struct LoadedModel {
    Model model;
    FlowScaler scaler;
    CheckpointHeader header;
};

LoadedModel load_model_checkpoint(const std::string& path, const World& world,
                                  const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Ablation matrix: full model plus the four reduced variants, each across the
// configured seeds.

struct AblationCell {
    std::string variant;
    std::uint64_t seed = 0;
    MetricsReport metrics;
};

struct AblationTable {
    std::vector<AblationCell> cells;

    std::vector<MetricsReport> variant_metrics(const std::string& variant) const;
};

AblationTable run_ablation_matrix(const std::string& world_dir, const TrainConfig& base,
                                  const std::vector<std::string>& variants = {
                                      "full", "naive", "wo_llm", "wo_reweight", "wo_cf"});

TrainConfig apply_variant(const TrainConfig& base, const std::string& variant);

void write_ablation_csv(const std::string& path, const AblationTable& table);

void write_metrics_json(const std::string& path, const std::string& task, std::uint64_t seed,
                        const MetricsReport& metrics);

double mean_of(const std::vector<double>& xs);
double sample_std_of(const std::vector<double>& xs);

}  // namespace mobcast
