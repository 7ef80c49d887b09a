#pragma once

#include "mobcast/causal_engine.hpp"
#include "mobcast/synthworld.hpp"
#include "mobcast/train_eval.hpp"

#include <string>
#include <vector>

namespace mobcast {

// Model-based treatment-effect probe: the inference head evaluated twice on
// an identical confounder, once with the event's encoded treatment and once
// with the no-event baseline. Raw flow scale.
struct AteReport {
    std::vector<int> regions;
    std::vector<std::string> region_ids;
    Matrix tau;  // |regions| x t_out

    double total() const { return tau.sum(); }
};

AteReport estimate_ate(const Model& model, const DataPipeline& pipeline, std::size_t sample_idx,
                       const EventRecord& event);

// Treatment representations of the event alone, placed at its hour inside the
// sample window; errors when the event lies outside the window.
RowVector event_rep_in_sample(const Model& model, const DataPipeline& pipeline,
                              std::size_t sample_idx, const EventRecord& event);

// ---------------------------------------------------------------------------
// Per-similarity-bin response profile: substitute each bin's centroid
// treatment and report the predicted change against the baseline treatment.

struct IntervalProfile {
    std::vector<int> bin_index;
    std::vector<double> bin_center;       // similarity at bin midpoint
    std::vector<int> bin_population;      // training reps per bin
    std::vector<int> regions;
    std::vector<Matrix> change;           // per bin: |regions| x t_out, raw scale
};

IntervalProfile interval_profile(const Model& model, const DataPipeline& pipeline,
                                 std::size_t sample_idx, const std::vector<int>& regions);

// ---------------------------------------------------------------------------
// Hour-by-hour counterfactual response of one region across a calendar date.

struct ResponseCurve {
    std::vector<std::string> hours;
    Vector delta;  // raw scale, first output step of the rolling window
};

ResponseCurve counterfactual_response(const Model& model, const DataPipeline& pipeline,
                                      int region, const std::string& date,
                                      const EventRecord& event);

// ---------------------------------------------------------------------------
// With/without-intentions comparison for one sample and region: absolute
// errors per output timestamp and their difference.

struct CaseComparison {
    std::vector<std::string> hours;
    Vector err_with;
    Vector err_without;
    Vector improvement;  // err_without - err_with
};

CaseComparison case_compare(const Model& model, const DataPipeline& pipeline,
                            std::size_t sample_idx, int region);

// ---------------------------------------------------------------------------
// Encoded treatment export for external projection tools.

struct EmbeddingRow {
    std::string id;
    std::string quadrant;
    std::string label;
    RowVector rep;
};

std::vector<EmbeddingRow> export_treatment_embeddings(const Model& model,
                                                      const std::vector<EventRecord>& events,
                                                      Index seq_len);

void write_embeddings_csv(const std::string& path, const std::vector<EmbeddingRow>& rows);

// ---------------------------------------------------------------------------

// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

double sign_agreement(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace mobcast
