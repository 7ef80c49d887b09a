#pragma once

#include "mobcast/types.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mobcast {

constexpr int kIntentionDim = 10;

// Answers to the ten intention questions, each an integer score in [0, 100].
struct IntentionVector {
    std::array<int, kIntentionDim> q{};

    bool in_range() const {
        for (int v : q)
            if (v < 0 || v > 100)
                return false;
        return true;
    }

    // Scores scaled to [0, 1] for model input.
    RowVector scaled() const {
        RowVector v(kIntentionDim);
        for (int i = 0; i < kIntentionDim; ++i)
            v(i) = q[i] / 100.0;
        return v;
    }
};

struct RegionFrame {
    std::string region_id;
    std::string name;
    Vector poi_profile;  // c non-negative counts
    int index = -1;      // dense position in the region set
};

// Hourly flows plus the re-normalized origin-destination adjacency for every
// timestamp. Timestamps are strictly increasing at one-hour steps.
struct MobilityTensor {
    std::vector<std::int64_t> timestamps;  // epoch seconds
    Matrix flows;                          // n x T
    std::vector<Matrix> adjacency;         // T re-normalized n x n matrices

    Index n_regions() const { return flows.rows(); }
    Index n_hours() const { return flows.cols(); }
};

struct EventRecord {
    std::string article_id;
    std::int64_t release_time = 0;
    std::int64_t corrected_event_time = 0;
    std::vector<std::string> region_codes;
    std::string category_label;
    bool predictable = false;
    IntentionVector intentions;
    std::string answer_events;  // narrative answer: identified events
    std::string answer_3w1h;    // narrative answer: where/who/when/how
    bool valid = true;
    std::string raw_transcript;  // kept when extraction failed, for audit
};

// One training/eval unit: an anchor position plus window lengths. Flow and
// adjacency content is resolved against the world at forward time.
struct Sample {
    Index anchor = 0;  // first hour index of the input window
    Index t_in = 0;
    Index t_out = 0;
};

struct World {
    std::vector<RegionFrame> regions;
    MobilityTensor mobility;
    std::vector<EventRecord> events;
    std::size_t invalid_event_count = 0;

    Index n_regions() const { return static_cast<Index>(regions.size()); }
    Index poi_categories() const {
        return regions.empty() ? 0 : regions.front().poi_profile.size();
    }
    int region_index(const std::string& region_id) const;
};

struct LoadOptions {
    bool load_events = true;  // the naive ablation never touches events.jsonl
};

// Reads regions.csv, flows.csv, od/*.csv and events.jsonl from `dir`,
// validating shapes, codes and ranges. Error messages carry file and line.
World load_world(const std::string& dir, const LoadOptions& options = {});

// A_hat = D^{-1/2} (A + I) D^{-1/2} with D the degree matrix of A + I.
Matrix renormalize_adjacency(const Matrix& raw_od);

std::vector<Sample> make_samples(const World& world, Index t_in, Index t_out, Index stride = 1);

// Per-region z-score statistics computed from the hours covered by the
// training samples only.
struct FlowScaler {
    Vector mean;  // n
    Vector std;   // n, zero-variance regions fall back to 1

    Matrix transform(const Matrix& flows) const;
    Matrix inverse(const Matrix& flows) const;
};

FlowScaler fit_scaler(const World& world, const std::vector<Sample>& train_samples);

// Deterministic 0.8/0.1/0.1 split over sample indices.
struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

SplitIndices split_samples(std::size_t n_samples, std::uint64_t seed, double train_frac = 0.8,
                           double val_frac = 0.1);

// Aggregated intention input per (region, hour): the elementwise mean over
// events attached to that slot. `all` covers every valid event; `predictable`
// only those flagged predictable (output windows must not see the rest).
struct EventSlots {
    std::map<std::pair<int, Index>, RowVector> all;
    std::map<std::pair<int, Index>, RowVector> predictable;

    const RowVector* find_all(int region, Index hour) const;
    const RowVector* find_predictable(int region, Index hour) const;
};

EventSlots build_event_slots(const World& world);

}  // namespace mobcast
