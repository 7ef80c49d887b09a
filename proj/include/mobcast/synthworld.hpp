#pragma once

#include "mobcast/data_model.hpp"
#include "mobcast/intent_extract.hpp"
#include "mobcast/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mobcast {

struct WorldSpec {
    Index n_regions = 20;
    int days = 60;
    std::uint64_t seed = 7;
    Index poi_categories = 17;
    double poi_concentration = 0.5;  // Dirichlet concentration for POI mixes
    double gravity_decay = 0.3;      // distance decay on the unit square
    double base_volume_min = 120.0;
    double base_volume_max = 600.0;
    double noise_scale = 0.05;
    double event_rate = 0.05;         // expected events per region-day
    double effect_amplitude = 45.0;   // percent of base flow at full swing
    double temporal_decay = 0.35;     // per-hour exponential decay
    int effect_truncation_hours = 12;

    void validate() const;
};

// Realized additive effect of one event on one region: aligned offset/delta
// pairs relative to the event hour, zero outside the decay support.
struct GroundTruthEffect {
    std::string event_id;
    std::string region_id;
    Index event_hour = 0;  // index into the hourly series
    std::vector<int> offsets;
    std::vector<double> delta;
    std::string quadrant;
    bool clipped = false;
};

struct SynthEvent {
    std::string event_id;
    int region = 0;           // primary region index
    std::vector<int> regions; // all affected regions
    Index hour = 0;           // series hour index
    std::int64_t event_ts = 0;
    std::int64_t release_ts = 0;
    std::string category_label;
    bool predictable = true;
    IntentionVector intentions;
    std::string headline;
};

struct SynthWorld {
    WorldSpec spec;
    std::vector<std::string> region_ids;
    std::vector<std::string> region_names;
    Matrix poi;           // n x c counts
    Vector mass;          // region scale
    Matrix coords;        // n x 2
    std::vector<std::int64_t> timestamps;
    Matrix base;            // deterministic pattern, pre-noise
    Matrix counterfactual;  // base + noise, no events
    Matrix factual;         // counterfactual + effects, clipped at zero
    std::vector<Matrix> od; // raw counts per hour
    std::vector<SynthEvent> events;
    std::vector<GroundTruthEffect> effects;
    std::size_t clip_count = 0;

    // Signed effect multiplier for an intention vector, in [-1.15, 1.15]:
    // interest minus danger, with a stay-at-home modulation.
    static double effect_factor(const IntentionVector& intentions);

    double decay_kernel(int offset_hours) const;

    // Exact y1 - y0 from the retained series, per hour of [from_hour,
    // from_hour + n_hours) for the event's region.
    Vector oracle_ate(const std::string& event_id, const std::string& region_id, Index from_hour,
                      Index n_hours) const;

    // Hypothetical-event oracle: the injected effect an event with these
    // intentions at (region, hour) would have produced.
    Vector oracle_effect(const IntentionVector& intentions, int region, Index event_hour,
                         Index from_hour, Index n_hours) const;
};

SynthWorld generate_world(const WorldSpec& spec);

// Writes <dir>/world (regions.csv, flows.csv, od/, events.jsonl,
// articles.jsonl) and <dir>/oracle (ground_truth.jsonl, counterfactual and
// base flow series). Training reads only <dir>/world.
void export_fixture(const SynthWorld& world, const std::string& dir);

std::vector<GroundTruthEffect> load_ground_truth(const std::string& oracle_dir);
Matrix load_flow_series(const std::string& csv_path, const std::vector<std::string>& region_ids);

}  // namespace mobcast
