#include "mobcast/synthworld.hpp"

#include "mobcast/rng.hpp"
#include "mobcast/time_util.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace mobcast {

namespace fs = std::filesystem;

namespace {

double gamma_draw(RngStream& rng, double alpha) {
    if (alpha < 1.0) {
        const double u = rng.uniform();
        return gamma_draw(rng, alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    // Marsaglia-Tsang squeeze
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        const double x = rng.normal();
        double v = 1.0 + c * x;
        if (v <= 0.0)
            continue;
        v = v * v * v;
        const double u = rng.uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x)
            return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
            return d * v;
    }
}

double daily_profile(int hod) {
    return 1.0 + 0.55 * std::sin(2.0 * std::numbers::pi * (hod - 6) / 24.0);
}

double week_profile(int dow) { return dow >= 5 ? 0.8 : 1.0; }

struct Archetype {
    const char* category;
    bool predictable;
    int lo[kIntentionDim];
    int hi[kIntentionDim];
    const char* phrase;
};

// Intention ranges per event family; interest-heavy families raise flows,
// danger-heavy ones suppress them.
const Archetype kArchetypes[] = {
    {"Cultural", true,
     {0, 10, 70, 10, 0, 20, 0, 0, 0, 40},
     {10, 30, 95, 30, 10, 50, 10, 20, 10, 70},
     "riverside fireworks festival"},
    {"Sports", true,
     {0, 10, 55, 20, 0, 30, 0, 0, 0, 30},
     {10, 25, 85, 40, 10, 60, 10, 10, 10, 60},
     "stadium championship final"},
    {"Weather", true,
     {60, 40, 0, 10, 30, 50, 50, 40, 20, 40},
     {90, 70, 10, 30, 60, 80, 80, 70, 50, 70},
     "approaching severe storm front"},
    {"Disaster/Accident", false,
     {70, 20, 0, 0, 40, 50, 60, 40, 30, 30},
     {95, 50, 5, 20, 70, 80, 90, 70, 60, 60},
     "strong earthquake shaking"},
    {"Disaster/Accident", false,
     {30, 10, 0, 30, 10, 40, 20, 10, 0, 10},
     {55, 30, 10, 60, 30, 70, 40, 30, 20, 30},
     "multi-vehicle expressway accident"},
    {"Crime/Justice", true,
     {0, 0, 0, 60, 0, 0, 0, 10, 0, 10},
     {12, 20, 12, 90, 10, 10, 10, 40, 10, 30},
     "municipal council session"},
};

const double kArchetypeWeight[] = {0.20, 0.20, 0.20, 0.15, 0.15, 0.10};

int draw_archetype(RngStream& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (int k = 0; k < 6; ++k) {
        acc += kArchetypeWeight[k];
        if (u < acc)
            return k;
    }
    return 5;
}

std::string render_article_text(const SynthWorld& world, const SynthEvent& e) {
    nlohmann::json marker;
    marker["event_time"] = format_datetime(e.event_ts);
    marker["predictable"] = e.predictable;
    marker["intentions"] = e.intentions.q;

    std::string text = e.headline + "\n";
    text += "Officials in " + world.region_names[static_cast<std::size_t>(e.region)] +
            " report activity connected to a " + e.category_label +
            " event. Residents and visitors in the affected area should follow local guidance. ";
    text += "The report was released at " + format_datetime(e.release_ts) + ".\n";
    text += std::string(kStructuredBlockOpen) + "\n" + marker.dump() + "\n" +
            kStructuredBlockClose + "\n";
    return text;
}

void write_flow_csv(const std::string& path, const std::vector<std::string>& region_ids,
                    const std::vector<std::int64_t>& timestamps, const Matrix& flows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw IoError("cannot open " + path + " for writing");
    os << "region_id,timestamp,count\n";
    char buf[64];
    for (std::size_t i = 0; i < region_ids.size(); ++i) {
        for (std::size_t t = 0; t < timestamps.size(); ++t) {
            std::snprintf(buf, sizeof(buf), "%.17g",
                          flows(static_cast<Index>(i), static_cast<Index>(t)));
            os << region_ids[i] << ',' << format_datetime(timestamps[t]) << ',' << buf << "\n";
        }
    }
}

}  // namespace

void WorldSpec::validate() const {
    if (n_regions < 2)
        throw ValidationError("WorldSpec: need at least 2 regions");
    if (days <= 0 || poi_categories <= 0 || poi_concentration <= 0.0 || gravity_decay <= 0.0 ||
        base_volume_min <= 0.0 || base_volume_max < base_volume_min || noise_scale <= 0.0 ||
        event_rate <= 0.0 || effect_amplitude <= 0.0 || temporal_decay <= 0.0 ||
        effect_truncation_hours <= 0)
        throw ValidationError("WorldSpec: all parameters must be positive");
}

double SynthWorld::effect_factor(const IntentionVector& intentions) {
    const double danger = intentions.q[0] / 100.0;
    const double stay = intentions.q[1] / 100.0;
    const double interest = intentions.q[2] / 100.0;
    const double primary = interest - danger;
    const double sign = primary > 0.0 ? 1.0 : (primary < 0.0 ? -1.0 : 0.0);
    return primary + 0.3 * (stay - 0.5) * sign;
}

double SynthWorld::decay_kernel(int offset_hours) const {
    const int a = std::abs(offset_hours);
    if (a > spec.effect_truncation_hours)
        return 0.0;
    return std::exp(-spec.temporal_decay * a);
}

Vector SynthWorld::oracle_ate(const std::string& event_id, const std::string& region_id,
                              Index from_hour, Index n_hours) const {
    const GroundTruthEffect* found = nullptr;
    for (const auto& ef : effects)
        if (ef.event_id == event_id && ef.region_id == region_id) {
            found = &ef;
            break;
        }
    if (!found)
        throw ValidationError("oracle_ate: unknown event '" + event_id + "' for region '" +
                              region_id + "'");
    Vector out = Vector::Zero(n_hours);
    for (std::size_t k = 0; k < found->offsets.size(); ++k) {
        const Index h = found->event_hour + found->offsets[k];
        if (h >= from_hour && h < from_hour + n_hours)
            out(h - from_hour) = found->delta[k];
    }
    return out;
}

Vector SynthWorld::oracle_effect(const IntentionVector& intentions, int region, Index event_hour,
                                 Index from_hour, Index n_hours) const {
    const double factor = effect_factor(intentions) * spec.effect_amplitude / 100.0;
    Vector out = Vector::Zero(n_hours);
    for (Index h = from_hour; h < from_hour + n_hours; ++h) {
        if (h < 0 || h >= base.cols())
            continue;
        out(h - from_hour) =
            base(region, h) * factor * decay_kernel(static_cast<int>(h - event_hour));
    }
    return out;
}

SynthWorld generate_world(const WorldSpec& spec) {
    spec.validate();
    SynthWorld world;
    world.spec = spec;
    RngStream rng(spec.seed);

    const Index n = spec.n_regions;
    const Index c = spec.poi_categories;
    const Index t = static_cast<Index>(spec.days) * 24;
    const std::int64_t start_ts = days_from_civil(2023, 4, 1) * 86400;

    // regions: coordinates, mass, POI mixes
    world.coords.resize(n, 2);
    world.mass.resize(n);
    world.poi.resize(n, c);
    for (Index i = 0; i < n; ++i) {
        char id[16];
        std::snprintf(id, sizeof(id), "R%03d", static_cast<int>(i + 1));
        world.region_ids.push_back(id);
        char name[32];
        std::snprintf(name, sizeof(name), "District %03d", static_cast<int>(i + 1));
        world.region_names.push_back(name);
        world.coords(i, 0) = rng.uniform();
        world.coords(i, 1) = rng.uniform();
        world.mass(i) = rng.uniform(spec.base_volume_min, spec.base_volume_max);
        Vector g(c);
        for (Index j = 0; j < c; ++j)
            g(j) = gamma_draw(rng, spec.poi_concentration);
        const double gsum = g.sum();
        for (Index j = 0; j < c; ++j)
            world.poi(i, j) = std::round(g(j) / gsum * world.mass(i));
    }

    // deterministic base pattern and noisy counterfactual
    world.timestamps.resize(static_cast<std::size_t>(t));
    world.base.resize(n, t);
    world.counterfactual.resize(n, t);
    for (Index h = 0; h < t; ++h) {
        const std::int64_t ts = start_ts + h * 3600;
        world.timestamps[static_cast<std::size_t>(h)] = ts;
        const double day_f = daily_profile(hour_of_day(ts));
        const double week_f = week_profile(day_of_week(ts));
        for (Index i = 0; i < n; ++i) {
            world.base(i, h) = world.mass(i) * day_f * week_f;
            world.counterfactual(i, h) =
                std::max(0.0, world.base(i, h) * (1.0 + spec.noise_scale * rng.normal()));
        }
    }

    // gravity-model OD counts, scaled by the shared time profile
    Matrix gravity = Matrix::Zero(n, n);
    double max_g = 0.0;
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            if (i == j)
                continue;
            const double dist = (world.coords.row(i) - world.coords.row(j)).norm();
            gravity(i, j) = world.mass(i) * world.mass(j) * std::exp(-dist / spec.gravity_decay);
            max_g = std::max(max_g, gravity(i, j));
        }
    }
    if (max_g > 0.0)
        gravity /= max_g;
    world.od.reserve(static_cast<std::size_t>(t));
    for (Index h = 0; h < t; ++h) {
        const std::int64_t ts = world.timestamps[static_cast<std::size_t>(h)];
        const double scale = 40.0 * daily_profile(hour_of_day(ts)) * week_profile(day_of_week(ts));
        Matrix od = Matrix::Zero(n, n);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j)
                if (i != j)
                    od(i, j) = std::round(gravity(i, j) * scale);
        world.od.push_back(std::move(od));
    }

    // events, biased toward high-mass regions
    const double mass_sq_sum = world.mass.array().square().sum();
    int event_counter = 0;
    for (int day = 0; day < spec.days; ++day) {
        for (Index i = 0; i < n; ++i) {
            const double rate = spec.event_rate * static_cast<double>(n) *
                                world.mass(i) * world.mass(i) / mass_sq_sum;
            const std::uint64_t count = rng.poisson(rate);
            for (std::uint64_t e = 0; e < count; ++e) {
                const int arch_idx = draw_archetype(rng);
                const Archetype& arch = kArchetypes[arch_idx];
                SynthEvent ev;
                char eid[16];
                std::snprintf(eid, sizeof(eid), "evt-%05d", event_counter++);
                ev.event_id = eid;
                ev.region = static_cast<int>(i);
                ev.regions.push_back(static_cast<int>(i));
                if (rng.uniform() < 0.1) {
                    // spillover into the nearest neighbour region
                    int nearest = -1;
                    double best = 1e18;
                    for (Index j = 0; j < n; ++j) {
                        if (j == i)
                            continue;
                        const double dist = (world.coords.row(i) - world.coords.row(j)).norm();
                        if (dist < best) {
                            best = dist;
                            nearest = static_cast<int>(j);
                        }
                    }
                    ev.regions.push_back(nearest);
                }
                const int hod = 8 + static_cast<int>(rng.uniform_int(14));
                ev.hour = static_cast<Index>(day) * 24 + hod;
                ev.event_ts = start_ts + ev.hour * 3600;
                ev.category_label = arch.category;
                ev.predictable = arch.predictable;
                for (int q = 0; q < kIntentionDim; ++q)
                    ev.intentions.q[static_cast<std::size_t>(q)] =
                        arch.lo[q] + static_cast<int>(rng.uniform_int(
                                         static_cast<std::uint64_t>(arch.hi[q] - arch.lo[q] + 1)));
                if (ev.predictable) {
                    ev.release_ts = ev.event_ts - 6 * 3600 -
                                    static_cast<std::int64_t>(rng.uniform() * 42.0 * 3600.0);
                } else {
                    ev.release_ts = ev.event_ts +
                                    static_cast<std::int64_t>(rng.uniform() * 3.0 * 3600.0);
                }
                ev.headline = std::string("Notice for ") +
                              world.region_names[static_cast<std::size_t>(i)] + ": " +
                              arch.phrase + " around " + format_datetime(ev.event_ts) + ".";
                world.events.push_back(std::move(ev));
            }
        }
    }

    // inject effects; factual = counterfactual + sum of deltas, then clipped
    world.factual = world.counterfactual;
    const double amp = spec.effect_amplitude / 100.0;
    for (const SynthEvent& ev : world.events) {
        const double factor = SynthWorld::effect_factor(ev.intentions) * amp;
        for (int region : ev.regions) {
            GroundTruthEffect gt;
            gt.event_id = ev.event_id;
            gt.region_id = world.region_ids[static_cast<std::size_t>(region)];
            gt.event_hour = ev.hour;
            gt.quadrant = quadrant_code(categorize_scores(ev.intentions, ev.predictable));
            for (int k = -spec.effect_truncation_hours; k <= spec.effect_truncation_hours; ++k) {
                const Index h = ev.hour + k;
                if (h < 0 || h >= t)
                    continue;
                const double delta = world.base(region, h) * factor * world.decay_kernel(k);
                gt.offsets.push_back(k);
                gt.delta.push_back(delta);
                world.factual(region, h) += delta;
            }
            world.effects.push_back(std::move(gt));
        }
    }
    for (Index i = 0; i < n; ++i) {
        for (Index h = 0; h < t; ++h) {
            if (world.factual(i, h) < 0.0) {
                world.factual(i, h) = 0.0;
                ++world.clip_count;
                for (auto& gt : world.effects)
                    if (world.region_ids[static_cast<std::size_t>(i)] == gt.region_id &&
                        h >= gt.event_hour - spec.effect_truncation_hours &&
                        h <= gt.event_hour + spec.effect_truncation_hours)
                        gt.clipped = true;
            }
        }
    }
    return world;
}

void export_fixture(const SynthWorld& world, const std::string& dir) {
    const fs::path root(dir);
    const fs::path world_dir = root / "world";
    const fs::path oracle_dir = root / "oracle";
    fs::create_directories(world_dir / "od");
    fs::create_directories(oracle_dir);

    // regions.csv
    {
        std::ofstream os(world_dir / "regions.csv", std::ios::trunc);
        if (!os)
            throw IoError("cannot write regions.csv");
        os << "region_id,name";
        for (Index j = 0; j < world.poi.cols(); ++j)
            os << ",poi_c" << (j + 1);
        os << "\n";
        for (std::size_t i = 0; i < world.region_ids.size(); ++i) {
            os << world.region_ids[i] << ',' << world.region_names[i];
            for (Index j = 0; j < world.poi.cols(); ++j)
                os << ',' << static_cast<long long>(world.poi(static_cast<Index>(i), j));
            os << "\n";
        }
    }

    write_flow_csv((world_dir / "flows.csv").string(), world.region_ids, world.timestamps,
                   world.factual);
    write_flow_csv((oracle_dir / "counterfactual_flows.csv").string(), world.region_ids,
                   world.timestamps, world.counterfactual);
    write_flow_csv((oracle_dir / "base_flows.csv").string(), world.region_ids, world.timestamps,
                   world.base);

    // od/<timestamp>.csv with sparse positive triplets
    for (std::size_t h = 0; h < world.timestamps.size(); ++h) {
        const std::int64_t ts = world.timestamps[h];
        std::int64_t days = ts / 86400;
        const std::int64_t rem = ts % 86400;
        int y, mo, d;
        civil_from_days(days, y, mo, d);
        char fname[32];
        std::snprintf(fname, sizeof(fname), "%04d-%02d-%02dT%02d.csv", y, mo, d,
                      static_cast<int>(rem / 3600));
        std::ofstream os(world_dir / "od" / fname, std::ios::trunc);
        if (!os)
            throw IoError(std::string("cannot write od file ") + fname);
        os << "origin_id,dest_id,count\n";
        const Matrix& od = world.od[h];
        for (Index i = 0; i < od.rows(); ++i)
            for (Index j = 0; j < od.cols(); ++j)
                if (od(i, j) > 0.0)
                    os << world.region_ids[static_cast<std::size_t>(i)] << ','
                       << world.region_ids[static_cast<std::size_t>(j)] << ','
                       << static_cast<long long>(od(i, j)) << "\n";
    }

    // articles, and events derived from them through the offline extractor so
    // the two files can never drift apart
    std::vector<Article> articles;
    std::vector<EventRecord> records;
    {
        std::ofstream os(world_dir / "articles.jsonl", std::ios::trunc);
        if (!os)
            throw IoError("cannot write articles.jsonl");
        int article_counter = 0;
        for (const SynthEvent& ev : world.events) {
            Article a;
            char aid[16];
            std::snprintf(aid, sizeof(aid), "art-%05d", article_counter++);
            a.article_id = aid;
            a.release_time = format_datetime(ev.release_ts);
            for (int region : ev.regions)
                a.region_codes.push_back(world.region_ids[static_cast<std::size_t>(region)]);
            a.category_label = ev.category_label;
            a.text = render_article_text(world, ev);

            nlohmann::json j;
            j["article_id"] = a.article_id;
            j["release_time"] = a.release_time;
            j["region_codes"] = a.region_codes;
            j["category_label"] = a.category_label;
            j["text"] = a.text;
            os << j.dump() << "\n";
            records.push_back(mock_extract(a));
            articles.push_back(std::move(a));
        }
    }
    write_events((world_dir / "events.jsonl").string(), records);

    // oracle records
    {
        std::ofstream os(oracle_dir / "ground_truth.jsonl", std::ios::trunc);
        if (!os)
            throw IoError("cannot write ground_truth.jsonl");
        for (const GroundTruthEffect& gt : world.effects) {
            nlohmann::json j;
            j["event_id"] = gt.event_id;
            j["region_id"] = gt.region_id;
            j["event_hour"] = gt.event_hour;
            j["offsets"] = gt.offsets;
            j["delta"] = gt.delta;
            j["quadrant"] = gt.quadrant;
            j["clipped"] = gt.clipped;
            os << j.dump() << "\n";
        }
    }
}

std::vector<GroundTruthEffect> load_ground_truth(const std::string& oracle_dir) {
    const std::string path = (fs::path(oracle_dir) / "ground_truth.jsonl").string();
    std::ifstream is(path);
    if (!is)
        throw IoError("cannot open " + path);
    std::vector<GroundTruthEffect> effects;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ValidationError(path + ": invalid JSON line");
        GroundTruthEffect gt;
        gt.event_id = j.value("event_id", std::string{});
        gt.region_id = j.value("region_id", std::string{});
        gt.event_hour = j.value("event_hour", Index{0});
        for (const auto& v : j["offsets"])
            gt.offsets.push_back(v.get<int>());
        for (const auto& v : j["delta"])
            gt.delta.push_back(v.get<double>());
        gt.quadrant = j.value("quadrant", std::string{});
        gt.clipped = j.value("clipped", false);
        effects.push_back(std::move(gt));
    }
    return effects;
}

Matrix load_flow_series(const std::string& csv_path, const std::vector<std::string>& region_ids) {
    std::ifstream is(csv_path);
    if (!is)
        throw IoError("cannot open " + csv_path);
    std::string line;
    std::getline(is, line);  // header
    std::map<std::string, int> region_index;
    for (std::size_t i = 0; i < region_ids.size(); ++i)
        region_index[region_ids[i]] = static_cast<int>(i);

    std::map<std::int64_t, int> ts_index;
    std::vector<std::tuple<int, std::int64_t, double>> rows;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        const std::size_t c1 = line.find(',');
        const std::size_t c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw ValidationError(csv_path + ": malformed row");
        const std::string rid = line.substr(0, c1);
        auto it = region_index.find(rid);
        if (it == region_index.end())
            throw ValidationError(csv_path + ": unknown region " + rid);
        std::int64_t ts;
        if (!parse_datetime(line.substr(c1 + 1, c2 - c1 - 1), ts))
            throw ValidationError(csv_path + ": bad timestamp");
        ts_index.emplace(ts, 0);
        rows.emplace_back(it->second, ts, std::stod(line.substr(c2 + 1)));
    }
    int col = 0;
    for (auto& [ts, idx] : ts_index)
        idx = col++;
    Matrix out = Matrix::Zero(static_cast<Index>(region_ids.size()),
                              static_cast<Index>(ts_index.size()));
    for (const auto& [ri, ts, v] : rows)
        out(ri, ts_index[ts]) = v;
    return out;
}

}  // namespace mobcast
