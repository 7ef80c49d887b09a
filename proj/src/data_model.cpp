#include "mobcast/data_model.hpp"

#include "mobcast/rng.hpp"
#include "mobcast/time_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace mobcast {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ','))
        out.push_back(field);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

double parse_number(const std::string& s, const std::string& file, std::size_t line_no) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size())
            throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ValidationError(file + ":" + std::to_string(line_no) + ": not a number: '" + s +
                              "'");
    }
}

std::string od_filename(std::int64_t epoch) {
    std::int64_t days = epoch / 86400;
    std::int64_t rem = epoch % 86400;
    if (rem < 0) {
        rem += 86400;
        days -= 1;
    }
    int y, mo, d;
    civil_from_days(days, y, mo, d);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d.csv", y, mo, d,
                  static_cast<int>(rem / 3600));
    return buf;
}

std::vector<RegionFrame> load_regions(const std::string& path) {
    std::ifstream is(path);
    if (!is)
        throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(is, line))
        throw ValidationError(path + ": empty file");
    const auto header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "region_id" || header[1] != "name")
        throw ValidationError(path + ":1: expected header region_id,name,poi_c1,...");
    const Index c = static_cast<Index>(header.size()) - 2;

    std::vector<RegionFrame> regions;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty())
            continue;
        const auto fields = split_csv_line(line);
        if (static_cast<Index>(fields.size()) != c + 2)
            throw ValidationError(path + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(c + 2) + " fields, got " +
                                  std::to_string(fields.size()));
        RegionFrame r;
        r.region_id = fields[0];
        r.name = fields[1];
        r.poi_profile.resize(c);
        for (Index j = 0; j < c; ++j) {
            const double v = parse_number(fields[2 + static_cast<std::size_t>(j)], path, line_no);
            if (v < 0.0)
                throw ValidationError(path + ":" + std::to_string(line_no) +
                                      ": negative POI count for region " + r.region_id);
            r.poi_profile(j) = v;
        }
        for (const auto& existing : regions)
            if (existing.region_id == r.region_id)
                throw ValidationError(path + ":" + std::to_string(line_no) +
                                      ": duplicate region id " + r.region_id);
        r.index = static_cast<int>(regions.size());
        regions.push_back(std::move(r));
    }
    if (regions.empty())
        throw ValidationError(path + ": no regions");
    return regions;
}

}  // namespace

int World::region_index(const std::string& region_id) const {
    for (const auto& r : regions)
        if (r.region_id == region_id)
            return r.index;
    return -1;
}

Matrix renormalize_adjacency(const Matrix& raw_od) {
    if (raw_od.rows() != raw_od.cols())
        throw DimensionError("renormalize_adjacency: matrix must be square");
    if ((raw_od.array() < 0.0).any())
        throw ValidationError("renormalize_adjacency: negative entry");
    const Index n = raw_od.rows();
    Matrix a = raw_od + Matrix::Identity(n, n);
    Vector deg = a.rowwise().sum();
    Vector inv_sqrt = deg.array().inverse().sqrt();
    return inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
}

World load_world(const std::string& dir, const LoadOptions& options) {
    World world;
    world.regions = load_regions((fs::path(dir) / "regions.csv").string());
    const Index n = world.n_regions();

    // flows.csv -------------------------------------------------------------
    const std::string flows_path = (fs::path(dir) / "flows.csv").string();
    std::ifstream fis(flows_path);
    if (!fis)
        throw IoError("cannot open " + flows_path);
    std::string line;
    if (!std::getline(fis, line) || split_csv_line(line) != std::vector<std::string>{
                                        "region_id", "timestamp", "count"})
        throw ValidationError(flows_path + ":1: expected header region_id,timestamp,count");

    std::map<std::int64_t, Vector> by_ts;
    std::map<std::int64_t, std::vector<bool>> seen;
    std::size_t line_no = 1;
    while (std::getline(fis, line)) {
        ++line_no;
        if (line.empty())
            continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 3)
            throw ValidationError(flows_path + ":" + std::to_string(line_no) +
                                  ": expected 3 fields");
        const int ri = world.region_index(fields[0]);
        if (ri < 0)
            throw ValidationError(flows_path + ":" + std::to_string(line_no) +
                                  ": unknown region code '" + fields[0] + "'");
        std::int64_t ts;
        if (!parse_datetime(fields[1], ts))
            throw ValidationError(flows_path + ":" + std::to_string(line_no) +
                                  ": bad timestamp '" + fields[1] + "'");
        const double v = parse_number(fields[2], flows_path, line_no);
        if (v < 0.0)
            throw ValidationError(flows_path + ":" + std::to_string(line_no) +
                                  ": negative flow count");
        auto [it, inserted] = by_ts.try_emplace(ts, Vector::Zero(n));
        if (inserted)
            seen[ts].assign(static_cast<std::size_t>(n), false);
        it->second(ri) = v;
        seen[ts][static_cast<std::size_t>(ri)] = true;
    }
    if (by_ts.empty())
        throw ValidationError(flows_path + ": no flow rows");

    auto& mob = world.mobility;
    mob.timestamps.reserve(by_ts.size());
    mob.flows.resize(n, static_cast<Index>(by_ts.size()));
    Index col = 0;
    std::int64_t prev_ts = 0;
    for (const auto& [ts, values] : by_ts) {
        if (col > 0 && ts - prev_ts != 3600)
            throw ValidationError(flows_path + ": timestamps not hourly around " +
                                  format_datetime(ts));
        for (std::size_t r = 0; r < static_cast<std::size_t>(n); ++r)
            if (!seen[ts][r])
                throw ValidationError(flows_path + ": missing flow for region " +
                                      world.regions[r].region_id + " at " + format_datetime(ts));
        mob.timestamps.push_back(ts);
        mob.flows.col(col) = values;
        prev_ts = ts;
        ++col;
    }

    // od/ ---------------------------------------------------------------------
    mob.adjacency.reserve(mob.timestamps.size());
    for (const std::int64_t ts : mob.timestamps) {
        const std::string od_path = (fs::path(dir) / "od" / od_filename(ts)).string();
        std::ifstream ois(od_path);
        if (!ois)
            throw IoError("cannot open " + od_path);
        if (!std::getline(ois, line) || split_csv_line(line) != std::vector<std::string>{
                                            "origin_id", "dest_id", "count"})
            throw ValidationError(od_path + ":1: expected header origin_id,dest_id,count");
        Matrix raw = Matrix::Zero(n, n);
        std::size_t od_line = 1;
        while (std::getline(ois, line)) {
            ++od_line;
            if (line.empty())
                continue;
            const auto fields = split_csv_line(line);
            if (fields.size() != 3)
                throw ValidationError(od_path + ":" + std::to_string(od_line) +
                                      ": expected 3 fields");
            const int oi = world.region_index(fields[0]);
            const int di = world.region_index(fields[1]);
            if (oi < 0)
                throw ValidationError(od_path + ":" + std::to_string(od_line) +
                                      ": unknown region code '" + fields[0] + "'");
            if (di < 0)
                throw ValidationError(od_path + ":" + std::to_string(od_line) +
                                      ": unknown region code '" + fields[1] + "'");
            const double v = parse_number(fields[2], od_path, od_line);
            if (v < 0.0)
                throw ValidationError(od_path + ":" + std::to_string(od_line) +
                                      ": negative OD count");
            raw(oi, di) += v;
        }
        mob.adjacency.push_back(renormalize_adjacency(raw));
    }

    // events.jsonl ------------------------------------------------------------
    if (options.load_events) {
        const std::string ev_path = (fs::path(dir) / "events.jsonl").string();
        std::ifstream eis(ev_path);
        if (!eis)
            throw IoError("cannot open " + ev_path);
        line_no = 0;
        while (std::getline(eis, line)) {
            ++line_no;
            if (line.empty())
                continue;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded())
                throw ValidationError(ev_path + ":" + std::to_string(line_no) +
                                      ": invalid JSON");
            if (!j.value("valid", true)) {
                ++world.invalid_event_count;
                continue;
            }
            EventRecord e;
            e.article_id = j.value("article_id", std::string{});
            if (!parse_datetime(j.value("release_time", std::string{}), e.release_time))
                throw ValidationError(ev_path + ":" + std::to_string(line_no) +
                                      ": bad release_time");
            if (!parse_datetime(j.value("event_time", std::string{}), e.corrected_event_time))
                throw ValidationError(ev_path + ":" + std::to_string(line_no) +
                                      ": bad event_time");
            if (!j.contains("region_codes") || !j["region_codes"].is_array() ||
                j["region_codes"].empty())
                throw ValidationError(ev_path + ":" + std::to_string(line_no) +
                                      ": region_codes missing or empty");
            for (const auto& code : j["region_codes"]) {
                const std::string c = code.get<std::string>();
                if (world.region_index(c) < 0)
                    throw ValidationError(ev_path + ":" + std::to_string(line_no) +
                                          ": unknown region code '" + c + "'");
                e.region_codes.push_back(c);
            }
            e.category_label = j.value("category_label", std::string{});
            e.predictable = j.value("predictable", false);
            if (!j.contains("intentions") || !j["intentions"].is_array() ||
                j["intentions"].size() != kIntentionDim)
                throw ValidationError(ev_path + ":" + std::to_string(line_no) +
                                      ": intentions must be a list of 10 integers");
            for (int i = 0; i < kIntentionDim; ++i)
                e.intentions.q[static_cast<std::size_t>(i)] = j["intentions"][i].get<int>();
            if (!e.intentions.in_range())
                throw ValidationError(ev_path + ":" + std::to_string(line_no) +
                                      ": intention score out of [0,100]");
            if (j.contains("answers")) {
                e.answer_events = j["answers"].value("events", std::string{});
                e.answer_3w1h = j["answers"].value("w3h1", std::string{});
            }
            world.events.push_back(std::move(e));
        }
    }
    return world;
}

std::vector<Sample> make_samples(const World& world, Index t_in, Index t_out, Index stride) {
    if (t_in <= 0 || t_out <= 0 || stride <= 0)
        throw ValidationError("make_samples: window lengths and stride must be positive");
    const Index t = world.mobility.n_hours();
    if (t_in + t_out > t)
        throw ValidationError("make_samples: window of " + std::to_string(t_in + t_out) +
                              " exceeds series length " + std::to_string(t));
    std::vector<Sample> samples;
    for (Index a = 0; a + t_in + t_out <= t; a += stride)
        samples.push_back(Sample{a, t_in, t_out});
    return samples;
}

Matrix FlowScaler::transform(const Matrix& flows) const {
    Matrix out = flows;
    for (Index i = 0; i < out.rows(); ++i)
        out.row(i) = (out.row(i).array() - mean(i)) / std(i);
    return out;
}

Matrix FlowScaler::inverse(const Matrix& flows) const {
    Matrix out = flows;
    for (Index i = 0; i < out.rows(); ++i)
        out.row(i) = out.row(i).array() * std(i) + mean(i);
    return out;
}

FlowScaler fit_scaler(const World& world, const std::vector<Sample>& train_samples) {
    const Index n = world.n_regions();
    const Index t = world.mobility.n_hours();
    std::vector<bool> covered(static_cast<std::size_t>(t), false);
    for (const Sample& s : train_samples)
        for (Index h = s.anchor; h < s.anchor + s.t_in + s.t_out; ++h)
            covered[static_cast<std::size_t>(h)] = true;
    std::vector<Index> hours;
    for (Index h = 0; h < t; ++h)
        if (covered[static_cast<std::size_t>(h)])
            hours.push_back(h);
    if (hours.empty())
        throw ValidationError("fit_scaler: training samples cover no hours");

    FlowScaler scaler;
    scaler.mean.resize(n);
    scaler.std.resize(n);
    for (Index i = 0; i < n; ++i) {
        double sum = 0.0;
        for (Index h : hours)
            sum += world.mobility.flows(i, h);
        const double mu = sum / static_cast<double>(hours.size());
        double var = 0.0;
        for (Index h : hours)
            var += (world.mobility.flows(i, h) - mu) * (world.mobility.flows(i, h) - mu);
        var /= static_cast<double>(hours.size());
        scaler.mean(i) = mu;
        if (var <= 0.0) {
            std::cerr << "warning: zero-variance flows for region "
                      << world.regions[static_cast<std::size_t>(i)].region_id
                      << ", using std 1\n";
            scaler.std(i) = 1.0;
        } else {
            scaler.std(i) = std::sqrt(var);
        }
    }
    return scaler;
}

SplitIndices split_samples(std::size_t n_samples, std::uint64_t seed, double train_frac,
                           double val_frac) {
    std::vector<std::size_t> idx(n_samples);
    std::iota(idx.begin(), idx.end(), 0);
    RngStream rng(seed);
    rng.shuffle(idx);
    const auto n_train = static_cast<std::size_t>(std::floor(train_frac * n_samples));
    const auto n_val = static_cast<std::size_t>(std::floor(val_frac * n_samples));
    SplitIndices split;
    split.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                     idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    split.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

const RowVector* EventSlots::find_all(int region, Index hour) const {
    auto it = all.find({region, hour});
    return it == all.end() ? nullptr : &it->second;
}

const RowVector* EventSlots::find_predictable(int region, Index hour) const {
    auto it = predictable.find({region, hour});
    return it == predictable.end() ? nullptr : &it->second;
}

EventSlots build_event_slots(const World& world) {
    if (world.mobility.timestamps.empty())
        throw StateError("build_event_slots: world has no timeline");
    const std::int64_t t0 = world.mobility.timestamps.front();
    const Index t = world.mobility.n_hours();

    std::map<std::pair<int, Index>, std::pair<RowVector, int>> acc_all, acc_pred;
    for (const EventRecord& e : world.events) {
        const std::int64_t slot_ts = floor_to_hour(e.corrected_event_time);
        const std::int64_t offset = (slot_ts - t0) / 3600;
        if (offset < 0 || offset >= t)
            continue;
        const RowVector v = e.intentions.scaled();
        for (const std::string& code : e.region_codes) {
            const int ri = world.region_index(code);
            const std::pair<int, Index> key{ri, static_cast<Index>(offset)};
            auto add = [&](auto& acc) {
                auto [it, inserted] = acc.try_emplace(key, std::make_pair(v, 1));
                if (!inserted) {
                    it->second.first += v;
                    it->second.second += 1;
                }
            };
            add(acc_all);
            if (e.predictable)
                add(acc_pred);
        }
    }

    EventSlots slots;
    for (const auto& [key, sum_count] : acc_all)
        slots.all[key] = sum_count.first / static_cast<double>(sum_count.second);
    for (const auto& [key, sum_count] : acc_pred)
        slots.predictable[key] = sum_count.first / static_cast<double>(sum_count.second);
    return slots;
}

}  // namespace mobcast
