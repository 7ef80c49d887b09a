#include "mobcast/analysis.hpp"

#include "mobcast/time_util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace mobcast {

namespace {

Index event_hour_index(const DataPipeline& pipeline, const EventRecord& event) {
    const auto& timestamps = pipeline.world().mobility.timestamps;
    return static_cast<Index>(
        (floor_to_hour(event.corrected_event_time) - timestamps.front()) / 3600);
}

}  // namespace

RowVector event_rep_in_sample(const Model& model, const DataPipeline& pipeline,
                              std::size_t sample_idx, const EventRecord& event) {
    const Sample& s = pipeline.samples()[sample_idx];
    const Index seq_len = s.t_in + s.t_out;
    const Index slot = event_hour_index(pipeline, event) - s.anchor;
    if (slot < 0 || slot >= seq_len)
        throw ValidationError("event at " + format_datetime(event.corrected_event_time) +
                              " lies outside the sample window");
    return model.encode_sequence({{slot, event.intentions.scaled()}}, seq_len);
}

AteReport estimate_ate(const Model& model, const DataPipeline& pipeline, std::size_t sample_idx,
                       const EventRecord& event) {
    if (!event.valid)
        throw ValidationError("estimate_ate: invalid event record");
    const Sample& s = pipeline.samples()[sample_idx];
    const Index seq_len = s.t_in + s.t_out;
    const Matrix z = model.forward_confounder(pipeline.sample_data(sample_idx));
    const RowVector rep_event = event_rep_in_sample(model, pipeline, sample_idx, event);
    const RowVector rep_base = model.baseline_rep(seq_len);

    AteReport report;
    for (const std::string& code : event.region_codes) {
        const int ri = pipeline.world().region_index(code);
        if (ri < 0)
            throw ValidationError("estimate_ate: unknown region " + code);
        report.regions.push_back(ri);
        report.region_ids.push_back(code);
    }
    report.tau.resize(static_cast<Index>(report.regions.size()), s.t_out);
    for (std::size_t k = 0; k < report.regions.size(); ++k) {
        const int ri = report.regions[k];
        const RowVector y1 = model.infer_row(z.row(ri), rep_event);
        const RowVector y0 = model.infer_row(z.row(ri), rep_base);
        report.tau.row(static_cast<Index>(k)) = (y1 - y0) * pipeline.scaler().std(ri);
    }
    return report;
}

IntervalProfile interval_profile(const Model& model, const DataPipeline& pipeline,
                                 std::size_t sample_idx, const std::vector<int>& regions) {
    const ModelConfig& cfg = model.config();
    const Index seq_len = cfg.t_in + cfg.t_out;
    const RowVector rep_base = model.baseline_rep(seq_len);
    const SimilarityBinning binning{static_cast<int>(cfg.n_bins), 2.0 / cfg.n_bins};

    // collect treatment representations over the training split
    std::vector<RowVector> sums(static_cast<std::size_t>(cfg.n_bins),
                                RowVector::Zero(cfg.treat_hidden));
    std::vector<int> counts(static_cast<std::size_t>(cfg.n_bins), 0);
    for (const std::size_t idx : pipeline.split().train) {
        const SampleData& sd = pipeline.sample_data(idx);
        for (const auto& slots : sd.treat) {
            if (slots.empty())
                continue;
            const RowVector rep = model.encode_sequence(slots, seq_len);
            const auto [sim, bin] = cosine_bin(rep, rep_base, binning);
            sums[static_cast<std::size_t>(bin)] += rep;
            counts[static_cast<std::size_t>(bin)] += 1;
        }
    }
    // the baseline bin always exists: its representative is the baseline
    const int base_bin = static_cast<int>(cfg.n_bins) - 1;

    const Matrix z = model.forward_confounder(pipeline.sample_data(sample_idx));
    IntervalProfile profile;
    profile.regions = regions;
    for (int b = 0; b < static_cast<int>(cfg.n_bins); ++b) {
        RowVector centroid;
        if (counts[static_cast<std::size_t>(b)] > 0)
            centroid = sums[static_cast<std::size_t>(b)] /
                       static_cast<double>(counts[static_cast<std::size_t>(b)]);
        else if (b == base_bin)
            centroid = rep_base;
        else
            continue;  // empty bins are skipped
        profile.bin_index.push_back(b);
        profile.bin_center.push_back(-1.0 + (b + 0.5) * binning.width);
        profile.bin_population.push_back(counts[static_cast<std::size_t>(b)]);
        Matrix change(static_cast<Index>(regions.size()), cfg.t_out);
        for (std::size_t k = 0; k < regions.size(); ++k) {
            const int ri = regions[k];
            const RowVector with_c = model.infer_row(z.row(ri), centroid);
            const RowVector with_b = model.infer_row(z.row(ri), rep_base);
            change.row(static_cast<Index>(k)) = (with_c - with_b) * pipeline.scaler().std(ri);
        }
        profile.change.push_back(std::move(change));
    }
    return profile;
}

ResponseCurve counterfactual_response(const Model& model, const DataPipeline& pipeline,
                                      int region, const std::string& date,
                                      const EventRecord& event) {
    if (!event.valid)
        throw ValidationError("counterfactual_response: invalid event record");
    std::int64_t day_start;
    if (!parse_datetime(date + " 00:00:00", day_start))
        throw ValidationError("counterfactual_response: bad date '" + date + "'");
    const auto& world = pipeline.world();
    if (region < 0 || region >= world.n_regions())
        throw ValidationError("counterfactual_response: region index out of range");
    const Index t_in = pipeline.config().t_in;
    const Index seq_len = t_in + pipeline.config().t_out;
    const Index day_hour0 =
        static_cast<Index>((day_start - world.mobility.timestamps.front()) / 3600);
    const Index event_hour = event_hour_index(pipeline, event);
    const RowVector rep_base = model.baseline_rep(seq_len);

    ResponseCurve curve;
    curve.delta = Vector::Zero(24);
    for (int h = 0; h < 24; ++h) {
        const Index target_hour = day_hour0 + h;
        curve.hours.push_back(format_datetime(
            world.mobility.timestamps.front() + target_hour * 3600));
        const Index anchor = target_hour - t_in;
        if (anchor < 0 ||
            anchor + seq_len > world.mobility.n_hours())
            continue;
        const std::size_t sample_idx = static_cast<std::size_t>(anchor);  // stride-1 samples
        const Matrix z = model.forward_confounder(pipeline.sample_data(sample_idx));
        const Index slot = event_hour - anchor;
        RowVector rep = rep_base;
        if (slot >= 0 && slot < seq_len)
            rep = model.encode_sequence({{slot, event.intentions.scaled()}}, seq_len);
        const RowVector y1 = model.infer_row(z.row(region), rep);
        const RowVector y0 = model.infer_row(z.row(region), rep_base);
        curve.delta(h) = (y1(0) - y0(0)) * pipeline.scaler().std(region);
    }
    return curve;
}

CaseComparison case_compare(const Model& model, const DataPipeline& pipeline,
                            std::size_t sample_idx, int region) {
    const auto& world = pipeline.world();
    if (region < 0 || region >= world.n_regions())
        throw ValidationError("case_compare: region index out of range");
    const Sample& s = pipeline.samples()[sample_idx];
    const Index seq_len = s.t_in + s.t_out;
    const SampleData& sd = pipeline.sample_data(sample_idx);
    const Matrix z = model.forward_confounder(sd);
    const RowVector rep_base = model.baseline_rep(seq_len);

    const auto& slots = sd.treat[static_cast<std::size_t>(region)];
    const RowVector rep_with =
        slots.empty() ? rep_base : model.encode_sequence(slots, seq_len);

    const RowVector pred_with = model.infer_row(z.row(region), rep_with);
    const RowVector pred_without = model.infer_row(z.row(region), rep_base);

    const double std_i = pipeline.scaler().std(region);
    const double mean_i = pipeline.scaler().mean(region);
    const Matrix raw = pipeline.raw_targets(sample_idx);

    CaseComparison cmp;
    cmp.err_with.resize(s.t_out);
    cmp.err_without.resize(s.t_out);
    cmp.improvement.resize(s.t_out);
    for (Index k = 0; k < s.t_out; ++k) {
        const std::int64_t ts =
            world.mobility.timestamps[static_cast<std::size_t>(s.anchor + s.t_in + k)];
        cmp.hours.push_back(format_datetime(ts));
        const double truth = raw(region, k);
        const double with_v = pred_with(k) * std_i + mean_i;
        const double without_v = pred_without(k) * std_i + mean_i;
        cmp.err_with(k) = std::abs(with_v - truth);
        cmp.err_without(k) = std::abs(without_v - truth);
        cmp.improvement(k) = cmp.err_without(k) - cmp.err_with(k);
    }
    return cmp;
}

std::vector<EmbeddingRow> export_treatment_embeddings(const Model& model,
                                                      const std::vector<EventRecord>& events,
                                                      Index seq_len) {
    std::vector<EmbeddingRow> rows;
    for (const EventRecord& e : events) {
        if (!e.valid)
            continue;
        EmbeddingRow row;
        row.id = e.article_id;
        row.quadrant = quadrant_code(categorize_event(e));
        row.label = e.category_label;
        // canonical placement: the event at the final slot of the window
        row.rep = model.encode_sequence({{seq_len - 1, e.intentions.scaled()}}, seq_len);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_embeddings_csv(const std::string& path, const std::vector<EmbeddingRow>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw IoError("cannot open " + path + " for writing");
    os << "id,quadrant,label";
    if (!rows.empty())
        for (Index j = 0; j < rows.front().rep.size(); ++j)
            os << ",h" << j;
    os << "\n";
    char buf[64];
    for (const EmbeddingRow& row : rows) {
        os << row.id << ',' << row.quadrant << ',' << row.label;
        for (Index j = 0; j < row.rep.size(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", row.rep(j));
            os << ',' << buf;
        }
        os << "\n";
    }
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]])
            ++j;
        const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k)
            ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw ValidationError("spearman: need two equal-length series of size >= 2");
    const std::vector<double> ra = average_ranks(a);
    const std::vector<double> rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va <= 0.0 || vb <= 0.0)
        return 0.0;
    return cov / std::sqrt(va * vb);
}

double sign_agreement(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty())
        throw ValidationError("sign_agreement: need equal-length non-empty series");
    std::size_t agree = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const int sa = a[i] > 0.0 ? 1 : (a[i] < 0.0 ? -1 : 0);
        const int sb = b[i] > 0.0 ? 1 : (b[i] < 0.0 ? -1 : 0);
        if (sa == sb)
            ++agree;
    }
    return static_cast<double>(agree) / static_cast<double>(a.size());
}

}  // namespace mobcast
