#include "mobcast/analysis.hpp"
#include "mobcast/intent_extract.hpp"
#include "mobcast/synthworld.hpp"
#include "mobcast/time_util.hpp"
#include "mobcast/train_eval.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace mobcast;

namespace {

WorldSpec world_spec_from_json(const std::string& path) {
    WorldSpec spec;
    if (path.empty())
        return spec;
    std::ifstream is(path);
    if (!is)
        throw IoError("cannot open config " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw ValidationError("config " + path + ": " + e.what());
    }
    spec.n_regions = j.value("n_regions", spec.n_regions);
    spec.days = j.value("days", spec.days);
    spec.seed = j.value("seed", spec.seed);
    spec.poi_categories = j.value("poi_categories", spec.poi_categories);
    spec.poi_concentration = j.value("poi_concentration", spec.poi_concentration);
    spec.gravity_decay = j.value("gravity_decay", spec.gravity_decay);
    spec.base_volume_min = j.value("base_volume_min", spec.base_volume_min);
    spec.base_volume_max = j.value("base_volume_max", spec.base_volume_max);
    spec.noise_scale = j.value("noise_scale", spec.noise_scale);
    spec.event_rate = j.value("event_rate", spec.event_rate);
    spec.effect_amplitude = j.value("effect_amplitude", spec.effect_amplitude);
    spec.temporal_decay = j.value("temporal_decay", spec.temporal_decay);
    spec.effect_truncation_hours = j.value("effect_truncation_hours",
                                           spec.effect_truncation_hours);
    return spec;
}

TrainConfig train_config(const std::string& path) {
    return path.empty() ? TrainConfig{} : train_config_from_json_file(path);
}

struct AnalysisContext {
    World world;
    TrainConfig cfg;
    LoadedModel loaded;
    DataPipeline pipeline;
};

AnalysisContext make_context(const std::string& world_dir, const std::string& config_path,
                             const std::string& checkpoint_path) {
    TrainConfig cfg = train_config(config_path);
    World world = load_world(world_dir, LoadOptions{cfg.use_events});
    LoadedModel loaded = load_model_checkpoint(checkpoint_path, world, cfg);
    DataPipeline pipeline(world, cfg, loaded.header.seed, &loaded.scaler);
    return AnalysisContext{std::move(world), cfg, std::move(loaded), std::move(pipeline)};
}

const EventRecord& find_event(const World& world, const std::string& article_id) {
    for (const EventRecord& e : world.events)
        if (e.article_id == article_id)
            return e;
    throw ValidationError("unknown event id '" + article_id + "'");
}

// earliest stride-1 sample whose output window contains the event hour
std::size_t anchor_for_event(const DataPipeline& pipeline, const EventRecord& event) {
    const auto& world = pipeline.world();
    const Index hour = static_cast<Index>(
        (floor_to_hour(event.corrected_event_time) - world.mobility.timestamps.front()) / 3600);
    const Index t_in = pipeline.config().t_in;
    const Index t_out = pipeline.config().t_out;
    const Index anchor = hour - t_in;
    const Index max_anchor = world.mobility.n_hours() - t_in - t_out;
    const Index chosen = std::clamp<Index>(anchor, 0, max_anchor);
    const Index slot_hour = hour - chosen;
    if (slot_hour < 0 || slot_hour >= t_in + t_out)
        throw ValidationError("event at " + format_datetime(event.corrected_event_time) +
                              " cannot be covered by any sample window");
    return static_cast<std::size_t>(chosen);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"causality-aware human mobility prediction engine"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = ".";
    std::uint64_t seed = 1111;
    app.add_option("--config", config_path, "JSON config file")->expected(1);
    app.add_option("--seed", seed, "random seed");
    app.add_option("--out", out_dir, "output directory");
    app.fallthrough();

    // generate ---------------------------------------------------------------
    auto* gen = app.add_subcommand("generate", "synthesize a world with a causal oracle");

    // extract ----------------------------------------------------------------
    auto* ext = app.add_subcommand("extract", "run the intention-extraction dialog");
    std::string ext_in, ext_out, ext_endpoint = "http://localhost:11434",
                                 ext_model = "llama3:70b";
    bool ext_mock = false;
    double ext_temperature = 0.0;
    std::vector<std::string> ext_denylist;
    ext->add_option("--in", ext_in, "articles.jsonl")->required();
    ext->add_option("--out", ext_out, "events.jsonl")->required();
    ext->add_option("--endpoint", ext_endpoint, "chat-completions base URL");
    ext->add_option("--model", ext_model, "model name");
    ext->add_option("--temperature", ext_temperature, "sampling temperature");
    ext->add_option("--deny", ext_denylist, "keyword denylist entries");
    ext->add_flag("--mock", ext_mock, "use the offline structured-block extractor");

    // train ------------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train on a world directory");
    std::string tr_world;
    tr->add_option("--world", tr_world, "world directory")->required();

    // evaluate ---------------------------------------------------------------
    auto* ev = app.add_subcommand("evaluate", "metrics for a checkpoint on a split");
    std::string ev_world, ev_ckpt, ev_split = "test";
    ev->add_option("--world", ev_world)->required();
    ev->add_option("--checkpoint", ev_ckpt)->required();
    ev->add_option("--split", ev_split, "train|val|test");

    // ablate -----------------------------------------------------------------
    auto* ab = app.add_subcommand("ablate", "run the ablation matrix");
    std::string ab_world;
    std::vector<std::string> ab_variants = {"full", "naive", "wo_llm", "wo_reweight", "wo_cf"};
    ab->add_option("--world", ab_world)->required();
    ab->add_option("--variants", ab_variants, "variants to run");

    // ate --------------------------------------------------------------------
    auto* at = app.add_subcommand("ate", "model treatment-effect estimate for an event");
    std::string at_world, at_ckpt, at_event;
    std::int64_t at_anchor = -1;
    at->add_option("--world", at_world)->required();
    at->add_option("--checkpoint", at_ckpt)->required();
    at->add_option("--event-id", at_event)->required();
    at->add_option("--anchor", at_anchor, "sample index; default: first window covering it");

    // profile ----------------------------------------------------------------
    auto* pr = app.add_subcommand("profile", "similarity-interval response profile");
    std::string pr_world, pr_ckpt, pr_date;
    std::vector<int> pr_regions;
    pr->add_option("--world", pr_world)->required();
    pr->add_option("--checkpoint", pr_ckpt)->required();
    pr->add_option("--date", pr_date, "yyyy-mm-dd")->required();
    pr->add_option("--regions", pr_regions, "region indices")->required();

    // counterfactual ----------------------------------------------------------
    auto* cf = app.add_subcommand("counterfactual", "hourly counterfactual response curve");
    std::string cf_world, cf_ckpt, cf_date, cf_event;
    int cf_region = 0;
    cf->add_option("--world", cf_world)->required();
    cf->add_option("--checkpoint", cf_ckpt)->required();
    cf->add_option("--region", cf_region)->required();
    cf->add_option("--date", cf_date, "yyyy-mm-dd")->required();
    cf->add_option("--event-id", cf_event)->required();

    // case -------------------------------------------------------------------
    auto* ca = app.add_subcommand("case", "with/without-intentions error comparison");
    std::string ca_world, ca_ckpt;
    std::int64_t ca_anchor = 0;
    int ca_region = 0;
    ca->add_option("--world", ca_world)->required();
    ca->add_option("--checkpoint", ca_ckpt)->required();
    ca->add_option("--anchor", ca_anchor, "sample index")->required();
    ca->add_option("--region", ca_region)->required();

    // export-emb -------------------------------------------------------------
    auto* ex = app.add_subcommand("export-emb", "encoded treatments for projection tools");
    std::string ex_world, ex_ckpt;
    ex->add_option("--world", ex_world)->required();
    ex->add_option("--checkpoint", ex_ckpt)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        fs::create_directories(out_dir);

        if (gen->parsed()) {
            WorldSpec spec = world_spec_from_json(config_path);
            if (app.count("--seed"))
                spec.seed = seed;
            const SynthWorld world = generate_world(spec);
            export_fixture(world, out_dir);
            std::cout << "world: " << spec.n_regions << " regions, " << spec.days << " days, "
                      << world.events.size() << " events -> " << out_dir << "\n";
            if (world.clip_count > 0)
                std::cerr << "note: " << world.clip_count
                          << " region-hours clipped at zero during effect injection\n";
        } else if (ext->parsed()) {
            ExtractOptions options;
            options.mock = ext_mock;
            options.endpoint.base_url = ext_endpoint;
            options.endpoint.model = ext_model;
            options.endpoint.temperature = ext_temperature;
            options.keyword_denylist = ext_denylist;
            const auto articles = load_articles(ext_in);
            const auto records = extract_articles(articles, options);
            write_events(ext_out, records);
            std::size_t valid = 0;
            for (const auto& r : records)
                valid += r.valid ? 1 : 0;
            std::cout << "extracted " << valid << "/" << records.size() << " valid records -> "
                      << ext_out << "\n";
        } else if (tr->parsed()) {
            const TrainConfig cfg = train_config(config_path);
            const World world = load_world(tr_world, LoadOptions{cfg.use_events});
            Trainer trainer(world, cfg, seed);
            const TrainOutcome outcome = trainer.run();
            const std::string ckpt = (fs::path(out_dir) / "checkpoint.bin").string();
            trainer.save(ckpt, outcome.epochs_run);
            write_metrics_json((fs::path(out_dir) / "metrics.json").string(), cfg.task_name(),
                               seed, outcome.test_metrics);
            std::cout << "test rmse " << outcome.test_metrics.rmse << " mae "
                      << outcome.test_metrics.mae << " mape " << outcome.test_metrics.mape
                      << "% after " << outcome.epochs_run << " epochs -> " << ckpt << "\n";
        } else if (ev->parsed()) {
            AnalysisContext ctx = make_context(ev_world, config_path, ev_ckpt);
            const auto& split = ev_split == "train" ? ctx.pipeline.split().train
                                : ev_split == "val" ? ctx.pipeline.split().val
                                                    : ctx.pipeline.split().test;
            Trainer trainer(ctx.world, ctx.cfg, ctx.loaded.header.seed);
            restore_params(load_checkpoint(ev_ckpt), trainer.model().store());
            const MetricsReport m = trainer.evaluate(split);
            write_metrics_json((fs::path(out_dir) / "metrics.json").string(),
                               ctx.cfg.task_name() + "-" + ev_split, ctx.loaded.header.seed, m);
            std::cout << ev_split << " rmse " << m.rmse << " mae " << m.mae << " mape " << m.mape
                      << "%\n";
        } else if (ab->parsed()) {
            TrainConfig cfg = train_config(config_path);
            const AblationTable table = run_ablation_matrix(ab_world, cfg, ab_variants);
            const std::string csv = (fs::path(out_dir) / "ablation.csv").string();
            write_ablation_csv(csv, table);
            for (const AblationCell& cell : table.cells)
                write_metrics_json((fs::path(out_dir) / ("metrics-" + cell.variant + "-" +
                                                         std::to_string(cell.seed) + ".json"))
                                       .string(),
                                   cfg.task_name() + "-" + cell.variant, cell.seed, cell.metrics);
            std::cout << "ablation table -> " << csv << "\n";
        } else if (at->parsed()) {
            AnalysisContext ctx = make_context(at_world, config_path, at_ckpt);
            const EventRecord& event = find_event(ctx.world, at_event);
            const std::size_t anchor = at_anchor >= 0
                                           ? static_cast<std::size_t>(at_anchor)
                                           : anchor_for_event(ctx.pipeline, event);
            const AteReport report = estimate_ate(ctx.loaded.model, ctx.pipeline, anchor, event);
            nlohmann::json j;
            j["event_id"] = at_event;
            j["anchor"] = anchor;
            j["total"] = report.total();
            j["regions"] = nlohmann::json::array();
            for (std::size_t k = 0; k < report.region_ids.size(); ++k) {
                nlohmann::json r;
                r["region_id"] = report.region_ids[k];
                r["tau"] = std::vector<double>(
                    report.tau.row(static_cast<Index>(k)).begin(),
                    report.tau.row(static_cast<Index>(k)).end());
                j["regions"].push_back(r);
            }
            const std::string path = (fs::path(out_dir) / "ate.json").string();
            std::ofstream(path) << j.dump(2) << "\n";
            std::cout << "tau total " << report.total() << " -> " << path << "\n";
        } else if (pr->parsed()) {
            AnalysisContext ctx = make_context(pr_world, config_path, pr_ckpt);
            std::int64_t day_start;
            if (!parse_datetime(pr_date + " 00:00:00", day_start))
                throw ValidationError("bad --date " + pr_date);
            const Index anchor =
                (day_start - ctx.world.mobility.timestamps.front()) / 3600 - ctx.cfg.t_in;
            if (anchor < 0 ||
                static_cast<std::size_t>(anchor) >= ctx.pipeline.samples().size())
                throw ValidationError("date outside the sample range");
            const IntervalProfile profile = interval_profile(
                ctx.loaded.model, ctx.pipeline, static_cast<std::size_t>(anchor), pr_regions);
            const std::string path = (fs::path(out_dir) / "profile.csv").string();
            std::ofstream os(path, std::ios::trunc);
            os << "bin,center,population,region,step,change\n";
            for (std::size_t b = 0; b < profile.bin_index.size(); ++b)
                for (std::size_t r = 0; r < profile.regions.size(); ++r)
                    for (Index s = 0; s < profile.change[b].cols(); ++s)
                        os << profile.bin_index[b] << ',' << profile.bin_center[b] << ','
                           << profile.bin_population[b] << ',' << profile.regions[r] << ',' << s
                           << ',' << profile.change[b](static_cast<Index>(r), s) << "\n";
            std::cout << profile.bin_index.size() << " bins -> " << path << "\n";
        } else if (cf->parsed()) {
            AnalysisContext ctx = make_context(cf_world, config_path, cf_ckpt);
            const EventRecord& event = find_event(ctx.world, cf_event);
            const ResponseCurve curve =
                counterfactual_response(ctx.loaded.model, ctx.pipeline, cf_region, cf_date,
                                        event);
            const std::string path = (fs::path(out_dir) / "counterfactual.csv").string();
            std::ofstream os(path, std::ios::trunc);
            os << "hour,delta\n";
            for (std::size_t h = 0; h < curve.hours.size(); ++h)
                os << curve.hours[h] << ',' << curve.delta(static_cast<Index>(h)) << "\n";
            std::cout << "response curve -> " << path << "\n";
        } else if (ca->parsed()) {
            AnalysisContext ctx = make_context(ca_world, config_path, ca_ckpt);
            const CaseComparison cmp = case_compare(ctx.loaded.model, ctx.pipeline,
                                                    static_cast<std::size_t>(ca_anchor),
                                                    ca_region);
            const std::string path = (fs::path(out_dir) / "case.csv").string();
            std::ofstream os(path, std::ios::trunc);
            os << "hour,err_with,err_without,improvement\n";
            for (std::size_t h = 0; h < cmp.hours.size(); ++h)
                os << cmp.hours[h] << ',' << cmp.err_with(static_cast<Index>(h)) << ','
                   << cmp.err_without(static_cast<Index>(h)) << ','
                   << cmp.improvement(static_cast<Index>(h)) << "\n";
            std::cout << "case comparison -> " << path << "\n";
        } else if (ex->parsed()) {
            AnalysisContext ctx = make_context(ex_world, config_path, ex_ckpt);
            const auto rows = export_treatment_embeddings(
                ctx.loaded.model, ctx.world.events, ctx.cfg.t_in + ctx.cfg.t_out);
            const std::string path = (fs::path(out_dir) / "embeddings.csv").string();
            write_embeddings_csv(path, rows);
            std::cout << rows.size() << " embeddings -> " << path << "\n";
        }
        return 0;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
