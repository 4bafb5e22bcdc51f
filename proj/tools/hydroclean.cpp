#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "hydroclean/hydroclean.hpp"

namespace fs = std::filesystem;
using namespace hydroclean;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitPhaseOrder = 3;

struct Globals {
    std::optional<std::string> config;
    std::int64_t workers = -1;

    PipelineConfig pipeline() const {
        auto c = load_pipeline_config(config ? std::optional<fs::path>(*config) : std::nullopt);
        if (workers >= 0) c.workers = workers;
        c.validate();
        return c;
    }
};

void emit(const json& j, const std::optional<std::string>& out) {
    if (!out) {
        std::cout << j.dump(2) << '\n';
        return;
    }
    std::ofstream f(*out, std::ios::binary);
    if (!f) throw Error(Errc::MissingFile, "cannot write " + *out);
    f << j.dump(1) << '\n';
}

json read_json(const fs::path& p) {
    try {
        return json::parse(store::slurp(p));
    } catch (const json::exception& e) {
        throw Error(Errc::InvalidValue, p.string() + ": " + e.what());
    }
}

/// A ranking file holds either a bare Ranking or a peaks report with "top_k".
Ranking read_ranking(const fs::path& p) {
    const auto j = read_json(p);
    try {
        return (j.contains("top_k") ? j.at("top_k") : j).get<Ranking>();
    } catch (const json::exception& e) {
        throw Error(Errc::InvalidValue, p.string() + ": not a ranking: " + e.what());
    }
}

/// Streams from a store directory (latest committed phase) or an AMID CSV.
std::vector<DataStream> read_streams(const fs::path& p, unsigned workers) {
    if (fs::is_directory(p)) return pipeline::Store::open(p, workers).current().streams;
    return eval::load_amid(p);
}

std::string_view class_token(AnomalyClass c) {
    switch (c) {
        case AnomalyClass::MUI: return "mui";
        case AnomalyClass::Spike: return "spike";
        case AnomalyClass::Reset: return "reset";
        case AnomalyClass::Quantized: return "quantized";
        case AnomalyClass::DuplicateStream: return "duplicate-stream";
        case AnomalyClass::DuplicateRecord: return "duplicate-record";
        case AnomalyClass::Conflict: return "conflict";
        case AnomalyClass::Gap: return "gap";
    }
    return "";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hydroclean: smart-meter data cleaning"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "TOML file with [pipeline] and [plan] tables")->check(CLI::ExistingFile);
    app.add_option("--workers", g.workers, "worker threads (0 = all cores)");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus with planted errors");
    std::optional<std::string> plan_path;
    std::optional<std::uint64_t> seed;
    std::string synth_out;
    bool no_clean = false;
    synth_cmd->add_option("--plan", plan_path, "TOML file with a [plan] table")->check(CLI::ExistingFile);
    synth_cmd->add_option("--seed", seed, "overrides plan.seed");
    synth_cmd->add_option("--out", synth_out, "output directory")->required();
    synth_cmd->add_flag("--no-clean", no_clean, "skip clean_amid.csv");

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "parse AMID/MIND/BILD files into a new store");
    std::string amid, mind, bild, ingest_out;
    std::optional<std::string> ingest_tier;
    ingest_cmd->add_option("--amid", amid)->required()->check(CLI::ExistingFile);
    ingest_cmd->add_option("--mind", mind)->required()->check(CLI::ExistingFile);
    ingest_cmd->add_option("--bild", bild)->required()->check(CLI::ExistingFile);
    ingest_cmd->add_option("--out,--store", ingest_out, "store directory")->required();
    ingest_cmd->add_option("--join-tier", ingest_tier, "account-only|three-field-exact|three-field-partial|manual-partial");

    // clean
    auto* clean_cmd = app.add_subcommand("clean", "run cleaning phases on a store");
    std::string clean_store;
    int phase = 0;
    std::optional<int> through;
    std::optional<std::string> conflict_policy, clean_tier;
    clean_cmd->add_option("--store", clean_store)->required()->check(CLI::ExistingDirectory);
    clean_cmd->add_option("--phase", phase, "phase 0..5")->required();
    clean_cmd->add_option("--through", through, "run phases --phase..--through");
    clean_cmd->add_option("--conflict-policy", conflict_policy, "drop|first|min");
    clean_cmd->add_option("--join-tier", clean_tier);

    // detect
    auto* detect_cmd = app.add_subcommand("detect", "print anomaly events as JSON Lines");
    std::string detect_store;
    std::string classes = "mui,spike,reset,quantized";
    detect_cmd->add_option("--store", detect_store)->required()->check(CLI::ExistingDirectory);
    detect_cmd->add_option("--classes", classes, "comma-separated classes, or 'all'");

    // peaks
    auto* peaks_cmd = app.add_subcommand("peaks", "peak window and top contributors");
    std::string peaks_store;
    std::int64_t window_hours = 24;
    std::optional<long long> top_k;
    std::string dataset = "clean";
    std::optional<std::string> peaks_out;
    peaks_cmd->add_option("--store", peaks_store)->required()->check(CLI::ExistingDirectory);
    peaks_cmd->add_option("--window-hours", window_hours);
    peaks_cmd->add_option("--top-k", top_k);
    peaks_cmd->add_option("--dataset", dataset, "clean (latest phase) or dirty (as ingested)")
        ->check(CLI::IsMember({"clean", "dirty"}));
    peaks_cmd->add_option("--out", peaks_out);

    // metrics
    auto* metrics_cmd = app.add_subcommand("metrics", "rank comparison metrics");
    metrics_cmd->require_subcommand(1);
    auto* wkt_cmd = metrics_cmd->add_subcommand("wkt", "weighted Kendall's tau between two rankings");
    std::string ref_path, cand_path;
    std::optional<std::string> weights_path, metrics_out;
    wkt_cmd->add_option("--ref", ref_path)->required()->check(CLI::ExistingFile);
    wkt_cmd->add_option("--cand", cand_path)->required()->check(CLI::ExistingFile);
    wkt_cmd->add_option("--weights", weights_path, "JSON object key -> litres; unit weights if absent")
        ->check(CLI::ExistingFile);
    wkt_cmd->add_option("--out", metrics_out);

    auto* recall_cmd = metrics_cmd->add_subcommand("recall", "recall@k profile as k,recall CSV");
    std::size_t k_max = 100;
    recall_cmd->add_option("--ref", ref_path)->required()->check(CLI::ExistingFile);
    recall_cmd->add_option("--cand", cand_path)->required()->check(CLI::ExistingFile);
    recall_cmd->add_option("--k-max", k_max);
    recall_cmd->add_option("--out", metrics_out);

    auto* weights_cmd = metrics_cmd->add_subcommand("weights", "reference consumption in the peak month");
    std::string weights_store;
    weights_cmd->add_option("--store", weights_store)->required()->check(CLI::ExistingDirectory);
    weights_cmd->add_option("--ref", ref_path, "ranking whose window picks the month")->required()->check(CLI::ExistingFile);
    weights_cmd->add_option("--out", metrics_out);

    auto* profile_cmd = metrics_cmd->add_subcommand("wkt-profile", "tau against peak-window length in days");
    std::int64_t max_days = 90;
    profile_cmd->add_option("--ref", ref_path, "store directory or AMID CSV")->required()->check(CLI::ExistingPath);
    profile_cmd->add_option("--cand", cand_path, "store directory or AMID CSV")->required()->check(CLI::ExistingPath);
    profile_cmd->add_option("--days", max_days);
    profile_cmd->add_option("--out", metrics_out);

    // review
    auto* review_cmd = app.add_subcommand("review", "MUI review queue");
    review_cmd->require_subcommand(1);
    auto* serve_cmd = review_cmd->add_subcommand("serve", "serve the review HTTP API");
    std::string review_store, bind = "127.0.0.1:8080";
    serve_cmd->add_option("--store", review_store)->required()->check(CLI::ExistingDirectory);
    serve_cmd->add_option("--bind", bind, "host:port");
    auto* auto_cmd = review_cmd->add_subcommand("auto", "journal verdicts taken from a generator's truth.json");
    std::string truth_path;
    auto_cmd->add_option("--store", review_store)->required()->check(CLI::ExistingDirectory);
    auto_cmd->add_option("--truth", truth_path)->required()->check(CLI::ExistingFile);

    // report
    auto* report_cmd = app.add_subcommand("report", "phase ledger, notes and optional recovery score");
    std::string report_store;
    std::optional<std::string> report_truth;
    report_cmd->add_option("--store", report_store)->required()->check(CLI::ExistingDirectory);
    report_cmd->add_option("--truth", report_truth)->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitValidation;
    }

    try {
        if (*synth_cmd) {
            auto plan = load_plan(plan_path ? std::optional<fs::path>(*plan_path)
                                            : g.config ? std::optional<fs::path>(*g.config) : std::nullopt);
            if (seed) plan.seed = *seed;
            plan.validate();
            const auto workers = g.pipeline().worker_count();
            const auto corpus = synth::generate_synthetic(plan, workers);
            synth::write_corpus(corpus, synth_out, !no_clean);
            emit({{"out", synth_out},
                  {"plan", synth::plan_to_json(plan)},
                  {"streams_dirty", corpus.dirty.size()},
                  {"planted", {{"spikes", corpus.ground_truth.spikes.size()},
                               {"resets", corpus.ground_truth.resets.size()},
                               {"mui", corpus.ground_truth.mui.size()},
                               {"quantized", corpus.ground_truth.quantized.size()},
                               {"duplicate_streams", corpus.ground_truth.duplicate_streams.size()},
                               {"duplicate_records", corpus.ground_truth.duplicate_records.size()}}}},
                 std::nullopt);
        } else if (*ingest_cmd) {
            auto cfg = g.pipeline();
            if (ingest_tier) cfg.join_tier = *ingest_tier;
            cfg.validate();
            auto [st, summary] = pipeline::ingest(amid, mind, bild, ingest_out, cfg.worker_count());
            const auto in = st.inputs();
            const auto s = st.current();
            std::vector<CompositeKey> keys;
            for (const auto& x : s.streams) keys.push_back(x.key);
            const auto report = ingestion::resolve_keys(keys, in.mind, in.bild, cfg.tier(), cfg.worker_count()).second;
            emit({{"store", ingest_out}, {"ingest", summary.to_json()}, {"join_report", report}}, std::nullopt);
        } else if (*clean_cmd) {
            auto cfg = g.pipeline();
            if (conflict_policy) cfg.conflict_policy = *conflict_policy;
            if (clean_tier) cfg.join_tier = *clean_tier;
            cfg.validate();
            auto st = pipeline::Store::open(clean_store, cfg.worker_count());
            const int last = through.value_or(phase);
            json out = json::array();
            for (int p = phase; p <= last; ++p) {
                const auto report = pipeline::run_phase(st, p, cfg);
                json item{{"report", report}};
                if (p == 2) {
                    const auto s = st.current();
                    std::size_t complete = 0, partial = 0, empty = 0;
                    for (const auto& c : pipeline::censuses(s, cfg.worker_count())) {
                        complete += c.missing_timestamps.empty() ? 1 : 0;
                        empty += c.present_count == 0 ? 1 : 0;
                        partial += !c.missing_timestamps.empty() && c.present_count > 0 ? 1 : 0;
                    }
                    item["gap_census"] = {{"streams_complete", complete},
                                          {"streams_partial", partial},
                                          {"streams_empty", empty},
                                          {"notes", s.notes.value("2", json::object())}};
                }
                out.push_back(std::move(item));
            }
            emit(out, std::nullopt);
        } else if (*detect_cmd) {
            std::set<std::string> wanted;
            std::stringstream ss(classes);
            for (std::string tok; std::getline(ss, tok, ',');)
                if (!tok.empty()) wanted.insert(tok);
            const bool all = wanted.count("all") > 0;
            const auto st = pipeline::Store::open(detect_store, g.pipeline().worker_count());
            const auto s = st.current();
            for (const auto& e : s.events)
                if (all || wanted.count(std::string(class_token(e.cls)))) std::cout << json(e).dump() << '\n';
        } else if (*peaks_cmd) {
            auto cfg = g.pipeline();
            const auto st = pipeline::Store::open(peaks_store, cfg.worker_count());
            const auto s = dataset == "dirty" ? st.load(store::kIngestPhase) : st.current();
            if (window_hours < 1 || window_hours > s.analysis_range.hours())
                throw Error(Errc::InvalidValue, "window must lie within the analysis range");
            auto report = pipeline::peak_report(s, pipeline::censuses(s, cfg.worker_count()), window_hours,
                                                top_k.value_or(cfg.top_k), cfg);
            report["dataset"] = dataset;
            report["phase_completed"] = s.phase_completed;
            emit(report, peaks_out);
        } else if (*wkt_cmd) {
            const auto ref = read_ranking(ref_path);
            const auto cand = read_ranking(cand_path);
            rank::WeightVector w;
            if (weights_path) {
                const auto j = read_json(*weights_path);
                for (const auto& [k, v] : j.items()) w[CompositeKey::parse(k)] = v.get<std::int64_t>();
            } else {
                for (const auto& e : ref.entries) w[e.key] = 1;
                for (const auto& e : cand.entries) w[e.key] = 1;
            }
            const auto r = rank::weighted_kendall_tau(ref, cand, w, rank::Kernel::Auto, g.pipeline().worker_count());
            emit({{"k_w", r.k_w_normalized ? json(*r.k_w_normalized) : json(nullptr)},
                  {"k_w_raw_m3", r.k_w_raw},
                  {"n", std::max(ref.size(), cand.size())}},
                 metrics_out);
        } else if (*recall_cmd) {
            const auto ref = read_ranking(ref_path);
            const auto cand = read_ranking(cand_path);
            std::ostringstream csv;
            csv << "k,recall\n";
            for (const auto& p : rank::recall_profile(ref, cand, k_max)) csv << p.k << ',' << p.recall << '\n';
            if (metrics_out)
                store::write_atomic(*metrics_out, csv.str());
            else
                std::cout << csv.str();
        } else if (*weights_cmd) {
            const auto ref = read_ranking(ref_path);
            const auto s = pipeline::Store::open(weights_store).current();
            json out = json::object();
            for (const auto& [k, v] : rank::consumption_weights(s.streams, rank::calendar_month_of(ref.window.begin)))
                out[k.str()] = v;
            emit(out, metrics_out);
        } else if (*profile_cmd) {
            const auto workers = g.pipeline().worker_count();
            const auto points = eval::wkt_profile(read_streams(ref_path, workers), read_streams(cand_path, workers),
                                                  max_days, workers);
            std::ostringstream csv;
            csv << "days,k_w\n";
            for (const auto& p : points)
                csv << p.days << ',' << (p.result.k_w_normalized ? std::to_string(*p.result.k_w_normalized) : "") << '\n';
            if (metrics_out)
                store::write_atomic(*metrics_out, csv.str());
            else
                std::cout << csv.str();
        } else if (*serve_cmd) {
            const auto cfg = g.pipeline();
            const auto colon = bind.rfind(':');
            if (colon == std::string::npos) throw Error(Errc::InvalidValue, "--bind expects host:port");
            int port = 0;
            try {
                port = std::stoi(bind.substr(colon + 1));
            } catch (const std::exception&) {
                throw Error(Errc::InvalidValue, "bad port in --bind");
            }
            auto st = pipeline::Store::open(review_store, cfg.worker_count());
            review::ReviewService svc(st, cfg);
            std::cerr << "serving " << review_store << " on " << bind << '\n';
            if (!svc.listen(bind.substr(0, colon), port)) throw Error(Errc::InvalidValue, "cannot bind " + bind);
        } else if (*auto_cmd) {
            auto st = pipeline::Store::open(review_store, g.pipeline().worker_count());
            if (st.phase_completed() < 4)
                throw Error(Errc::PhaseOrderViolation, "review needs phase 4 completed");
            const auto gt = synth::ground_truth_from_json(read_json(truth_path));
            std::set<std::uint64_t> journaled;
            for (const auto& v : st.verdicts()) journaled.insert(v.event_id);
            std::size_t added = 0;
            for (const auto& v : eval::ground_truth_verdicts(st.load(4), gt)) {
                if (journaled.count(v.event_id)) continue;
                st.append_verdict(v);
                ++added;
            }
            emit({{"verdicts_added", added}, {"verdicts_total", journaled.size() + added}}, std::nullopt);
        } else if (*report_cmd) {
            const auto st = pipeline::Store::open(report_store, g.pipeline().worker_count());
            const auto s = st.current();
            json out{{"phase_completed", s.phase_completed},
                     {"state_hash", st.committed_hash()},
                     {"streams", s.streams.size()},
                     {"reports", s.reports},
                     {"join_reports", s.join_reports},
                     {"notes", s.notes}};
            if (report_truth) out["recovery"] = eval::score(s, synth::ground_truth_from_json(read_json(*report_truth))).to_json();
            emit(out, std::nullopt);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.code() == Errc::PhaseOrderViolation ? kExitPhaseOrder : kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
