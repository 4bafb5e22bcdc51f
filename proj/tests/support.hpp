#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <csignal>
#include <filesystem>
#include <set>

#include "hydroclean/hydroclean.hpp"

namespace hydroclean::testing {

namespace fs = std::filesystem;

/// Half a year, a few dozen meters, every error class present.
inline synth::SyntheticPlan small_plan(std::uint64_t seed, std::size_t streams = 40) {
    synth::SyntheticPlan p;
    p.seed = seed;
    p.stream_count = streams;
    p.hours = 24 * 184;
    p.spike_count = streams / 5;
    p.spike_decoys = 2;
    p.spike_burst_days = 3;
    p.reset_count = std::max<std::size_t>(1, streams / 12);
    p.mui_rate = 0.1;
    p.mui_first_day = 30;
    p.mui_last_day = 150;
    p.global_outage_days = 1;
    p.orphan_count = 2;
    p.quantized_rate = 0.05;
    return p;
}

/// Quantized meters on a half-year corpus register fewer nonzero hours than
/// the full-year default expects.
inline PipelineConfig small_config(unsigned workers = 1) {
    PipelineConfig c;
    c.workers = workers;
    c.quantized_min_nonzero = 200;
    return c;
}

/// Writes the corpus CSVs under `dir / "in"` and ingests them into `dir / "store"`.
inline pipeline::Store ingest_corpus(const synth::Corpus& c, const fs::path& dir, unsigned workers = 1) {
    const auto in = dir / "in";
    if (!fs::exists(in / "amid.csv")) synth::write_corpus(c, in, false);
    return pipeline::ingest(in / "amid.csv", in / "mind.csv", in / "bild.csv", dir / "store", workers).first;
}

/// Journals every ground-truth verdict not already in the store's journal.
inline std::size_t journal_verdicts(pipeline::Store& st, const synth::GroundTruth& gt) {
    std::set<std::uint64_t> have;
    for (const auto& v : st.verdicts()) have.insert(v.event_id);
    std::size_t added = 0;
    for (const auto& v : eval::ground_truth_verdicts(st.load(4), gt))
        if (!have.count(v.event_id)) {
            st.append_verdict(v);
            ++added;
        }
    return added;
}

/// Runs every remaining phase, journaling ground-truth verdicts before phase 5.
inline void drive(pipeline::Store& st, const synth::GroundTruth& gt, const PipelineConfig& cfg) {
    for (int p = st.phase_completed() + 1; p <= 4; ++p) pipeline::run_phase(st, p, cfg);
    if (st.phase_completed() < 5) {
        journal_verdicts(st, gt);
        pipeline::run_phase(st, 5, cfg);
    }
}

inline std::size_t open_count(const pipeline::State& s, AnomalyClass c) {
    std::size_t n = 0;
    for (const auto& e : s.events) n += e.cls == c && pipeline::is_open(e.status) ? 1 : 0;
    return n;
}

inline std::size_t new_count(const pipeline::State& before, const pipeline::State& after, AnomalyClass c) {
    std::size_t n = 0;
    for (const auto& e : after.events) n += e.cls == c && !before.event(e.id) ? 1 : 0;
    return n;
}

/// First phase/class whose ledger disagrees with the event journal, or "".
inline std::string ledger_mismatch(const pipeline::Store& st) {
    for (int p = 0; p <= st.phase_completed(); ++p) {
        const auto before = st.load(p - 1);
        const auto after = st.load(p);
        const auto& report = after.reports.at(static_cast<std::size_t>(p));
        for (auto cls : kAllAnomalyClasses) {
            const auto& c = report.counts.at(cls);
            if (c.found != c.resolved + c.carried_forward || c.found != open_count(before, cls) + new_count(before, after, cls) ||
                c.carried_forward != open_count(after, cls))
                return "phase " + std::to_string(p) + " " + std::string(to_string(cls));
        }
    }
    return "";
}

/// Uninterrupted run used as the reference for crash tests.
inline std::string reference_hash(const synth::Corpus& c, const fs::path& dir, const PipelineConfig& cfg) {
    auto st = ingest_corpus(c, dir, cfg.worker_count());
    drive(st, c.ground_truth, cfg);
    return st.committed_hash();
}

/// Forks a child that dies by SIGKILL on the n-th visit to `point`, then
/// resumes in this process. Returns the final hash and whether the child was killed.
inline std::pair<std::string, bool> crash_and_resume(const synth::Corpus& c, const fs::path& dir, const PipelineConfig& cfg,
                                              const std::string& point, int n) {
    fs::create_directories(dir);
    synth::write_corpus(c, dir / "in", false);
    const pid_t pid = ::fork();
    if (pid == 0) {
        int hits = 0;
        store::crash_hook() = [&](std::string_view name) {
            if (name == point && ++hits == n) ::kill(::getpid(), SIGKILL);
        };
        try {
            auto st = ingest_corpus(c, dir, 1);
            drive(st, c.ground_truth, cfg);
        } catch (...) {
            ::_exit(1);
        }
        ::_exit(0);
    }
    int status = 0;
    ::waitpid(pid, &status, 0);
    const bool killed = WIFSIGNALED(status) && WTERMSIG(status) == SIGKILL;
    if (!killed && !(WIFEXITED(status) && WEXITSTATUS(status) == 0)) return {"child failed", false};

    const auto store_dir = dir / "store";
    std::optional<pipeline::Store> st;
    if (fs::exists(store::Layout{store_dir}.manifest())) {
        st.emplace(pipeline::Store::open(store_dir, 1));
    } else {
        fs::remove_all(store_dir);
        st.emplace(ingest_corpus(c, dir, 1));
    }
    drive(*st, c.ground_truth, cfg);
    return {st->committed_hash(), killed};
}

}  // namespace hydroclean::testing
