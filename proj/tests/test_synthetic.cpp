#include <cmath>

#include "fixtures.hpp"

using namespace hydroclean;
using hydroclean::testing::small_plan;
using hydroclean::testing::TempDir;

namespace {

const DataStream& by_key(const std::vector<DataStream>& v, const CompositeKey& k) {
    for (const auto& s : v)
        if (s.key == k) return s;
    throw std::runtime_error("no stream " + k.str());
}

std::int64_t value_at(const DataStream& s, Hour h) {
    for (const auto& r : s.readings)
        if (r.at == h) return r.value.litres;
    throw std::runtime_error("no reading at hour");
}

}  // namespace

TEST(Synthetic, SameSeedGivesByteIdenticalFilesAcrossWorkers) {
    TempDir d;
    const auto plan = small_plan(11, 20);
    synth::write_corpus(synth::generate_synthetic(plan, 1), d.path / "a");
    synth::write_corpus(synth::generate_synthetic(plan, 3), d.path / "b");
    for (const auto* f : {"amid.csv", "mind.csv", "bild.csv", "clean_amid.csv", "truth.json"})
        EXPECT_EQ(store::slurp(d.path / "a" / f), store::slurp(d.path / "b" / f)) << f;
}

TEST(Synthetic, DifferentSeedsDiffer) {
    const auto a = synth::generate_synthetic(small_plan(1, 10));
    const auto b = synth::generate_synthetic(small_plan(2, 10));
    EXPECT_NE(a.truth, b.truth);
}

TEST(Synthetic, CleanPlanPlantsNothingAndDetectorsStayQuiet) {
    auto plan = synth::SyntheticPlan::clean(25, 4);
    plan.hours = 24 * 184;
    plan.mui_last_day = 150;
    const auto c = synth::generate_synthetic(plan);
    EXPECT_EQ(c.dirty, c.truth);
    EXPECT_TRUE(c.ground_truth.spikes.empty());
    EXPECT_TRUE(c.ground_truth.mui.empty());
    const auto months = detect::calendar_month_boundaries(plan.range().begin);
    for (const auto& s : c.truth) {
        EXPECT_EQ(s.readings.size(), static_cast<std::size_t>(plan.hours));
        EXPECT_TRUE(detect::detect_spikes(s, {}).empty()) << s.key.str();
        EXPECT_TRUE(detect::detect_resets(s).empty()) << s.key.str();
        EXPECT_FALSE(detect::detect_quantized(s, {}).has_value()) << s.key.str();
        const auto p = detect::std_profile(s, months);
        ASSERT_TRUE(p.std2m.has_value());
        EXPECT_EQ(detect::classify_mui(*p.std2m, {}), detect::MuiVerdict::Clean) << s.key.str() << " " << *p.std2m;
    }
}

TEST(Synthetic, BillingTotalsEqualTruthSums) {
    auto plan = synth::SyntheticPlan::clean(8, 9);
    const auto c = synth::generate_synthetic(plan);
    ASSERT_FALSE(c.bild.empty());
    for (const auto& b : c.bild) {
        std::int64_t sum = 0;
        for (const auto& r : by_key(c.truth, b.key).readings)
            if (b.hours().contains(r.at)) sum += r.value.litres;
        EXPECT_EQ(sum, b.consumption.litres);
    }
}

TEST(Synthetic, PlantedErrorsAppearInDirtyStreams) {
    const auto c = synth::generate_synthetic(small_plan(21, 40));
    const auto& gt = c.ground_truth;
    ASSERT_FALSE(gt.spikes.empty());
    ASSERT_FALSE(gt.mui.empty());
    ASSERT_FALSE(gt.resets.empty());

    for (const auto& sp : gt.spikes) {
        const auto& dirty = by_key(c.dirty, sp.key);
        for (const auto& v : sp.values) {
            bool in_gap = false;
            for (const auto& g : gt.gaps) in_gap |= g.key == sp.key && g.span.contains(v.at);
            for (const auto& day : gt.outage_days) in_gap |= date_of(v.at) == day;
            if (!in_gap) {
                EXPECT_EQ(value_at(dirty, v.at), v.value.litres);
            }
            EXPECT_GT(v.value.litres, value_at(by_key(c.truth, sp.key), v.at));
        }
    }
    for (const auto& m : gt.mui) {
        EXPECT_DOUBLE_EQ(m.factor * m.repair_factor, 1.0);
        const auto& truth = by_key(c.truth, m.key);
        const auto& dirty = by_key(c.dirty, m.key);
        std::map<Hour, std::int64_t> seen;
        for (const auto& r : dirty.readings) seen.emplace(r.at, r.value.litres);
        for (const auto& r : truth.readings) {
            const auto it = seen.find(r.at);
            if (it == seen.end() || r.at < m.changepoint) continue;
            bool touched = false;
            for (const auto& sp : gt.spikes) touched |= sp.key == m.key && sp.span.contains(r.at);
            for (const auto& rs : gt.resets) touched |= rs.key == m.key && rs.at == r.at;
            if (touched) continue;
            EXPECT_LE(std::abs(static_cast<double>(it->second) - static_cast<double>(r.value.litres) * m.factor), 0.5);
        }
        EXPECT_EQ(value_at(dirty, truth.readings.front().at), truth.readings.front().value.litres);
    }
    for (const auto& d : gt.duplicate_streams)
        EXPECT_EQ(by_key(c.dirty, d.copy).readings, by_key(c.dirty, d.original).readings);
}

TEST(Synthetic, MuiVictimCountIsBinomialOnDefaultPlan) {
    const synth::SyntheticPlan plan;
    const auto c = synth::generate_synthetic(plan);
    const double n = static_cast<double>(plan.stream_count), p = plan.mui_rate;
    const double mean = n * p, sd = std::sqrt(n * p * (1 - p));
    const auto count = static_cast<double>(c.ground_truth.mui.size());
    EXPECT_GE(count, mean - 4 * sd);
    EXPECT_LE(count, mean + 4 * sd);
    std::set<CompositeKey> keys;
    for (const auto& m : c.ground_truth.mui) keys.insert(m.key);
    EXPECT_EQ(keys.size(), c.ground_truth.mui.size());
    EXPECT_EQ(synth::generate_synthetic(plan).ground_truth.mui.size(), c.ground_truth.mui.size());
}

TEST(Synthetic, WrittenAmidParsesWithoutRejects) {
    TempDir d;
    auto plan = small_plan(5, 3);
    const auto c = synth::generate_synthetic(plan);
    synth::write_corpus(c, d.path, false);
    const auto parsed = ingestion::parse_dataset<MeterReading>(d.path / "amid.csv");
    std::size_t expected = 0;
    for (const auto& s : c.dirty) expected += s.readings.size();
    EXPECT_GE(parsed.records.size(), 10000u);
    EXPECT_EQ(parsed.records.size(), expected);
    EXPECT_TRUE(parsed.rejected.empty());
    EXPECT_TRUE(ingestion::parse_dataset<ingestion::MindRecord>(d.path / "mind.csv").rejected.empty());
    EXPECT_TRUE(ingestion::parse_dataset<BillingRecord>(d.path / "bild.csv").rejected.empty());
    EXPECT_FALSE(std::filesystem::exists(d.path / "clean_amid.csv"));
}
