#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hydroclean/anomaly_detection.hpp"
#include "hydroclean/repair.hpp"

using namespace hydroclean;
using namespace hydroclean::repair;

namespace {

const Hour kYear = make_hour(2013, 1, 1);
const CompositeKey kKey("a", "m", "d");

DataStream flat(std::int64_t litres, int hours = 500) {
    DataStream s;
    s.key = kKey;
    for (int i = 0; i < hours; ++i) s.readings.push_back({kYear + i, {litres}});
    return s;
}

AnomalyEvent event(AnomalyClass cls, Hour at, int len = 1, std::uint64_t id = 1) {
    AnomalyEvent e;
    e.id = id;
    e.key = kKey;
    e.cls = cls;
    e.span = {at, at + len};
    return e;
}

// Bi-monthly billing, exact integrals of `s`.
std::vector<BillingRecord> billing_for(const DataStream& s) {
    std::vector<BillingRecord> out;
    const std::chrono::year_month_day first{date_of(s.readings.front().at)};
    std::chrono::year_month ym{first.year(), first.month()};
    const Date end = date_of(s.readings.back().at) + std::chrono::days{1};
    std::int64_t count = 0;
    while (Date{ym / std::chrono::day{1}} < end) {
        const Date a{ym / std::chrono::day{1}};
        Date b{(ym + std::chrono::months{2}) / std::chrono::day{1}};
        if (b > end) b = end;
        const auto c = s.sum_in({start_of(a), start_of(b)});
        out.push_back({s.key, "m3", a, b, count, count + c.litres / 1000, c});
        count += c.litres / 1000;
        ym += std::chrono::months{2};
    }
    return out;
}

DataStream seasonal_year(std::uint64_t seed, double mean_litres) {
    std::mt19937_64 rng(seed);
    std::lognormal_distribution<double> noise(0.0, 0.35);
    DataStream s;
    s.key = kKey;
    for (int i = 0; i < 8760; ++i) {
        const double season = 1.0 + 0.4 * std::sin(2 * M_PI * (i / 24.0 - 110) / 365.0);
        s.readings.push_back({kYear + i, {std::llround(mean_litres * season * noise(rng))}});
    }
    return s;
}

DataStream scaled_after(DataStream s, Hour cp, double f) {
    for (auto& r : s.readings)
        if (r.at >= cp) r.value.litres = std::llround(r.value.litres * f);
    return s;
}

}  // namespace

TEST(RepairSpike, FlatNeighbourhood) {
    auto s = flat(100);
    s.readings[200].value = {50000};
    const auto r = repair_spike(s, event(AnomalyClass::Spike, kYear + 200));
    EXPECT_EQ(r.stream.readings[200].value.litres, 100);
    EXPECT_EQ(r.audit.originals.at(0).value.litres, 50000);
    EXPECT_FALSE(r.marked_gap);
}

TEST(RepairSpike, ResetAmidFlat) {
    auto s = flat(200);
    s.readings[300].value = {-980000};
    const auto r = repair_spike(s, event(AnomalyClass::Reset, kYear + 300));
    EXPECT_EQ(r.stream.readings[300].value.litres, 200);
}

TEST(RepairSpike, SeriesEdgeUsesAvailableNeighbours) {
    DataStream s;
    s.key = kKey;
    for (int i = 0; i < 4; ++i) s.readings.push_back({kYear + i, {10 * (i + 1)}});
    s.readings[3].value = {90000};
    const auto r = repair_spike(s, event(AnomalyClass::Spike, kYear + 3));
    EXPECT_EQ(r.stream.readings[3].value.litres, (10 + 20 + 30) / 3);
}

TEST(RepairSpike, ExcludedNeighboursIgnoredAndMeanRounded) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        DataStream s;
        s.key = kKey;
        for (int i = 0; i < 60; ++i)
            if (rng() % 5) s.readings.push_back({kYear + i, {static_cast<std::int64_t>(rng() % 1000)}});
        const int at = 20 + static_cast<int>(rng() % 20);
        const auto ev = event(AnomalyClass::Spike, kYear + at, 2);
        const HourRange other{kYear + at + 4, kYear + at + 5};
        if (!s.observed_range()->overlaps(ev.span)) continue;
        const auto r = repair_spike(s, ev, 8, {other});
        double sum = 0;
        int n = 0;
        for (const auto& x : s.readings)
            if (x.at >= kYear + at - 8 && x.at < kYear + at + 10 && !ev.span.contains(x.at) && !other.contains(x.at)) {
                sum += static_cast<double>(x.value.litres);
                ++n;
            }
        ASSERT_GT(n, 0);
        const auto expect = static_cast<std::int64_t>(std::floor(sum / n + 0.5));
        for (const auto& x : r.stream.readings)
            if (ev.span.contains(x.at)) EXPECT_EQ(x.value.litres, expect);
    }
}

TEST(RepairSpike, WidensThenMarksGap) {
    DataStream s;
    s.key = kKey;
    s.readings = {{kYear, {7}}, {kYear + 40, {99999}}};
    auto r = repair_spike(s, event(AnomalyClass::Spike, kYear + 40));
    EXPECT_EQ(r.neighborhood_used, 64);
    EXPECT_EQ(r.stream.readings[1].value.litres, 7);
    s.readings = {{kYear + 40, {99999}}, {kYear + 200, {7}}};
    r = repair_spike(s, event(AnomalyClass::Spike, kYear + 40));
    EXPECT_TRUE(r.marked_gap);
    EXPECT_EQ(r.stream.readings.size(), 1u);
}

TEST(RepairSpike, JournalRestoresExactly) {
    auto s = flat(100);
    s.readings[10].value = {12345};
    const auto r = repair_spike(s, event(AnomalyClass::Spike, kYear + 10));
    DataStream back = r.stream;
    RepairJournal::restore(back, r.audit);
    EXPECT_EQ(back, s);
}

TEST(BillingResidual, ExactIntegralIsZero) {
    const auto s = seasonal_year(1, 900);
    EXPECT_EQ(billing_residual(s, billing_for(s)), 0.0);
}

TEST(BillingResidual, UniformTimesTen) {
    const auto s = seasonal_year(2, 900);
    const auto b = billing_for(s);
    DataStream x = s;
    for (auto& r : x.readings) r.value.litres *= 10;
    std::int64_t billed = 0;
    for (const auto& rec : b) billed += rec.consumption.litres;
    EXPECT_EQ(billing_residual_litres(x, b), 9 * billed);
}

TEST(BillingResidual, MatchesDirectSum) {
    const auto s = seasonal_year(3, 900);
    const auto b = billing_for(s);
    const auto x = scaled_after(s, make_hour(2013, 5, 6), 1.0 / 219.969);
    std::int64_t oracle = 0;
    for (const auto& rec : b) {
        std::int64_t sum = 0;
        for (const auto& r : x.readings)
            if (r.at >= start_of(rec.period_start) && r.at < start_of(rec.period_end)) sum += r.value.litres;
        oracle += std::llabs(sum - rec.consumption.litres);
    }
    EXPECT_EQ(billing_residual_litres(x, b), oracle);
}

TEST(BillingResidual, NoOverlapIsNoGroundTruth) {
    const auto s = flat(10);
    BillingRecord rec{kKey, "m3", *parse_date("2010-01-01"), *parse_date("2010-03-01"), 0, 0, {0}};
    try {
        billing_residual(s, {rec});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NoGroundTruth);
    }
}

TEST(ProposeMui, MaySixthDivided) {
    const auto clean = seasonal_year(4, 2500);
    const auto b = billing_for(clean);
    const Hour may6 = make_hour(2013, 5, 6);
    const auto dirty = scaled_after(clean, may6, 1.0 / 219.969);
    const auto p = propose_mui_repair(dirty, b);
    EXPECT_EQ(p.factor, 219.969);
    EXPECT_EQ(p.segment, Segment::After);
    EXPECT_LE(std::llabs(p.changepoint - may6), 24);
    EXPECT_LE(p.residual_after, p.residual_before);
}

TEST(ProposeMui, NoBreakIsNotConfident) {
    const auto clean = seasonal_year(5, 2500);
    try {
        propose_mui_repair(clean, billing_for(clean));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NoConfidentProposal);
    }
}

TEST(ProposeMui, RandomTenfoldBreaksRecovered) {
    std::mt19937_64 rng(77);
    int ok = 0;
    const int n = 500;
    for (int i = 0; i < n; ++i) {
        const auto clean = seasonal_year(1000 + static_cast<std::uint64_t>(i), 800 + static_cast<double>(rng() % 3000));
        const Hour cp = kYear + 24 * (30 + static_cast<int>(rng() % 300));
        const auto dirty = scaled_after(clean, cp, 10.0);
        try {
            const auto p = propose_mui_repair(dirty, billing_for(clean));
            ok += p.factor == 0.1 && p.segment == Segment::After && std::llabs(p.changepoint - cp) <= 48;
        } catch (const Error&) {
        }
    }
    EXPECT_GE(static_cast<double>(ok) / n, 0.95);
}

TEST(ProposeMui, ResidualNeverIncreases) {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 40; ++i) {
        const auto clean = seasonal_year(50 + static_cast<std::uint64_t>(i), 2000);
        const double fs[] = {219.969, 1 / 219.969, 35.3147, 100};
        const auto dirty = scaled_after(clean, kYear + 24 * (40 + static_cast<int>(rng() % 280)), fs[i % 4]);
        const auto p = propose_mui_repair(dirty, billing_for(clean));
        EXPECT_LE(p.residual_after, p.residual_before);
        DataStream applied = dirty;
        scale_range(applied, segment_range(*dirty.observed_range(), p.changepoint, p.segment), p.factor);
        EXPECT_EQ(p.residual_after, billing_residual(applied, billing_for(clean)));
    }
}

class VerdictTest : public ::testing::Test {
protected:
    void SetUp() override {
        clean = seasonal_year(6, 10000);
        billing = billing_for(clean);
        dirty = scaled_after(clean, make_hour(2013, 5, 6), 219.969);
        proposal = propose_mui_repair(dirty, billing);
        ev.id = 42;
        ev.key = kKey;
        ev.cls = AnomalyClass::MUI;
        ev.span = *dirty.observed_range();
        ev.status = EventStatus::Queued;
        verdict.key = kKey;
        verdict.event_id = 42;
        verdict.reviewer = "r1";
    }

    DataStream clean, dirty;
    std::vector<BillingRecord> billing;
    MuiProposal proposal;
    AnomalyEvent ev;
    Verdict verdict;
};

TEST_F(VerdictTest, RejectLeavesStreamUntouched) {
    verdict.decision = Decision::Reject;
    DataStream s = dirty;
    apply_verdict(s, ev, verdict, proposal);
    EXPECT_EQ(s, dirty);
    EXPECT_EQ(ev.status, EventStatus::Rejected);
}

TEST_F(VerdictTest, AcceptCleansStd2m) {
    verdict.decision = Decision::Accept;
    DataStream s = dirty;
    const auto b = detect::calendar_month_boundaries(2013, 1);
    EXPECT_EQ(detect::classify_mui(*detect::std_profile(s, b).std2m), detect::MuiVerdict::Dirty);
    RepairJournal journal;
    apply_verdict(s, ev, verdict, proposal, &journal);
    EXPECT_EQ(ev.status, EventStatus::Repaired);
    EXPECT_EQ(detect::classify_mui(*detect::std_profile(s, b).std2m), detect::MuiVerdict::Clean);
    journal.undo_all(s);
    EXPECT_EQ(s, dirty);
}

TEST_F(VerdictTest, DoubleApplicationRejected) {
    verdict.decision = Decision::Accept;
    DataStream s = dirty;
    apply_verdict(s, ev, verdict, proposal);
    const DataStream once = s;
    try {
        apply_verdict(s, ev, verdict, proposal);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::AlreadyRepaired);
    }
    EXPECT_EQ(s, once);
}

TEST_F(VerdictTest, UnknownEvent) {
    verdict.event_id = 7;
    verdict.decision = Decision::Accept;
    DataStream s = dirty;
    try {
        apply_verdict(s, ev, verdict, proposal);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::UnknownEvent);
    }
}

TEST_F(VerdictTest, EditedChangepointMovesTwentyFourReadings) {
    verdict.decision = Decision::Accept;
    DataStream a = dirty;
    AnomalyEvent ea = ev;
    apply_verdict(a, ea, verdict, proposal);
    verdict.decision = Decision::AcceptWithEdit;
    verdict.edited_changepoint = proposal.changepoint + 24;
    DataStream b = dirty;
    AnomalyEvent eb = ev;
    apply_verdict(b, eb, verdict, proposal);
    int differ = 0;
    for (std::size_t i = 0; i < a.readings.size(); ++i) differ += a.readings[i] != b.readings[i];
    EXPECT_EQ(differ, 24);
}

TEST_F(VerdictTest, EditedFactorSnapsToCandidate) {
    verdict.decision = Decision::AcceptWithEdit;
    verdict.edited_factor = 1 / 219.0;
    DataStream s = dirty;
    apply_verdict(s, ev, verdict, proposal);
    EXPECT_EQ(*ev.proposed_repair->factor, 1 / 219.969);
    EXPECT_THROW((Verdict{kKey, 1, Decision::AcceptWithEdit, std::nullopt, std::nullopt, "r", 0}.validate()), Error);
}
