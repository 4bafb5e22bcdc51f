#include <gtest/gtest.h>

#include <random>

#include "hydroclean/peak_analytics.hpp"

using namespace hydroclean;
using namespace hydroclean::peaks;

namespace {

DataStream make(const std::string& acc, std::vector<Reading> rs, MainCategory cat = MainCategory::SFR) {
    DataStream s;
    s.key = CompositeKey(acc, "m", "d");
    s.readings = std::move(rs);
    s.category.main = cat;
    return s;
}

// Every window summed from scratch, each stream read hour by hour.
PeakResult brute_force(const std::vector<DataStream>& streams, HourRange range, std::int64_t w) {
    std::int64_t best = -1;
    Hour best_start;
    for (Hour s = range.begin; s + w <= range.end; s = s + 1) {
        std::int64_t total = 0;
        for (const auto& st : streams)
            for (const auto& r : st.readings)
                if (r.at >= s && r.at < s + w) total += r.value.litres;
        if (total > best) {
            best = total;
            best_start = s;
        }
    }
    return {HourRange{best_start, best_start + w}, w, Consumption{best}};
}

std::vector<DataStream> random_corpus(std::mt19937_64& rng, int max_streams, int max_hours, Hour begin) {
    const int n = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_streams));
    const int hours = 200 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_hours - 199));
    std::vector<DataStream> out;
    for (int i = 0; i < n; ++i) {
        std::vector<Reading> rs;
        for (int h = 0; h < hours; ++h)
            if (rng() % 10) rs.push_back({begin + h, {static_cast<std::int64_t>(rng() % 4000)}});
        out.push_back(make("s" + std::to_string(i), rs));
    }
    return out;
}

}  // namespace

TEST(PeakWindow, ConstantAggregateEarliestStart) {
    std::vector<Reading> rs;
    for (int h = 0; h < 100; ++h) rs.push_back({Hour{h}, {1000}});
    const auto r = peak_window({make("a", rs)}, {Hour{0}, Hour{100}}, 24);
    EXPECT_EQ(r.total_volume.litres, 24000);
    EXPECT_EQ(r.window.begin, Hour{0});
    EXPECT_EQ(r.window.hours(), 24);
}

TEST(PeakWindow, SingleHourCoveredByEarliestWindow) {
    const auto r = peak_window({make("a", {{Hour{50}, {5000}}})}, {Hour{0}, Hour{100}}, 24);
    EXPECT_EQ(r.window.begin, Hour{27});
    EXPECT_EQ(r.total_volume.litres, 5000);
}

TEST(PeakWindow, Errors) {
    try {
        peak_window({make("a", {})}, {Hour{0}, Hour{10}}, 24);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::InvalidRange);
    }
    try {
        peak_window({}, {Hour{0}, Hour{100}}, 24);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::EmptyStreamSet);
    }
}

TEST(PeakWindow, MatchesBruteForce) {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 25; ++trial) {
        const auto corpus = random_corpus(rng, 12, 600, Hour{1000});
        const HourRange range{Hour{1000}, Hour{1000 + 200}};
        for (std::int64_t w : {24, 168}) {
            EXPECT_EQ(peak_window(corpus, range, w, 3), brute_force(corpus, range, w));
        }
    }
}

TEST(PeakWindow, MonotoneInStreamSet) {
    std::mt19937_64 rng(32);
    auto corpus = random_corpus(rng, 10, 500, Hour{0});
    const HourRange range{Hour{0}, Hour{200}};
    const auto before = peak_window(corpus, range, 24);
    corpus.push_back(make("zz", {{Hour{3}, {1}}}));
    EXPECT_GE(peak_window(corpus, range, 24).total_volume, before.total_volume);
}

TEST(PeakWindow, AggregateEqualsSummedStreams) {
    std::mt19937_64 rng(33);
    const auto corpus = random_corpus(rng, 20, 800, Hour{0});
    const HourRange range{Hour{0}, Hour{200}};
    const auto p = peak_window(corpus, range, 168);
    std::int64_t summed = 0;
    for (const auto& s : corpus) summed += s.sum_in(p.window).litres;
    EXPECT_EQ(summed, p.total_volume.litres);
    EXPECT_EQ(aggregate(corpus, range, 1), aggregate(corpus, range, 7));
}

TEST(PeakWindow, DailyAndWeeklyWindowsNeedNotNest) {
    std::vector<Reading> rs;
    for (int h = 0; h < 400; ++h) rs.push_back({Hour{h}, {h >= 200 && h < 368 ? 200 : 10}});
    rs[20].value = {20000};  // one heavy hour far from the heavy week
    const auto s = make("a", rs);
    const auto day = peak_window({s}, {Hour{0}, Hour{400}}, 24);
    const auto week = peak_window({s}, {Hour{0}, Hour{400}}, 168);
    EXPECT_FALSE(week.window.contains(day.window));
}

TEST(PeakLoad, Examples) {
    EXPECT_EQ(peak_load({{Hour{0}, Hour{24}}, 24, {24000}}), 1.0);
    EXPECT_NEAR(peak_load({{Hour{0}, Hour{168}}, 168, {8'367'000}}), 49.8, 0.01);
}

TEST(TopK, FullRankingIsPermutation) {
    std::mt19937_64 rng(34);
    const auto corpus = random_corpus(rng, 30, 400, Hour{0});
    const auto r = top_k_contributors(corpus, {Hour{0}, Hour{24}}, static_cast<long long>(corpus.size()));
    EXPECT_EQ(r.ranking.size(), corpus.size());
    EXPECT_TRUE(r.ranking.well_ordered());
    std::set<CompositeKey> keys;
    for (const auto& e : r.ranking.entries) keys.insert(e.key);
    EXPECT_EQ(keys.size(), corpus.size());
}

TEST(TopK, SingleNonzeroThenZerosByKey) {
    std::vector<DataStream> corpus{make("c", {{Hour{1}, {0}}}), make("b", {{Hour{1}, {5}}}), make("a", {{Hour{1}, {0}}})};
    const auto r = top_k_contributors(corpus, {Hour{0}, Hour{24}}, 10);
    ASSERT_EQ(r.ranking.size(), 3u);
    EXPECT_EQ(r.ranking.entries[0].key.account_id(), "b");
    EXPECT_EQ(r.ranking.entries[1].key.account_id(), "a");
    EXPECT_EQ(r.ranking.entries[2].key.account_id(), "c");
}

TEST(TopK, InvalidK) {
    try {
        top_k_contributors({}, {Hour{0}, Hour{24}}, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::InvalidK);
    }
}

TEST(TopK, GapCompensationAndExclusion) {
    std::vector<Reading> full, holey;
    for (int h = 0; h < 168; ++h) {
        full.push_back({Hour{h}, {1000}});
        if (h % 42 != 0) holey.push_back({Hour{h}, {1000}});
    }
    const std::vector<DataStream> corpus{make("a", full), make("b", holey), make("c", {{Hour{300}, {1}}})};
    const integrity::ExpectedGrid grid{{Hour{0}, Hour{400}}, {}};
    std::vector<integrity::GapCensus> censuses;
    for (const auto& s : corpus) censuses.push_back(integrity::gap_census(s, grid));
    const auto r = top_k_contributors(corpus, {Hour{0}, Hour{168}}, 10, &censuses);
    ASSERT_EQ(r.ranking.size(), 2u);
    EXPECT_EQ(r.ranking.entries[0].load.litres, 168000);
    EXPECT_EQ(r.ranking.entries[1].load.litres, 168000);  // 164 h × 168/164
    EXPECT_EQ(r.excluded, std::vector<CompositeKey>{corpus[2].key});
}

TEST(TopK, CategoryShares) {
    const std::vector<DataStream> corpus{make("a", {{Hour{1}, {3000}}}, MainCategory::IND),
                                         make("b", {{Hour{1}, {1000}}}, MainCategory::SFR)};
    const auto r = top_k_contributors(corpus, {Hour{0}, Hour{24}}, 2);
    const auto shares = category_shares(r.ranking, corpus);
    EXPECT_EQ(shares.at(MainCategory::IND).count, 1u);
    EXPECT_DOUBLE_EQ(shares.at(MainCategory::IND).volume_share, 0.75);
}
