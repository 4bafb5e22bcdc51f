#include <gtest/gtest.h>

#include <random>

#include "hydroclean/rank_metrics.hpp"

using namespace hydroclean;
using namespace hydroclean::rank;

namespace {

CompositeKey key(int i) { return CompositeKey("k" + std::to_string(100000 + i), "m", "d"); }

Ranking ranking_of(const std::vector<int>& order) {
    Ranking r;
    for (std::size_t i = 0; i < order.size(); ++i)
        r.entries.push_back({key(order[i]), Consumption{static_cast<std::int64_t>(order.size() - i)}});
    return r;
}

// Direct reading of the definition: every unordered pair, half-weights, in
// long double.
struct OracleResult {
    long double k_raw, total;
};

OracleResult oracle(const std::vector<int>& sigma, const std::vector<int>& pi, const std::map<int, std::int64_t>& w) {
    std::map<int, std::size_t> ps, pp;
    for (std::size_t i = 0; i < sigma.size(); ++i) ps[sigma[i]] = i;
    for (std::size_t i = 0; i < pi.size(); ++i) pp[pi[i]] = i;
    long double k = 0, total = 0;
    for (std::size_t i = 0; i < sigma.size(); ++i)
        for (std::size_t j = i + 1; j < sigma.size(); ++j) {
            const int a = sigma[i], b = sigma[j];
            const long double half = (static_cast<long double>(w.at(a)) + w.at(b)) / 2;
            total += half;
            if ((ps[a] < ps[b]) != (pp[a] < pp[b])) k += half;
        }
    return {k, total};
}

WeightVector weights_of(const std::map<int, std::int64_t>& w) {
    WeightVector out;
    for (auto [i, v] : w) out[key(i)] = v;
    return out;
}

}  // namespace

TEST(WeightedKendallTau, WorkedThreeElementExample) {
    const auto r = weighted_kendall_tau(ranking_of({0, 1, 2}), ranking_of({1, 0, 2}), weights_of({{0, 4}, {1, 2}, {2, 0}}));
    EXPECT_EQ(static_cast<long long>(r.discordant_weight), 6);  // K_w = 3
    EXPECT_EQ(static_cast<long long>(r.total_pair_weight), 12);  // denominator 6
    EXPECT_EQ(*r.k_w_normalized, 0.0);
    const auto o = oracle({0, 1, 2}, {1, 0, 2}, {{0, 4}, {1, 2}, {2, 0}});
    EXPECT_EQ(o.k_raw, 3.0L);
    EXPECT_EQ(o.total, 6.0L);
}

TEST(WeightedKendallTau, IdentityAndReversal) {
    std::mt19937_64 rng(1);
    for (int n : {2, 5, 50, 700, 3000}) {
        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::map<int, std::int64_t> w;
        for (int i = 0; i < n; ++i) w[i] = 1 + static_cast<std::int64_t>(rng() % 100000);
        std::vector<int> rev(order.rbegin(), order.rend());
        for (auto kernel : {Kernel::PairEnumeration, Kernel::MergeSort}) {
            EXPECT_EQ(*weighted_kendall_tau(ranking_of(order), ranking_of(order), weights_of(w), kernel).k_w_normalized, 1.0);
            EXPECT_EQ(*weighted_kendall_tau(ranking_of(order), ranking_of(rev), weights_of(w), kernel).k_w_normalized, -1.0);
        }
    }
}

TEST(WeightedKendallTau, MatchesPairOracle) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 60);
        std::vector<int> a(static_cast<std::size_t>(n));
        std::iota(a.begin(), a.end(), 0);
        auto b = a;
        std::shuffle(a.begin(), a.end(), rng);
        std::shuffle(b.begin(), b.end(), rng);
        std::map<int, std::int64_t> w;
        for (int i = 0; i < n; ++i) w[i] = static_cast<std::int64_t>(rng() % 5000);
        const auto o = oracle(a, b, w);
        const auto r = weighted_kendall_tau(ranking_of(a), ranking_of(b), weights_of(w));
        EXPECT_EQ(static_cast<long double>(r.discordant_weight), 2 * o.k_raw);
        EXPECT_EQ(static_cast<long double>(r.total_pair_weight), 2 * o.total);
        if (o.total > 0)
            EXPECT_NEAR(*r.k_w_normalized, static_cast<double>(1 - 2 * o.k_raw / o.total), 1e-12);
        else
            EXPECT_FALSE(r.k_w_normalized);
    }
}

TEST(WeightedKendallTau, ZeroWeightIsUndefined) {
    const auto r = weighted_kendall_tau(ranking_of({0, 1, 2}), ranking_of({2, 1, 0}), weights_of({{0, 0}, {1, 0}, {2, 0}}));
    EXPECT_FALSE(r.k_w_normalized);
}

TEST(WeightedKendallTau, WeightScalingInvarianceExact) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 300);
        std::vector<int> a(static_cast<std::size_t>(n));
        std::iota(a.begin(), a.end(), 0);
        auto b = a;
        std::shuffle(b.begin(), b.end(), rng);
        std::map<int, std::int64_t> w, w2;
        const std::int64_t c = 1 + static_cast<std::int64_t>(rng() % 1000);
        for (int i = 0; i < n; ++i) {
            w[i] = 1 + static_cast<std::int64_t>(rng() % 100000);
            w2[i] = w[i] * c;
        }
        EXPECT_EQ(*weighted_kendall_tau(ranking_of(a), ranking_of(b), weights_of(w)).k_w_normalized,
                  *weighted_kendall_tau(ranking_of(a), ranking_of(b), weights_of(w2)).k_w_normalized);
    }
}

TEST(WeightedKendallTau, KernelsAgreeAndParallelIsStable) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 2000);
        std::vector<int> a(static_cast<std::size_t>(n));
        std::iota(a.begin(), a.end(), 0);
        auto b = a;
        std::shuffle(b.begin(), b.end(), rng);
        for (int s = 0; s < n / 10; ++s) std::swap(a[rng() % a.size()], a[rng() % a.size()]);
        std::map<int, std::int64_t> w;
        for (int i = 0; i < n; ++i) w[i] = static_cast<std::int64_t>(rng() % 2'000'000);
        const auto p = weighted_kendall_tau(ranking_of(a), ranking_of(b), weights_of(w), Kernel::PairEnumeration, 4);
        const auto m = weighted_kendall_tau(ranking_of(a), ranking_of(b), weights_of(w), Kernel::MergeSort);
        EXPECT_EQ(p, m);
    }
}

TEST(WeightedKendallTau, KernelsAgreeWithHugeWeights) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 50 + static_cast<int>(rng() % 200);
        std::vector<int> a(static_cast<std::size_t>(n));
        std::iota(a.begin(), a.end(), 0);
        auto b = a;
        std::shuffle(b.begin(), b.end(), rng);
        std::map<int, std::int64_t> w;
        for (int i = 0; i < n; ++i) w[i] = (std::int64_t{1} << 61) + static_cast<std::int64_t>(rng() % 1000);
        const auto p = weighted_kendall_tau(ranking_of(a), ranking_of(b), weights_of(w), Kernel::PairEnumeration);
        const auto m = weighted_kendall_tau(ranking_of(a), ranking_of(b), weights_of(w), Kernel::MergeSort);
        EXPECT_EQ(p, m);
        i128 d = 0;
        std::map<int, std::size_t> pos;
        for (std::size_t i = 0; i < b.size(); ++i) pos[b[i]] = i;
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = i + 1; j < a.size(); ++j)
                if (pos[a[i]] > pos[a[j]]) d += static_cast<i128>(w[a[i]]) + w[a[j]];
        EXPECT_TRUE(p.discordant_weight == d);
    }
}

TEST(WeightedKendallTau, BoundedInMinusOneOne) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 40);
        std::vector<int> a(static_cast<std::size_t>(n));
        std::iota(a.begin(), a.end(), 0);
        auto b = a;
        std::shuffle(b.begin(), b.end(), rng);
        std::map<int, std::int64_t> w;
        for (int i = 0; i < n; ++i) w[i] = static_cast<std::int64_t>(rng() % 3);
        const auto r = weighted_kendall_tau(ranking_of(a), ranking_of(b), weights_of(w));
        if (r.k_w_normalized) {
            EXPECT_GE(*r.k_w_normalized, -1.0);
            EXPECT_LE(*r.k_w_normalized, 1.0);
        }
    }
}

TEST(WeightedKendallTau, UniformWeightsGiveClassicalTau) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 80);
        std::vector<int> a(static_cast<std::size_t>(n));
        std::iota(a.begin(), a.end(), 0);
        auto b = a;
        std::shuffle(b.begin(), b.end(), rng);
        // classical tau-a: (concordant − discordant) / (n choose 2)
        std::vector<int> pos(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) pos[static_cast<std::size_t>(b[static_cast<std::size_t>(i)])] = i;
        long long conc = 0, disc = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                (pos[static_cast<std::size_t>(a[static_cast<std::size_t>(i)])] <
                         pos[static_cast<std::size_t>(a[static_cast<std::size_t>(j)])]
                     ? conc
                     : disc)++;
        const double classical = static_cast<double>(conc - disc) / static_cast<double>(conc + disc);
        EXPECT_NEAR(kendall_tau(ranking_of(a), ranking_of(b)), classical, 1e-12);
    }
}

TEST(WeightedKendallTau, MissingKeysAppendedInKeyOrder) {
    // σ lacks 3, π lacks 0: σ' = [1,2,0?]... extensions are appended by key
    const auto sigma = ranking_of({2, 1, 0});
    const auto pi = ranking_of({3, 2, 1});
    const std::map<int, std::int64_t> w{{0, 5}, {1, 1}, {2, 7}, {3, 2}};
    const auto o = oracle({2, 1, 0, 3}, {3, 2, 1, 0}, w);
    const auto r = weighted_kendall_tau(sigma, pi, weights_of(w));
    EXPECT_EQ(static_cast<long double>(r.discordant_weight), 2 * o.k_raw);
}

TEST(Recall, Examples) {
    std::vector<int> order(1000);
    std::iota(order.begin(), order.end(), 0);
    const auto ref = ranking_of(order);
    for (std::size_t k : {1, 10, 1000}) EXPECT_EQ(recall_at_k(ref, ref, k), 1.0);
    std::vector<int> other(order);
    std::rotate(other.begin(), other.begin() + 500, other.end());
    EXPECT_EQ(recall_at_k(ref, ranking_of(other), 500), 0.0);
    // 350 of the true top-500 recalled
    std::vector<int> mixed;
    for (int i = 0; i < 350; ++i) mixed.push_back(i);
    for (int i = 500; i < 650; ++i) mixed.push_back(i);
    for (int i = 350; i < 500; ++i) mixed.push_back(i);
    for (int i = 650; i < 1000; ++i) mixed.push_back(i);
    EXPECT_DOUBLE_EQ(recall_at_k(ref, ranking_of(mixed), 500), 0.7);
    EXPECT_THROW(recall_at_k(ref, ref, 0), Error);
    EXPECT_THROW(recall_at_k(ref, ref, 1001), Error);
}

TEST(Recall, ProfileMatchesPointwiseAndTopTwoSwap) {
    std::mt19937_64 rng(7);
    std::vector<int> order(300);
    std::iota(order.begin(), order.end(), 0);
    auto cand = order;
    std::swap(cand[0], cand[1]);
    const auto prof = recall_profile(ranking_of(order), ranking_of(cand), 300);
    EXPECT_EQ(prof[0].recall, 0.0);
    for (std::size_t k = 2; k <= 300; ++k) EXPECT_EQ(prof[k - 1].recall, 1.0);
    std::shuffle(cand.begin(), cand.end(), rng);
    const auto ref = ranking_of(order), c = ranking_of(cand);
    const auto p = recall_profile(ref, c, 300);
    for (std::size_t k = 1; k <= 300; ++k) EXPECT_DOUBLE_EQ(p[k - 1].recall, recall_at_k(ref, c, k));
}

TEST(Weights, CalendarMonthAndClamp) {
    const auto m = calendar_month_of(make_hour(2013, 7, 15, 5));
    EXPECT_EQ(m.begin, make_hour(2013, 7, 1));
    EXPECT_EQ(m.end, make_hour(2013, 8, 1));
    DataStream s;
    s.key = key(1);
    s.readings = {{make_hour(2013, 7, 2), {-500}}};
    EXPECT_EQ(consumption_weights({s}, m).at(key(1)), 0);
}
