#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "core_model.hpp"
#include "parallel.hpp"

namespace hydroclean::rank {

/// key → non-negative weight in litres. Keys not present weigh 0.
using WeightVector = std::map<CompositeKey, std::int64_t>;

using i128 = __int128;

struct CorrelationResult {
    i128 discordant_weight = 0;  // Σ over discordant pairs of (w_a + w_b)
    i128 total_pair_weight = 0;  // Σ over all pairs of (w_a + w_b) = (n − 1)·Σw
    double k_w_raw = 0.0;        // K_w in m³: half the discordant pair weight
    std::optional<double> k_w_normalized;  // nullopt ⇒ Undefined (total pair weight 0)

    bool operator==(const CorrelationResult&) const = default;
};

enum class Kernel { Auto, PairEnumeration, MergeSort };

inline constexpr std::size_t kPairKernelMaxN = 2000;

namespace detail {

inline i128 gcd128(i128 a, i128 b) {
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b != 0) {
        const i128 t = a % b;
        a = b;
        b = t;
    }
    return a;
}

/// Builds the common universe (each ranking extended by the other's missing
/// keys in key order) and returns, for each σ position, the π position of
/// that element, plus the weights in σ order.
struct Aligned {
    std::vector<std::uint32_t> pi_pos;  // indexed by σ position
    std::vector<std::int64_t> weight;   // indexed by σ position
};

inline Aligned align(const Ranking& sigma, const Ranking& pi, const WeightVector& w) {
    // one sort over both rankings assigns every key its index in the sorted union
    struct Tagged {
        const CompositeKey* key;
        std::uint32_t slot;  // σ entries first, then π entries
    };
    const std::size_t ns = sigma.entries.size(), np = pi.entries.size();
    std::vector<Tagged> tagged;
    tagged.reserve(ns + np);
    for (std::size_t i = 0; i < ns; ++i) tagged.push_back({&sigma.entries[i].key, static_cast<std::uint32_t>(i)});
    for (std::size_t i = 0; i < np; ++i) tagged.push_back({&pi.entries[i].key, static_cast<std::uint32_t>(ns + i)});
    std::sort(tagged.begin(), tagged.end(), [](const Tagged& x, const Tagged& y) { return *x.key < *y.key; });
    std::vector<const CompositeKey*> universe;
    std::vector<std::uint32_t> slot_index(ns + np);
    for (std::size_t t = 0; t < tagged.size(); ++t) {
        if (t == 0 || !(*tagged[t - 1].key == *tagged[t].key)) universe.push_back(tagged[t].key);
        slot_index[tagged[t].slot] = static_cast<std::uint32_t>(universe.size() - 1);
    }
    const std::size_t n = universe.size();
    // ranking order, then the missing keys in key order
    auto extended = [&](std::size_t first, std::size_t count) {
        std::vector<std::uint32_t> out;
        out.reserve(n);
        std::vector<char> seen(n, 0);
        for (std::size_t i = first; i < first + count; ++i) {
            const auto u = slot_index[i];
            if (!seen[u]) seen[u] = 1, out.push_back(u);
        }
        for (std::uint32_t u = 0; u < n; ++u)
            if (!seen[u]) out.push_back(u);
        return out;
    };
    const auto s = extended(0, ns);
    const auto p = extended(ns, np);
    std::vector<std::uint32_t> pos(n);
    for (std::uint32_t i = 0; i < n; ++i) pos[p[i]] = i;

    // weights by universe index, merged against the sorted weight map
    std::vector<std::int64_t> wu(n, 0);
    auto it = w.begin();
    for (std::size_t u = 0; u < n && it != w.end(); ++u) {
        while (it != w.end() && it->first < *universe[u]) ++it;
        if (it != w.end() && it->first == *universe[u]) {
            if (it->second < 0) throw Error(Errc::InvalidValue, "weights must be non-negative");
            wu[u] = it->second;
        }
    }
    Aligned a;
    a.pi_pos.resize(n);
    a.weight.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        a.pi_pos[i] = pos[s[i]];
        a.weight[i] = wu[s[i]];
    }
    return a;
}

inline i128 discordant_pairs_enumerate(const Aligned& a, unsigned workers) {
    const std::size_t n = a.pi_pos.size();
    const std::int64_t max_w = n ? *std::max_element(a.weight.begin(), a.weight.end()) : 0;
    // row sums fit in 64 bits unless n * max weight could overflow
    const bool narrow = n == 0 || max_w <= std::numeric_limits<std::int64_t>::max() / static_cast<std::int64_t>(n);
    std::vector<i128> partial(n, 0);
    parallel_for(n, workers, [&](std::size_t i) {
        const auto pi_i = a.pi_pos[i];
        const i128 wi = a.weight[i];
        if (narrow) {
            std::uint64_t count = 0, sum = 0;
            const std::uint64_t pivot = pi_i;
            for (std::size_t j = i + 1; j < n; ++j) {
                const std::uint64_t hit = (std::uint64_t{a.pi_pos[j]} - pivot) >> 63;  // π_j < π_i
                count += hit;
                sum += static_cast<std::uint64_t>(a.weight[j]) & (0 - hit);
            }
            partial[i] = wi * static_cast<i128>(count) + static_cast<i128>(sum);
        } else {
            i128 acc = 0;
            for (std::size_t j = i + 1; j < n; ++j)
                if (a.pi_pos[j] < pi_i) acc += wi + a.weight[j];
            partial[i] = acc;
        }
    });
    i128 total = 0;
    for (auto v : partial) total += v;
    return total;
}

/// Σ_x w_x · inv_x, where inv_x counts the elements discordant with x,
/// via a merge sort on π positions in σ order.
inline i128 discordant_pairs_merge(const Aligned& a) {
    const std::size_t n = a.pi_pos.size();
    std::vector<std::uint32_t> idx(n), buf(n);
    std::iota(idx.begin(), idx.end(), 0u);
    std::vector<std::int64_t> inv(n, 0);
    for (std::size_t width = 1; width < n; width *= 2) {
        for (std::size_t lo = 0; lo < n; lo += 2 * width) {
            const std::size_t mid = std::min(lo + width, n), hi = std::min(lo + 2 * width, n);
            std::size_t i = lo, j = mid, k = lo;
            while (i < mid || j < hi) {
                if (j >= hi || (i < mid && a.pi_pos[idx[i]] < a.pi_pos[idx[j]])) {
                    inv[idx[i]] += static_cast<std::int64_t>(j - mid);  // later in σ, earlier in π
                    buf[k++] = idx[i++];
                } else {
                    inv[idx[j]] += static_cast<std::int64_t>(mid - i);  // earlier in σ, later in π
                    buf[k++] = idx[j++];
                }
            }
        }
        std::swap(idx, buf);
    }
    i128 total = 0;
    for (std::size_t x = 0; x < n; ++x) total += static_cast<i128>(a.weight[x]) * inv[x];
    return total;
}

}  // namespace detail

/// Weighted Kendall's tau between reference σ and candidate π.
/// k_w = 1 − 2·K_w / Σ_pairs (w_a + w_b)/2, evaluated as an exact reduced
/// fraction before the single conversion to double.
inline CorrelationResult weighted_kendall_tau(const Ranking& sigma, const Ranking& pi, const WeightVector& w,
                                              Kernel kernel = Kernel::Auto, unsigned workers = 1) {
    const auto a = detail::align(sigma, pi, w);
    const std::size_t n = a.pi_pos.size();
    if (kernel == Kernel::Auto) kernel = n <= kPairKernelMaxN ? Kernel::PairEnumeration : Kernel::MergeSort;
    CorrelationResult r;
    r.discordant_weight =
        kernel == Kernel::PairEnumeration ? detail::discordant_pairs_enumerate(a, workers) : detail::discordant_pairs_merge(a);
    i128 sum_w = 0;
    for (auto x : a.weight) sum_w += x;
    r.total_pair_weight = n < 2 ? 0 : static_cast<i128>(n - 1) * sum_w;
    r.k_w_raw = static_cast<double>(r.discordant_weight) / 2000.0;
    if (r.total_pair_weight > 0) {
        i128 num = r.total_pair_weight - 2 * r.discordant_weight;
        i128 den = r.total_pair_weight;
        const i128 g = detail::gcd128(num, den);
        if (g > 1) {
            num /= g;
            den /= g;
        }
        r.k_w_normalized = static_cast<double>(static_cast<long double>(num) / static_cast<long double>(den));
    }
    return r;
}

/// Classical Kendall's tau-a on rankings over the same keys (no ties).
inline double kendall_tau(const Ranking& sigma, const Ranking& pi) {
    WeightVector w;
    for (const auto& e : sigma.entries) w[e.key] = 1;
    for (const auto& e : pi.entries) w[e.key] = 1;
    const auto r = weighted_kendall_tau(sigma, pi, w);
    return r.k_w_normalized.value_or(1.0);
}

// ---------------------------------------------------------------------------
// Recall
// ---------------------------------------------------------------------------

/// |top-k(reference) ∩ top-k(candidate)| / k.
inline double recall_at_k(const Ranking& reference, const Ranking& candidate, std::size_t k) {
    if (k < 1 || k > reference.size()) throw Error(Errc::InvalidK, "k must lie in [1, |reference|]");
    std::set<CompositeKey> top;
    for (std::size_t i = 0; i < k; ++i) top.insert(reference.entries[i].key);
    std::size_t common = 0;
    for (std::size_t i = 0; i < std::min(k, candidate.size()); ++i) common += top.count(candidate.entries[i].key);
    return static_cast<double>(common) / static_cast<double>(k);
}

struct RecallPoint {
    std::size_t k;
    double recall;

    bool operator==(const RecallPoint&) const = default;
};

/// recall_at_k for k = 1..k_max in a single incremental pass.
inline std::vector<RecallPoint> recall_profile(const Ranking& reference, const Ranking& candidate, std::size_t k_max) {
    if (k_max < 1 || k_max > reference.size()) throw Error(Errc::InvalidK, "k_max must lie in [1, |reference|]");
    std::set<CompositeKey> in_ref, in_cand;
    std::size_t common = 0;
    std::vector<RecallPoint> out;
    out.reserve(k_max);
    for (std::size_t k = 1; k <= k_max; ++k) {
        const auto& r = reference.entries[k - 1].key;
        in_ref.insert(r);
        common += in_cand.count(r);
        if (k <= candidate.size()) {
            const auto& c = candidate.entries[k - 1].key;
            in_cand.insert(c);
            common += in_ref.count(c);
        }
        out.push_back({k, static_cast<double>(common) / static_cast<double>(k)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Calendar month containing `h`.
inline HourRange calendar_month_of(Hour h) {
    const std::chrono::year_month_day ymd{date_of(h)};
    const std::chrono::year_month ym{ymd.year(), ymd.month()};
    const auto next = ym + std::chrono::months{1};
    return {start_of(Date{ym / std::chrono::day{1}}), start_of(Date{next / std::chrono::day{1}})};
}

/// Each stream's consumption within `range`, negatives clamped to 0.
inline WeightVector consumption_weights(const std::vector<DataStream>& streams, const HourRange& range) {
    WeightVector w;
    for (const auto& s : streams) w[s.key] = std::max<std::int64_t>(0, s.sum_in(range).litres);
    return w;
}

}  // namespace hydroclean::rank
