#include <fstream>
#include <random>

#include "fixtures.hpp"

using namespace hydroclean;
namespace fs = std::filesystem;
using hydroclean::testing::TempDir;

namespace {

std::vector<DataStream> random_streams(std::uint64_t seed, std::size_t n) {
    std::mt19937_64 rng(seed);
    std::vector<DataStream> out;
    for (std::size_t i = 0; i < n; ++i) {
        DataStream s;
        s.key = CompositeKey::parse("a" + std::to_string(i) + "|m" + std::to_string(rng() % 1000) + "|d");
        s.category = {static_cast<MainCategory>(rng() % 6), "S" + std::to_string(rng() % 9)};
        s.unit_label = (rng() % 2) ? "m3" : "";
        Hour h = make_hour(2013, 1, 1) + static_cast<std::int64_t>(rng() % 50);
        const auto len = rng() % 300;
        for (std::size_t k = 0; k < len; ++k) {
            h = h + 1 + static_cast<std::int64_t>(rng() % 3 == 0 ? rng() % 40 : 0);
            std::int64_t v = static_cast<std::int64_t>(rng() % 5000);
            if (rng() % 17 == 0) v = -v * 1000;
            if (rng() % 97 == 0) v = std::numeric_limits<std::int64_t>::max() / 4;
            s.readings.push_back({h, Consumption{v}});
        }
        out.push_back(std::move(s));
    }
    return out;
}

void append_raw(const fs::path& p, const std::string& bytes) {
    std::ofstream(p, std::ios::binary | std::ios::app) << bytes;
}

}  // namespace

TEST(Store, Crc32MatchesStandardCheckValue) { EXPECT_EQ(store::crc32("123456789"), 0xCBF43926u); }

TEST(Store, SnapshotRoundTripsForAnyWorkerCount) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto streams = random_streams(seed, 1 + seed % 7);
        const auto bytes = store::encode_snapshot(streams, 1);
        EXPECT_EQ(store::encode_snapshot(streams, 4), bytes);
        EXPECT_EQ(store::decode_snapshot(bytes, 1), streams);
        EXPECT_EQ(store::decode_snapshot(bytes, 3), streams);
    }
    EXPECT_TRUE(store::decode_snapshot(store::encode_snapshot({})).empty());
}

TEST(Store, SnapshotRejectsCorruption) {
    const auto bytes = store::encode_snapshot(random_streams(3, 4));
    auto expect_corrupt = [](const std::string& b) {
        try {
            store::decode_snapshot(b);
            ADD_FAILURE() << "corruption not detected";
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), Errc::StoreCorrupt);
        }
    };
    for (std::size_t pos : {std::size_t{5}, bytes.size() / 2, bytes.size() - 1}) {
        auto b = bytes;
        b[pos] = static_cast<char>(b[pos] ^ 0x20);
        expect_corrupt(b);
    }
    expect_corrupt(bytes.substr(0, bytes.size() - 3));
    expect_corrupt("HCS");
    expect_corrupt("XXXX" + bytes.substr(4));
}

TEST(Store, FramedJournalStopsAtTornTail) {
    TempDir d;
    const auto p = d.path / "j.jsonl";
    const auto end = store::append_framed(p, {json{{"n", 1}}, json{{"n", 2}}, json{{"n", 3}}}, "event");
    auto r = store::read_framed(p);
    ASSERT_EQ(r.records.size(), 3u);
    EXPECT_EQ(r.valid_end, end);
    EXPECT_EQ(r.records[2]["n"], 3);

    append_raw(p, store::frame(json{{"n", 4}}).substr(0, 7));
    r = store::read_framed(p);
    EXPECT_EQ(r.records.size(), 3u);
    EXPECT_EQ(r.valid_end, end);

    EXPECT_EQ(store::read_framed(p, end - 1).records.size(), 2u);
    EXPECT_EQ(store::read_framed(d.path / "absent").records.size(), 0u);
}

TEST(Store, FramedJournalStopsAtBadChecksum) {
    TempDir d;
    const auto p = d.path / "j.jsonl";
    store::append_framed(p, {json{{"n", 1}}}, "event");
    auto line = store::frame(json{{"n", 2}});
    line[14] = '5';
    append_raw(p, line);
    store::append_framed(p, {json{{"n", 3}}}, "event");
    EXPECT_EQ(store::read_framed(p).records.size(), 1u);
}

TEST(Store, AtomicWriteReplacesWholeFile) {
    TempDir d;
    const auto p = d.path / "f";
    store::write_atomic(p, "first version");
    store::write_atomic(p, "2nd");
    EXPECT_EQ(store::slurp(p), "2nd");
    EXPECT_FALSE(fs::exists(d.path / "f.tmp"));
}

TEST(Store, OpenTruncatesUncommittedJournalBytes) {
    TempDir d;
    const auto c = synth::generate_synthetic(hydroclean::testing::small_plan(8, 10));
    auto st = hydroclean::testing::ingest_corpus(c, d.path);
    const auto cfg = hydroclean::testing::small_config();
    pipeline::run_phase(st, 0, cfg);
    const auto hash = st.committed_hash();
    const store::Layout l{d.path / "store"};
    const auto events = fs::file_size(l.events());
    append_raw(l.events(), store::frame(json{{"junk", true}}) + "deadbeef {\"torn");
    append_raw(l.verdicts(), "0000");

    auto reopened = pipeline::Store::open(l.dir);
    EXPECT_EQ(fs::file_size(l.events()), events);
    EXPECT_EQ(fs::file_size(l.verdicts()), 0u);
    EXPECT_EQ(reopened.committed_hash(), hash);
    EXPECT_EQ(pipeline::state_hash(reopened.current()), hash);
}

TEST(Store, LoadDetectsTamperedSnapshot) {
    TempDir d;
    const auto c = synth::generate_synthetic(hydroclean::testing::small_plan(8, 6));
    auto st = hydroclean::testing::ingest_corpus(c, d.path);
    const store::Layout l{d.path / "store"};
    auto s = st.current();
    s.streams.front().readings.front().value.litres += 1;
    store::write_atomic(l.snapshot(store::kIngestPhase), store::encode_snapshot(s.streams));
    try {
        pipeline::Store::open(l.dir).current();
        ADD_FAILURE() << "tampering not detected";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::StoreCorrupt);
    }
}
