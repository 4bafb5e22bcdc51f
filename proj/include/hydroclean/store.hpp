#pragma once

// On-disk pipeline store: columnar stream snapshots, CRC-framed append-only
// journals and an atomically replaced manifest.

#include <charconv>
#include <csignal>
#include <functional>
#include <map>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include <boost/crc.hpp>

#include "core_model.hpp"
#include "parallel.hpp"
#include "serialization.hpp"

namespace hydroclean::store {

namespace fs = std::filesystem;

inline std::uint32_t crc32(std::string_view bytes) {
    boost::crc_32_type c;
    c.process_bytes(bytes.data(), bytes.size());
    return c.checksum();
}

// ---------------------------------------------------------------------------
// Crash injection
// ---------------------------------------------------------------------------

/// Names a point in the write path. With HYDROCLEAN_CRASH_AT=<point>:<n> set,
/// the process kills itself with SIGKILL on the n-th time it reaches <point>.
/// Tests may instead install `crash_hook`.
inline std::function<void(std::string_view)>& crash_hook() {
    static std::function<void(std::string_view)> hook;
    return hook;
}

inline void crash_point(std::string_view name) {
    if (auto& h = crash_hook()) h(name);
    static const std::string spec = [] {
        const char* v = std::getenv("HYDROCLEAN_CRASH_AT");
        return std::string(v ? v : "");
    }();
    if (spec.empty()) return;
    static std::map<std::string, long, std::less<>> hits;
    const auto colon = spec.rfind(':');
    const std::string_view want = std::string_view(spec).substr(0, colon);
    const long n = colon == std::string::npos ? 1 : std::atol(spec.c_str() + colon + 1);
    if (want != name) return;
    if (++hits[std::string(name)] >= n) ::kill(::getpid(), SIGKILL);
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline void write_atomic(const fs::path& path, std::string_view bytes) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(Errc::MissingFile, "cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out.flush()) throw Error(Errc::StoreCorrupt, "short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::MissingFile, path.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// ---------------------------------------------------------------------------
// Columnar snapshot: "HCS1", stream count, per-stream blocks, CRC32 trailer.
// Hours are delta-encoded varints, litres zigzag varints.
// ---------------------------------------------------------------------------

namespace codec {

inline void put_varint(std::string& out, std::uint64_t v) {
    while (v >= 0x80) {
        out.push_back(static_cast<char>((v & 0x7F) | 0x80));
        v >>= 7;
    }
    out.push_back(static_cast<char>(v));
}

inline std::uint64_t zigzag(std::int64_t v) {
    return (static_cast<std::uint64_t>(v) << 1) ^ static_cast<std::uint64_t>(v >> 63);
}
inline std::int64_t unzigzag(std::uint64_t v) { return static_cast<std::int64_t>(v >> 1) ^ -static_cast<std::int64_t>(v & 1); }

inline void put_string(std::string& out, std::string_view s) {
    put_varint(out, s.size());
    out.append(s);
}

struct Reader {
    std::string_view data;
    std::size_t pos = 0;

    [[noreturn]] void fail() const { throw Error(Errc::StoreCorrupt, "snapshot truncated or malformed"); }

    std::uint64_t varint() {
        std::uint64_t v = 0;
        for (int shift = 0; shift < 64; shift += 7) {
            if (pos >= data.size()) fail();
            const auto b = static_cast<unsigned char>(data[pos++]);
            v |= static_cast<std::uint64_t>(b & 0x7F) << shift;
            if (!(b & 0x80)) return v;
        }
        fail();
    }
    std::string string() {
        const auto n = varint();
        if (n > data.size() - pos) fail();
        std::string s(data.substr(pos, n));
        pos += n;
        return s;
    }
};

inline std::string encode_stream(const DataStream& s) {
    std::string out;
    out.reserve(32 + s.readings.size() * 4);
    put_string(out, s.key.str());
    put_varint(out, static_cast<std::uint64_t>(s.category.main));
    put_string(out, s.category.sub_code);
    put_string(out, s.unit_label);
    put_varint(out, s.readings.size());
    std::int64_t prev = 0;
    for (const auto& r : s.readings) {
        put_varint(out, zigzag(r.at.value - prev));
        prev = r.at.value;
    }
    for (const auto& r : s.readings) put_varint(out, zigzag(r.value.litres));
    return out;
}

inline DataStream decode_stream(Reader& in) {
    DataStream s;
    s.key = CompositeKey::parse(in.string());
    const auto cat = in.varint();
    if (cat > static_cast<std::uint64_t>(MainCategory::AGR)) in.fail();
    s.category.main = static_cast<MainCategory>(cat);
    s.category.sub_code = in.string();
    s.unit_label = in.string();
    const auto n = in.varint();
    if (n > in.data.size()) in.fail();
    s.readings.resize(n);
    std::int64_t prev = 0;
    for (auto& r : s.readings) {
        prev += unzigzag(in.varint());
        r.at = Hour{prev};
    }
    for (auto& r : s.readings) r.value.litres = unzigzag(in.varint());
    return s;
}

}  // namespace codec

inline constexpr std::string_view kSnapshotMagic = "HCS1";

inline std::string encode_snapshot(const std::vector<DataStream>& streams, unsigned workers = 1) {
    std::vector<std::string> blocks(streams.size());
    parallel_for(streams.size(), workers, [&](std::size_t i) { blocks[i] = codec::encode_stream(streams[i]); });
    std::string out(kSnapshotMagic);
    codec::put_varint(out, streams.size());
    for (const auto& b : blocks) {
        codec::put_varint(out, b.size());
        out += b;
    }
    const std::uint32_t c = crc32(out);
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((c >> (8 * k)) & 0xFF));
    return out;
}

inline std::vector<DataStream> decode_snapshot(std::string_view bytes, unsigned workers = 1) {
    if (bytes.size() < kSnapshotMagic.size() + 4 || bytes.substr(0, 4) != kSnapshotMagic)
        throw Error(Errc::StoreCorrupt, "not a stream snapshot");
    const auto body = bytes.substr(0, bytes.size() - 4);
    std::uint32_t stored = 0;
    for (int k = 0; k < 4; ++k)
        stored |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[bytes.size() - 4 + static_cast<std::size_t>(k)]))
                  << (8 * k);
    if (crc32(body) != stored) throw Error(Errc::StoreCorrupt, "snapshot checksum mismatch");
    codec::Reader in{body, 4};
    const auto n = in.varint();
    std::vector<std::string_view> blocks;
    for (std::uint64_t i = 0; i < n; ++i) {
        const auto len = in.varint();
        if (len > body.size() - in.pos) in.fail();
        blocks.push_back(body.substr(in.pos, len));
        in.pos += len;
    }
    std::vector<DataStream> out(blocks.size());
    parallel_for(blocks.size(), workers, [&](std::size_t i) {
        codec::Reader r{blocks[i], 0};
        out[i] = codec::decode_stream(r);
    });
    return out;
}

// ---------------------------------------------------------------------------
// CRC-framed JSON lines: "<crc32 hex> <json>\n"
// ---------------------------------------------------------------------------

inline std::string frame(const json& j) {
    const std::string body = j.dump();
    char head[10];
    std::snprintf(head, sizeof head, "%08x ", crc32(body));
    return head + body + '\n';
}

struct FramedRead {
    std::vector<json> records;
    std::uint64_t valid_end = 0;  // byte offset after the last intact record
};

/// Reads intact records from the start of `path`, stopping at `limit` bytes or
/// at the first torn or corrupt line.
inline FramedRead read_framed(const fs::path& path, std::uint64_t limit = UINT64_MAX) {
    FramedRead out;
    if (!fs::exists(path)) return out;
    const std::string data = slurp(path);
    const std::size_t end = static_cast<std::size_t>(std::min<std::uint64_t>(limit, data.size()));
    std::size_t pos = 0;
    while (pos < end) {
        const auto nl = data.find('\n', pos);
        if (nl == std::string::npos || nl >= end) break;
        const std::string_view line(data.data() + pos, nl - pos);
        if (line.size() < 10 || line[8] != ' ') break;
        const auto body = line.substr(9);
        std::uint32_t want = 0;
        const auto [p, ec] = std::from_chars(line.data(), line.data() + 8, want, 16);
        if (ec != std::errc{} || p != line.data() + 8 || crc32(body) != want) break;
        try {
            out.records.push_back(json::parse(body));
        } catch (const json::exception&) {
            break;
        }
        pos = nl + 1;
        out.valid_end = pos;
    }
    return out;
}

inline std::uint64_t file_size_or_zero(const fs::path& p) { return fs::exists(p) ? fs::file_size(p) : 0; }

/// Appends framed records and returns the new file size.
inline std::uint64_t append_framed(const fs::path& path, const std::vector<json>& records, std::string_view point) {
    std::FILE* f = std::fopen(path.c_str(), "ab");
    if (!f) throw Error(Errc::MissingFile, "cannot append to " + path.string());
    for (const auto& r : records) {
        const auto line = frame(r);
        if (std::fwrite(line.data(), 1, line.size(), f) != line.size()) {
            std::fclose(f);
            throw Error(Errc::StoreCorrupt, "short write to " + path.string());
        }
        std::fflush(f);
        crash_point(point);
    }
    std::fclose(f);
    return file_size_or_zero(path);
}

inline void truncate_to(const fs::path& path, std::uint64_t size) {
    if (!fs::exists(path)) {
        if (size != 0) throw Error(Errc::StoreCorrupt, path.string() + " missing");
        std::ofstream(path, std::ios::binary);
        return;
    }
    if (fs::file_size(path) < size) throw Error(Errc::StoreCorrupt, path.string() + " is shorter than its committed size");
    if (fs::file_size(path) > size) fs::resize_file(path, size);
}

// ---------------------------------------------------------------------------
// Store layout
// ---------------------------------------------------------------------------

inline constexpr int kIngestPhase = -1;

inline std::string phase_tag(int phase) { return phase == kIngestPhase ? "ingest" : std::to_string(phase); }

struct Layout {
    fs::path dir;

    fs::path manifest() const { return dir / "manifest.json"; }
    fs::path snapshot(int phase) const { return dir / ("snapshot-" + phase_tag(phase) + ".hcs"); }
    fs::path state(int phase) const { return dir / ("state-" + phase_tag(phase) + ".json"); }
    fs::path events() const { return dir / "events.jsonl"; }
    fs::path verdicts() const { return dir / "verdicts.jsonl"; }
    fs::path mind() const { return dir / "mind.csv"; }
    fs::path bild() const { return dir / "bild.csv"; }
};

struct Manifest {
    int phase_completed = kIngestPhase;
    std::uint64_t events_offset = 0;
    std::string state_hash;

    json to_json() const {
        return {{"format", "hydroclean-store-1"},
                {"phase_completed", phase_completed},
                {"events_offset", events_offset},
                {"state_hash", state_hash}};
    }
    static Manifest from_json(const json& j) {
        if (j.value("format", std::string{}) != "hydroclean-store-1")
            throw Error(Errc::StoreCorrupt, "unknown store format");
        return {j.at("phase_completed").get<int>(), j.at("events_offset").get<std::uint64_t>(),
                j.at("state_hash").get<std::string>()};
    }
};

inline Manifest read_manifest(const Layout& l) {
    if (!fs::exists(l.manifest())) throw Error(Errc::MissingFile, "no store at " + l.dir.string());
    try {
        return Manifest::from_json(json::parse(slurp(l.manifest())));
    } catch (const json::exception& e) {
        throw Error(Errc::StoreCorrupt, std::string("manifest: ") + e.what());
    }
}

inline void write_manifest(const Layout& l, const Manifest& m) {
    crash_point("manifest");
    write_atomic(l.manifest(), m.to_json().dump(1) + "\n");
}

}  // namespace hydroclean::store
