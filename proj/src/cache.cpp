#include "cdul/cache.hpp"

#include "cdul/error.hpp"
#include "cdul/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>
#include <openssl/evp.h>

namespace cdul {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

static constexpr char kMagic[8] = {'C', 'D', 'U', 'L', 'V', 'E', 'C', '1'};

std::string_view cache_kind_name(CacheKind kind) {
    return kind == CacheKind::global ? "global" : "aggregate";
}

std::string sha256_hex(const void* bytes, size_t size) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int digest_len = 0;
    if (EVP_Digest(bytes, size, digest, &digest_len, EVP_sha256(), nullptr) != 1)
        fail(ErrorKind::internal, "sha256 computation failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(digest_len * 2);
    for (unsigned int i = 0; i < digest_len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

namespace {

void append_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct ByteReader {
    const std::string& bytes;
    size_t pos = 0;
    const std::string where;

    [[noreturn]] void corrupt(const std::string& what) const {
        fail(ErrorKind::data, "corrupt cache file " + where + ": " + what);
    }

    void read_raw(void* dst, size_t n, const char* what) {
        if (pos + n > bytes.size()) corrupt(std::string("truncated while reading ") + what);
        std::memcpy(dst, bytes.data() + pos, n);
        pos += n;
    }

    std::uint8_t read_u8(const char* what) {
        std::uint8_t v;
        read_raw(&v, 1, what);
        return v;
    }
    std::uint16_t read_u16(const char* what) {
        std::uint8_t raw[2];
        read_raw(raw, 2, what);
        return static_cast<std::uint16_t>(raw[0] | (raw[1] << 8));
    }
    std::uint32_t read_u32(const char* what) {
        std::uint8_t raw[4];
        read_raw(raw, 4, what);
        return static_cast<std::uint32_t>(raw[0]) | (static_cast<std::uint32_t>(raw[1]) << 8) |
               (static_cast<std::uint32_t>(raw[2]) << 16) | (static_cast<std::uint32_t>(raw[3]) << 24);
    }
    std::string read_string16(const char* what) {
        std::uint16_t len = read_u16(what);
        if (pos + len > bytes.size()) corrupt(std::string("truncated while reading ") + what);
        std::string s(bytes.data() + pos, len);
        pos += len;
        return s;
    }
    bool done() const { return pos == bytes.size(); }
};

std::string encode_header(const CacheHeader& header) {
    std::string out(kMagic, sizeof(kMagic));
    append_u32(out, header.version);
    append_u32(out, header.n_classes);
    out.push_back(static_cast<char>(header.kind));
    append_u32(out, header.snippet_size);
    if (header.backend_id.size() > 0xFFFF)
        fail(ErrorKind::internal, "backend_id too long for cache header");
    append_u16(out, static_cast<std::uint16_t>(header.backend_id.size()));
    out += header.backend_id;
    return out;
}

CacheHeader decode_header(ByteReader& reader) {
    char magic[sizeof(kMagic)];
    reader.read_raw(magic, sizeof(magic), "magic");
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) reader.corrupt("bad magic");
    CacheHeader header;
    header.version = reader.read_u32("version");
    if (header.version != 1)
        reader.corrupt("unsupported version " + std::to_string(header.version));
    header.n_classes = reader.read_u32("n_classes");
    std::uint8_t kind = reader.read_u8("kind");
    if (kind > 1) reader.corrupt("invalid kind byte");
    header.kind = static_cast<CacheKind>(kind);
    header.snippet_size = reader.read_u32("snippet_size");
    header.backend_id = reader.read_string16("backend_id");
    return header;
}

void encode_record(std::string& out, const std::string& id, const std::vector<float>& vec,
                   std::uint32_t n_classes) {
    if (vec.size() != n_classes)
        fail(ErrorKind::data, "vector for image '" + id + "' has length " +
                                  std::to_string(vec.size()) + ", expected " +
                                  std::to_string(n_classes));
    for (float v : vec)
        if (!std::isfinite(v)) fail(ErrorKind::data, "non-finite vector for image '" + id + "'");
    if (id.size() > 0xFFFF) fail(ErrorKind::data, "image id too long: " + id);
    append_u16(out, static_cast<std::uint16_t>(id.size()));
    out += id;
    out.append(reinterpret_cast<const char*>(vec.data()), vec.size() * sizeof(float));
}

void atomic_write_file(const fs::path& path, const std::string& bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::io, "cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) fail(ErrorKind::io, "write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) fail(ErrorKind::io, "rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

fs::path sidecar_path(const fs::path& path) {
    fs::path p = path;
    p += ".manifest.json";
    return p;
}

void write_sidecar(const CacheHeader& header, size_t entry_count, const std::string& payload,
                   const fs::path& path) {
    ordered_json j;
    j["magic"] = std::string(kMagic, sizeof(kMagic));
    j["version"] = header.version;
    j["n_classes"] = header.n_classes;
    j["kind"] = std::string(cache_kind_name(header.kind));
    j["snippet_size"] = header.snippet_size;
    j["backend_id"] = header.backend_id;
    j["entry_count"] = entry_count;
    j["sha256"] = sha256_hex(payload.data(), payload.size());
    atomic_write_file(sidecar_path(path), j.dump(2) + "\n");
}

std::string read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

} // namespace

VectorCache::VectorCache(CacheHeader header,
                         std::vector<std::pair<std::string, std::vector<float>>> records)
    : header_(std::move(header)), records_(std::move(records)) {
    for (size_t i = 0; i < records_.size(); ++i) {
        auto [it, inserted] = index_.emplace(records_[i].first, i);
        if (!inserted)
            fail(ErrorKind::data, "duplicate image id '" + records_[i].first + "' in cache");
    }
}

bool VectorCache::contains(const std::string& image_id) const {
    return index_.contains(image_id);
}

const std::vector<float>& VectorCache::at(const std::string& image_id) const {
    auto it = index_.find(image_id);
    if (it == index_.end())
        fail(ErrorKind::data, "image id '" + image_id + "' not present in cache");
    return records_[it->second].second;
}

void cache_write(const CacheHeader& header,
                 const std::vector<std::pair<std::string, std::vector<float>>>& entries,
                 const fs::path& path) {
    std::set<std::string> seen;
    std::string payload = encode_header(header);
    for (const auto& [id, vec] : entries) {
        if (!seen.insert(id).second)
            fail(ErrorKind::data, "duplicate image id '" + id + "' in cache entries");
        encode_record(payload, id, vec, header.n_classes);
    }
    atomic_write_file(path, payload);
    write_sidecar(header, entries.size(), payload, path);
}

VectorCache cache_read(const fs::path& path) {
    if (!fs::exists(path)) fail(ErrorKind::io, "cache file does not exist: " + path.string());
    std::string payload = read_file_bytes(path);
    ByteReader reader{payload, 0, path.string()};
    CacheHeader header = decode_header(reader);

    std::vector<std::pair<std::string, std::vector<float>>> records;
    while (!reader.done()) {
        std::string id = reader.read_string16("record id");
        std::vector<float> vec(header.n_classes);
        reader.read_raw(vec.data(), vec.size() * sizeof(float), "record vector");
        records.emplace_back(std::move(id), std::move(vec));
    }

    const fs::path sidecar = sidecar_path(path);
    if (!fs::exists(sidecar))
        fail(ErrorKind::data, "cache sidecar missing: " + sidecar.string() +
                                  " (cache cannot be verified; regenerate it)");
    ordered_json j;
    try {
        j = ordered_json::parse(read_file_bytes(sidecar));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::data, "corrupt cache sidecar " + sidecar.string() + ": " + e.what());
    }
    if (j.at("sha256").get<std::string>() != sha256_hex(payload.data(), payload.size()))
        fail(ErrorKind::data, "cache checksum mismatch for " + path.string());
    if (j.at("entry_count").get<size_t>() != records.size())
        fail(ErrorKind::data, "cache entry count mismatch for " + path.string());

    return VectorCache(std::move(header), std::move(records));
}

void require_cache_compatible(const VectorCache& cache, const CacheHeader& expected) {
    const CacheHeader& h = cache.header();
    auto refuse = [&](const std::string& what) {
        fail(ErrorKind::data, "cache is incompatible with this configuration: " + what +
                                  " (regenerate the cache with build-cache)");
    };
    if (h.backend_id != expected.backend_id)
        refuse("cache backend '" + h.backend_id + "' vs configured '" + expected.backend_id + "'");
    if (h.n_classes != expected.n_classes)
        refuse("cache has " + std::to_string(h.n_classes) + " classes, expected " +
               std::to_string(expected.n_classes));
    if (h.kind != expected.kind)
        refuse(std::string("cache kind '") + std::string(cache_kind_name(h.kind)) +
               "' vs expected '" + std::string(cache_kind_name(expected.kind)) + "'");
    if (h.snippet_size != expected.snippet_size)
        refuse("cache snippet size " + std::to_string(h.snippet_size) + " vs expected " +
               std::to_string(expected.snippet_size));
}

VectorCache generate_or_resume(const DatasetManifest& manifest, const CacheHeader& header,
                               const fs::path& path, const ComputeEntryFn& compute,
                               const ProgressFn& progress) {
    fs::path journal = path;
    journal += ".journal";

    // A finished, valid cache wins over any stale journal.
    if (fs::exists(path)) {
        VectorCache existing = cache_read(path);
        require_cache_compatible(existing, header);
        if (existing.size() != manifest.samples.size())
            fail(ErrorKind::data, "existing cache " + path.string() + " holds " +
                                      std::to_string(existing.size()) + " entries but the manifest has " +
                                      std::to_string(manifest.samples.size()) +
                                      "; remove it to regenerate");
        for (size_t i = 0; i < manifest.samples.size(); ++i)
            if (existing.records()[i].first != manifest.samples[i].image_id)
                fail(ErrorKind::data, "existing cache " + path.string() +
                                          " was generated from a different manifest; remove it to regenerate");
        std::error_code ec;
        fs::remove(journal, ec);
        if (progress)
            progress({manifest.samples.size(), manifest.samples.size(), 0.0, manifest.samples.size()});
        return existing;
    }

    const std::string header_bytes = encode_header(header);
    std::string payload = header_bytes;
    std::vector<std::pair<std::string, std::vector<float>>> records;
    size_t resumed = 0;

    if (fs::exists(journal)) {
        std::string bytes = read_file_bytes(journal);
        if (bytes.size() < header_bytes.size() ||
            std::memcmp(bytes.data(), header_bytes.data(), header_bytes.size()) != 0)
            fail(ErrorKind::data, "journal " + journal.string() +
                                      " was written under a different configuration; remove it");
        // recover whole records; a partial tail from an interrupted write is dropped
        size_t good_end = header_bytes.size();
        ByteReader reader{bytes, header_bytes.size(), journal.string()};
        while (!reader.done()) {
            size_t record_start = reader.pos;
            try {
                std::string id = reader.read_string16("record id");
                std::vector<float> vec(header.n_classes);
                reader.read_raw(vec.data(), vec.size() * sizeof(float), "record vector");
                records.emplace_back(std::move(id), std::move(vec));
                good_end = reader.pos;
            } catch (const Error&) {
                reader.pos = record_start;
                break;
            }
        }
        if (records.size() > manifest.samples.size())
            fail(ErrorKind::data, "journal " + journal.string() + " holds more entries than the manifest");
        for (size_t i = 0; i < records.size(); ++i)
            if (records[i].first != manifest.samples[i].image_id)
                fail(ErrorKind::data, "journal " + journal.string() + " disagrees with the manifest at entry " +
                                          std::to_string(i) + " ('" + records[i].first + "' vs '" +
                                          manifest.samples[i].image_id + "')");
        payload.append(bytes.data() + header_bytes.size(), good_end - header_bytes.size());
        resumed = records.size();
    }

    {
        std::ofstream journal_out(journal, std::ios::binary | std::ios::trunc);
        if (!journal_out) fail(ErrorKind::io, "cannot open journal " + journal.string());
        journal_out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        journal_out.flush();

        const size_t total = manifest.samples.size();
        const size_t block = static_cast<size_t>(std::max(16, par::max_threads() * 8));
        size_t done = records.size();
        auto started = std::chrono::steady_clock::now();
        size_t computed_since_start = 0;

        while (done < total) {
            size_t end = std::min(total, done + block);
            std::vector<std::vector<float>> block_vecs(end - done);
            std::exception_ptr first_error;
#pragma omp parallel for schedule(dynamic) if (par::mode() == par::ExecMode::openmp)
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(end - done); ++i) {
                try {
                    block_vecs[static_cast<size_t>(i)] =
                        compute(manifest.samples[done + static_cast<size_t>(i)]);
                } catch (...) {
#pragma omp critical
                    if (!first_error) first_error = std::current_exception();
                }
            }
            if (first_error) std::rethrow_exception(first_error);

            std::string block_bytes;
            for (size_t i = done; i < end; ++i) {
                encode_record(block_bytes, manifest.samples[i].image_id, block_vecs[i - done],
                              header.n_classes);
                records.emplace_back(manifest.samples[i].image_id, std::move(block_vecs[i - done]));
            }
            journal_out.write(block_bytes.data(), static_cast<std::streamsize>(block_bytes.size()));
            journal_out.flush();
            if (!journal_out) fail(ErrorKind::io, "journal write failed: " + journal.string());
            payload += block_bytes;

            computed_since_start += end - done;
            done = end;
            if (progress) {
                double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
                double per_item = computed_since_start > 0 ? elapsed / static_cast<double>(computed_since_start) : 0.0;
                progress({done, total, per_item * static_cast<double>(total - done), resumed});
            }
        }
    }

    atomic_write_file(path, payload);
    write_sidecar(header, records.size(), payload, path);
    std::error_code ec;
    fs::remove(journal, ec);
    return VectorCache(header, std::move(records));
}

} // namespace cdul
