#pragma once

#include "cdul/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace cdul {

enum class CacheKind : std::uint8_t { global = 0, aggregate = 1 };

std::string_view cache_kind_name(CacheKind kind);

// On-disk layout (little-endian):
//   magic "CDULVEC1" | version u32 | n_classes u32 | kind u8 |
//   snippet_size u32 (0 for global) | backend_id u16-length-prefixed UTF-8 |
//   records: ( id u16-length-prefixed UTF-8 | n_classes float32 )*
// Sidecar <path>.manifest.json: header fields + entry_count + payload sha256.
struct CacheHeader {
    std::uint32_t version = 1;
    std::uint32_t n_classes = 0;
    CacheKind kind = CacheKind::global;
    std::uint32_t snippet_size = 0;
    std::string backend_id;
};

class VectorCache {
public:
    VectorCache() = default;
    VectorCache(CacheHeader header, std::vector<std::pair<std::string, std::vector<float>>> records);

    const CacheHeader& header() const { return header_; }
    size_t size() const { return records_.size(); }

    bool contains(const std::string& image_id) const;
    // not-found raises a data error naming the id
    const std::vector<float>& at(const std::string& image_id) const;

    // stored order
    const std::vector<std::pair<std::string, std::vector<float>>>& records() const {
        return records_;
    }

private:
    CacheHeader header_;
    std::vector<std::pair<std::string, std::vector<float>>> records_;
    std::map<std::string, size_t> index_;
};

// Atomic: payload goes to a temp file first, rename last, sidecar after.
void cache_write(const CacheHeader& header,
                 const std::vector<std::pair<std::string, std::vector<float>>>& entries,
                 const std::filesystem::path& path);

VectorCache cache_read(const std::filesystem::path& path);

// Refuses caches written under a different backend/contract.
void require_cache_compatible(const VectorCache& cache, const CacheHeader& expected);

struct GenerateProgress {
    size_t done = 0;
    size_t total = 0;
    double eta_seconds = 0.0; // from measured per-image cost
    size_t resumed = 0;       // entries recovered from the journal
};

using ComputeEntryFn = std::function<std::vector<float>(const LabeledSample&)>;
using ProgressFn = std::function<void(const GenerateProgress&)>;

// Computes one vector per manifest sample in manifest order, journaling
// completed records to <path>.journal so an interrupted run resumes where
// it stopped. The finished file is bit-identical to an uninterrupted run.
VectorCache generate_or_resume(const DatasetManifest& manifest, const CacheHeader& header,
                               const std::filesystem::path& path, const ComputeEntryFn& compute,
                               const ProgressFn& progress = {});

std::string sha256_hex(const void* bytes, size_t size);

} // namespace cdul
