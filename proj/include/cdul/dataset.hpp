#pragma once

#include "cdul/image.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace cdul {

struct ClassVocabulary {
    std::vector<std::string> names;
    std::map<std::string, int> index;

    static ClassVocabulary from_names(std::vector<std::string> names);
    // The canonical 20 PASCAL VOC classes in canonical order.
    static const ClassVocabulary& voc2012();
    // class_00, class_01, ... for synthetic datasets.
    static ClassVocabulary synthetic(int n_classes);

    int size() const { return static_cast<int>(names.size()); }
    int find(std::string_view name) const;
};

enum class Split { train, val };

std::string_view split_name(Split split);
Split split_from_name(std::string_view name);

struct LabeledSample {
    std::string image_id;
    std::filesystem::path image_path;
    std::vector<std::uint8_t> ground_truth; // multi-hot over the vocabulary
};

struct DatasetManifest {
    Split split = Split::train;
    ClassVocabulary vocabulary;
    std::vector<LabeledSample> samples;
};

struct VocParseOptions {
    bool include_difficult = true; // occluded objects are always included
};

struct ParsedAnnotation {
    std::vector<std::uint8_t> labels;
    bool no_objects = false; // annotation carried zero object elements
};

ParsedAnnotation parse_voc_annotation(std::string_view xml_text, const ClassVocabulary& vocab,
                                      const VocParseOptions& options = {});

// Reads the VOC2012 directory layout (JPEGImages, Annotations, ImageSets/Main).
DatasetManifest load_manifest(const std::filesystem::path& root, Split split,
                              const ClassVocabulary& vocab, const VocParseOptions& options = {});

struct SyntheticDatasetParams {
    int n_samples = 64;
    int n_classes = 5;
    std::uint64_t seed = 0;
    int image_size = 32;
    Split split = Split::train;
};

// Generates striped color-patch images under root/<split>_images/ and returns
// the manifest. Fully deterministic: same params -> byte-identical files.
DatasetManifest make_synthetic_dataset(const std::filesystem::path& root,
                                       const SyntheticDatasetParams& params);

// RGB used for class `class_index` in synthetic images, quantized so the
// value survives the 8-bit PPM round trip exactly.
std::array<float, 3> synthetic_class_color(int class_index, int n_classes);

// Manifest JSON file: {split, vocabulary:[...], samples:[...]}.
void save_manifest_json(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest_json(const std::filesystem::path& path);
std::string manifest_to_json_string(const DatasetManifest& manifest);

} // namespace cdul
