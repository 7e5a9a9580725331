#include "cdul/dataset.hpp"

#include "cdul/error.hpp"
#include "cdul/rng.hpp"
#include "cdul/xml.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace cdul {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

ClassVocabulary ClassVocabulary::from_names(std::vector<std::string> names) {
    if (names.empty()) fail(ErrorKind::config, "class vocabulary must not be empty");
    ClassVocabulary vocab;
    vocab.names = std::move(names);
    for (size_t i = 0; i < vocab.names.size(); ++i) {
        auto [it, inserted] = vocab.index.emplace(vocab.names[i], static_cast<int>(i));
        if (!inserted) fail(ErrorKind::config, "duplicate class name '" + vocab.names[i] + "'");
    }
    return vocab;
}

const ClassVocabulary& ClassVocabulary::voc2012() {
    static const ClassVocabulary vocab = from_names({
        "aeroplane", "bicycle", "bird", "boat", "bottle", "bus", "car", "cat", "chair", "cow",
        "diningtable", "dog", "horse", "motorbike", "person", "pottedplant", "sheep", "sofa",
        "train", "tvmonitor"});
    return vocab;
}

ClassVocabulary ClassVocabulary::synthetic(int n_classes) {
    if (n_classes < 2) fail(ErrorKind::config, "synthetic vocabulary needs at least 2 classes");
    std::vector<std::string> names;
    names.reserve(static_cast<size_t>(n_classes));
    for (int i = 0; i < n_classes; ++i) {
        char buf[20];
        std::snprintf(buf, sizeof(buf), "class_%02d", i);
        names.emplace_back(buf);
    }
    return from_names(std::move(names));
}

int ClassVocabulary::find(std::string_view name) const {
    auto it = index.find(std::string(name));
    return it == index.end() ? -1 : it->second;
}

std::string_view split_name(Split split) {
    return split == Split::train ? "train" : "val";
}

Split split_from_name(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    fail(ErrorKind::config, "unknown split '" + std::string(name) + "' (expected train or val)");
}

ParsedAnnotation parse_voc_annotation(std::string_view xml_text, const ClassVocabulary& vocab,
                                      const VocParseOptions& options) {
    xml::Node root = xml::parse_document(xml_text);
    if (root.name != "annotation")
        fail(ErrorKind::data, "expected top-level <annotation> element, got <" + root.name + ">");

    ParsedAnnotation out;
    out.labels.assign(static_cast<size_t>(vocab.size()), 0);

    auto objects = root.children_named("object");
    out.no_objects = objects.empty();
    for (const xml::Node* object : objects) {
        const xml::Node* name_node = object->child("name");
        if (name_node == nullptr)
            fail(ErrorKind::data, "object at line " + std::to_string(object->line) + " has no <name>");
        std::string name = name_node->trimmed_text();
        if (!options.include_difficult) {
            const xml::Node* difficult = object->child("difficult");
            if (difficult != nullptr && difficult->trimmed_text() == "1") continue;
        }
        // occluded objects count as positives regardless of flags
        int cls = vocab.find(name);
        if (cls < 0)
            fail(ErrorKind::data, "unknown class '" + name + "' at line " +
                                      std::to_string(name_node->line));
        out.labels[static_cast<size_t>(cls)] = 1;
    }
    return out;
}

namespace {

std::vector<std::string> read_split_ids(const fs::path& list_file) {
    std::ifstream in(list_file);
    if (!in) fail(ErrorKind::io, "cannot open split list " + list_file.string());
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        // Main/<split>.txt lines are bare ids; tolerate trailing whitespace
        size_t end = line.find_last_not_of(" \t\r");
        if (end == std::string::npos) continue;
        ids.push_back(line.substr(0, end + 1));
    }
    return ids;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

DatasetManifest load_manifest(const fs::path& root, Split split, const ClassVocabulary& vocab,
                              const VocParseOptions& options) {
    const fs::path list_file = root / "ImageSets" / "Main" / (std::string(split_name(split)) + ".txt");
    std::vector<std::string> ids = read_split_ids(list_file);

    DatasetManifest manifest;
    manifest.split = split;
    manifest.vocabulary = vocab;
    manifest.samples.reserve(ids.size());

    std::set<std::string> seen;
    for (const std::string& id : ids) {
        if (!seen.insert(id).second)
            fail(ErrorKind::data, "duplicate image id '" + id + "' in " + list_file.string());
        fs::path annotation = root / "Annotations" / (id + ".xml");
        fs::path image = root / "JPEGImages" / (id + ".jpg");
        if (!fs::exists(annotation))
            fail(ErrorKind::io, "missing annotation for id '" + id + "': " + annotation.string());
        if (!fs::exists(image))
            fail(ErrorKind::io, "missing image for id '" + id + "': " + image.string());

        ParsedAnnotation parsed;
        try {
            parsed = parse_voc_annotation(read_file(annotation), vocab, options);
        } catch (const Error& e) {
            fail(e.kind(), std::string(e.what()) + " (while parsing " + annotation.string() + ")");
        }
        if (parsed.no_objects)
            std::fprintf(stderr, "warning: annotation %s lists no objects\n", annotation.string().c_str());
        manifest.samples.push_back({id, image, std::move(parsed.labels)});
    }
    return manifest;
}

std::array<float, 3> synthetic_class_color(int class_index, int n_classes) {
    // evenly spaced hues, full saturation/value, quantized to 8 bits
    float h = static_cast<float>(class_index) / static_cast<float>(n_classes) * 6.0f;
    int sector = static_cast<int>(h) % 6;
    float f = h - std::floor(h);
    float q = 1.0f - f;
    float rgb[3] = {0, 0, 0};
    switch (sector) {
    case 0: rgb[0] = 1; rgb[1] = f; break;
    case 1: rgb[0] = q; rgb[1] = 1; break;
    case 2: rgb[1] = 1; rgb[2] = f; break;
    case 3: rgb[1] = q; rgb[2] = 1; break;
    case 4: rgb[0] = f; rgb[2] = 1; break;
    default: rgb[0] = 1; rgb[2] = q; break;
    }
    std::array<float, 3> out{};
    for (int c = 0; c < 3; ++c)
        out[static_cast<size_t>(c)] =
            static_cast<float>(std::lround(rgb[c] * 255.0f)) / 255.0f;
    return out;
}

DatasetManifest make_synthetic_dataset(const fs::path& root, const SyntheticDatasetParams& params) {
    if (params.n_samples < 1) fail(ErrorKind::config, "n_samples must be >= 1");
    if (params.n_classes < 2) fail(ErrorKind::config, "n_classes must be >= 2");
    if (params.image_size < 1) fail(ErrorKind::config, "image_size must be >= 1");

    const fs::path image_dir = root / (std::string(split_name(params.split)) + "_images");
    fs::create_directories(image_dir);

    DatasetManifest manifest;
    manifest.split = params.split;
    manifest.vocabulary = ClassVocabulary::synthetic(params.n_classes);

    // split folded into the stream so train/val differ for the same seed
    std::mt19937_64 gen(params.seed * 2 + (params.split == Split::val ? 1 : 0));
    const int size = params.image_size;

    for (int s = 0; s < params.n_samples; ++s) {
        int n_pos = 1 + static_cast<int>(rng::below(gen, static_cast<std::uint64_t>(params.n_classes)));
        std::vector<int> classes(static_cast<size_t>(params.n_classes));
        for (int c = 0; c < params.n_classes; ++c) classes[static_cast<size_t>(c)] = c;
        for (int i = params.n_classes - 1; i > 0; --i) {
            int j = static_cast<int>(rng::below(gen, static_cast<std::uint64_t>(i + 1)));
            std::swap(classes[static_cast<size_t>(i)], classes[static_cast<size_t>(j)]);
        }
        classes.resize(static_cast<size_t>(n_pos));
        std::sort(classes.begin(), classes.end());

        Image image(size, size);
        for (int j = 0; j < n_pos; ++j) {
            int col0 = static_cast<int>(static_cast<std::int64_t>(j) * size / n_pos);
            int col1 = static_cast<int>(static_cast<std::int64_t>(j + 1) * size / n_pos);
            image.fill_rect(0, col0, size, col1,
                            synthetic_class_color(classes[static_cast<size_t>(j)], params.n_classes));
        }

        char id[32];
        std::snprintf(id, sizeof(id), "%s_%05d", std::string(split_name(params.split)).c_str(), s);
        fs::path image_path = image_dir / (std::string(id) + ".ppm");
        save_ppm(image, image_path);

        LabeledSample sample;
        sample.image_id = id;
        sample.image_path = image_path;
        sample.ground_truth.assign(static_cast<size_t>(params.n_classes), 0);
        for (int c : classes) sample.ground_truth[static_cast<size_t>(c)] = 1;
        manifest.samples.push_back(std::move(sample));
    }
    return manifest;
}

namespace {

ordered_json manifest_to_json(const DatasetManifest& manifest) {
    ordered_json j;
    j["split"] = std::string(split_name(manifest.split));
    j["vocabulary"] = manifest.vocabulary.names;
    ordered_json samples = ordered_json::array();
    for (const LabeledSample& s : manifest.samples) {
        ordered_json js;
        js["image_id"] = s.image_id;
        js["image_path"] = s.image_path.string();
        js["ground_truth"] = s.ground_truth;
        samples.push_back(std::move(js));
    }
    j["samples"] = std::move(samples);
    return j;
}

DatasetManifest manifest_from_json(const ordered_json& j) {
    DatasetManifest manifest;
    manifest.split = split_from_name(j.at("split").get<std::string>());
    manifest.vocabulary = ClassVocabulary::from_names(j.at("vocabulary").get<std::vector<std::string>>());
    for (const auto& js : j.at("samples")) {
        LabeledSample s;
        s.image_id = js.at("image_id").get<std::string>();
        s.image_path = js.at("image_path").get<std::string>();
        s.ground_truth = js.at("ground_truth").get<std::vector<std::uint8_t>>();
        if (s.ground_truth.size() != static_cast<size_t>(manifest.vocabulary.size()))
            fail(ErrorKind::data, "ground_truth length mismatch for sample " + s.image_id);
        manifest.samples.push_back(std::move(s));
    }
    return manifest;
}

} // namespace

std::string manifest_to_json_string(const DatasetManifest& manifest) {
    return manifest_to_json(manifest).dump(2) + "\n";
}

void save_manifest_json(const DatasetManifest& manifest, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
    out << manifest_to_json_string(manifest);
    if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

DatasetManifest load_manifest_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string());
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::data, "invalid manifest JSON in " + path.string() + ": " + e.what());
    }
    return manifest_from_json(j);
}

} // namespace cdul
