#include "cdul/commands.hpp"

#include "cdul/error.hpp"
#include "cdul/metrics.hpp"
#include "cdul/pseudo.hpp"
#include "cdul/svg_plot.hpp"
#include "cdul/version.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace cdul::cmd {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

DatasetManifest load_dataset(const ExperimentConfig& config, Split split) {
    if (config.dataset.root.empty())
        fail(ErrorKind::config, "dataset.root must be set");
    if (config.dataset.kind == "synthetic") {
        SyntheticDatasetParams params;
        params.n_samples = config.dataset.synthetic.n_samples;
        params.n_classes = config.dataset.synthetic.n_classes;
        params.image_size = config.dataset.synthetic.image_size;
        params.seed = config.seed;
        params.split = split;
        DatasetManifest manifest = make_synthetic_dataset(config.dataset.root, params);
        save_manifest_json(manifest, fs::path(config.dataset.root) /
                                         (std::string(split_name(split)) + "_manifest.json"));
        return manifest;
    }
    VocParseOptions options;
    options.include_difficult = config.dataset.include_difficult;
    return load_manifest(config.dataset.root, split, ClassVocabulary::voc2012(), options);
}

std::unique_ptr<EncoderBackend> make_encoder(const ExperimentConfig& config, int n_classes) {
    if (config.backend.name == "synthetic") {
        SyntheticBackendParams params;
        params.n_classes = n_classes;
        params.dim = config.backend.synthetic.dim;
        params.noise = config.backend.synthetic.noise;
        params.seed = config.backend.synthetic.seed;
        params.temperature = config.backend.synthetic.temperature;
        return std::make_unique<SyntheticBackend>(params);
    }
    RemoteBackendParams params;
    params.endpoint = config.backend.endpoint;
    params.weights_hint = config.backend.weights;
    if (config.backend.temperature_override > 0)
        params.temperature_override = config.backend.temperature_override;
    return std::make_unique<RemoteBackend>(params);
}

fs::path cache_path(const ExperimentConfig& config, Split split, CacheKind kind, int snippet_size) {
    std::string name = std::string(split_name(split)) + "_";
    if (kind == CacheKind::global)
        name += "global";
    else
        name += "aggregate_k" + std::to_string(snippet_size);
    name += ".cdulvec";
    return fs::path(config.cache_dir) / name;
}

namespace {

std::vector<float> to_float_vector(const std::vector<double>& scores) {
    std::vector<float> out(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) out[i] = static_cast<float>(scores[i]);
    return out;
}

std::string format_percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", fraction * 100.0);
    return buf;
}

ProgressFn progress_printer(const std::string& label, bool quiet) {
    if (quiet) return {};
    return [label](const GenerateProgress& p) {
        if (p.done == p.total) {
            std::fprintf(stderr, "\r%s: %zu/%zu (resumed %zu, 0 remaining)\n", label.c_str(),
                         p.done, p.total, p.resumed);
        } else {
            std::fprintf(stderr, "\r%s: %zu/%zu (eta %.0fs)   ", label.c_str(), p.done, p.total,
                         p.eta_seconds);
        }
    };
}

struct TimingRow {
    std::string kind;
    int snippet_size = 0;
    size_t entries = 0;
    size_t resumed = 0;
    double wall_seconds = 0.0;
    double snippets_per_image = 0.0;
};

void write_timing_report(const std::vector<TimingRow>& rows, const fs::path& dir, bool quiet) {
    ordered_json j = ordered_json::array();
    std::ostringstream csv;
    csv << "kind,snippet_size,entries,resumed,wall_seconds,ms_per_image,snippets_per_image\n";
    for (const TimingRow& r : rows) {
        const size_t computed = r.entries - r.resumed;
        const double ms_per_image = computed > 0 ? r.wall_seconds * 1000.0 / static_cast<double>(computed) : 0.0;
        j.push_back({{"kind", r.kind},
                     {"snippet_size", r.snippet_size},
                     {"entries", r.entries},
                     {"resumed", r.resumed},
                     {"wall_seconds", r.wall_seconds},
                     {"ms_per_image", ms_per_image},
                     {"snippets_per_image", r.snippets_per_image}});
        csv << r.kind << "," << r.snippet_size << "," << r.entries << "," << r.resumed << ","
            << r.wall_seconds << "," << ms_per_image << "," << r.snippets_per_image << "\n";
        if (!quiet)
            std::fprintf(stderr, "%s k=%d: %zu entries (%zu resumed) in %.2fs, %.2f snippets/image\n",
                         r.kind.c_str(), r.snippet_size, r.entries, r.resumed, r.wall_seconds,
                         r.snippets_per_image);
    }
    std::ofstream csv_out(dir / "timing.csv", std::ios::binary);
    csv_out << csv.str();
    std::ofstream json_out(dir / "timing.json", std::ios::binary);
    json_out << j.dump(2) << "\n";
}

[[noreturn]] void missing_cache(const fs::path& path) {
    fail(ErrorKind::data, "cache not found: " + path.string() +
                              ". Generate it first: cdul build-cache --config <your-config.json>");
}

VectorCache read_required_cache(const fs::path& path) {
    if (!fs::exists(path)) missing_cache(path);
    return cache_read(path);
}

Matrix cache_scores_for(const VectorCache& cache, const DatasetManifest& manifest) {
    Matrix scores(static_cast<int>(manifest.samples.size()), manifest.vocabulary.size());
    for (int r = 0; r < scores.rows; ++r) {
        const std::vector<float>& v = cache.at(manifest.samples[static_cast<size_t>(r)].image_id);
        for (int c = 0; c < scores.cols; ++c) scores.at(r, c) = v[static_cast<size_t>(c)];
    }
    return scores;
}

} // namespace

void build_cache(const ExperimentConfig& config, bool quiet) {
    const Split split = split_from_name(config.dataset.split);
    DatasetManifest manifest = load_dataset(config, split);
    std::unique_ptr<EncoderBackend> backend = make_encoder(config, manifest.vocabulary.size());
    PipelineContext ctx =
        PipelineContext::make(*backend, manifest.vocabulary, config.pseudo.prompt_template,
                              config.pseudo.zeta, config.backend.temperature_override);

    fs::create_directories(config.cache_dir);
    const std::string backend_id = backend->descriptor().identity();
    std::vector<TimingRow> timing;

    {
        CacheHeader header{1, static_cast<std::uint32_t>(manifest.vocabulary.size()),
                           CacheKind::global, 0, backend_id};
        const fs::path path = cache_path(config, split, CacheKind::global, 0);
        GenerateProgress last;
        auto progress = [&](const GenerateProgress& p) {
            last = p;
            if (auto printer = progress_printer("global", quiet)) printer(p);
        };
        auto started = std::chrono::steady_clock::now();
        VectorCache cache = generate_or_resume(manifest, header, path, [&](const LabeledSample& s) {
            return to_float_vector(compute_global(ctx, load_image(s.image_path)).scores);
        }, progress);
        double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        timing.push_back({"global", 0, cache.size(), last.resumed, seconds, 1.0});
    }

    for (int k : config.pseudo.snippet_sizes) {
        CacheHeader header{1, static_cast<std::uint32_t>(manifest.vocabulary.size()),
                           CacheKind::aggregate, static_cast<std::uint32_t>(k), backend_id};
        const fs::path path = cache_path(config, split, CacheKind::aggregate, k);
        std::atomic<std::int64_t> snippet_total{0};
        std::atomic<std::int64_t> image_total{0};
        GenerateProgress last;
        auto progress = [&](const GenerateProgress& p) {
            last = p;
            if (auto printer = progress_printer("aggregate k=" + std::to_string(k), quiet)) printer(p);
        };
        auto started = std::chrono::steady_clock::now();
        VectorCache cache = generate_or_resume(manifest, header, path, [&](const LabeledSample& s) {
            Image image = load_image(s.image_path);
            snippet_total += tile_image(image, k).count();
            image_total += 1;
            return to_float_vector(compute_aggregate(ctx, image, k).scores);
        }, progress);
        double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        double per_image = image_total > 0 ? static_cast<double>(snippet_total) / static_cast<double>(image_total) : 0.0;
        timing.push_back({"aggregate", k, cache.size(), last.resumed, seconds, per_image});
    }

    write_timing_report(timing, config.cache_dir, quiet);
}

void eval_pseudo(const ExperimentConfig& config, bool quiet) {
    const Split split = split_from_name(config.dataset.split);
    DatasetManifest manifest = load_dataset(config, split);
    const Matrix targets = targets_from_manifest(manifest);

    const fs::path global_path = cache_path(config, split, CacheKind::global, 0);
    VectorCache global_cache = read_required_cache(global_path);

    // The synthetic backend is constructible offline, so its identity is
    // enforced; remote caches are trusted but must agree among themselves.
    std::string expected_id = global_cache.header().backend_id;
    if (config.backend.name == "synthetic")
        expected_id = make_encoder(config, manifest.vocabulary.size())->descriptor().identity();
    require_cache_compatible(global_cache,
                             CacheHeader{1, static_cast<std::uint32_t>(manifest.vocabulary.size()),
                                         CacheKind::global, 0, expected_id});

    fs::create_directories(config.output_dir);
    config.save(fs::path(config.output_dir) / "config.json");

    ordered_json results = ordered_json::array();
    std::ostringstream csv;
    csv << "snippet_size,map_percent\n";

    Matrix global_scores = cache_scores_for(global_cache, manifest);
    ClasswiseReport global_report = mean_average_precision(global_scores, targets, manifest.vocabulary);
    csv << "global," << format_percent(global_report.map) << "\n";
    {
        ordered_json row;
        row["snippet_size"] = "global";
        row["map_percent"] = global_report.map * 100.0;
        ordered_json pc = ordered_json::object();
        for (const auto& [name, ap] : global_report.per_class) pc[name] = ap * 100.0;
        row["per_class"] = std::move(pc);
        row["excluded"] = global_report.excluded;
        results.push_back(std::move(row));
    }
    if (!quiet) std::fprintf(stderr, "global: mAP %.2f%%\n", global_report.map * 100.0);

    for (int k : config.pseudo.snippet_sizes) {
        const fs::path agg_path = cache_path(config, split, CacheKind::aggregate, k);
        VectorCache agg_cache = read_required_cache(agg_path);
        require_cache_compatible(agg_cache,
                                 CacheHeader{1, static_cast<std::uint32_t>(manifest.vocabulary.size()),
                                             CacheKind::aggregate, static_cast<std::uint32_t>(k),
                                             expected_id});
        Matrix final_scores(global_scores.rows, global_scores.cols);
        for (int r = 0; r < final_scores.rows; ++r) {
            const std::vector<float>& agg = agg_cache.at(manifest.samples[static_cast<size_t>(r)].image_id);
            for (int c = 0; c < final_scores.cols; ++c)
                final_scores.at(r, c) = 0.5 * (global_scores.at(r, c) + agg[static_cast<size_t>(c)]);
        }
        ClasswiseReport report = mean_average_precision(final_scores, targets, manifest.vocabulary);
        csv << k << "," << format_percent(report.map) << "\n";
        ordered_json row;
        row["snippet_size"] = k;
        row["map_percent"] = report.map * 100.0;
        ordered_json pc = ordered_json::object();
        for (const auto& [name, ap] : report.per_class) pc[name] = ap * 100.0;
        row["per_class"] = std::move(pc);
        row["excluded"] = report.excluded;
        results.push_back(std::move(row));
        if (!quiet) std::fprintf(stderr, "k=%d: final mAP %.2f%%\n", k, report.map * 100.0);
    }

    std::ofstream csv_out(fs::path(config.output_dir) / "pseudo_eval.csv", std::ios::binary);
    csv_out << csv.str();
    ordered_json j;
    j["backend_id"] = expected_id;
    j["split"] = config.dataset.split;
    j["results"] = std::move(results);
    std::ofstream json_out(fs::path(config.output_dir) / "pseudo_eval.json", std::ios::binary);
    json_out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {
constexpr char kCkptMagic[8] = {'C', 'D', 'U', 'L', 'C', 'K', 'P', '1'};
}

void save_checkpoint(const fs::path& path, const std::string& config_json, int epoch,
                     const nn::Backbone& model, const LatentPseudoLabels& latents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write checkpoint " + path.string());
    out.write(kCkptMagic, sizeof(kCkptMagic));
    auto write_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    write_u32(static_cast<std::uint32_t>(config_json.size()));
    out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
    write_u32(static_cast<std::uint32_t>(epoch));
    model.save(out);
    write_u32(static_cast<std::uint32_t>(latents.latent.rows));
    write_u32(static_cast<std::uint32_t>(latents.latent.cols));
    out.put(latents.mapping == LatentMapping::clamp ? 0 : 1);
    out.write(reinterpret_cast<const char*>(latents.latent.data.data()),
              static_cast<std::streamsize>(latents.latent.data.size() * sizeof(double)));
    if (!out) fail(ErrorKind::io, "checkpoint write failed: " + path.string());
}

CheckpointData load_checkpoint(const fs::path& path, nn::Backbone& model) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open checkpoint " + path.string());
    char magic[sizeof(kCkptMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCkptMagic, sizeof(kCkptMagic)) != 0)
        fail(ErrorKind::data, "not a checkpoint file: " + path.string());
    auto read_u32 = [&]() {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    CheckpointData data;
    data.config_json.resize(read_u32());
    in.read(data.config_json.data(), static_cast<std::streamsize>(data.config_json.size()));
    data.epoch = static_cast<int>(read_u32());
    model.load(in);
    const int rows = static_cast<int>(read_u32());
    const int cols = static_cast<int>(read_u32());
    data.latents.mapping = in.get() == 0 ? LatentMapping::clamp : LatentMapping::sigmoid;
    data.latents.latent = Matrix(rows, cols);
    in.read(reinterpret_cast<char*>(data.latents.latent.data.data()),
            static_cast<std::streamsize>(data.latents.latent.data.size() * sizeof(double)));
    if (!in) fail(ErrorKind::data, "truncated checkpoint: " + path.string());
    return data;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

void run_train(const ExperimentConfig& config, bool quiet) {
    const Split train_split = split_from_name(config.dataset.split);
    DatasetManifest train_manifest = load_dataset(config, train_split);
    DatasetManifest val_manifest = load_dataset(config, Split::val);

    // initial pseudo labels come from the caches
    const fs::path global_path = cache_path(config, train_split, CacheKind::global, 0);
    VectorCache global_cache = read_required_cache(global_path);
    Matrix initial = cache_scores_for(global_cache, train_manifest);
    if (config.pseudo.init_source == "final") {
        if (config.pseudo.snippet_sizes.empty())
            fail(ErrorKind::config, "pseudo.init_source=final needs at least one snippet size");
        const int k = config.pseudo.snippet_sizes.front();
        VectorCache agg_cache =
            read_required_cache(cache_path(config, train_split, CacheKind::aggregate, k));
        for (int r = 0; r < initial.rows; ++r) {
            const std::vector<float>& agg =
                agg_cache.at(train_manifest.samples[static_cast<size_t>(r)].image_id);
            for (int c = 0; c < initial.cols; ++c)
                initial.at(r, c) = 0.5 * (initial.at(r, c) + agg[static_cast<size_t>(c)]);
        }
    }

    const fs::path run_dir = config.output_dir;
    fs::create_directories(run_dir);
    const std::string resolved = config.to_json_string();
    config.save(run_dir / "config.json");

    std::ofstream metrics_csv(run_dir / "metrics.csv", std::ios::binary | std::ios::trunc);
    if (!metrics_csv) fail(ErrorKind::io, "cannot write metrics.csv in " + run_dir.string());
    metrics_csv << "epoch,train_map,pl_map,val_map,loss\n";

    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochMetrics& m) {
        char line[160];
        std::snprintf(line, sizeof(line), "%d,%s,%s,%s,%.10e\n", m.epoch,
                      format_percent(m.train_map).c_str(), format_percent(m.pl_map).c_str(),
                      format_percent(m.val_map).c_str(), m.mean_loss);
        metrics_csv << line;
        metrics_csv.flush();
        if (!quiet)
            std::fprintf(stderr, "epoch %d: loss %.6g train %.2f%% pl %.2f%% val %.2f%%\n", m.epoch,
                         m.mean_loss, m.train_map * 100.0, m.pl_map * 100.0, m.val_map * 100.0);
    };
    hooks.on_checkpoint = [&](int epoch, const nn::Backbone& model, const LatentPseudoLabels& latents) {
        char name[48];
        std::snprintf(name, sizeof(name), "ckpt_epoch_%04d.bin", epoch);
        save_checkpoint(run_dir / name, resolved, epoch, model, latents);
    };
    hooks.on_divergence = [&](const std::string& dump) {
        std::ofstream out(run_dir / "divergence.json", std::ios::binary);
        out << dump << "\n";
    };

    auto started = std::chrono::steady_clock::now();
    TrainResult result = train(train_manifest, &val_manifest, initial, config.train, hooks);
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    const EpochMetrics& last = result.log.back();
    ordered_json summary;
    summary["code_version"] = kVersionString;
    summary["seed"] = config.train.seed;
    summary["epochs"] = config.train.epochs;
    summary["pl_update_frequency"] = config.train.pl_update_frequency;
    summary["pseudo_label_updates"] = result.pseudo_label_updates;
    summary["final_train_map_percent"] = last.train_map * 100.0;
    summary["final_pl_map_percent"] = last.pl_map * 100.0;
    summary["final_val_map_percent"] = last.val_map * 100.0;
    summary["final_loss"] = last.mean_loss;
    summary["wall_seconds"] = seconds;
    std::ofstream summary_out(run_dir / "summary.json", std::ios::binary);
    summary_out << summary.dump(2) << "\n";

    PlotSeries pl{"pl mAP (F=" + std::to_string(config.train.pl_update_frequency) + ")", {}, {}};
    PlotSeries val{"val mAP (F=" + std::to_string(config.train.pl_update_frequency) + ")", {}, {}};
    for (const EpochMetrics& m : result.log) {
        pl.x.push_back(m.epoch);
        pl.y.push_back(m.pl_map * 100.0);
        val.x.push_back(m.epoch);
        val.y.push_back(m.val_map * 100.0);
    }
    write_line_plot_svg(run_dir / "plot_pl_map.svg", "Pseudo-label mAP across epochs", "epoch",
                        "mAP (%)", {&pl, 1});
    write_line_plot_svg(run_dir / "plot_val_map.svg", "Validation mAP across epochs", "epoch",
                        "mAP (%)", {&val, 1});

    if (!quiet)
        std::fprintf(stderr, "done in %.1fs: train %.2f%% pl %.2f%% val %.2f%%\n", seconds,
                     last.train_map * 100.0, last.pl_map * 100.0, last.val_map * 100.0);
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

namespace {

struct RunData {
    std::string name;
    int epochs = 0;
    int frequency = 0;
    std::vector<double> epoch, train_map, pl_map, val_map;
};

RunData read_run(const fs::path& dir) {
    RunData run;
    run.name = dir.filename().string();
    std::ifstream cfg(dir / "config.json");
    if (!cfg) fail(ErrorKind::data, "run directory " + dir.string() + " has no config.json");
    try {
        ordered_json j = ordered_json::parse(cfg);
        run.epochs = j.at("train").at("epochs").get<int>();
        run.frequency = j.at("train").at("pl_update_frequency").get<int>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::data, "bad config.json in " + dir.string() + ": " + e.what());
    }
    std::ifstream csv(dir / "metrics.csv");
    if (!csv) fail(ErrorKind::data, "run directory " + dir.string() + " has no metrics.csv");
    std::string line;
    std::getline(csv, line); // header
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        std::vector<double> values;
        while (std::getline(row, field, ',')) values.push_back(std::stod(field));
        if (values.size() != 5)
            fail(ErrorKind::data, "malformed metrics.csv row in " + dir.string() + ": " + line);
        run.epoch.push_back(values[0]);
        run.train_map.push_back(values[1]);
        run.pl_map.push_back(values[2]);
        run.val_map.push_back(values[3]);
    }
    if (run.epoch.empty()) fail(ErrorKind::data, "metrics.csv in " + dir.string() + " has no rows");
    return run;
}

} // namespace

void report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir, bool quiet) {
    if (run_dirs.empty()) fail(ErrorKind::config, "report needs at least one run directory");
    fs::create_directories(out_dir);

    std::vector<RunData> runs;
    runs.reserve(run_dirs.size());
    for (const fs::path& dir : run_dirs) runs.push_back(read_run(dir));

    std::ostringstream csv;
    csv << "run,epochs,pl_update_frequency,final_train_map,final_pl_map,final_val_map\n";
    ordered_json j = ordered_json::array();
    std::vector<PlotSeries> pl_series, val_series;
    for (const RunData& run : runs) {
        csv << run.name << "," << run.epochs << "," << run.frequency << "," << run.train_map.back()
            << "," << run.pl_map.back() << "," << run.val_map.back() << "\n";
        j.push_back({{"run", run.name},
                     {"epochs", run.epochs},
                     {"pl_update_frequency", run.frequency},
                     {"final_train_map", run.train_map.back()},
                     {"final_pl_map", run.pl_map.back()},
                     {"final_val_map", run.val_map.back()}});
        std::string label = run.name + " (F=" + std::to_string(run.frequency) + ")";
        pl_series.push_back({label, run.epoch, run.pl_map});
        val_series.push_back({label, run.epoch, run.val_map});
        if (!quiet)
            std::fprintf(stderr, "%s: F=%d final pl %.2f%% val %.2f%%\n", run.name.c_str(),
                         run.frequency, run.pl_map.back(), run.val_map.back());
    }
    std::ofstream csv_out(out_dir / "report_summary.csv", std::ios::binary);
    csv_out << csv.str();
    std::ofstream json_out(out_dir / "report_summary.json", std::ios::binary);
    json_out << j.dump(2) << "\n";
    write_line_plot_svg(out_dir / "plot_pl_map.svg", "Pseudo-label mAP across epochs", "epoch",
                        "mAP (%)", pl_series);
    write_line_plot_svg(out_dir / "plot_val_map.svg", "Validation mAP across epochs", "epoch",
                        "mAP (%)", val_series);
}

} // namespace cdul::cmd
