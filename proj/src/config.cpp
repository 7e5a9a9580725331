#include "cdul/config.hpp"

#include "cdul/error.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace cdul {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json defaults_json(const ExperimentConfig& c) {
    ordered_json j;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["cache_dir"] = c.cache_dir;
    j["dataset"] = {{"kind", c.dataset.kind},
                    {"root", c.dataset.root},
                    {"split", c.dataset.split},
                    {"include_difficult", c.dataset.include_difficult},
                    {"synthetic",
                     {{"n_samples", c.dataset.synthetic.n_samples},
                      {"n_classes", c.dataset.synthetic.n_classes},
                      {"image_size", c.dataset.synthetic.image_size}}}};
    j["backend"] = {{"name", c.backend.name},
                    {"endpoint", c.backend.endpoint},
                    {"weights", c.backend.weights},
                    {"temperature_override", c.backend.temperature_override},
                    {"synthetic",
                     {{"dim", c.backend.synthetic.dim},
                      {"noise", c.backend.synthetic.noise},
                      {"seed", c.backend.synthetic.seed},
                      {"temperature", c.backend.synthetic.temperature}}}};
    j["pseudo"] = {{"snippet_sizes", c.pseudo.snippet_sizes},
                   {"zeta", c.pseudo.zeta},
                   {"init_source", c.pseudo.init_source},
                   {"prompt_template", c.pseudo.prompt_template}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"pl_update_frequency", c.train.pl_update_frequency},
                  {"batch_size", c.train.batch_size},
                  {"learning_rate", c.train.learning_rate},
                  {"seed", c.train.seed},
                  {"backbone", c.train.backbone},
                  {"backbone_weights", c.train.backbone_weights},
                  {"optimizer", c.train.optimizer},
                  {"sigma", c.train.sigma},
                  {"psi_normalized", c.train.psi_normalized},
                  {"latent_mapping", c.train.latent_mapping},
                  {"loss", c.train.loss}};
    return j;
}

// Rejects unrecognized keys so typo'd overrides cannot pass silently.
void check_known_keys(const ordered_json& value, const ordered_json& schema,
                      const std::string& prefix) {
    if (!value.is_object()) return;
    for (const auto& [key, sub] : value.items()) {
        std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!schema.is_object() || !schema.contains(key))
            fail(ErrorKind::config, "unknown configuration key '" + path + "'");
        check_known_keys(sub, schema.at(key), path);
    }
}

void merge_into(ordered_json& base, const ordered_json& overlay) {
    for (const auto& [key, sub] : overlay.items()) {
        if (sub.is_object() && base.contains(key) && base.at(key).is_object())
            merge_into(base.at(key), sub);
        else
            base[key] = sub;
    }
}

ExperimentConfig config_from_json(const ordered_json& j) {
    ExperimentConfig c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
        c.output_dir = j.at("output_dir").get<std::string>();
        c.cache_dir = j.at("cache_dir").get<std::string>();
        const auto& d = j.at("dataset");
        c.dataset.kind = d.at("kind").get<std::string>();
        c.dataset.root = d.at("root").get<std::string>();
        c.dataset.split = d.at("split").get<std::string>();
        c.dataset.include_difficult = d.at("include_difficult").get<bool>();
        c.dataset.synthetic.n_samples = d.at("synthetic").at("n_samples").get<int>();
        c.dataset.synthetic.n_classes = d.at("synthetic").at("n_classes").get<int>();
        c.dataset.synthetic.image_size = d.at("synthetic").at("image_size").get<int>();
        const auto& b = j.at("backend");
        c.backend.name = b.at("name").get<std::string>();
        c.backend.endpoint = b.at("endpoint").get<std::string>();
        c.backend.weights = b.at("weights").get<std::string>();
        c.backend.temperature_override = b.at("temperature_override").get<double>();
        c.backend.synthetic.dim = b.at("synthetic").at("dim").get<int>();
        c.backend.synthetic.noise = b.at("synthetic").at("noise").get<double>();
        c.backend.synthetic.seed = b.at("synthetic").at("seed").get<std::uint64_t>();
        c.backend.synthetic.temperature = b.at("synthetic").at("temperature").get<double>();
        const auto& p = j.at("pseudo");
        c.pseudo.snippet_sizes = p.at("snippet_sizes").get<std::vector<int>>();
        c.pseudo.zeta = p.at("zeta").get<double>();
        c.pseudo.init_source = p.at("init_source").get<std::string>();
        c.pseudo.prompt_template = p.at("prompt_template").get<std::string>();
        const auto& t = j.at("train");
        c.train.epochs = t.at("epochs").get<int>();
        c.train.pl_update_frequency = t.at("pl_update_frequency").get<int>();
        c.train.batch_size = t.at("batch_size").get<int>();
        c.train.learning_rate = t.at("learning_rate").get<double>();
        c.train.seed = t.at("seed").get<std::uint64_t>();
        c.train.backbone = t.at("backbone").get<std::string>();
        c.train.backbone_weights = t.at("backbone_weights").get<std::string>();
        c.train.optimizer = t.at("optimizer").get<std::string>();
        c.train.sigma = t.at("sigma").get<double>();
        c.train.psi_normalized = t.at("psi_normalized").get<bool>();
        c.train.latent_mapping = t.at("latent_mapping").get<std::string>();
        c.train.loss = t.at("loss").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::config, std::string("invalid configuration: ") + e.what());
    }

    if (c.dataset.kind != "synthetic" && c.dataset.kind != "voc")
        fail(ErrorKind::config, "dataset.kind must be 'synthetic' or 'voc'");
    if (c.backend.name != "synthetic" && c.backend.name != "remote")
        fail(ErrorKind::config, "backend.name must be 'synthetic' or 'remote'");
    if (c.pseudo.init_source != "final" && c.pseudo.init_source != "global")
        fail(ErrorKind::config, "pseudo.init_source must be 'final' or 'global'");
    if (c.pseudo.zeta < 0.0 || c.pseudo.zeta > 1.0)
        fail(ErrorKind::config, "pseudo.zeta must lie in [0,1]");
    for (int k : c.pseudo.snippet_sizes)
        if (k < 1) fail(ErrorKind::config, "pseudo.snippet_sizes entries must be >= 1");
    if (c.backend.temperature_override < 0)
        fail(ErrorKind::config, "backend.temperature_override must be >= 0 (0 disables it)");
    split_from_name(c.dataset.split);
    return c;
}

void apply_override(ordered_json& j, const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        fail(ErrorKind::config, "override '" + assignment + "' is not of the form key.path=value");
    std::string key_path = assignment.substr(0, eq);
    std::string raw_value = assignment.substr(eq + 1);

    ordered_json value;
    try {
        value = ordered_json::parse(raw_value);
    } catch (const nlohmann::json::exception&) {
        value = raw_value; // bare strings need no quoting on the command line
    }

    ordered_json* node = &j;
    std::istringstream keys(key_path);
    std::string key;
    std::vector<std::string> parts;
    while (std::getline(keys, key, '.')) parts.push_back(key);
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
            fail(ErrorKind::config, "unknown configuration key '" + key_path + "'");
        node = &(*node)[parts[i]];
    }
    if (!node->contains(parts.back()))
        fail(ErrorKind::config, "unknown configuration key '" + key_path + "'");
    (*node)[parts.back()] = value;
}

} // namespace

std::string ExperimentConfig::to_json_string() const { return defaults_json(*this).dump(2) + "\n"; }

ExperimentConfig ExperimentConfig::from_json_string(const std::string& text) {
    ordered_json overlay;
    try {
        overlay = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::config, std::string("configuration is not valid JSON: ") + e.what());
    }
    ordered_json base = defaults_json(ExperimentConfig{});
    check_known_keys(overlay, base, "");
    merge_into(base, overlay);
    return config_from_json(base);
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& config_file,
                                        std::span<const std::string> overrides) {
    ordered_json base = defaults_json(ExperimentConfig{});
    if (!config_file.empty()) {
        std::ifstream in(config_file);
        if (!in) fail(ErrorKind::config, "cannot open config file " + config_file.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        ordered_json overlay;
        try {
            overlay = ordered_json::parse(ss.str());
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::config,
                 "config file " + config_file.string() + " is not valid JSON: " + e.what());
        }
        check_known_keys(overlay, base, "");
        merge_into(base, overlay);
    }
    for (const std::string& o : overrides) apply_override(base, o);
    return config_from_json(base);
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write config to " + path.string());
    out << to_json_string();
}

} // namespace cdul
