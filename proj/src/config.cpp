#include "d2loc/config.hpp"

#include <fstream>

#include "d2loc/errors.hpp"
#include "d2loc/losses.hpp"

namespace d2loc::config {

using nlohmann::json;
using nlohmann::ordered_json;

RunConfig desk_defaults() {
    RunConfig cfg;
    // Desk-scale profile; the reference setting (20000 iterations, lr 1e-4,
    // alpha 0.2) is documented in the README and remains selectable.
    cfg.train.iterations = 2000;
    cfg.train.lr = 1e-3;
    cfg.train.loss.alpha = 0.02;
    return cfg;
}

ordered_json to_json(const RunConfig& cfg) {
    ordered_json j;
    j["model"] = {{"feature_dim", cfg.model.feature_dim},
                  {"num_classes", cfg.model.num_classes},
                  {"kernel_size", cfg.model.kernel_size},
                  {"dilation", cfg.model.dilation},
                  {"leaky_slope", cfg.model.leaky_slope},
                  {"seed", cfg.model.seed}};
    j["train"] = {{"iterations", cfg.train.iterations},
                  {"batch_size", cfg.train.batch_size},
                  {"lr", cfg.train.lr},
                  {"weight_decay", cfg.train.weight_decay},
                  {"adam_beta1", cfg.train.adam_beta1},
                  {"adam_beta2", cfg.train.adam_beta2},
                  {"adam_eps", cfg.train.adam_eps},
                  {"seed", cfg.train.seed},
                  {"checkpoint_every", cfg.train.checkpoint_every}};
    j["loss"] = {{"alpha", cfg.train.loss.alpha},
                 {"gamma", cfg.train.loss.gamma},
                 {"beta", cfg.train.loss.beta},
                 {"tau", cfg.train.loss.tau},
                 {"rank_tol", cfg.train.loss.rank_tol},
                 {"grad_sigma_floor", cfg.train.loss.grad_sigma_floor},
                 {"classification_variant", losses::to_string(cfg.train.loss.classification_variant)},
                 {"denoising_variant", losses::to_string(cfg.train.loss.denoising_variant)},
                 {"denoising_scope", losses::to_string(cfg.train.loss.denoising_scope)}};
    j["infer"] = {{"thresholds", cfg.infer.thresholds},
                  {"nms_iou", cfg.infer.nms_iou},
                  {"s_th_fraction", cfg.infer.s_th_fraction},
                  {"inflation_fraction", cfg.infer.inflation_fraction},
                  {"p_th_fraction", cfg.infer.p_th_fraction}};
    j["synth"] = {{"num_classes", cfg.synth.num_classes},
                  {"num_train", cfg.synth.num_train},
                  {"num_test", cfg.synth.num_test},
                  {"snippets_min", cfg.synth.snippets_min},
                  {"snippets_max", cfg.synth.snippets_max},
                  {"feature_dim", cfg.synth.feature_dim},
                  {"instances_min", cfg.synth.instances_min},
                  {"instances_max", cfg.synth.instances_max},
                  {"instance_len_min", cfg.synth.instance_len_min},
                  {"instance_len_max", cfg.synth.instance_len_max},
                  {"noise_sigma", cfg.synth.noise_sigma},
                  {"seed", cfg.synth.seed}};
    return j;
}

namespace {

template <typename T>
void read_key(const json& section, const std::string& section_name, const std::string& key,
              T& out) {
    if (section.contains(key)) {
        try {
            out = section.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(section_name + "." + key + ": " + e.what());
        }
    }
}

void reject_unknown(const json& section, const std::string& section_name,
                    const std::vector<std::string>& known) {
    for (const auto& [key, value] : section.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("unknown key " + section_name + "." + key);
}

}  // namespace

RunConfig from_json(const json& j) {
    RunConfig cfg = desk_defaults();
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (key != "model" && key != "train" && key != "loss" && key != "infer" && key != "synth")
            throw ConfigError("unknown config section: " + key);

    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown(m, "model",
                       {"feature_dim", "num_classes", "kernel_size", "dilation", "leaky_slope",
                        "seed"});
        read_key(m, "model", "feature_dim", cfg.model.feature_dim);
        read_key(m, "model", "num_classes", cfg.model.num_classes);
        read_key(m, "model", "kernel_size", cfg.model.kernel_size);
        read_key(m, "model", "dilation", cfg.model.dilation);
        read_key(m, "model", "leaky_slope", cfg.model.leaky_slope);
        read_key(m, "model", "seed", cfg.model.seed);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        reject_unknown(t, "train",
                       {"iterations", "batch_size", "lr", "weight_decay", "adam_beta1",
                        "adam_beta2", "adam_eps", "seed", "checkpoint_every"});
        read_key(t, "train", "iterations", cfg.train.iterations);
        read_key(t, "train", "batch_size", cfg.train.batch_size);
        read_key(t, "train", "lr", cfg.train.lr);
        read_key(t, "train", "weight_decay", cfg.train.weight_decay);
        read_key(t, "train", "adam_beta1", cfg.train.adam_beta1);
        read_key(t, "train", "adam_beta2", cfg.train.adam_beta2);
        read_key(t, "train", "adam_eps", cfg.train.adam_eps);
        read_key(t, "train", "seed", cfg.train.seed);
        read_key(t, "train", "checkpoint_every", cfg.train.checkpoint_every);
    }
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        reject_unknown(l, "loss",
                       {"alpha", "gamma", "beta", "tau", "rank_tol", "grad_sigma_floor",
                        "classification_variant", "denoising_variant", "denoising_scope"});
        read_key(l, "loss", "alpha", cfg.train.loss.alpha);
        read_key(l, "loss", "gamma", cfg.train.loss.gamma);
        read_key(l, "loss", "beta", cfg.train.loss.beta);
        read_key(l, "loss", "tau", cfg.train.loss.tau);
        read_key(l, "loss", "rank_tol", cfg.train.loss.rank_tol);
        read_key(l, "loss", "grad_sigma_floor", cfg.train.loss.grad_sigma_floor);
        std::string s;
        s = losses::to_string(cfg.train.loss.classification_variant);
        read_key(l, "loss", "classification_variant", s);
        cfg.train.loss.classification_variant = losses::classification_variant_from_string(s);
        s = losses::to_string(cfg.train.loss.denoising_variant);
        read_key(l, "loss", "denoising_variant", s);
        cfg.train.loss.denoising_variant = losses::denoising_variant_from_string(s);
        s = losses::to_string(cfg.train.loss.denoising_scope);
        read_key(l, "loss", "denoising_scope", s);
        cfg.train.loss.denoising_scope = losses::denoising_scope_from_string(s);
    }
    if (j.contains("infer")) {
        const json& i = j.at("infer");
        reject_unknown(i, "infer",
                       {"thresholds", "nms_iou", "s_th_fraction", "inflation_fraction",
                        "p_th_fraction"});
        read_key(i, "infer", "thresholds", cfg.infer.thresholds);
        read_key(i, "infer", "nms_iou", cfg.infer.nms_iou);
        read_key(i, "infer", "s_th_fraction", cfg.infer.s_th_fraction);
        read_key(i, "infer", "inflation_fraction", cfg.infer.inflation_fraction);
        read_key(i, "infer", "p_th_fraction", cfg.infer.p_th_fraction);
    }
    if (j.contains("synth")) {
        const json& s = j.at("synth");
        reject_unknown(s, "synth",
                       {"num_classes", "num_train", "num_test", "snippets_min", "snippets_max",
                        "feature_dim", "instances_min", "instances_max", "instance_len_min",
                        "instance_len_max", "noise_sigma", "seed"});
        read_key(s, "synth", "num_classes", cfg.synth.num_classes);
        read_key(s, "synth", "num_train", cfg.synth.num_train);
        read_key(s, "synth", "num_test", cfg.synth.num_test);
        read_key(s, "synth", "snippets_min", cfg.synth.snippets_min);
        read_key(s, "synth", "snippets_max", cfg.synth.snippets_max);
        read_key(s, "synth", "feature_dim", cfg.synth.feature_dim);
        read_key(s, "synth", "instances_min", cfg.synth.instances_min);
        read_key(s, "synth", "instances_max", cfg.synth.instances_max);
        read_key(s, "synth", "instance_len_min", cfg.synth.instance_len_min);
        read_key(s, "synth", "instance_len_max", cfg.synth.instance_len_max);
        read_key(s, "synth", "noise_sigma", cfg.synth.noise_sigma);
        read_key(s, "synth", "seed", cfg.synth.seed);
    }
    return cfg;
}

namespace {

json parse_override_value(const std::string& raw) {
    try {
        return json::parse(raw);
    } catch (const json::exception&) {
        return json(raw);  // bare string
    }
}

}  // namespace

RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const std::vector<std::string>& overrides) {
    json j = json::object();
    if (path) {
        std::ifstream is(*path);
        if (!is) throw IoError("cannot open config file " + path->string());
        try {
            is >> j;
        } catch (const json::exception& e) {
            throw ConfigError(path->string() + ": invalid JSON: " + e.what());
        }
    }
    for (const std::string& ov : overrides) {
        const std::size_t eq = ov.find('=');
        if (eq == std::string::npos || eq == 0)
            throw UsageError("override must look like section.key=value: " + ov);
        const std::string dotted = ov.substr(0, eq);
        const json value = parse_override_value(ov.substr(eq + 1));

        json* cursor = &j;
        std::size_t begin = 0;
        while (true) {
            const std::size_t dot = dotted.find('.', begin);
            const std::string part = dotted.substr(begin, dot - begin);
            if (part.empty()) throw UsageError("empty key segment in override: " + ov);
            if (dot == std::string::npos) {
                (*cursor)[part] = value;
                break;
            }
            cursor = &(*cursor)[part];
            if (!cursor->is_object() && !cursor->is_null())
                throw UsageError("override path collides with a non-object value: " + ov);
            begin = dot + 1;
        }
    }
    RunConfig cfg = from_json(j);
    cfg.model.validate();
    cfg.train.validate();
    cfg.infer.validate();
    cfg.synth.validate();
    return cfg;
}

void echo_config(const RunConfig& cfg, const std::filesystem::path& out_dir) {
    std::ofstream os(out_dir / "resolved_config.json", std::ios::trunc);
    if (!os) throw IoError("cannot write resolved config into " + out_dir.string());
    os << to_json(cfg).dump(2) << "\n";
}

}  // namespace d2loc::config
