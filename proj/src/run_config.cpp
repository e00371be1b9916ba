#include "dcfg/run_config.hpp"

#include <fstream>

#include "dcfg/suppression.hpp"

namespace dcfg {

namespace {

using nlohmann::json;

// Overlays `patch` on `base`, which must already hold every key.
void merge_checked(json& base, const json& patch, const std::string& path) {
    if (!patch.is_object()) {
        throw ConfigError("config: '" + path + "' must be an object");
    }
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) {
            throw ConfigError("config: unknown key '" + key + "'");
        }
        json& slot = base[it.key()];
        const json& value = it.value();
        if (slot.is_object()) {
            merge_checked(slot, value, key);
            continue;
        }
        const bool ok = (slot.is_boolean() && value.is_boolean()) || (slot.is_string() && value.is_string()) ||
                        (slot.is_array() && value.is_array()) ||
                        (slot.is_number_float() && value.is_number()) ||
                        (slot.is_number_integer() && value.is_number_integer()) ||
                        (slot.is_number_integer() && value.is_number_float() &&
                         value.get<double>() == static_cast<double>(static_cast<long long>(value.get<double>())));
        if (!ok) {
            throw ConfigError("config: '" + key + "' expects " + std::string(slot.type_name()) + ", got " +
                              value.dump());
        }
        if (slot.is_number_integer() && value.is_number_float()) {
            slot = static_cast<long long>(value.get<double>());
        } else {
            slot = value;
        }
    }
}

}  // namespace

std::string to_string(NormMode mode) {
    switch (mode) {
        case NormMode::train:
            return "train";
        case NormMode::batch_stats:
            return "batch_stats";
        case NormMode::running:
            return "running";
    }
    return "running";
}

NormMode norm_mode_from_string(const std::string& name) {
    if (name == "train") {
        return NormMode::train;
    }
    if (name == "batch_stats") {
        return NormMode::batch_stats;
    }
    if (name == "running") {
        return NormMode::running;
    }
    throw ConfigError("unknown normalisation mode '" + name + "' (expected running or batch_stats)");
}

void RunConfig::validate() const {
    try {
        tracker.validate();
        loss.validate();
    } catch (const ShapeError& e) {
        throw ConfigError(e.what());
    }
    if (steps < 0 || checkpoint_every < 0) {
        throw ConfigError("config: steps and checkpoint_every must be non-negative");
    }
    if (!(optimizer.lr >= 0.0) || !(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0) ||
        !(optimizer.weight_decay >= 0.0) || !(optimizer.grad_clip >= 0.0)) {
        throw ConfigError("config: optimizer needs lr >= 0, momentum in [0,1), weight_decay >= 0, grad_clip >= 0");
    }
    if (sampling.max_frame_gap < 1 || !(sampling.max_shift >= 0.0)) {
        throw ConfigError("config: sampling needs max_frame_gap >= 1 and max_shift >= 0");
    }
    const double grid_reach = (tracker.search_size - tracker.template_size) / 2.0;
    if (sampling.max_shift > grid_reach) {
        throw ConfigError("config: sampling.max_shift exceeds the response map's reach of " +
                          std::to_string(grid_reach) + " px");
    }
    if (eval.diversity_every < 1 || eval.diversity_groups < 2 || !(eval.center_threshold > 0.0)) {
        throw ConfigError("config: eval needs diversity_every >= 1, diversity_groups >= 2, center_threshold > 0");
    }
    if (tracker.inference_norm == NormMode::train) {
        throw ConfigError("config: inference_norm must be running or batch_stats");
    }
}

nlohmann::json to_json(const RunConfig& c) {
    const TrackerConfig& t = c.tracker;
    const DccfgConfig& d = t.dccfg;
    return json{
        {"seed", c.seed},
        {"suite_seed", c.suite_seed},
        {"data_dir", c.data_dir},
        {"steps", c.steps},
        {"checkpoint_every", c.checkpoint_every},
        {"use_dcfg_loss", c.use_dcfg_loss},
        {"tracker",
         {{"template_size", t.template_size},
          {"search_size", t.search_size},
          {"widths", t.widths},
          {"branches", t.branches},
          {"use_dccfg", t.use_dccfg},
          {"head_hidden", t.head_hidden},
          {"suppress_at_inference", t.suppress_at_inference},
          {"size_smoothing", t.size_smoothing},
          {"inference_norm", to_string(t.inference_norm)},
          {"dccfg",
           {{"n_groups", d.n_groups},
            {"alpha", d.alpha},
            {"sigma", d.sigma},
            {"mask_mode", to_string(d.mask_mode)},
            {"blocks", d.blocks},
            {"groups", d.groups},
            {"split", d.split}}}}},
        {"loss",
         {{"mu", c.loss.mu},
          {"lambda_iou", c.loss.lambda_iou},
          {"lambda_l1", c.loss.lambda_l1},
          {"eps_corr", c.loss.eps_corr},
          {"positive_radius", c.loss.positive_radius}}},
        {"optimizer",
         {{"lr", c.optimizer.lr},
          {"momentum", c.optimizer.momentum},
          {"weight_decay", c.optimizer.weight_decay},
          {"grad_clip", c.optimizer.grad_clip}}},
        {"sampling", {{"max_frame_gap", c.sampling.max_frame_gap}, {"max_shift", c.sampling.max_shift}}},
        {"eval",
         {{"center_threshold", c.eval.center_threshold},
          {"diversity_every", c.eval.diversity_every},
          {"diversity_groups", c.eval.diversity_groups}}},
    };
}

RunConfig run_config_from_json(const nlohmann::json& patch) {
    json j = to_json(RunConfig{});
    merge_checked(j, patch, "");
    RunConfig c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
        c.suite_seed = j.at("suite_seed").get<std::uint64_t>();
        c.data_dir = j.at("data_dir").get<std::string>();
        c.steps = j.at("steps").get<int>();
        c.checkpoint_every = j.at("checkpoint_every").get<int>();
        c.use_dcfg_loss = j.at("use_dcfg_loss").get<bool>();

        const json& t = j.at("tracker");
        c.tracker.template_size = t.at("template_size").get<int>();
        c.tracker.search_size = t.at("search_size").get<int>();
        c.tracker.widths = t.at("widths").get<std::vector<int>>();
        c.tracker.branches = t.at("branches").get<int>();
        c.tracker.use_dccfg = t.at("use_dccfg").get<bool>();
        c.tracker.head_hidden = t.at("head_hidden").get<int>();
        c.tracker.suppress_at_inference = t.at("suppress_at_inference").get<bool>();
        c.tracker.size_smoothing = t.at("size_smoothing").get<double>();
        c.tracker.inference_norm = norm_mode_from_string(t.at("inference_norm").get<std::string>());

        const json& d = t.at("dccfg");
        c.tracker.dccfg.n_groups = d.at("n_groups").get<int>();
        c.tracker.dccfg.alpha = d.at("alpha").get<double>();
        c.tracker.dccfg.sigma = d.at("sigma").get<double>();
        c.tracker.dccfg.mask_mode = mask_mode_from_string(d.at("mask_mode").get<std::string>());
        c.tracker.dccfg.blocks = d.at("blocks").get<int>();
        c.tracker.dccfg.groups = d.at("groups").get<int>();
        c.tracker.dccfg.split = d.at("split").get<int>();

        const json& l = j.at("loss");
        c.loss.mu = l.at("mu").get<double>();
        c.loss.lambda_iou = l.at("lambda_iou").get<double>();
        c.loss.lambda_l1 = l.at("lambda_l1").get<double>();
        c.loss.eps_corr = l.at("eps_corr").get<double>();
        c.loss.positive_radius = l.at("positive_radius").get<int>();

        const json& o = j.at("optimizer");
        c.optimizer.lr = o.at("lr").get<double>();
        c.optimizer.momentum = o.at("momentum").get<double>();
        c.optimizer.weight_decay = o.at("weight_decay").get<double>();
        c.optimizer.grad_clip = o.at("grad_clip").get<double>();

        const json& s = j.at("sampling");
        c.sampling.max_frame_gap = s.at("max_frame_gap").get<int>();
        c.sampling.max_shift = s.at("max_shift").get<double>();

        const json& e = j.at("eval");
        c.eval.center_threshold = e.at("center_threshold").get<double>();
        c.eval.diversity_every = e.at("diversity_every").get<int>();
        c.eval.diversity_groups = e.at("diversity_groups").get<int>();
    } catch (const json::exception& ex) {
        throw ConfigError(std::string("config: ") + ex.what());
    } catch (const ShapeError& ex) {
        throw ConfigError(ex.what());
    }
    c.validate();
    return c;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("--set expects key=value, got '" + assignment + "'");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    // rebuild the nested patch {"a":{"b":{"c":value}}} and merge it with checks
    json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
        parts.push_back(rest.substr(0, pos));
    }
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        if (it->empty()) {
            throw ConfigError("--set: empty path component in '" + key + "'");
        }
        patch = json{{*it, patch}};
    }
    merge_checked(j, patch, "");
}

RunConfig resolve_run_config(const std::filesystem::path& config_file, const std::vector<std::string>& overrides) {
    json j = to_json(RunConfig{});
    if (!config_file.empty()) {
        std::ifstream in(config_file);
        if (!in) {
            throw IoError("cannot open config " + config_file.string());
        }
        json loaded;
        try {
            loaded = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("config " + config_file.string() + " is not valid JSON: " + e.what());
        }
        merge_checked(j, loaded, "");
    }
    for (const std::string& o : overrides) {
        apply_override(j, o);
    }
    return run_config_from_json(j);
}

}  // namespace dcfg
