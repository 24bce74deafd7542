#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "bseg/bayesnet/train.hpp"
#include "bseg/densecrf/densecrf.hpp"

namespace bseg::pipeline {

/// Everything a pipeline run needs. Stage seeds (fold split, training, MC sampling) are derived from `seed`.
struct PipelineConfig {
    std::filesystem::path data_dir = "data";
    std::filesystem::path output_dir = "out";
    net::NetworkConfig net;
    net::TrainConfig train;
    crf::CrfParams crf;
    unsigned mc_samples = 6;
    Axis axis = Axis::z;
    unsigned folds = 2;
    std::uint64_t seed = 0;
    double phantom_scale = 1.0;

    void validate() const {
        net.validate();
        train.validate();
        crf.validate();
        if (mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
        if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
        if (!(phantom_scale > 0.0) || !std::isfinite(phantom_scale)) throw ConfigError("phantom_scale must be > 0");
    }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
void read_key(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("wrong type for '") + key + "' in " + where);
    }
}

}  // namespace detail

inline nlohmann::json to_json(const PipelineConfig& c) {
    nlohmann::json j;
    j["data_dir"] = c.data_dir.string();
    j["output_dir"] = c.output_dir.string();
    j["net"] = {{"depth", c.net.depth},     {"channels", c.net.channels}, {"num_labels", c.net.num_labels},
                {"dropout", c.net.dropout}, {"bn_eps", c.net.bn_eps},     {"bn_momentum", c.net.bn_momentum}};
    j["train"] = {{"lr", c.train.lr},
                  {"momentum", c.train.momentum},
                  {"batch", c.train.batch},
                  {"iterations", c.train.iterations}};
    j["crf"] = {{"w1", c.crf.w1},
                {"w2", c.crf.w2},
                {"theta_alpha", c.crf.theta_alpha},
                {"theta_beta", c.crf.theta_beta},
                {"theta_gamma", c.crf.theta_gamma},
                {"iterations", c.crf.iterations}};
    j["mc_samples"] = c.mc_samples;
    j["axis"] = axis_name(c.axis);
    j["folds"] = c.folds;
    j["seed"] = c.seed;
    j["phantom_scale"] = c.phantom_scale;
    return j;
}

/// Keys missing from `j` keep their defaults; unknown keys are an error.
inline PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig c = {}) {
    using detail::read_key;
    detail::reject_unknown(j,
                           {"data_dir", "output_dir", "net", "train", "crf", "mc_samples", "axis", "folds", "seed",
                            "phantom_scale"},
                           "config");
    std::string s;
    if (j.contains("data_dir")) {
        read_key(j, "data_dir", s, "config");
        c.data_dir = s;
    }
    if (j.contains("output_dir")) {
        read_key(j, "output_dir", s, "config");
        c.output_dir = s;
    }
    if (j.contains("net")) {
        const auto& n = j.at("net");
        detail::reject_unknown(n, {"depth", "channels", "num_labels", "dropout", "bn_eps", "bn_momentum"}, "net");
        read_key(n, "depth", c.net.depth, "net");
        read_key(n, "channels", c.net.channels, "net");
        read_key(n, "num_labels", c.net.num_labels, "net");
        read_key(n, "dropout", c.net.dropout, "net");
        read_key(n, "bn_eps", c.net.bn_eps, "net");
        read_key(n, "bn_momentum", c.net.bn_momentum, "net");
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::reject_unknown(t, {"lr", "momentum", "batch", "iterations"}, "train");
        read_key(t, "lr", c.train.lr, "train");
        read_key(t, "momentum", c.train.momentum, "train");
        read_key(t, "batch", c.train.batch, "train");
        read_key(t, "iterations", c.train.iterations, "train");
    }
    if (j.contains("crf")) {
        const auto& r = j.at("crf");
        detail::reject_unknown(r, {"w1", "w2", "theta_alpha", "theta_beta", "theta_gamma", "iterations"}, "crf");
        read_key(r, "w1", c.crf.w1, "crf");
        read_key(r, "w2", c.crf.w2, "crf");
        read_key(r, "theta_alpha", c.crf.theta_alpha, "crf");
        read_key(r, "theta_beta", c.crf.theta_beta, "crf");
        read_key(r, "theta_gamma", c.crf.theta_gamma, "crf");
        read_key(r, "iterations", c.crf.iterations, "crf");
    }
    read_key(j, "mc_samples", c.mc_samples, "config");
    if (j.contains("axis")) {
        read_key(j, "axis", s, "config");
        try {
            c.axis = parse_axis(s);
        } catch (const ArgumentError& e) {
            throw ConfigError(e.what());
        }
    }
    read_key(j, "folds", c.folds, "config");
    read_key(j, "seed", c.seed, "config");
    read_key(j, "phantom_scale", c.phantom_scale, "config");
    c.net.channels.shrink_to_fit();
    return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

}  // namespace bseg::pipeline
