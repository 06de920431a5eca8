#pragma once

// Run configuration: JSON in, validated struct out. Validation failures name
// the offending key so they can be fixed without reading source.

#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "udpnet/audio.hpp"
#include "udpnet/model.hpp"
#include "udpnet/training.hpp"
#include "udpnet/util.hpp"

namespace udpnet {

using json = nlohmann::json;

struct DataConfig {
    int n_clips = 200;
    double duration_s = 0.3;
    int sample_rate = 4000;
    double train_frac = 0.8;

    int n_samples() const {
        return static_cast<int>(std::llround(duration_s * sample_rate));
    }
    int n_train() const {
        const int k = static_cast<int>(std::floor(train_frac * n_clips));
        return std::min(std::max(k, 1), n_clips);
    }
};

struct TrainConfig {
    int steps = 2000;
    int batch = 4;
    int pretrain_steps = 1500;
    OptimConfig opt;
    double lambda_h = 0.001;
    bool independent_noise = false;
    bool detach_between = false;
    bool analytic_weights = false;
};

struct CodebookConfig {
    LikelihoodKind likelihood = LikelihoodKind::cdf_bins;
    double sigma = 1.0;
    double delta_override = 0.0; // 0: use (latent range)/256 from pretraining
};

struct RunConfig {
    uint64_t seed = 1234;
    Objective objective = Objective::vlb;
    double beta_start = 1e-4;
    double beta_end = 5e-3;
    bool baseline = false; // model.kind: udpnet | baseline
    ModelConfig model;
    DataConfig data;
    MelConfig mel;
    TrainConfig train;
    CodebookConfig codebook;

    void validate() const;
    json to_json() const;
    static RunConfig from_json(const json& j);
    static RunConfig from_file(const std::string& path);
};

namespace detail {

[[noreturn]] inline void cfg_fail(const std::string& key, const std::string& why) {
    throw std::invalid_argument("config: " + key + ": " + why);
}

template <typename T>
T get_or(const json& j, const char* section, const char* key, T fallback) {
    if (!j.contains(section)) return fallback;
    const json& s = j.at(section);
    if (!s.contains(key)) return fallback;
    try {
        return s.at(key).get<T>();
    } catch (const json::exception&) {
        cfg_fail(std::string(section) + "." + key, "wrong type");
    }
}

} // namespace detail

inline void RunConfig::validate() const {
    if (model.T < 2) detail::cfg_fail("schedule.T", "must be >= 2");
    if (model.tau < 2)
        detail::cfg_fail("schedule.tau",
                         "must be >= 2 (tau = 1 degenerates to one layer per step)");
    if (model.T % model.tau != 0)
        detail::cfg_fail("schedule.tau", "T = " + std::to_string(model.T) +
                                             " is not divisible by tau = " +
                                             std::to_string(model.tau));
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || !(beta_start <= beta_end))
        detail::cfg_fail("schedule.start/end", "need 0 < start <= end < 1");
    if (model.filters < 1 || model.filters % model.heads != 0)
        detail::cfg_fail("model.filters", "must be a positive multiple of model.heads");
    if (model.chunk < 2 || model.chunk % 2 != 0)
        detail::cfg_fail("model.chunk", "must be even and >= 2");
    if (model.ffn_dim < 1) detail::cfg_fail("model.ffn_dim", "must be positive");
    if (model.codebook_size < 1) detail::cfg_fail("model.codebook_size", "must be positive");
    if (data.n_clips < 2) detail::cfg_fail("data.n_clips", "must be >= 2");
    if (data.n_samples() < model.kernel)
        detail::cfg_fail("data.duration_s", "clip shorter than the encoder kernel");
    if (!(data.train_frac > 0.0) || !(data.train_frac <= 1.0))
        detail::cfg_fail("data.train_frac", "must be in (0, 1]");
    if (model.film && data.n_samples() < mel.window)
        detail::cfg_fail("mel.window", "clip shorter than the mel window");
    try {
        mel.validate(data.sample_rate);
    } catch (const std::invalid_argument& e) {
        detail::cfg_fail("mel", e.what());
    }
    if (!baseline && model.layers() < 2 &&
        (objective == Objective::simple || objective == Objective::hybrid))
        detail::cfg_fail("objective",
                         std::string(objective_name(objective)) +
                             " needs at least two layers; lower schedule.tau");
    if (objective == Objective::hybrid && !(train.lambda_h > 0.0))
        detail::cfg_fail("train.lambda_h", "must be > 0 for the hybrid objective");
    if (train.batch < 1) detail::cfg_fail("train.batch", "must be >= 1");
    if (train.steps < 0 || train.pretrain_steps < 0)
        detail::cfg_fail("train.steps", "must be >= 0");
    if (!(train.opt.lr_low > 0.0) || !(train.opt.lr_high >= train.opt.lr_low))
        detail::cfg_fail("train.lr_low/lr_high", "need 0 < lr_low <= lr_high");
    if (train.opt.cycle < 1) detail::cfg_fail("train.cycle", "must be >= 1");
    if (codebook.sigma <= 0.0) detail::cfg_fail("codebook.sigma", "must be > 0");
    if (codebook.delta_override < 0.0)
        detail::cfg_fail("codebook.delta", "must be > 0 when given");
}

inline json RunConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["objective"] = objective_name(objective);
    j["schedule"] = {{"start", beta_start}, {"end", beta_end}, {"T", model.T},
                     {"tau", model.tau}};
    j["model"] = {{"kind", baseline ? "baseline" : "udpnet"},
                  {"filters", model.filters},
                  {"kernel", model.kernel},
                  {"stride", model.stride},
                  {"chunk", model.chunk},
                  {"heads", model.heads},
                  {"ffn_dim", model.ffn_dim},
                  {"codebook_size", model.codebook_size},
                  {"weight_sharing", model.per_layer ? "per_layer" : "full"},
                  {"conditioning", model.film ? "film" : "none"}};
    j["data"] = {{"n_clips", data.n_clips},
                 {"duration_s", data.duration_s},
                 {"sample_rate", data.sample_rate},
                 {"train_frac", data.train_frac}};
    j["mel"] = {{"n_mels", mel.n_mels}, {"window", mel.window}, {"hop", mel.hop},
                {"fft_size", mel.fft_size}, {"fmin", mel.fmin}, {"fmax", mel.fmax}};
    j["train"] = {{"steps", train.steps},
                  {"batch", train.batch},
                  {"pretrain_steps", train.pretrain_steps},
                  {"lr_low", train.opt.lr_low},
                  {"lr_high", train.opt.lr_high},
                  {"cycle", train.opt.cycle},
                  {"lambda_h", train.lambda_h},
                  {"independent_noise", train.independent_noise},
                  {"detach_between", train.detach_between},
                  {"analytic_weights", train.analytic_weights}};
    j["codebook"] = {{"likelihood", codebook.likelihood == LikelihoodKind::cdf_bins
                                        ? "cdf_bins"
                                        : "softmax"},
                     {"sigma", codebook.sigma}};
    if (codebook.delta_override > 0.0) j["codebook"]["delta"] = codebook.delta_override;
    return j;
}

inline RunConfig RunConfig::from_json(const json& j) {
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    if (j.contains("objective")) {
        try {
            c.objective = parse_objective(j.at("objective").get<std::string>());
        } catch (const std::invalid_argument& e) {
            detail::cfg_fail("objective", e.what());
        }
    }
    c.beta_start = detail::get_or(j, "schedule", "start", c.beta_start);
    c.beta_end = detail::get_or(j, "schedule", "end", c.beta_end);
    c.model.T = detail::get_or(j, "schedule", "T", c.model.T);
    c.model.tau = detail::get_or(j, "schedule", "tau", c.model.tau);
    const std::string kind =
        detail::get_or<std::string>(j, "model", "kind", "udpnet");
    if (kind == "baseline") c.baseline = true;
    else if (kind != "udpnet") detail::cfg_fail("model.kind", "must be udpnet|baseline");
    c.model.filters = detail::get_or(j, "model", "filters", c.model.filters);
    c.model.kernel = detail::get_or(j, "model", "kernel", c.model.kernel);
    c.model.stride = detail::get_or(j, "model", "stride", c.model.stride);
    c.model.chunk = detail::get_or(j, "model", "chunk", c.model.chunk);
    c.model.heads = detail::get_or(j, "model", "heads", c.model.heads);
    c.model.ffn_dim = detail::get_or(j, "model", "ffn_dim", c.model.ffn_dim);
    c.model.codebook_size =
        detail::get_or(j, "model", "codebook_size", c.model.codebook_size);
    const std::string sharing =
        detail::get_or<std::string>(j, "model", "weight_sharing", "full");
    if (sharing == "per_layer") c.model.per_layer = true;
    else if (sharing != "full")
        detail::cfg_fail("model.weight_sharing", "must be full|per_layer");
    const std::string cond =
        detail::get_or<std::string>(j, "model", "conditioning", "none");
    if (cond == "film") c.model.film = true;
    else if (cond != "none") detail::cfg_fail("model.conditioning", "must be none|film");
    c.data.n_clips = detail::get_or(j, "data", "n_clips", c.data.n_clips);
    c.data.duration_s = detail::get_or(j, "data", "duration_s", c.data.duration_s);
    c.data.sample_rate = detail::get_or(j, "data", "sample_rate", c.data.sample_rate);
    c.data.train_frac = detail::get_or(j, "data", "train_frac", c.data.train_frac);
    c.mel.n_mels = detail::get_or(j, "mel", "n_mels", c.mel.n_mels);
    c.mel.window = detail::get_or(j, "mel", "window", c.mel.window);
    c.mel.hop = detail::get_or(j, "mel", "hop", c.mel.hop);
    c.mel.fft_size = detail::get_or(j, "mel", "fft_size", c.mel.fft_size);
    c.mel.fmin = detail::get_or(j, "mel", "fmin", c.mel.fmin);
    c.mel.fmax = detail::get_or(j, "mel", "fmax", c.mel.fmax);
    c.model.n_mels = c.mel.n_mels;
    c.train.steps = detail::get_or(j, "train", "steps", c.train.steps);
    c.train.batch = detail::get_or(j, "train", "batch", c.train.batch);
    c.train.pretrain_steps =
        detail::get_or(j, "train", "pretrain_steps", c.train.pretrain_steps);
    c.train.opt.lr_low = detail::get_or(j, "train", "lr_low", c.train.opt.lr_low);
    c.train.opt.lr_high = detail::get_or(j, "train", "lr_high", c.train.opt.lr_high);
    c.train.opt.cycle = detail::get_or(j, "train", "cycle", c.train.opt.cycle);
    c.train.lambda_h = detail::get_or(j, "train", "lambda_h", c.train.lambda_h);
    c.train.independent_noise =
        detail::get_or(j, "train", "independent_noise", c.train.independent_noise);
    c.train.detach_between =
        detail::get_or(j, "train", "detach_between", c.train.detach_between);
    c.train.analytic_weights =
        detail::get_or(j, "train", "analytic_weights", c.train.analytic_weights);
    const std::string lk =
        detail::get_or<std::string>(j, "codebook", "likelihood", "cdf_bins");
    if (lk == "softmax") c.codebook.likelihood = LikelihoodKind::softmax;
    else if (lk != "cdf_bins")
        detail::cfg_fail("codebook.likelihood", "must be cdf_bins|softmax");
    c.codebook.sigma = detail::get_or(j, "codebook", "sigma", c.codebook.sigma);
    c.codebook.delta_override = detail::get_or(j, "codebook", "delta", 0.0);
    c.validate();
    return c;
}

inline RunConfig RunConfig::from_file(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config: " + path + ": " + e.what());
    }
    return from_json(j);
}

} // namespace udpnet
