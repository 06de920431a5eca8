// Command-line front end. Subcommands map one-to-one onto the pipeline
// drivers; every run is reproducible from (config, seed).

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "udpnet/config.hpp"
#include "udpnet/pipeline.hpp"

namespace {

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::string cur;
    for (char c : s + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stoi(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-unrolled diffusion synthesis for short audio clips"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, pretrain_path, out_path;
    std::string objective_override, tau_list = "125,250,1000";
    uint64_t seed = 0;
    bool seed_set = false;
    int n_samples = 4;
    double gradcheck_tol = 1e-3;
    int b_small = 1, b_big = 4, trials = 10;

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run configuration")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("--seed", seed, "override the config seed")
            ->each([&](const std::string&) { seed_set = true; });
    };
    auto add_objective = [&](CLI::App* cmd) {
        cmd->add_option("--objective", objective_override,
                        "override the training objective (vlb|simple|hybrid)");
    };

    auto* pre = app.add_subcommand("pretrain",
                                   "train the autoencoder and fit the codebook");
    add_config(pre);
    pre->add_option("--out", out_path, "checkpoint path")
        ->default_val("runs/pretrain.ckpt");

    auto* train = app.add_subcommand("train", "train a model from a config");
    add_config(train);
    add_objective(train);
    train->add_option("--checkpoint", pretrain_path,
                      "pretraining checkpoint (recomputed when absent)");
    train->add_option("--out", out_path, "model checkpoint path")
        ->default_val("runs/model.ckpt");

    auto* sample = app.add_subcommand("sample", "generate clips from a checkpoint");
    sample->add_option("--checkpoint", checkpoint_path, "model checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    sample->add_option("--out", out_path, "output directory")->default_val("runs/samples");
    sample->add_option("--seed", seed, "sampling seed")
        ->each([&](const std::string&) { seed_set = true; });
    sample->add_option("--count", n_samples, "number of clips")->default_val(4);

    auto* eval = app.add_subcommand("eval", "deterministic metrics on held-out clips");
    eval->add_option("--checkpoint", checkpoint_path, "model checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--out", out_path, "output directory")->default_val("runs/eval");
    eval->add_option("--seed", seed, "generation seed")
        ->each([&](const std::string&) { seed_set = true; });

    auto* gc = app.add_subcommand("gradcheck",
                                  "finite-difference check of every objective");
    add_config(gc);
    gc->add_option("--tol", gradcheck_tol, "relative error tolerance")
        ->default_val(1e-3);

    auto* ns = app.add_subcommand("noise-scale",
                                  "gradient noise scale per training objective");
    add_config(ns);
    ns->add_option("--out", out_path, "output CSV")->default_val("runs/noise_scale.csv");
    ns->add_option("--b-small", b_small, "small probe batch")->default_val(1);
    ns->add_option("--b-big", b_big, "big probe batch")->default_val(4);
    ns->add_option("--trials", trials, "probe repetitions")->default_val(10);

    auto* sweep = app.add_subcommand("sweep-tau",
                                     "quality/cost table across skip values");
    add_config(sweep);
    sweep->add_option("--tau-list", tau_list, "comma-separated skip values");
    sweep->add_option("--out", out_path, "output CSV")->default_val("runs/sweep_tau.csv");

    auto* cmp = app.add_subcommand(
        "compare-baseline", "error accumulation against the timestep-conditioned model");
    add_config(cmp);
    add_objective(cmp);
    cmp->add_option("--out", out_path, "output directory")->default_val("runs/compare");

    CLI11_PARSE(app, argc, argv);

    try {
        udpnet::RunConfig cfg;
        if (!config_path.empty()) {
            cfg = udpnet::RunConfig::from_file(config_path);
            if (seed_set) cfg.seed = seed;
            if (!objective_override.empty()) {
                cfg.objective = udpnet::parse_objective(objective_override);
                cfg.validate();
            }
        }
        if (pre->parsed()) {
            udpnet::run_pretrain(cfg, out_path);
        } else if (train->parsed()) {
            udpnet::run_train(cfg, pretrain_path, out_path);
        } else if (sample->parsed()) {
            const udpnet::TrainedModel m = udpnet::load_model(checkpoint_path);
            udpnet::run_sample(checkpoint_path, out_path,
                               seed_set ? seed : m.cfg.seed, n_samples);
        } else if (eval->parsed()) {
            const udpnet::TrainedModel m = udpnet::load_model(checkpoint_path);
            udpnet::run_eval(checkpoint_path, out_path, seed_set ? seed : m.cfg.seed);
        } else if (gc->parsed()) {
            const auto outcome = udpnet::run_gradcheck(cfg, gradcheck_tol);
            if (!outcome.ok(gradcheck_tol)) {
                std::fprintf(stderr, "gradcheck failed\n");
                return 2;
            }
        } else if (ns->parsed()) {
            using udpnet::Objective;
            udpnet::run_noise_scale(
                cfg, {Objective::vlb, Objective::simple, Objective::hybrid}, b_small,
                b_big, trials, out_path);
        } else if (sweep->parsed()) {
            udpnet::run_sweep_tau(cfg, parse_int_list(tau_list), out_path);
        } else if (cmp->parsed()) {
            udpnet::run_compare_baseline(cfg, out_path);
        }
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
