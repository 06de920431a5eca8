#pragma once

// End-to-end drivers behind the CLI subcommands. Each one is a pure function
// of (config, seed, paths): datasets are synthesized on the fly and all
// randomness flows through named streams, so reruns reproduce outputs
// byte for byte.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "udpnet/audio.hpp"
#include "udpnet/baseline.hpp"
#include "udpnet/checkpoint.hpp"
#include "udpnet/codebook.hpp"
#include "udpnet/config.hpp"
#include "udpnet/diffusion.hpp"
#include "udpnet/eval.hpp"
#include "udpnet/model.hpp"
#include "udpnet/schedule.hpp"
#include "udpnet/training.hpp"
#include "udpnet/util.hpp"

namespace udpnet {

inline std::vector<AudioClip> build_dataset(const RunConfig& cfg) {
    SynthParams p;
    p.duration_s = cfg.data.duration_s;
    p.sample_rate = cfg.data.sample_rate;
    return synth_dataset(cfg.data.n_clips, p, cfg.seed);
}

inline std::vector<AudioClip> train_split(const RunConfig& cfg,
                                          const std::vector<AudioClip>& clips) {
    return {clips.begin(), clips.begin() + cfg.data.n_train()};
}

inline std::vector<AudioClip> test_split(const RunConfig& cfg,
                                         const std::vector<AudioClip>& clips) {
    if (cfg.data.n_train() >= cfg.data.n_clips) return {clips.end() - 1, clips.end()};
    return {clips.begin() + cfg.data.n_train(), clips.end()};
}

// ---- pretraining: autoencoder, codebook, latent range ----

struct PretrainArtifacts {
    Autoencoder ae; // frozen after pretraining
    Codebook cb;
    LatentRange range;
    double delta = 0.0; // codebook likelihood bin width
};

inline PretrainArtifacts compute_pretrain(const RunConfig& cfg, bool verbose = true) {
    const auto clips = build_dataset(cfg);
    const auto train = train_split(cfg, clips);

    Autoencoder ae(cfg.model, cfg.seed);
    TrainState st(ae.parameters(), cfg.train.opt);
    const int L = cfg.data.n_samples();
    for (long step = 0; step < cfg.train.pretrain_steps; ++step) {
        RngStream pick(cfg.seed, "pretrain.batch", static_cast<uint64_t>(step));
        std::vector<int> idx(cfg.train.batch);
        for (int& i : idx)
            i = static_cast<int>(pick.uniform_int(0, static_cast<int>(train.size()) - 1));
        auto make_loss = [&]() {
            TensorPtr total;
            for (int i : idx) {
                auto wave = constant({1, L}, train[i].samples);
                auto recon = ae.decode(ae.encode(wave));
                auto ref = recon->shape[1] == L ? wave : slice_cols(wave, 0, recon->shape[1]);
                auto term = sq_norm(sub(recon, ref));
                total = total ? add(total, term) : term;
            }
            LossValue lv;
            lv.loss = scale(total, 1.0 / (static_cast<double>(idx.size()) * L));
            lv.breakdown.total = lv.loss->value();
            return lv;
        };
        const StepResult r = train_step(st, make_loss);
        if (verbose && (step % 200 == 0 || step + 1 == cfg.train.pretrain_steps))
            std::printf("pretrain step %ld  recon_mse %.6g  lr %.4g\n", step, r.loss, r.lr);
    }
    ae.freeze();

    PretrainArtifacts pre;
    pre.ae = ae;
    std::vector<double> rows;
    rows.reserve(static_cast<size_t>(train.size()) * cfg.model.filters);
    int n_rows = 0;
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (const auto& clip : train) {
        auto latent = ae.encode_clip(clip);
        rows.insert(rows.end(), latent->data.begin(), latent->data.end());
        n_rows += latent->shape[0];
        for (double v : latent->data) {
            if (first) {
                lo = hi = v;
                first = false;
            }
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    RngStream km_rng(cfg.seed, "codebook.kmeans");
    pre.cb = kmeans_fit(rows, n_rows, cfg.model.filters, cfg.model.codebook_size, km_rng);
    pre.range = {lo, hi};
    pre.delta = cfg.codebook.delta_override > 0.0 ? cfg.codebook.delta_override
                                                  : std::max(hi - lo, 1e-6) / 256.0;
    if (verbose)
        std::printf("pretrain done: %d codebook entries, latent range [%.4g, %.4g], "
                    "distortion %.6g\n",
                    pre.cb.K, lo, hi, kmeans_distortion(pre.cb, rows, n_rows));
    return pre;
}

inline void add_pretrain_arrays(CheckpointData& ckpt, const PretrainArtifacts& pre) {
    auto ae_arrays = arrays_from_params(pre.ae.parameters(), "");
    ckpt.arrays.insert(ckpt.arrays.end(), ae_arrays.begin(), ae_arrays.end());
    ArrayRecord cb;
    cb.name = "codebook.entries";
    cb.dims = {static_cast<uint64_t>(pre.cb.K), static_cast<uint64_t>(pre.cb.dim)};
    cb.data = pre.cb.entries;
    ckpt.arrays.push_back(std::move(cb));
    ArrayRecord range;
    range.name = "latent.range";
    range.dims = {2};
    range.data = {pre.range.lo, pre.range.hi};
    ckpt.arrays.push_back(std::move(range));
}

inline PretrainArtifacts pretrain_from_checkpoint(const CheckpointData& ckpt,
                                                  const RunConfig& cfg) {
    require_matching_header(ckpt.header, cfg.to_json());
    PretrainArtifacts pre;
    pre.ae = Autoencoder(cfg.model, cfg.seed);
    ParamList ae_params = pre.ae.parameters();
    load_params_from(ckpt, ae_params, "");
    pre.ae.freeze();
    const ArrayRecord& cb = ckpt.array("codebook.entries");
    pre.cb.K = static_cast<int>(cb.dims[0]);
    pre.cb.dim = static_cast<int>(cb.dims[1]);
    pre.cb.entries = cb.data;
    const ArrayRecord& range = ckpt.array("latent.range");
    if (range.data.size() != 2)
        throw std::runtime_error("checkpoint: latent.range must hold two values");
    pre.range.lo = range.data[0];
    pre.range.hi = range.data[1];
    pre.delta = ckpt.header.at("latent").at("delta").get<double>();
    return pre;
}

inline void run_pretrain(const RunConfig& cfg, const std::string& out_path) {
    const PretrainArtifacts pre = compute_pretrain(cfg);
    CheckpointData ckpt;
    ckpt.header = cfg.to_json();
    ckpt.header["kind"] = "pretrain";
    ckpt.header["step"] = cfg.train.pretrain_steps;
    ckpt.header["latent"] = {{"lo", pre.range.lo}, {"hi", pre.range.hi},
                             {"delta", pre.delta}};
    add_pretrain_arrays(ckpt, pre);
    std::filesystem::create_directories(
        std::filesystem::path(out_path).parent_path().empty()
            ? "."
            : std::filesystem::path(out_path).parent_path().string());
    save_checkpoint(out_path, ckpt);
    std::printf("wrote %s\n", out_path.c_str());
}

// Load pretraining artifacts from a checkpoint if one is given and present;
// otherwise recompute them (deterministic in the config seed).
inline PretrainArtifacts ensure_pretrained(const RunConfig& cfg,
                                           const std::string& ckpt_path,
                                           bool verbose = true) {
    if (!ckpt_path.empty() && std::filesystem::exists(ckpt_path))
        return pretrain_from_checkpoint(load_checkpoint(ckpt_path), cfg);
    return compute_pretrain(cfg, verbose);
}

// ---- examples ----

inline std::vector<Example> build_examples(const PretrainArtifacts& pre,
                                           const std::vector<AudioClip>& clips,
                                           const RunConfig& cfg) {
    std::vector<Example> out;
    out.reserve(clips.size());
    for (const auto& clip : clips)
        out.push_back(make_example(pre.ae, pre.cb, clip, cfg.model.film ? &cfg.mel : nullptr));
    return out;
}

inline std::vector<Example> pick_batch(const std::vector<Example>& pool, int batch,
                                       uint64_t seed, long step) {
    RngStream pick(seed, "train.batch", static_cast<uint64_t>(step));
    std::vector<Example> out;
    out.reserve(batch);
    for (int i = 0; i < batch; ++i)
        out.push_back(pool[pick.uniform_int(0, static_cast<int>(pool.size()) - 1)]);
    return out;
}

// ---- training ----

struct TrainedModel {
    RunConfig cfg;
    PretrainArtifacts pre;
    NoiseSchedule sched;
    LayerMap map;
    std::shared_ptr<UdpNet> net;       // set when cfg says udpnet
    std::shared_ptr<BaselineNet> base; // set when cfg says baseline
    long step = 0;
    std::vector<std::vector<double>> opt_m, opt_v; // Adam moments, parameter order

    L0Config l0_config() const {
        return {cfg.codebook.likelihood, pre.delta, cfg.codebook.sigma, 1e-12};
    }
    LossOptions loss_options() const {
        return {cfg.train.lambda_h, cfg.train.independent_noise, cfg.train.detach_between,
                cfg.train.analytic_weights};
    }
    ParamList parameters() const {
        return net ? net->parameters() : base->parameters();
    }
};

inline LossValue make_objective_loss(const TrainedModel& m,
                                     const std::vector<Example>& batch, long step) {
    if (m.base) return baseline_loss(*m.base, batch, m.sched, m.cfg.seed, step);
    const L0Config l0 = m.l0_config();
    const LossOptions opt = m.loss_options();
    switch (m.cfg.objective) {
        case Objective::vlb:
            return loss_vlb(*m.net, batch, m.sched, m.map, m.pre.cb, l0, opt, m.cfg.seed,
                            step);
        case Objective::simple:
            return loss_simple(*m.net, batch, m.sched, m.map, opt, m.cfg.seed, step);
        case Objective::hybrid:
            return loss_hybrid(*m.net, batch, m.sched, m.map, m.pre.cb, l0, opt,
                               m.cfg.seed, step);
    }
    throw std::logic_error("make_objective_loss: bad objective");
}

inline void save_model(const TrainedModel& m, const std::string& out_path,
                       bool verbose = true);

inline TrainedModel train_model(const RunConfig& cfg, const PretrainArtifacts& pre,
                                bool verbose = true, const std::string& log_csv = "",
                                const std::string& periodic_ckpt = "") {
    TrainedModel m;
    m.cfg = cfg;
    m.pre = pre;
    m.sched = build_linear_schedule(cfg.beta_start, cfg.beta_end, cfg.model.T);
    m.map = build_layer_map(cfg.model.T, cfg.model.tau);
    if (cfg.baseline) m.base = std::make_shared<BaselineNet>(cfg.model, cfg.seed);
    else m.net = std::make_shared<UdpNet>(cfg.model, cfg.seed);

    const auto clips = build_dataset(cfg);
    const auto train_ex = build_examples(pre, train_split(cfg, clips), cfg);

    TrainState st(m.parameters(), cfg.train.opt);
    const int report = std::max(1, cfg.train.steps / 20);
    const int ckpt_every = std::max(500, cfg.train.steps / 10);
    CsvWriter log("step,lr,loss,l_simple,l_layers,l0,l_prior");
    for (long step = 0; step < cfg.train.steps; ++step) {
        auto batch = pick_batch(train_ex, cfg.train.batch, cfg.seed, step);
        const StepResult r =
            train_step(st, [&]() { return make_objective_loss(m, batch, st.step); });
        if (!log_csv.empty()) {
            double layer_sum = 0.0;
            for (double v : r.breakdown.layer_terms) layer_sum += v;
            log.row(std::to_string(step) + "," + fmt_double(r.lr) + "," +
                    fmt_double(r.loss) + "," + fmt_double(r.breakdown.l_simple) + "," +
                    fmt_double(layer_sum) + "," + fmt_double(r.breakdown.l0) + "," +
                    fmt_double(r.breakdown.l_prior));
        }
        if (!periodic_ckpt.empty() && (step + 1) % ckpt_every == 0 &&
            step + 1 < cfg.train.steps) {
            m.step = st.step;
            m.opt_m = st.m;
            m.opt_v = st.v;
            save_model(m, periodic_ckpt, false);
        }
        if (verbose && (step % report == 0 || step + 1 == cfg.train.steps))
            std::printf("train step %ld  loss %.6g  lr %.4g\n", step, r.loss, r.lr);
    }
    m.step = st.step;
    m.opt_m = st.m;
    m.opt_v = st.v;
    if (!log_csv.empty()) {
        const auto parent = std::filesystem::path(log_csv).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        log.save(log_csv);
        if (verbose) std::printf("wrote %s\n", log_csv.c_str());
    }
    return m;
}

inline void save_model(const TrainedModel& m, const std::string& out_path, bool verbose) {
    CheckpointData ckpt;
    ckpt.header = m.cfg.to_json();
    ckpt.header["kind"] = m.base ? "baseline" : "udpnet";
    ckpt.header["step"] = m.step;
    ckpt.header["latent"] = {{"lo", m.pre.range.lo}, {"hi", m.pre.range.hi},
                             {"delta", m.pre.delta}};
    add_pretrain_arrays(ckpt, m.pre);
    const ParamList params = m.parameters();
    auto net_arrays = arrays_from_params(params, "");
    ckpt.arrays.insert(ckpt.arrays.end(), net_arrays.begin(), net_arrays.end());
    if (m.opt_m.size() == params.size() && m.opt_v.size() == params.size()) {
        for (size_t i = 0; i < params.size(); ++i) {
            for (const char* which : {"m", "v"}) {
                ArrayRecord rec;
                rec.name = std::string("opt.") + which + "." + params[i].first;
                rec.dims.assign(params[i].second->shape.begin(),
                                params[i].second->shape.end());
                rec.data = which[0] == 'm' ? m.opt_m[i] : m.opt_v[i];
                ckpt.arrays.push_back(std::move(rec));
            }
        }
    }
    const auto parent = std::filesystem::path(out_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    save_checkpoint(out_path, ckpt);
    if (verbose) std::printf("wrote %s\n", out_path.c_str());
}

inline TrainedModel load_model(const std::string& path) {
    const CheckpointData ckpt = load_checkpoint(path);
    TrainedModel m;
    m.cfg = RunConfig::from_json(ckpt.header);
    m.pre = pretrain_from_checkpoint(ckpt, m.cfg);
    m.sched = build_linear_schedule(m.cfg.beta_start, m.cfg.beta_end, m.cfg.model.T);
    m.map = build_layer_map(m.cfg.model.T, m.cfg.model.tau);
    const std::string kind = ckpt.header.value("kind", "udpnet");
    if (kind == "baseline") m.base = std::make_shared<BaselineNet>(m.cfg.model, m.cfg.seed);
    else if (kind == "udpnet") m.net = std::make_shared<UdpNet>(m.cfg.model, m.cfg.seed);
    else throw std::runtime_error("load_model: checkpoint holds no trained model (kind " +
                                  kind + ")");
    ParamList params = m.parameters();
    load_params_from(ckpt, params, "");
    m.step = ckpt.header.value("step", 0L);
    if (ckpt.has("opt.m." + params[0].first)) {
        m.opt_m.resize(params.size());
        m.opt_v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m.opt_m[i] = ckpt.array("opt.m." + params[i].first).data;
            m.opt_v[i] = ckpt.array("opt.v." + params[i].first).data;
        }
    }
    return m;
}

inline void run_train(const RunConfig& cfg, const std::string& pretrain_path,
                      const std::string& out_path) {
    const PretrainArtifacts pre = ensure_pretrained(cfg, pretrain_path);
    const auto parent = std::filesystem::path(out_path).parent_path();
    const std::string log_csv =
        (parent.empty() ? std::string(".") : parent.string()) + "/train_log.csv";
    const TrainedModel m = train_model(cfg, pre, true, log_csv, out_path);
    save_model(m, out_path);
}

// ---- sampling ----

// Baseline reverse-process timesteps: down from T by the layer stride,
// finishing at 1.
inline std::vector<int> baseline_steps(int T, int tau) {
    std::vector<int> steps;
    for (int t = T; t > 1; t -= tau) steps.push_back(t);
    steps.push_back(1);
    return steps;
}

inline std::vector<double> model_generate_latent(const TrainedModel& m,
                                                 const TensorPtr* mel, uint64_t seed,
                                                 uint64_t index, int frames) {
    if (m.net) {
        SampleResult r = generate(*m.net, m.pre.ae, frames, m.cfg.data.sample_rate, mel,
                                  seed, index);
        return r.latent;
    }
    const auto steps = baseline_steps(m.cfg.model.T, m.cfg.model.tau);
    AncestralResult r = ancestral_sample(m.base->predictor(frames), m.sched, steps,
                                         frames * m.cfg.model.filters, &m.pre.range,
                                         seed ^ (0x9E3779B97F4A7C15ull * (index + 1)));
    return r.final_latent;
}

inline AudioClip decode_latent(const TrainedModel& m, const std::vector<double>& latent,
                               int frames) {
    auto lt = constant({frames, m.cfg.model.filters}, latent);
    auto wave = m.pre.ae.decode(lt);
    AudioClip clip;
    clip.sample_rate = m.cfg.data.sample_rate;
    clip.samples = wave->data;
    return clip;
}

inline void run_sample(const std::string& ckpt_path, const std::string& out_dir,
                       uint64_t seed, int n_samples) {
    const TrainedModel m = load_model(ckpt_path);
    const auto clips = build_dataset(m.cfg);
    const auto test = test_split(m.cfg, clips);
    const auto test_ex = build_examples(m.pre, test, m.cfg);
    const int frames = m.cfg.model.frames_for(m.cfg.data.n_samples());
    std::filesystem::create_directories(out_dir);
    for (int i = 0; i < n_samples; ++i) {
        const Example& ref = test_ex[i % test_ex.size()];
        const TensorPtr* mel = ref.mel ? &ref.mel : nullptr;
        const auto latent = model_generate_latent(m, mel, seed, i, frames);
        const AudioClip clip = decode_latent(m, latent, frames);
        char name[64];
        std::snprintf(name, sizeof(name), "sample_%03d.wav", i);
        write_wav(out_dir + "/" + name, clip);
        std::printf("wrote %s/%s\n", out_dir.c_str(), name);
    }
}

// ---- evaluation ----

struct EvalRow {
    int clip = 0;
    double latent_mse = 0.0;
    double ffe = 0.0;
};

struct EvalSummary {
    std::vector<EvalRow> rows;
    double mean_latent_mse = 0.0;
    double mean_ffe = 0.0;
};

// Reconstruction metrics over the test split: each reference latent is pushed
// to the chain endpoint through the forward process, the learned reverse
// chain runs it back, and the result is scored against the reference. Fresh
// noise synthesis is the sampling path's job; evaluation measures how
// faithfully the reverse chain recovers known content.
inline EvalSummary evaluate_model(const TrainedModel& m, uint64_t seed) {
    const auto clips = build_dataset(m.cfg);
    const auto test = test_split(m.cfg, clips);
    const auto test_ex = build_examples(m.pre, test, m.cfg);
    const int frames = m.cfg.model.frames_for(m.cfg.data.n_samples());
    EvalSummary summary;
    for (size_t i = 0; i < test_ex.size(); ++i) {
        const TensorPtr* mel = test_ex[i].mel ? &test_ex[i].mel : nullptr;
        RngStream eps_stream(seed, "eval.eps", i);
        std::vector<double> eps(test_ex[i].x0_data.size());
        eps_stream.fill_gaussian(eps);
        const auto endpoint =
            forward_sample(test_ex[i].x0_data, m.sched, m.cfg.model.T, eps);
        std::vector<double> latent;
        if (m.net) {
            auto x_T = constant({frames, m.cfg.model.filters}, endpoint);
            latent = m.net->unroll_final(x_T, mel)->data;
        } else {
            const auto steps = baseline_steps(m.cfg.model.T, m.cfg.model.tau);
            latent = ancestral_sample(m.base->predictor(frames), m.sched, steps,
                                      frames * m.cfg.model.filters, &m.pre.range,
                                      seed ^ (0x9E3779B97F4A7C15ull * (i + 1)),
                                      &endpoint)
                         .final_latent;
        }
        EvalRow row;
        row.clip = static_cast<int>(i);
        double sq = 0.0;
        for (size_t d = 0; d < latent.size(); ++d) {
            const double diff = latent[d] - test_ex[i].x0_data[d];
            sq += diff * diff;
        }
        row.latent_mse = sq / static_cast<double>(latent.size());
        // Clips shorter than one pitch frame have no defined FFE.
        row.ffe = pitch_measurable(test[i])
                      ? metric_ffe(test[i], decode_latent(m, latent, frames))
                      : std::numeric_limits<double>::quiet_NaN();
        summary.mean_latent_mse += row.latent_mse;
        summary.mean_ffe += row.ffe;
        summary.rows.push_back(row);
    }
    summary.mean_latent_mse /= static_cast<double>(summary.rows.size());
    summary.mean_ffe /= static_cast<double>(summary.rows.size());
    return summary;
}

inline void run_eval(const std::string& ckpt_path, const std::string& out_dir,
                     uint64_t seed) {
    const TrainedModel m = load_model(ckpt_path);
    const EvalSummary summary = evaluate_model(m, seed);
    std::filesystem::create_directories(out_dir);
    CsvWriter csv("clip,latent_mse,ffe_percent");
    for (const auto& row : summary.rows)
        csv.row(std::to_string(row.clip) + "," + fmt_double(row.latent_mse) + "," +
                fmt_double(row.ffe));
    csv.row("mean," + fmt_double(summary.mean_latent_mse) + "," +
            fmt_double(summary.mean_ffe));
    csv.save(out_dir + "/metrics.csv");
    std::printf("eval: %zu clips  latent_mse %.6g  ffe %.4g%%\n", summary.rows.size(),
                summary.mean_latent_mse, summary.mean_ffe);
    std::printf("wrote %s/metrics.csv\n", out_dir.c_str());
}

// ---- gradient checking ----

struct GradcheckOutcome {
    std::vector<std::pair<std::string, GradCheckReport>> reports;
    bool ok(double tol) const {
        for (const auto& [name, r] : reports)
            if (!r.ok(tol)) return false;
        return !reports.empty();
    }
};

// Finite-difference check of every objective (and the baseline loss) on a
// small untrained model. The encoder stays random; only gradient plumbing is
// under test.
inline GradcheckOutcome run_gradcheck(const RunConfig& cfg, double tol = 1e-3,
                                      bool verbose = true) {
    RunConfig c = cfg;
    // Shrink the dataset for speed, but keep enough training latent rows to
    // fit the codebook.
    const int frames = c.model.frames_for(c.data.n_samples());
    for (int n = 2; n <= cfg.data.n_clips; ++n) {
        DataConfig d = c.data;
        d.n_clips = n;
        if (d.n_train() >= 1 && d.n_train() * frames >= c.model.codebook_size) {
            c.data.n_clips = n;
            break;
        }
    }
    c.train.pretrain_steps = 0;
    const PretrainArtifacts pre = compute_pretrain(c, false);
    const auto clips = build_dataset(c);
    auto batch = build_examples(pre, clips, c);
    if (batch.size() > 2) batch.resize(2);
    const NoiseSchedule sched = build_linear_schedule(c.beta_start, c.beta_end, c.model.T);
    const LayerMap map = build_layer_map(c.model.T, c.model.tau);
    const L0Config l0{c.codebook.likelihood, pre.delta, c.codebook.sigma, 1e-12};
    const LossOptions opt{c.train.lambda_h, c.train.independent_noise,
                          c.train.detach_between, c.train.analytic_weights};

    GradcheckOutcome out;
    UdpNet net(c.model, c.seed);
    const ParamList net_params = net.parameters();
    out.reports.emplace_back(
        "vlb", grad_check(
                   [&]() {
                       return loss_vlb(net, batch, sched, map, pre.cb, l0, opt, c.seed, 0)
                           .loss;
                   },
                   net_params));
    if (map.N >= 2) {
        out.reports.emplace_back(
            "simple",
            grad_check(
                [&]() { return loss_simple(net, batch, sched, map, opt, c.seed, 0).loss; },
                net_params));
        out.reports.emplace_back(
            "hybrid",
            grad_check(
                [&]() {
                    return loss_hybrid(net, batch, sched, map, pre.cb, l0, opt, c.seed, 0)
                        .loss;
                },
                net_params));
    }
    BaselineNet base(c.model, c.seed);
    const ParamList base_params = base.parameters();
    out.reports.emplace_back(
        "baseline",
        grad_check([&]() { return baseline_loss(base, batch, sched, c.seed, 0).loss; },
                   base_params));
    if (verbose)
        for (const auto& [name, r] : out.reports)
            std::printf("gradcheck %-8s max_rel_err %.3e  %s\n", name.c_str(),
                        r.max_rel_err, r.ok(tol) ? "ok" : "FAIL");
    return out;
}

// ---- gradient noise scale ----

struct NoiseScaleRow {
    std::string objective;
    NoiseScaleResult result;
};

// Short-train a model per objective, then probe gradient norms at two batch
// sizes on fresh batches.
inline std::vector<NoiseScaleRow> run_noise_scale(const RunConfig& cfg,
                                                  const std::vector<Objective>& objectives,
                                                  int b_small, int b_big, int trials,
                                                  const std::string& out_csv) {
    const PretrainArtifacts pre = ensure_pretrained(cfg, "", false);
    const auto clips = build_dataset(cfg);
    const auto train_ex = build_examples(pre, train_split(cfg, clips), cfg);
    std::vector<NoiseScaleRow> rows;
    for (Objective obj : objectives) {
        RunConfig c = cfg;
        c.objective = obj;
        TrainedModel m = train_model(c, pre, false);
        ParamList params = m.parameters();
        auto grad_fn = [&](int batch_size, int trial) {
            // Key batches and loss noise off a step counter far past training
            // so probe draws never repeat a training draw.
            const long probe = 1'000'000 + trial * 4 + (batch_size == b_small ? 0 : 1);
            auto batch = pick_batch(train_ex, batch_size, c.seed, probe);
            for (auto& [name, p] : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
            LossValue lv = make_objective_loss(m, batch, probe);
            backward(lv.loss);
            std::vector<double> flat;
            for (const auto& [name, p] : params)
                flat.insert(flat.end(), p->grad.begin(), p->grad.end());
            return flat;
        };
        NoiseScaleRow row;
        row.objective = objective_name(obj);
        row.result = gradient_noise_scale(grad_fn, b_small, b_big, trials);
        std::printf("noise-scale %-8s g2_small %.6g  g2_big %.6g  b_noise %.6g\n",
                    row.objective.c_str(), row.result.g2_small, row.result.g2_big,
                    row.result.b_noise);
        rows.push_back(std::move(row));
    }
    if (!out_csv.empty()) {
        const auto parent = std::filesystem::path(out_csv).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        CsvWriter csv("objective,g2_small,g2_big,g2,S,b_noise");
        for (const auto& row : rows)
            csv.row(row.objective + "," + fmt_double(row.result.g2_small) + "," +
                    fmt_double(row.result.g2_big) + "," + fmt_double(row.result.g2) + "," +
                    fmt_double(row.result.S) + "," + fmt_double(row.result.b_noise));
        csv.save(out_csv);
        std::printf("wrote %s\n", out_csv.c_str());
    }
    return rows;
}

// ---- skip-parameter sweep ----

struct SweepRow {
    int tau = 0;
    int layers = 0;
    double latent_mse = 0.0;
    double rtf = 0.0;
};

// Train one model per skip value on a shared clock length and report
// generation quality against generation cost. Depth-one models fall back to
// the bound objective, which is the only one defined there.
inline std::vector<SweepRow> run_sweep_tau(const RunConfig& cfg,
                                           const std::vector<int>& taus,
                                           const std::string& out_csv) {
    const PretrainArtifacts pre = ensure_pretrained(cfg, "", true);
    std::vector<SweepRow> rows;
    for (int tau : taus) {
        RunConfig c = cfg;
        c.model.tau = tau;
        if (c.model.layers() < 2) c.objective = Objective::vlb;
        c.validate();
        std::printf("sweep tau %d (%d layers, objective %s)\n", tau, c.model.layers(),
                    objective_name(c.objective));
        TrainedModel m = train_model(c, pre);
        const EvalSummary summary = evaluate_model(m, c.seed);
        SweepRow row;
        row.tau = tau;
        row.layers = c.model.layers();
        row.latent_mse = summary.mean_latent_mse;

        const auto clips = build_dataset(c);
        const auto test = test_split(c, clips);
        const auto test_ex = build_examples(pre, test, c);
        const int frames = c.model.frames_for(c.data.n_samples());
        const TensorPtr* mel = test_ex[0].mel ? &test_ex[0].mel : nullptr;
        row.rtf = metric_rtf(
            [&]() {
                const auto latent = model_generate_latent(m, mel, c.seed, 0, frames);
                decode_latent(m, latent, frames);
            },
            c.data.duration_s);
        std::printf("sweep tau %d  latent_mse %.6g  rtf %.4g\n", tau, row.latent_mse,
                    row.rtf);
        rows.push_back(row);
    }
    if (!out_csv.empty()) {
        const auto parent = std::filesystem::path(out_csv).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        CsvWriter csv("tau,layers,latent_mse,rtf");
        for (const auto& row : rows)
            csv.row(std::to_string(row.tau) + "," + std::to_string(row.layers) + "," +
                    fmt_double(row.latent_mse) + "," + fmt_double(row.rtf));
        csv.save(out_csv);
        std::printf("wrote %s\n", out_csv.c_str());
    }
    return rows;
}

// ---- error accumulation comparison ----

// Train the unrolled model and the timestep-conditioned baseline on the same
// schedule and walk both along the same forward chains of held-out clips.
inline CompareResult run_compare_baseline(const RunConfig& cfg,
                                          const std::string& out_dir) {
    if (cfg.model.layers() < 2)
        throw std::invalid_argument(
            "compare-baseline: needs at least two layers; lower schedule.tau");
    const PretrainArtifacts pre = ensure_pretrained(cfg, "", true);

    RunConfig ucfg = cfg;
    ucfg.baseline = false;
    std::printf("training unrolled model (%s)\n", objective_name(ucfg.objective));
    TrainedModel unrolled = train_model(ucfg, pre);

    RunConfig bcfg = cfg;
    bcfg.baseline = true;
    std::printf("training baseline\n");
    TrainedModel baseline = train_model(bcfg, pre);

    const auto clips = build_dataset(cfg);
    const auto test_ex = build_examples(pre, test_split(cfg, clips), cfg);
    const int frames = cfg.model.frames_for(cfg.data.n_samples());
    CompareResult r = compare_accumulation(*unrolled.net, unrolled.sched,
                                           baseline.base->predictor(frames),
                                           baseline.sched, unrolled.map, test_ex, cfg.seed);
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        r.unrolled.write_csv(out_dir + "/unrolled_curve.csv");
        r.baseline.write_csv(out_dir + "/baseline_curve.csv");
        std::printf("wrote %s/unrolled_curve.csv and baseline_curve.csv\n",
                    out_dir.c_str());
    }
    std::printf("cumulative error: unrolled %.6g  baseline(all t) %.6g  "
                "baseline(layer timesteps) %.6g\n",
                r.unrolled.total(), r.baseline.total(), r.baseline_restricted);
    return r;
}

} // namespace udpnet
