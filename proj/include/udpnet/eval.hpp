#pragma once

// Evaluation utilities: waveform generation through the unrolled network,
// an autocorrelation pitch tracker with the fundamental-frequency error
// metric, and wall-clock real-time-factor measurement.

#include <chrono>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "udpnet/audio.hpp"
#include "udpnet/model.hpp"
#include "udpnet/rng.hpp"

namespace udpnet {

struct SampleResult {
    AudioClip wave;
    std::vector<double> latent; // final clean-latent estimate [frames x filters]
    int layers_applied = 0;
};

// Draw the initial latent from white noise, run all N layers, decode.
// index keys the noise stream so one seed can produce many distinct clips.
inline SampleResult generate(const UdpNet& net, const Autoencoder& ae, int frames,
                             int sample_rate, const TensorPtr* mel, uint64_t seed,
                             uint64_t index = 0) {
    auto x_T = make_tensor({frames, net.config().filters});
    RngStream init(seed, "gen.init", index);
    init.fill_gaussian(x_T->data);
    auto x0_hat = net.unroll_final(x_T, mel);
    auto wave = ae.decode(x0_hat);
    SampleResult r;
    r.latent = x0_hat->data;
    r.layers_applied = net.layer_count();
    r.wave.sample_rate = sample_rate;
    r.wave.samples = wave->data;
    return r;
}

// ---- pitch tracking / FFE ----

struct F0Config {
    double frame_s = 0.025;
    double hop_s = 0.010;
    double fmin = 60.0;
    double fmax = 500.0;
    double voicing_threshold = 0.3; // normalized autocorrelation peak
};

struct F0Track {
    std::vector<double> f0;
    std::vector<bool> voiced;
};

inline F0Track track_f0(const AudioClip& clip, const F0Config& cfg = {}) {
    const int frame = static_cast<int>(std::lround(cfg.frame_s * clip.sample_rate));
    const int hop = static_cast<int>(std::lround(cfg.hop_s * clip.sample_rate));
    const int lag_min =
        std::max(1, static_cast<int>(std::floor(clip.sample_rate / cfg.fmax)));
    const int lag_max = static_cast<int>(std::ceil(clip.sample_rate / cfg.fmin));
    if (frame <= lag_max)
        throw std::invalid_argument("track_f0: frame too short for the lag range");
    const int len = static_cast<int>(clip.samples.size());
    F0Track track;
    for (int start = 0; start + frame <= len; start += hop) {
        const double* x = clip.samples.data() + start;
        double energy = 0.0;
        for (int i = 0; i < frame; ++i) energy += x[i] * x[i];
        double best_r = 0.0;
        int best_lag = 0;
        if (energy > 1e-12) {
            for (int lag = lag_min; lag <= lag_max; ++lag) {
                double r = 0.0;
                for (int i = 0; i + lag < frame; ++i) r += x[i] * x[i + lag];
                r /= energy;
                if (r > best_r) {
                    best_r = r;
                    best_lag = lag;
                }
            }
        }
        const bool voiced = best_r > cfg.voicing_threshold;
        track.voiced.push_back(voiced);
        track.f0.push_back(voiced ? static_cast<double>(clip.sample_rate) / best_lag
                                  : 0.0);
    }
    return track;
}

// True when the clip holds at least one analysis frame and the frame covers
// the longest candidate pitch period.
inline bool pitch_measurable(const AudioClip& clip, const F0Config& cfg = {}) {
    const int frame = static_cast<int>(std::lround(cfg.frame_s * clip.sample_rate));
    const int lag_max = static_cast<int>(std::ceil(clip.sample_rate / cfg.fmin));
    return frame > lag_max && frame <= static_cast<int>(clip.samples.size());
}

// Percentage of frames with a voicing mismatch or an F0 deviation above 20%.
inline double metric_ffe(const AudioClip& ref, const AudioClip& gen,
                         const F0Config& cfg = {}) {
    const F0Track tr = track_f0(ref, cfg);
    const F0Track tg = track_f0(gen, cfg);
    const size_t n = std::min(tr.f0.size(), tg.f0.size());
    if (n == 0) throw std::invalid_argument("metric_ffe: no comparable frames");
    int errors = 0;
    for (size_t i = 0; i < n; ++i) {
        if (tr.voiced[i] != tg.voiced[i]) {
            errors++;
        } else if (tr.voiced[i]) {
            const double dev = std::abs(tg.f0[i] - tr.f0[i]) / tr.f0[i];
            if (dev > 0.20) errors++;
        }
    }
    return 100.0 * errors / static_cast<double>(n);
}

// ---- real-time factor ----

inline double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median: empty input");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Median-of-runs over mean-of-runs: robust to scheduler hiccups.
inline double rtf_from_times(const std::vector<double>& times_s, double audio_s) {
    if (!(audio_s > 0.0)) throw std::invalid_argument("rtf_from_times: bad duration");
    return median(times_s) / audio_s;
}

// Wall-clock generation time divided by audio duration, median of >= 5 runs.
inline double metric_rtf(const std::function<void()>& generate_once, double audio_s,
                         int runs = 5) {
    if (runs < 5) throw std::invalid_argument("metric_rtf: need at least 5 runs");
    generate_once(); // warmup, not measured
    std::vector<double> times;
    times.reserve(runs);
    for (int i = 0; i < runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        generate_once();
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    return rtf_from_times(times, audio_s);
}

} // namespace udpnet
