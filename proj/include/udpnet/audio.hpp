#pragma once

// Audio utilities: the deterministic synthetic harmonic dataset, a radix-2
// FFT, log-mel spectrograms, and 16-bit PCM WAV serialization.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "udpnet/rng.hpp"
#include "udpnet/util.hpp"

namespace udpnet {

inline constexpr double kPi = 3.14159265358979323846;

struct AudioClip {
    std::vector<double> samples;
    int sample_rate = 0;
    double f0 = 0.0; // fundamental for synthetic clips, 0 when unknown

    double duration_s() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

// ---- synthetic harmonic clips ----

struct SynthParams {
    double duration_s = 0.3;
    int sample_rate = 4000;
    double f0_min = 80.0;
    double f0_max = 400.0;
    int harmonics_min = 2;
    int harmonics_max = 4;
    double peak = 0.9;
};

// One clip: a mixture of harmonics of a random fundamental under an
// attack/decay envelope, peak-normalized.
inline AudioClip synth_clip(RngStream& rng, const SynthParams& p) {
    const int n = static_cast<int>(std::llround(p.duration_s * p.sample_rate));
    if (n < 1) throw std::invalid_argument("synth_clip: empty clip");
    AudioClip clip;
    clip.sample_rate = p.sample_rate;
    clip.f0 = rng.uniform(p.f0_min, p.f0_max);
    const int harmonics =
        static_cast<int>(rng.uniform_int(p.harmonics_min, p.harmonics_max));
    std::vector<double> amps(harmonics);
    std::vector<double> phases(harmonics);
    for (int h = 0; h < harmonics; ++h) {
        amps[h] = rng.uniform(0.3, 1.0) / (h + 1);
        phases[h] = rng.uniform(0.0, 2.0 * kPi);
    }
    const double attack = 0.1 * p.duration_s;
    const double decay = 2.0 / p.duration_s;
    clip.samples.resize(n);
    double peak = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / p.sample_rate;
        double v = 0.0;
        for (int h = 0; h < harmonics; ++h)
            v += amps[h] * std::sin(2.0 * kPi * clip.f0 * (h + 1) * t + phases[h]);
        const double env = std::min(t / attack, 1.0) * std::exp(-decay * t);
        clip.samples[i] = v * env;
        peak = std::max(peak, std::abs(clip.samples[i]));
    }
    if (peak > 0.0)
        for (double& v : clip.samples) v *= p.peak / peak;
    return clip;
}

// Pure tone helper (single harmonic, flat envelope), used by tests and the
// autoencoder reconstruction check.
inline AudioClip synth_tone(double freq, double duration_s, int sample_rate,
                            double amplitude = 0.9) {
    AudioClip clip;
    clip.sample_rate = sample_rate;
    clip.f0 = freq;
    const int n = static_cast<int>(std::llround(duration_s * sample_rate));
    clip.samples.resize(n);
    for (int i = 0; i < n; ++i)
        clip.samples[i] =
            amplitude * std::sin(2.0 * kPi * freq * i / sample_rate);
    return clip;
}

// Deterministic dataset: clip i depends only on (seed, i).
inline std::vector<AudioClip> synth_dataset(int n_clips, const SynthParams& p,
                                            uint64_t seed) {
    std::vector<AudioClip> clips;
    clips.reserve(n_clips);
    for (int i = 0; i < n_clips; ++i) {
        RngStream rng(seed, "data.clip", static_cast<uint64_t>(i));
        clips.push_back(synth_clip(rng, p));
    }
    return clips;
}

// ---- FFT ----

// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0)
        throw std::invalid_argument("fft_radix2: size must be a power of two");
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                const auto u = a[i + j];
                const auto v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// ---- log-mel spectrogram ----

struct MelConfig {
    int n_mels = 16;
    int window = 200;   // samples
    int hop = 50;       // samples
    int fft_size = 256; // >= window, power of two
    double fmin = 40.0;
    double fmax = 2000.0;

    void validate(int sample_rate) const {
        if (fft_size < window)
            throw std::invalid_argument("MelConfig: fft_size must be >= window");
        if ((fft_size & (fft_size - 1)) != 0)
            throw std::invalid_argument("MelConfig: fft_size must be a power of two");
        if (!(fmin >= 0.0) || !(fmin < fmax) || !(fmax <= sample_rate / 2.0))
            throw std::invalid_argument(
                "MelConfig: need 0 <= fmin < fmax <= sample_rate/2");
        if (n_mels < 1 || window < 2 || hop < 1)
            throw std::invalid_argument("MelConfig: bad frame geometry");
    }
};

struct MelFeatures {
    int n_frames = 0;
    int n_mels = 0;
    std::vector<double> values; // row-major [n_frames x n_mels], natural log

    double at(int frame, int mel) const {
        return values[static_cast<size_t>(frame) * n_mels + mel];
    }
};

namespace detail {

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

} // namespace detail

// Hann-windowed STFT -> power spectrum -> triangular mel filterbank -> log
// with floor 1e-10. Frames are taken without padding: (len-window)/hop + 1.
inline MelFeatures mel_spectrogram(const AudioClip& clip, const MelConfig& cfg) {
    cfg.validate(clip.sample_rate);
    const int len = static_cast<int>(clip.samples.size());
    if (len < cfg.window)
        throw std::invalid_argument("mel_spectrogram: clip shorter than window");
    const int n_frames = (len - cfg.window) / cfg.hop + 1;
    const int n_bins = cfg.fft_size / 2 + 1;

    std::vector<double> hann(cfg.window);
    for (int i = 0; i < cfg.window; ++i)
        hann[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / cfg.window));

    // triangular filters on mel-spaced edges evaluated at bin frequencies
    std::vector<double> edges(cfg.n_mels + 2);
    const double mel_lo = detail::hz_to_mel(cfg.fmin);
    const double mel_hi = detail::hz_to_mel(cfg.fmax);
    for (int m = 0; m < cfg.n_mels + 2; ++m)
        edges[m] = detail::mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (cfg.n_mels + 1));
    std::vector<double> filters(static_cast<size_t>(cfg.n_mels) * n_bins, 0.0);
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double l = edges[m], c = edges[m + 1], r = edges[m + 2];
        for (int b = 0; b < n_bins; ++b) {
            const double fb = static_cast<double>(b) * clip.sample_rate / cfg.fft_size;
            double w = 0.0;
            if (fb > l && fb < c) w = (fb - l) / (c - l);
            else if (fb >= c && fb < r) w = (r - fb) / (r - c);
            filters[static_cast<size_t>(m) * n_bins + b] = w;
        }
    }

    MelFeatures out;
    out.n_frames = n_frames;
    out.n_mels = cfg.n_mels;
    out.values.assign(static_cast<size_t>(n_frames) * cfg.n_mels, 0.0);
    std::vector<std::complex<double>> buf(cfg.fft_size);
    std::vector<double> power(n_bins);
    for (int fr = 0; fr < n_frames; ++fr) {
        const int start = fr * cfg.hop;
        for (int i = 0; i < cfg.fft_size; ++i)
            buf[i] = i < cfg.window
                         ? std::complex<double>(clip.samples[start + i] * hann[i], 0.0)
                         : std::complex<double>(0.0, 0.0);
        fft_radix2(buf);
        for (int b = 0; b < n_bins; ++b) power[b] = std::norm(buf[b]);
        for (int m = 0; m < cfg.n_mels; ++m) {
            const double* flt = filters.data() + static_cast<size_t>(m) * n_bins;
            double e = 0.0;
            for (int b = 0; b < n_bins; ++b) e += flt[b] * power[b];
            out.values[static_cast<size_t>(fr) * cfg.n_mels + m] =
                std::log(std::max(e, 1e-10));
        }
    }
    return out;
}

// ---- WAV ----

namespace detail {

inline void put_u32(std::string& s, uint32_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
    s.push_back(static_cast<char>((v >> 16) & 0xff));
    s.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u16(std::string& s, uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}

} // namespace detail

// Mono 16-bit PCM.
inline void write_wav(const std::string& path, const AudioClip& clip) {
    std::string body;
    const uint32_t data_bytes = static_cast<uint32_t>(clip.samples.size() * 2);
    body.reserve(44 + data_bytes);
    body += "RIFF";
    detail::put_u32(body, 36 + data_bytes);
    body += "WAVEfmt ";
    detail::put_u32(body, 16);
    detail::put_u16(body, 1); // PCM
    detail::put_u16(body, 1); // mono
    detail::put_u32(body, static_cast<uint32_t>(clip.sample_rate));
    detail::put_u32(body, static_cast<uint32_t>(clip.sample_rate * 2));
    detail::put_u16(body, 2);
    detail::put_u16(body, 16);
    body += "data";
    detail::put_u32(body, data_bytes);
    for (double v : clip.samples) {
        const double c = std::clamp(v, -1.0, 1.0);
        const int16_t q = static_cast<int16_t>(std::lround(c * 32767.0));
        detail::put_u16(body, static_cast<uint16_t>(q));
    }
    atomic_write_file(path, body);
}

inline AudioClip read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_wav: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    auto u32 = [&](size_t off) {
        return static_cast<uint32_t>(static_cast<unsigned char>(bytes[off])) |
               (static_cast<uint32_t>(static_cast<unsigned char>(bytes[off + 1])) << 8) |
               (static_cast<uint32_t>(static_cast<unsigned char>(bytes[off + 2])) << 16) |
               (static_cast<uint32_t>(static_cast<unsigned char>(bytes[off + 3])) << 24);
    };
    auto u16 = [&](size_t off) {
        return static_cast<uint16_t>(
            static_cast<uint32_t>(static_cast<unsigned char>(bytes[off])) |
            (static_cast<uint32_t>(static_cast<unsigned char>(bytes[off + 1])) << 8));
    };
    if (bytes.size() < 44 || bytes.compare(0, 4, "RIFF") != 0 ||
        bytes.compare(8, 4, "WAVE") != 0)
        throw std::runtime_error("read_wav: not a RIFF/WAVE file: " + path);
    // walk chunks for fmt and data
    AudioClip clip;
    size_t off = 12;
    uint16_t channels = 1;
    while (off + 8 <= bytes.size()) {
        const std::string id = bytes.substr(off, 4);
        const uint32_t sz = u32(off + 4);
        if (id == "fmt ") {
            channels = u16(off + 10);
            clip.sample_rate = static_cast<int>(u32(off + 12));
        } else if (id == "data") {
            const size_t n = sz / 2;
            clip.samples.resize(n);
            for (size_t i = 0; i < n; ++i) {
                const int16_t q = static_cast<int16_t>(u16(off + 8 + 2 * i));
                clip.samples[i] = static_cast<double>(q) / 32767.0;
            }
        }
        off += 8 + sz + (sz & 1);
    }
    if (clip.sample_rate == 0 || channels != 1)
        throw std::runtime_error("read_wav: unsupported format in " + path);
    return clip;
}

} // namespace udpnet
