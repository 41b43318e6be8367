#include "enviro/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

namespace enviro::dsp {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey, in place. a.size() must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? kTwoPi : -kTwoPi) / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse) {
        const double inv = 1.0 / static_cast<double>(n);
        for (auto& z : a) z *= inv;
    }
}

// Index into [0, len) with a single boundary reflection (no edge repeat).
int reflect_index(int idx, int len) {
    if (idx < 0) idx = -idx;
    if (idx >= len) idx = 2 * len - 2 - idx;
    return idx;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

double frobenius(const Mat& m) { return std::sqrt(m.squaredNorm()); }

}  // namespace

WindowKind window_from_name(const std::string& name) {
    if (name == "hann") return WindowKind::Hann;
    if (name == "rect") return WindowKind::Rect;
    throw ConfigError("unknown window kind: " + name);
}

std::string window_name(WindowKind w) {
    return w == WindowKind::Hann ? "hann" : "rect";
}

std::vector<double> make_window(WindowKind kind, int size) {
    if (size < 1) throw ConfigError("window size must be positive");
    std::vector<double> w(static_cast<std::size_t>(size), 1.0);
    if (kind == WindowKind::Hann) {
        for (int n = 0; n < size; ++n)
            w[static_cast<std::size_t>(n)] =
                0.5 * (1.0 - std::cos(kTwoPi * n / static_cast<double>(size)));
    }
    return w;
}

double cola_deviation(const StftConfig& cfg) {
    const auto w = make_window(cfg.window, cfg.window_size);
    // Accumulate shifted squared windows; the span [window, window + hop) sits
    // in steady state once shifts on both sides are included.
    const int span = 2 * cfg.window_size + cfg.hop_size;
    std::vector<double> acc(static_cast<std::size_t>(span), 0.0);
    for (int shift = 0; shift + cfg.window_size <= span; shift += cfg.hop_size)
        for (int n = 0; n < cfg.window_size; ++n)
            acc[static_cast<std::size_t>(shift + n)] += w[static_cast<std::size_t>(n)] * w[static_cast<std::size_t>(n)];
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    for (int n = cfg.window_size; n < cfg.window_size + cfg.hop_size; ++n) {
        lo = std::min(lo, acc[static_cast<std::size_t>(n)]);
        hi = std::max(hi, acc[static_cast<std::size_t>(n)]);
    }
    const double mean = 0.5 * (lo + hi);
    if (mean <= 0.0) return std::numeric_limits<double>::infinity();
    return (hi - lo) / mean;
}

void validate_stft_config(const StftConfig& cfg) {
    if (cfg.hop_size < 1 || cfg.window_size < 1 || cfg.fft_size < 1)
        throw ConfigError("stft sizes must be positive");
    if (!is_pow2(cfg.fft_size))
        throw ConfigError("fft size must be a power of two, got " + std::to_string(cfg.fft_size));
    if (cfg.window_size > cfg.fft_size)
        throw ConfigError("window size exceeds fft size");
    if (cfg.hop_size > cfg.window_size)
        throw ConfigError("hop size exceeds window size");
    const double dev = cola_deviation(cfg);
    if (!(dev <= 1e-6))
        throw ConfigError("window/hop pair does not overlap-add to a constant (deviation " +
                          std::to_string(dev) + ")");
}

ComplexSpectrogram stft(const Waveform& wave, const StftConfig& cfg) {
    validate_stft_config(cfg);
    const int len = static_cast<int>(wave.samples.size());
    if (len < cfg.window_size)
        throw DomainError("stft input shorter than the analysis window (" +
                          std::to_string(len) + " < " + std::to_string(cfg.window_size) + ")");

    const int pad = cfg.window_size / 2;
    const int L = len / cfg.hop_size + 1;
    const int F = cfg.freq_bins();
    const int offset = (cfg.fft_size - cfg.window_size) / 2;
    const auto w = make_window(cfg.window, cfg.window_size);

    ComplexSpectrogram spec;
    spec.config = cfg;
    spec.frames.resize(F, L);

    std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.fft_size));
    for (int l = 0; l < L; ++l) {
        std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
        const int base = l * cfg.hop_size - pad;
        for (int n = 0; n < cfg.window_size; ++n) {
            const int idx = reflect_index(base + n, len);
            buf[static_cast<std::size_t>(offset + n)] =
                wave.samples[static_cast<std::size_t>(idx)] * w[static_cast<std::size_t>(n)];
        }
        fft_inplace(buf, false);
        for (int k = 0; k < F; ++k) spec.frames(k, l) = buf[static_cast<std::size_t>(k)];
    }
    return spec;
}

Waveform istft(const ComplexSpectrogram& spec, int sample_rate) {
    const StftConfig& cfg = spec.config;
    validate_stft_config(cfg);
    if (spec.freq_bins() != cfg.freq_bins())
        throw ShapeError("spectrogram rows " + std::to_string(spec.freq_bins()) +
                         " do not match fft size " + std::to_string(cfg.fft_size));
    const int L = spec.length();
    if (L < 1) throw ShapeError("istft needs at least one frame");

    const int out_len = (L - 1) * cfg.hop_size + cfg.window_size;
    const int offset = (cfg.fft_size - cfg.window_size) / 2;
    const auto w = make_window(cfg.window, cfg.window_size);

    std::vector<double> out(static_cast<std::size_t>(out_len), 0.0);
    std::vector<double> wsq(static_cast<std::size_t>(out_len), 0.0);
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.fft_size));

    const int half = cfg.fft_size / 2;
    for (int l = 0; l < L; ++l) {
        for (int k = 0; k <= half; ++k) buf[static_cast<std::size_t>(k)] = spec.frames(k, l);
        for (int k = 1; k < half; ++k)
            buf[static_cast<std::size_t>(cfg.fft_size - k)] = std::conj(spec.frames(k, l));
        fft_inplace(buf, true);
        for (int n = 0; n < cfg.window_size; ++n) {
            const double win = w[static_cast<std::size_t>(n)];
            const std::size_t pos = static_cast<std::size_t>(l * cfg.hop_size + n);
            out[pos] += buf[static_cast<std::size_t>(offset + n)].real() * win;
            wsq[pos] += win * win;
        }
    }
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = wsq[i] > 1e-12 ? out[i] / wsq[i] : 0.0;

    return Waveform{std::move(out), sample_rate};
}

Waveform istft_aligned(const ComplexSpectrogram& spec, int sample_rate, int length) {
    Waveform full = istft(spec, sample_rate);
    const int pad = spec.config.window_size / 2;
    if (length < 0 || pad + length > static_cast<int>(full.samples.size()))
        throw ShapeError("requested " + std::to_string(length) +
                         " samples exceed the synthesis extent");
    std::vector<double> cropped(full.samples.begin() + pad, full.samples.begin() + pad + length);
    return Waveform{std::move(cropped), sample_rate};
}

MagnitudeSpectrogram magnitude(const ComplexSpectrogram& spec) {
    MagnitudeSpectrogram mag;
    mag.config = spec.config;
    mag.frames = spec.frames.cwiseAbs();
    return mag;
}

MelFilterbank build_mel_filterbank(int mel_bins, const StftConfig& cfg, int sample_rate,
                                   double freq_lo, double freq_hi) {
    if (mel_bins < 1) throw ConfigError("mel_bins must be positive");
    if (sample_rate < 1) throw ConfigError("sample rate must be positive");
    const double nyquist = sample_rate / 2.0;
    if (!(freq_lo >= 0.0 && freq_lo < freq_hi && freq_hi <= nyquist))
        throw ConfigError("mel band edges must satisfy 0 <= lo < hi <= nyquist");

    const int F = cfg.freq_bins();
    const double mel_lo = hz_to_mel(freq_lo);
    const double mel_hi = hz_to_mel(freq_hi);

    // M+2 edge frequencies, snapped to FFT bin indices; triangle i spans
    // bins[i]..bins[i+2] and peaks with weight exactly 1 at bins[i+1].
    std::vector<int> bins(static_cast<std::size_t>(mel_bins) + 2);
    for (int i = 0; i < mel_bins + 2; ++i) {
        const double mel = mel_lo + (mel_hi - mel_lo) * i / static_cast<double>(mel_bins + 1);
        const double hz = mel_to_hz(mel);
        int b = static_cast<int>(std::lround(hz * cfg.fft_size / sample_rate));
        bins[static_cast<std::size_t>(i)] = std::clamp(b, 0, F - 1);
    }

    MelFilterbank fb;
    fb.mel_bins = mel_bins;
    fb.freq_lo = freq_lo;
    fb.freq_hi = freq_hi;
    fb.weights = Mat::Zero(mel_bins, F);
    for (int i = 0; i < mel_bins; ++i) {
        const int left = bins[static_cast<std::size_t>(i)];
        const int center = bins[static_cast<std::size_t>(i) + 1];
        const int right = bins[static_cast<std::size_t>(i) + 2];
        for (int k = left + 1; k <= center; ++k)
            fb.weights(i, k) = static_cast<double>(k - left) / static_cast<double>(center - left);
        for (int k = center; k < right; ++k)
            fb.weights(i, k) = static_cast<double>(right - k) / static_cast<double>(right - center);
        if (fb.weights.row(i).maxCoeff() <= 0.0) fb.weights(i, center) = 1.0;
    }
    return fb;
}

MelSpectrogram mag_to_mel(const MagnitudeSpectrogram& mag, const MelFilterbank& fb) {
    if (fb.weights.cols() != mag.frames.rows())
        throw ShapeError("filterbank expects " + std::to_string(fb.weights.cols()) +
                         " frequency bins, spectrogram has " + std::to_string(mag.frames.rows()));
    MelSpectrogram mel;
    mel.mel_bins = fb.mel_bins;
    mel.frames = ((fb.weights * mag.frames).array() + kMelLogEps).log().matrix();
    return mel;
}

Waveform griffin_lim(const MagnitudeSpectrogram& mag, int iterations, int sample_rate,
                     double momentum) {
    return griffin_lim_traced(mag, iterations, sample_rate, momentum, nullptr);
}

Waveform griffin_lim_traced(const MagnitudeSpectrogram& mag, int iterations, int sample_rate,
                            double momentum, std::vector<double>* error_trace) {
    const StftConfig& cfg = mag.config;
    validate_stft_config(cfg);
    if (mag.freq_bins() != cfg.freq_bins())
        throw ShapeError("magnitude rows do not match fft size");
    if (iterations < 1) throw ConfigError("griffin_lim needs at least one iteration");
    if ((mag.frames.array() < 0.0).any())
        throw DomainError("magnitude spectrogram has negative entries");

    const int L = mag.length();
    const int target_len = (L - 1) * cfg.hop_size;
    if (target_len < cfg.window_size)
        throw DomainError("griffin_lim needs at least window/hop + 1 frames, got " +
                          std::to_string(L));

    const double mag_norm = frobenius(mag.frames);
    if (mag_norm == 0.0)
        return Waveform{std::vector<double>(static_cast<std::size_t>(target_len), 0.0),
                        sample_rate};

    auto project_magnitude = [&](const CMat& x) {
        CMat t(x.rows(), x.cols());
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                const std::complex<double> v = x(i, j);
                const double a = std::abs(v);
                t(i, j) = a > 1e-300 ? mag.frames(i, j) * (v / a)
                                     : std::complex<double>(mag.frames(i, j), 0.0);
            }
        return t;
    };

    ComplexSpectrogram est;
    est.config = cfg;
    est.frames = mag.frames.cast<std::complex<double>>();
    CMat t_prev = est.frames;
    double prev_err = std::numeric_limits<double>::infinity();

    Waveform x;
    for (int it = 0; it < iterations; ++it) {
        x = istft_aligned(est, sample_rate, target_len);
        CMat consistent = stft(x, cfg).frames;
        double err = frobenius(consistent.cwiseAbs() - mag.frames) / mag_norm;
        if (err > prev_err) {
            // Momentum overshot; fall back to the plain projection step, which
            // never increases the error.
            est.frames = t_prev;
            x = istft_aligned(est, sample_rate, target_len);
            consistent = stft(x, cfg).frames;
            err = frobenius(consistent.cwiseAbs() - mag.frames) / mag_norm;
        }
        if (error_trace) error_trace->push_back(err);
        prev_err = err;

        const CMat t = project_magnitude(consistent);
        est.frames = t + momentum * (t - t_prev);
        t_prev = t;
    }
    return x;
}

double energy(const Waveform& wave) {
    double e = 0.0;
    for (double s : wave.samples) e += s * s;
    return e;
}

double energy(const MagnitudeSpectrogram& mag) { return mag.frames.squaredNorm(); }

double energy(const Mat& m) { return m.squaredNorm(); }

SnrDb snr_db(double signal_energy, double noise_energy) {
    if (noise_energy <= 0.0)
        throw DomainError("snr undefined for non-positive noise energy");
    if (signal_energy < 0.0)
        throw DomainError("negative signal energy");
    return SnrDb{10.0 * std::log10(signal_energy / noise_energy)};
}

double spectrogram_energy_ratio(const StftConfig& cfg, int length) {
    if (length < cfg.window_size)
        throw DomainError("signal shorter than the analysis window");
    const auto w = make_window(cfg.window, cfg.window_size);
    double sum_w2 = 0.0;
    for (double v : w) sum_w2 += v * v;
    const int L = length / cfg.hop_size + 1;
    return static_cast<double>(L) * cfg.fft_size * sum_w2 / (2.0 * length);
}

}  // namespace enviro::dsp
