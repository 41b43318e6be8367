#pragma once

#include "enviro/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace enviro::dsp {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct Waveform {
    std::vector<double> samples;  // nominal range [-1, 1]
    int sample_rate = 0;          // Hz
};

enum class WindowKind { Hann, Rect };

WindowKind window_from_name(const std::string& name);
std::string window_name(WindowKind w);

// STFT analysis parameters. Frames are centered: the signal is reflect-padded
// by window_size/2 on both sides, so frame l is centered at sample l*hop_size
// and L = floor(len / hop_size) + 1 when window_size == fft_size.
struct StftConfig {
    int fft_size = 1024;
    int window_size = 1024;
    int hop_size = 256;
    WindowKind window = WindowKind::Hann;

    int freq_bins() const { return fft_size / 2 + 1; }
    bool operator==(const StftConfig&) const = default;
};

// Window samples (periodic form for Hann).
std::vector<double> make_window(WindowKind kind, int size);

// Largest relative deviation of sum_k w^2[n - k*hop] from its steady-state
// mean. The squared window is what synthesis normalization divides by.
double cola_deviation(const StftConfig& cfg);

// Throws ConfigError unless hop <= window <= fft, fft is a power of two and
// the window/hop pair overlap-adds to a constant within 1e-6.
void validate_stft_config(const StftConfig& cfg);

struct ComplexSpectrogram {
    CMat frames;  // F x L
    StftConfig config;

    int freq_bins() const { return static_cast<int>(frames.rows()); }
    int length() const { return static_cast<int>(frames.cols()); }
};

struct MagnitudeSpectrogram {
    Mat frames;  // F x L, entrywise >= 0
    StftConfig config;

    int freq_bins() const { return static_cast<int>(frames.rows()); }
    int length() const { return static_cast<int>(frames.cols()); }
};

struct MelFilterbank {
    Mat weights;  // M x F, entries >= 0, every row has a nonzero entry
    int mel_bins = 0;
    double freq_lo = 0.0;
    double freq_hi = 0.0;
};

struct MelSpectrogram {
    Mat frames;  // M x L, log-compressed mel energies
    int mel_bins = 0;

    int length() const { return static_cast<int>(frames.cols()); }
};

struct SnrDb {
    double value = 0.0;
};

// Log-compression floor used by mag_to_mel.
inline constexpr double kMelLogEps = 1e-5;

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Centered STFT with reflect padding. Requires wave length >= window_size.
ComplexSpectrogram stft(const Waveform& wave, const StftConfig& cfg);

// Weighted overlap-add inverse with per-sample window-square normalization.
// Returns the full synthesis extent of (L-1)*hop + window_size samples; the
// sample at index window_size/2 corresponds to the first sample of the
// signal analyzed by stft(). Throws ConfigError for a non-COLA config.
Waveform istft(const ComplexSpectrogram& spec, int sample_rate);

// istft followed by the crop that undoes stft's centering: returns exactly
// `length` samples aligned with the original analysis input.
Waveform istft_aligned(const ComplexSpectrogram& spec, int sample_rate, int length);

MagnitudeSpectrogram magnitude(const ComplexSpectrogram& spec);

// Triangular filters with edges uniformly spaced on the mel scale
// (HTK mel: 2595*log10(1 + f/700)); peak weight 1 at each center bin.
MelFilterbank build_mel_filterbank(int mel_bins, const StftConfig& cfg, int sample_rate,
                                   double freq_lo, double freq_hi);

// log(fb * mag + kMelLogEps)
MelSpectrogram mag_to_mel(const MagnitudeSpectrogram& mag, const MelFilterbank& fb);

// Phase reconstruction by alternating projection. Momentum accelerates the
// update; a candidate step whose spectral error would increase is replaced by
// the plain projection step, so the error trace is non-increasing.
Waveform griffin_lim(const MagnitudeSpectrogram& mag, int iterations, int sample_rate,
                     double momentum = 0.99);

// Same, also reporting ||| stft(x) | - mag||_F / ||mag||_F after every iteration.
Waveform griffin_lim_traced(const MagnitudeSpectrogram& mag, int iterations, int sample_rate,
                            double momentum, std::vector<double>* error_trace);

// Squared 2-norm.
double energy(const Waveform& wave);
double energy(const MagnitudeSpectrogram& mag);
double energy(const Mat& m);

// 10*log10(signal/noise). Throws DomainError when noise_energy <= 0.
SnrDb snr_db(double signal_energy, double noise_energy);

// Expected ratio energy(stft(w)) / energy(w) for a stationary signal of
// `length` samples: the one-sided spectrogram of L frames carries
// fft_size * sum(w^2) / 2 times the mean signal power per frame.
double spectrogram_energy_ratio(const StftConfig& cfg, int length);

}  // namespace enviro::dsp
