#pragma once

#include "enviro/corpus.hpp"
#include "enviro/dsp.hpp"
#include "enviro/graph.hpp"
#include "enviro/kv.hpp"
#include "enviro/params.hpp"

#include <string>
#include <utility>
#include <vector>

namespace enviro::ses {

// Masking net: input conv, `layers` pre-norm transformer blocks, two conv
// output heads with sigmoid activation. Desk-scale defaults; the full-scale
// reference configuration is layers 8, heads 16, embed 1024, ffn 2048.
struct SesConfig {
    int layers = 2;
    int heads = 4;
    int embed_dim = 128;
    int ffn_dim = 256;
    int freq_bins = 513;

    void validate() const;
    void to_kv(KvConfig& kv) const;
    static SesConfig from_kv(const KvConfig& kv);
};

// Masks are named for the component they suppress: applying the
// env-suppressing mask to a mixture keeps the speech.
struct MaskPair {
    Mat speech_suppressing_mask;  // F x L in [0,1]
    Mat env_suppressing_mask;     // F x L in [0,1]
};

params::ParamStore init_params(const SesConfig& cfg, std::uint64_t seed);

// Forward on an autodiff tape; returns {env_suppressing, speech_suppressing}
// mask vars. `mag` enters as log1p features plus sinusoidal positions.
std::pair<graph::Var, graph::Var> masks_on_tape(graph::Tape& tape, params::ParamStore& store,
                                                const SesConfig& cfg, const Mat& mag);

MaskPair masking_net_forward(const dsp::MagnitudeSpectrogram& mag, params::ParamStore& store,
                             const SesConfig& cfg);

// speech = mag (.) env_suppressing, env = mag (.) speech_suppressing.
std::pair<dsp::MagnitudeSpectrogram, dsp::MagnitudeSpectrogram> apply_masks(
    const dsp::MagnitudeSpectrogram& mag, const MaskPair& masks);

// Same split on the complex spectrogram, so waveform rendering keeps the
// mixture phase.
std::pair<dsp::ComplexSpectrogram, dsp::ComplexSpectrogram> apply_masks_complex(
    const dsp::ComplexSpectrogram& spec, const MaskPair& masks);

// Ideal-ratio masks from known components.
MaskPair oracle_masks(const dsp::MagnitudeSpectrogram& clean_mag,
                      const dsp::MagnitudeSpectrogram& env_mag, double eps = 1e-8);

// stft -> magnitude -> mask -> split -> mel on both branches.
std::pair<dsp::MelSpectrogram, dsp::MelSpectrogram> separate_to_mel(
    const dsp::Waveform& wave, params::ParamStore& store, const SesConfig& cfg,
    const dsp::StftConfig& stft_cfg, const dsp::MelFilterbank& fb);

// Same split with oracle masks computed from known components (test path).
std::pair<dsp::MelSpectrogram, dsp::MelSpectrogram> separate_to_mel_oracle(
    const dsp::Waveform& mixture, const dsp::Waveform& clean, const dsp::Waveform& env,
    const dsp::StftConfig& stft_cfg, const dsp::MelFilterbank& fb);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct Triple {
    Mat mix_mag;
    Mat clean_mag;
    Mat env_mag;
};

struct SesTrainConfig {
    SesConfig model;
    dsp::StftConfig stft;
    params::AdamConfig adam;
    int steps = 2000;
    int batch_size = 4;
    std::uint64_t seed = 1;
    // "reconstruction": MSE of masked magnitudes against true components.
    // "oracle_mask": MSE of predicted masks against ideal-ratio masks.
    std::string loss_mode = "reconstruction";
    int checkpoint_every = 0;  // 0 = final only
    std::string out_dir;       // empty = keep everything in memory
    std::string resume_from;
    int sample_rate = 24000;
};

struct TrainLogEntry {
    int step = 0;
    double loss = 0.0;
    double wall_ms = 0.0;
};

// Scalar loss for one triple; when backward is set, gradients scaled by
// grad_scale are accumulated into the store.
double item_loss(graph::Tape& tape, params::ParamStore& store, const SesConfig& cfg,
                 const Triple& triple, const std::string& loss_mode, bool backward,
                 double grad_scale);

// Runs the loop; batch composition at step s derives from mix(seed, s), so a
// resumed run sees the same data stream as an uninterrupted one.
params::ParamStore train_ses(const std::vector<Triple>& corpus, const SesTrainConfig& cfg,
                             std::vector<TrainLogEntry>* log = nullptr);

std::vector<Triple> load_triples(const std::string& manifest_path,
                                 const dsp::StftConfig& stft_cfg, int max_items = 0);

void save_ses_checkpoint(const std::string& path, const SesConfig& cfg,
                         const dsp::StftConfig& stft_cfg, int sample_rate,
                         const params::ParamStore& store, const params::Adam* opt = nullptr);

struct LoadedSes {
    SesConfig config;
    dsp::StftConfig stft;
    int sample_rate = 24000;
    params::ParamStore store;
};

LoadedSes load_ses_checkpoint(const std::string& path, params::Adam* opt = nullptr);

}  // namespace enviro::ses
