#pragma once

#include "enviro/dsp.hpp"
#include "enviro/net.hpp"
#include "enviro/params.hpp"
#include "enviro/ses.hpp"

#include <functional>
#include <string>

namespace enviro::infer {

struct GuidanceConfig {
    double alpha_speech = 2.0;
    double alpha_env = 2.0;
    int ode_steps = 32;
    void validate() const;
};

struct ScaleFactor {
    double value = 1.0;
};

// Gain for the separated environment magnitude so that the synthesized
// mixture's speech-to-environment ratio matches the environment prompt's
// own: sqrt(E(spk_speech) / E(env_speech)). env_bg participates only in the
// degeneracy check; zero energy anywhere is an error.
ScaleFactor snr_scale_factor(const dsp::MagnitudeSpectrogram& spk_speech_mag,
                             const dsp::MagnitudeSpectrogram& env_speech_mag,
                             const dsp::MagnitudeSpectrogram& env_bg_mag);

// Guided velocity: conditional + alpha_speech * (speech-only - unconditional)
// + alpha_env * (env-only - unconditional). Exactly four model evaluations;
// forward_count (when given) is incremented per evaluation.
Mat dcfg_velocity(const Mat& x, double t, const net::ConditionSet& cond,
                  const GuidanceConfig& guidance, params::ParamStore& store,
                  const net::DitConfig& cfg, int* forward_count = nullptr);

// Explicit Euler from t=0 to t=1: x += (1/steps) * field(x, k/steps).
// Non-finite state raises a domain error naming the failing step.
Mat ode_solve(const Mat& x0, const std::function<Mat(const Mat&, double)>& field, int steps);

// Log-mel inversion: undo the log compression, then lift through the
// filterbank's right pseudo-inverse; negative energies clip to zero.
Mat mel_to_linear(const Mat& log_mel, const dsp::MelFilterbank& fb);

// Flat binary spectrogram dump: "ENVIRO-MEL-V1 <rows> <cols>" header line,
// then float32 little-endian values, column-major.
void write_mel_dump(const std::string& path, const Mat& mel);
Mat read_mel_dump(const std::string& path);

struct SynthesisRequest {
    dsp::Waveform speaker_prompt;
    dsp::Waveform env_prompt;
    std::string ref_text;
    std::string gen_text;
    GuidanceConfig guidance;
    bool snr_adapt = false;
    std::uint64_t seed = 0;
    int griffin_lim_iters = 60;
};

struct SynthesisResult {
    dsp::Waveform wave;  // generated segment only
    Mat gen_mel;         // log-mel of the generated segment, M x L_gen
    Mat full_mel;        // log-mel including the prompt region
    int ref_frames = 0;
    double scale_applied = 1.0;  // 1.0 when SNR adaptation did not fire
};

// Loaded model pair plus the shared front-end settings.
struct Synthesizer {
    ses::LoadedSes separation;
    net::LoadedDit velocity;
    dsp::StftConfig stft;
    dsp::MelFilterbank fb;
    int sample_rate = 24000;
    double mel_offset = -4.0;  // model space = (log_mel - offset) / scale
    double mel_scale = 4.0;
};

Synthesizer make_synthesizer(const std::string& ses_ckpt, const std::string& dit_ckpt);

// Full pipeline: separate both prompts, optionally rescale the environment
// branch, build conditions, integrate the guided ODE from seeded noise, drop
// the prompt region, and reconstruct a waveform.
SynthesisResult synthesize(Synthesizer& synth, const SynthesisRequest& request);

// Duration rule: L_gen = round(L_ref * gen_tokens / ref_tokens), clamped to
// [0.3, 10] * L_ref and to at least 1.
int generated_frames(int ref_frames, int ref_tokens, int gen_tokens);

}  // namespace enviro::infer
