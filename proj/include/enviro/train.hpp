#pragma once

#include "enviro/corpus.hpp"
#include "enviro/graph.hpp"
#include "enviro/net.hpp"
#include "enviro/params.hpp"
#include "enviro/rng.hpp"
#include "enviro/ses.hpp"

#include <string>
#include <vector>

namespace enviro::train {

struct FlowPoint {
    Mat x0;     // standard normal noise
    Mat x1;     // target mel
    double t = 0.0;
    Mat psi_t;  // (1-t)*x0 + t*x1, exact
};

FlowPoint make_flow_point(const Mat& x1, double t, Rng& rng);

struct TrainItem {
    Mat x1;     // M x L
    Mat c_spk;  // M x L
    Mat c_env;  // M x L
    corpus::TextSequence text;  // length L
    corpus::SpanMask m_spk;
    corpus::SpanMask m_env;
};

// Condition dropout, drawn mutually exclusively in priority order:
// all-null, then env-null, then speech/text-null.
struct DropoutPolicy {
    double p_all_null = 0.1;
    double p_env_null = 0.1;
    double p_speech_text_null = 0.1;
    void validate() const;
};

enum class ConditionPattern { Full, EnvNull, SpeechTextNull, AllNull };

ConditionPattern draw_pattern(const DropoutPolicy& policy, Rng& rng);

// Condition set for an item under a pattern: speaker mel zero-filled at
// masked frames, env mel zero-filled at its own masked frames, text always
// paired with the speaker branch.
net::ConditionSet make_conditions(const TrainItem& item, ConditionPattern pattern);

struct CfmLossResult {
    double value = 0.0;
    bool empty_mask = false;
};

// Masked regression of the velocity onto x1 - x0: mean squared error over
// masked entries only. With an empty mask the loss is 0 and flagged; no
// gradient flows anywhere.
CfmLossResult cfm_loss_on_tape(graph::Tape& tape, params::ParamStore& store,
                               const net::DitConfig& cfg, const TrainItem& item,
                               const FlowPoint& flow, ConditionPattern pattern,
                               bool backward, double grad_scale);

CfmLossResult cfm_loss(params::ParamStore& store, const net::DitConfig& cfg,
                       const TrainItem& item, const FlowPoint& flow,
                       ConditionPattern pattern = ConditionPattern::Full);

// Preprocessed corpus entry: normalized mels plus raw text.
struct CorpusEntry {
    Mat x1;
    Mat c_spk;
    Mat c_env;
    std::string text;
};

struct TrainLogEntry {
    int step = 0;
    double loss = 0.0;
    double wall_ms = 0.0;
};

struct TtsTrainConfig {
    net::DitConfig model;
    params::AdamConfig adam;
    DropoutPolicy dropout;
    double mask_ratio_lo = 0.7;
    double mask_ratio_hi = 1.0;
    int steps = 10000;
    int batch_size = 4;
    std::uint64_t seed = 1;
    int checkpoint_every = 0;  // 0 = final only
    std::string out_dir;       // empty = in-memory only
    std::string resume_from;
    KvConfig meta;  // carried into checkpoints (stft, mel normalization, ...)
};

// Velocity-model training loop. Step s derives every draw (batch indices, t,
// masks, noise, dropout) from mix(seed, s), so resumed and uninterrupted
// runs see identical data.
params::ParamStore train_tts(const std::vector<CorpusEntry>& data, const TtsTrainConfig& cfg,
                             std::vector<TrainLogEntry>* log = nullptr);

// Central-difference verification over randomly sampled parameters; returns
// the maximum relative error. Leaves params as it found them.
double gradient_check(params::ParamStore& store, const net::DitConfig& cfg,
                      const TrainItem& item, const FlowPoint& flow, double epsilon,
                      int n_samples, std::uint64_t seed);

// Mel front-end settings shared by data prep and inference. Model space is
// (log_mel - offset) / scale.
struct MelSettings {
    dsp::StftConfig stft;
    int mel_bins = 80;
    int sample_rate = 24000;
    double freq_lo = 0.0;
    double freq_hi = 12000.0;
    double offset = -4.0;
    double scale = 4.0;

    dsp::MelFilterbank filterbank() const;
    Mat normalize(const Mat& log_mel) const;
    Mat denormalize(const Mat& model_mel) const;
    void to_kv(KvConfig& kv) const;
    static MelSettings from_kv(const KvConfig& kv);
};

// Manifest rows -> training entries: x1 is the mixture's normalized mel and
// the condition pair comes from separating the mixture, with the trained
// masking net when `separator` is given, otherwise with ideal-ratio masks
// built from the manifest's component files.
std::vector<CorpusEntry> prepare_corpus(const std::string& manifest_path,
                                        const MelSettings& mel, ses::LoadedSes* separator,
                                        int max_items = 0);

}  // namespace enviro::train
