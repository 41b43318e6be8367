#pragma once

#include "enviro/corpus.hpp"
#include "enviro/graph.hpp"
#include "enviro/kv.hpp"
#include "enviro/params.hpp"

#include <optional>
#include <vector>

namespace enviro::net {

// Velocity model: transformer blocks with timestep-modulated self-attention
// and feed-forward sublayers, plus cross-attention to the environment
// condition between them. Desk-scale defaults.
struct DitConfig {
    int layers = 4;
    int heads = 4;
    int embed_dim = 192;
    int ffn_dim = 384;
    int mel_bins = 80;
    int vocab_size = corpus::Vocab::size() + 1;  // trailing id = learned null text
    int time_embed_dim = 192;

    static constexpr int kConvPosKernel = 9;

    int null_text_id() const { return vocab_size - 1; }
    void validate() const;
    void to_kv(KvConfig& kv) const;
    static DitConfig from_kv(const KvConfig& kv);
};

// Absent optionals mean the null condition; the forward pass splices in the
// learned null embeddings, so null_out(cond) and an explicit splice agree
// exactly.
struct ConditionSet {
    std::optional<std::vector<int>> text;  // length L
    std::optional<Mat> speaker_mel;        // M x L, zero-filled at masked frames
    std::optional<Mat> env_mel;            // M x L_env, any L_env >= 1
};

// Text and speaker drop together; env drops independently.
ConditionSet null_out(const ConditionSet& cond, bool drop_text_speaker, bool drop_env);

// Sinusoidal embedding, frequencies geometric in [1, 1e4]. t outside [0,1]
// is a domain error.
Vec embed_timestep(double t, int dim);

params::ParamStore init_params(const DitConfig& cfg, std::uint64_t seed);
std::size_t param_count(const DitConfig& cfg);

// Forward pass on a tape; x_t must be a var of shape M x L.
graph::Var forward_on_tape(graph::Tape& tape, params::ParamStore& store, const DitConfig& cfg,
                           graph::Var x_t, double t, const ConditionSet& cond);

// Convenience wrapper for inference.
Mat forward(const Mat& x_t, double t, const ConditionSet& cond, params::ParamStore& store,
            const DitConfig& cfg);

void save_dit_checkpoint(const std::string& path, const DitConfig& cfg, const KvConfig& extra,
                         const params::ParamStore& store, const params::Adam* opt = nullptr);

struct LoadedDit {
    DitConfig config;
    KvConfig meta;
    params::ParamStore store;
};

LoadedDit load_dit_checkpoint(const std::string& path, params::Adam* opt = nullptr);

}  // namespace enviro::net
