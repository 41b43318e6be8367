#pragma once

#include "enviro/dsp.hpp"
#include "enviro/rng.hpp"

#include <optional>
#include <string>
#include <vector>

namespace enviro::corpus {

// ---------------------------------------------------------------------------
// Text
// ---------------------------------------------------------------------------

// Character vocabulary: 'a'..'h' -> 0..7, then reserved unknown and fill ids.
struct Vocab {
    static constexpr int kToneTokens = 8;
    static constexpr int unknown_id() { return kToneTokens; }
    static constexpr int fill_id() { return kToneTokens + 1; }
    static constexpr int size() { return kToneTokens + 2; }

    static int char_to_id(char c);
    static char id_to_char(int id);  // '?' for unknown, '_' for fill
    static std::vector<int> tokenize(const std::string& text);
};

struct TextSequence {
    std::vector<int> tokens;  // length L, ids within [0, Vocab::size())
    int length() const { return static_cast<int>(tokens.size()); }
};

// tokens followed by fill padding to exactly L. Throws DomainError when the
// tokenized text exceeds L.
TextSequence extend_text(const std::string& text, int L);

// ---------------------------------------------------------------------------
// Span masks
// ---------------------------------------------------------------------------

struct SpanMask {
    std::vector<int> flags;  // 0/1, masked positions form one contiguous run

    int length() const { return static_cast<int>(flags.size()); }
    int masked_count() const;
    bool empty_mask() const { return masked_count() == 0; }
    // First masked index and one-past-last; (0,0) for the empty mask.
    int span_begin() const;
    int span_end() const;
    Vec as_vec() const;  // flags as doubles
};

// One contiguous span of round(r*L) frames, r ~ U[ratio_lo, ratio_hi], start
// uniform over valid offsets. Draw order: ratio, then start.
SpanMask sample_span_mask(int L, double ratio_lo, double ratio_hi, Rng& rng);

// ---------------------------------------------------------------------------
// Mixing
// ---------------------------------------------------------------------------

struct MixSpec {
    double augment_prob = 0.5;
    double train_snr_lo = -5.0;
    double train_snr_hi = 15.0;
    double eval_snr_lo = 0.0;
    double eval_snr_hi = 20.0;
};

struct MixResult {
    dsp::Waveform mixture;
    dsp::Waveform env_scaled;  // the env component actually added (zeros when silent)
    std::optional<double> snr_db;  // empty when the env branch is silence
};

// Scales env so 10*log10(E_clean / E_env_scaled) == snr exactly, then adds.
// env longer than clean is randomly cropped; shorter is looped with a 10 ms
// crossfade before cropping. Draw order: crop start only (single rng use).
MixResult mix_at_snr(const dsp::Waveform& clean, const dsp::Waveform& env, double snr, Rng& rng);

// With probability augment_prob mixes at a uniform train-range SNR against a
// uniformly chosen pool entry; otherwise returns the clean signal with a
// silent env. Draw order: coin, pool index, snr, then mix_at_snr's crop.
MixResult augment(const dsp::Waveform& clean, const std::vector<dsp::Waveform>& env_pool,
                  const MixSpec& spec, Rng& rng);

// ---------------------------------------------------------------------------
// Tone-coded synthetic speech
// ---------------------------------------------------------------------------

// Token k sounds as a harmonic stack on f0 = 240 * 2^(k/3) Hz, harmonics
// x1/x2/x3 at relative amplitudes 1/0.5/0.25, peak amplitude 0.25. One token
// spans frames_per_token STFT frames; the rendered length is exactly
// (n_tokens * frames_per_token - 1) * hop samples so analysis yields
// n_tokens * frames_per_token frames. Token edges get 10 ms cosine ramps.
struct ToneSpec {
    int sample_rate = 24000;
    int hop_size = 256;
    int frames_per_token = 16;
};

double tone_frequency(int token_id);

dsp::Waveform render_tones(const std::vector<int>& tokens, const ToneSpec& spec);

// Classifies each token span by harmonic band energy of the spectrogram.
// The wave must cover at least n_tokens * frames_per_token frames.
std::vector<int> decode_tones(const dsp::Waveform& wave, int n_tokens, const ToneSpec& spec,
                              const dsp::StftConfig& stft_cfg);

// Band-limited noise: `partials` random-phase sinusoids drawn uniformly in
// [band_lo, band_hi] Hz, slow amplitude modulation 0.65 + 0.35*sin at a rate
// drawn from [0.5, 2] Hz, RMS normalized to 0.1.
dsp::Waveform render_band_noise(int length, int sample_rate, double band_lo, double band_hi,
                                int partials, Rng& rng);

// ---------------------------------------------------------------------------
// Desk corpus
// ---------------------------------------------------------------------------

struct CorpusSpec {
    int n_items = 500;
    int min_tokens = 4;
    int max_tokens = 6;
    ToneSpec tone;
    MixSpec mix;
    int noise_partials = 48;
    std::uint64_t seed = 1;
    std::string out_dir;  // receives WAVs and manifest.tsv
};

// Noise bands are disjoint from the tone harmonics (<= 3630 Hz).
inline constexpr double kNoiseBands[3][2] = {
    {4500.0, 6500.0}, {7000.0, 9500.0}, {10000.0, 11500.0}};

struct CorpusItem {
    std::string id;
    std::string clean_path;
    std::string env_path;
    std::string mixture_path;
    std::optional<double> snr_db;  // empty = silent env
    std::string text;
};

// Renders every item (one rng stream per item index), writes float32 WAVs
// into spec.out_dir and a manifest.tsv; returns the manifest records.
std::vector<CorpusItem> build_desk_corpus(const CorpusSpec& spec);

// Manifest: one record per line, tab-separated
// {id, clean_path, env_path, mixture_path, snr_db|inf, text}.
void write_manifest(const std::string& path, const std::vector<CorpusItem>& items);
std::vector<CorpusItem> read_manifest(const std::string& path);

// Paths inside a manifest are relative to its directory.
std::string resolve_manifest_path(const std::string& manifest_path, const std::string& entry);

}  // namespace enviro::corpus
