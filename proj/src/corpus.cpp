#include "enviro/corpus.hpp"

#include "enviro/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace enviro::corpus {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

int Vocab::char_to_id(char c) {
    if (c >= 'a' && c < 'a' + kToneTokens) return c - 'a';
    return unknown_id();
}

char Vocab::id_to_char(int id) {
    if (id >= 0 && id < kToneTokens) return static_cast<char>('a' + id);
    if (id == fill_id()) return '_';
    return '?';
}

std::vector<int> Vocab::tokenize(const std::string& text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(char_to_id(c));
    return ids;
}

TextSequence extend_text(const std::string& text, int L) {
    if (L < 0) throw DomainError("extend_text: negative length");
    std::vector<int> ids = Vocab::tokenize(text);
    if (static_cast<int>(ids.size()) > L)
        throw DomainError("text of " + std::to_string(ids.size()) +
                          " tokens does not fit in " + std::to_string(L) + " frames");
    ids.resize(static_cast<std::size_t>(L), Vocab::fill_id());
    return TextSequence{std::move(ids)};
}

int SpanMask::masked_count() const {
    int n = 0;
    for (int f : flags) n += f;
    return n;
}

int SpanMask::span_begin() const {
    for (int i = 0; i < length(); ++i)
        if (flags[static_cast<std::size_t>(i)]) return i;
    return 0;
}

int SpanMask::span_end() const {
    for (int i = length(); i > 0; --i)
        if (flags[static_cast<std::size_t>(i) - 1]) return i;
    return 0;
}

Vec SpanMask::as_vec() const {
    Vec v(length());
    for (int i = 0; i < length(); ++i) v(i) = flags[static_cast<std::size_t>(i)];
    return v;
}

SpanMask sample_span_mask(int L, double ratio_lo, double ratio_hi, Rng& rng) {
    if (L < 1) throw DomainError("sample_span_mask: L must be >= 1");
    if (!(0.0 <= ratio_lo && ratio_lo <= ratio_hi && ratio_hi <= 1.0))
        throw DomainError("sample_span_mask: ratio range must satisfy 0 <= lo <= hi <= 1");
    const double r = rng.uniform(ratio_lo, ratio_hi);
    const int span = static_cast<int>(std::lround(r * L));
    SpanMask mask;
    mask.flags.assign(static_cast<std::size_t>(L), 0);
    if (span == 0) return mask;
    const int start = span >= L ? 0 : static_cast<int>(rng.uniform_int(0, L - span));
    for (int i = start; i < start + span && i < L; ++i)
        mask.flags[static_cast<std::size_t>(i)] = 1;
    return mask;
}

namespace {

// Loop `env` with a 10 ms linear crossfade until it covers `needed` samples.
std::vector<double> loop_with_crossfade(const std::vector<double>& env, int sample_rate,
                                        std::size_t needed) {
    std::vector<double> out = env;
    const std::size_t fade =
        std::min<std::size_t>(static_cast<std::size_t>(sample_rate / 100), env.size() / 2);
    while (out.size() < needed) {
        const std::size_t base = out.size() - fade;
        for (std::size_t i = 0; i < fade; ++i) {
            const double a = static_cast<double>(i + 1) / static_cast<double>(fade + 1);
            out[base + i] = out[base + i] * (1.0 - a) + env[i] * a;
        }
        out.insert(out.end(), env.begin() + static_cast<std::ptrdiff_t>(fade), env.end());
    }
    return out;
}

}  // namespace

MixResult mix_at_snr(const dsp::Waveform& clean, const dsp::Waveform& env, double snr,
                     Rng& rng) {
    if (clean.sample_rate != env.sample_rate)
        throw DomainError("mix_at_snr: sample rates differ");
    if (clean.samples.empty()) throw DomainError("mix_at_snr: empty clean signal");
    if (!std::isfinite(snr)) throw DomainError("mix_at_snr: non-finite snr");

    std::vector<double> env_samples = env.samples;
    if (env_samples.size() < clean.samples.size()) {
        if (env_samples.empty()) throw DomainError("mix_at_snr: empty env signal");
        env_samples = loop_with_crossfade(env_samples, env.sample_rate, clean.samples.size());
    }
    const std::size_t slack = env_samples.size() - clean.samples.size();
    const std::size_t start =
        slack == 0 ? 0 : static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(slack)));
    std::vector<double> crop(env_samples.begin() + static_cast<std::ptrdiff_t>(start),
                             env_samples.begin() + static_cast<std::ptrdiff_t>(start) +
                                 static_cast<std::ptrdiff_t>(clean.samples.size()));

    double e_clean = 0.0, e_env = 0.0;
    for (double s : clean.samples) e_clean += s * s;
    for (double s : crop) e_env += s * s;
    if (e_clean <= 0.0) throw DomainError("mix_at_snr: silent clean signal, SNR undefined");
    if (e_env <= 0.0) throw DomainError("mix_at_snr: silent env crop, SNR undefined");

    const double g = std::sqrt(e_clean / (e_env * std::pow(10.0, snr / 10.0)));

    MixResult res;
    res.snr_db = snr;
    res.env_scaled.sample_rate = clean.sample_rate;
    res.mixture.sample_rate = clean.sample_rate;
    res.env_scaled.samples.resize(crop.size());
    res.mixture.samples.resize(crop.size());
    for (std::size_t i = 0; i < crop.size(); ++i) {
        const double e = g * crop[i];
        res.env_scaled.samples[i] = e;
        res.mixture.samples[i] = clean.samples[i] + e;
    }
    return res;
}

MixResult augment(const dsp::Waveform& clean, const std::vector<dsp::Waveform>& env_pool,
                  const MixSpec& spec, Rng& rng) {
    if (env_pool.empty()) throw ConfigError("augment: empty env pool");
    if (!(spec.augment_prob >= 0.0 && spec.augment_prob <= 1.0))
        throw ConfigError("augment: probability outside [0,1]");
    const double coin = rng.uniform();
    if (coin < spec.augment_prob) {
        const auto idx = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(env_pool.size()) - 1));
        const double snr = rng.uniform(spec.train_snr_lo, spec.train_snr_hi);
        return mix_at_snr(clean, env_pool[idx], snr, rng);
    }
    MixResult res;
    res.mixture = clean;
    res.env_scaled.sample_rate = clean.sample_rate;
    res.env_scaled.samples.assign(clean.samples.size(), 0.0);
    res.snr_db = std::nullopt;
    return res;
}

double tone_frequency(int token_id) {
    if (token_id < 0 || token_id >= Vocab::kToneTokens)
        throw DomainError("tone_frequency: token id " + std::to_string(token_id) +
                          " has no tone");
    return 240.0 * std::pow(2.0, token_id / 3.0);
}

dsp::Waveform render_tones(const std::vector<int>& tokens, const ToneSpec& spec) {
    if (tokens.empty()) throw DomainError("render_tones: no tokens");
    const int span = spec.frames_per_token * spec.hop_size;  // samples per token
    const int total_frames = static_cast<int>(tokens.size()) * spec.frames_per_token;
    const int length = (total_frames - 1) * spec.hop_size;
    const int ramp = spec.sample_rate / 100;  // 10 ms

    dsp::Waveform wave;
    wave.sample_rate = spec.sample_rate;
    wave.samples.assign(static_cast<std::size_t>(length), 0.0);

    static constexpr double kHarmonicAmp[3] = {1.0, 0.5, 0.25};
    for (std::size_t tok = 0; tok < tokens.size(); ++tok) {
        const double f0 = tone_frequency(tokens[tok]);
        const int seg_start = static_cast<int>(tok) * span;
        const int seg_end = std::min(seg_start + span, length);
        const int seg_len = seg_end - seg_start;
        for (int s = 0; s < seg_len; ++s) {
            const double tsec = static_cast<double>(s) / spec.sample_rate;
            double v = 0.0;
            for (int h = 0; h < 3; ++h)
                v += kHarmonicAmp[h] * std::sin(kTwoPi * f0 * (h + 1) * tsec);
            double envl = 1.0;
            if (s < ramp) envl = 0.5 * (1.0 - std::cos(std::numbers::pi * s / ramp));
            const int from_end = seg_len - 1 - s;
            if (from_end < ramp)
                envl = std::min(envl, 0.5 * (1.0 - std::cos(std::numbers::pi * from_end / ramp)));
            wave.samples[static_cast<std::size_t>(seg_start + s)] = 0.25 * envl * v;
        }
    }
    return wave;
}

std::vector<int> decode_tones(const dsp::Waveform& wave, int n_tokens, const ToneSpec& spec,
                              const dsp::StftConfig& stft_cfg) {
    if (n_tokens < 1) throw DomainError("decode_tones: need at least one token");
    const dsp::MagnitudeSpectrogram mag = dsp::magnitude(dsp::stft(wave, stft_cfg));
    const int L = mag.length();
    if (L < n_tokens * spec.frames_per_token)
        throw ShapeError("decode_tones: " + std::to_string(L) + " frames cannot cover " +
                         std::to_string(n_tokens) + " tokens");

    // Interior frames only; token boundaries smear across the window.
    const int S = spec.frames_per_token;
    const int guard = std::min(2, S / 4);
    static constexpr double kHarmonicAmp[3] = {1.0, 0.5, 0.25};

    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(n_tokens));
    for (int tok = 0; tok < n_tokens; ++tok) {
        const int lo = tok * S + guard;
        const int hi = (tok + 1) * S - guard;
        Vec profile = Vec::Zero(mag.freq_bins());
        for (int l = lo; l < hi; ++l) profile += mag.frames.col(l);

        int best = 0;
        double best_score = -1.0;
        for (int k = 0; k < Vocab::kToneTokens; ++k) {
            const double f0 = tone_frequency(k);
            double score = 0.0;
            for (int h = 1; h <= 3; ++h) {
                const int bin = static_cast<int>(
                    std::lround(f0 * h * stft_cfg.fft_size / wave.sample_rate));
                for (int b = std::max(0, bin - 1);
                     b <= std::min(mag.freq_bins() - 1, bin + 1); ++b)
                    score += kHarmonicAmp[h - 1] * profile(b);
            }
            if (score > best_score) {
                best_score = score;
                best = k;
            }
        }
        out.push_back(best);
    }
    return out;
}

dsp::Waveform render_band_noise(int length, int sample_rate, double band_lo, double band_hi,
                                int partials, Rng& rng) {
    if (length < 1) throw DomainError("render_band_noise: empty length");
    if (!(0.0 < band_lo && band_lo < band_hi && band_hi <= sample_rate / 2.0))
        throw DomainError("render_band_noise: bad band");
    if (partials < 1) throw DomainError("render_band_noise: need partials");

    std::vector<double> freq(static_cast<std::size_t>(partials));
    std::vector<double> phase(static_cast<std::size_t>(partials));
    for (int j = 0; j < partials; ++j) {
        freq[static_cast<std::size_t>(j)] = rng.uniform(band_lo, band_hi);
        phase[static_cast<std::size_t>(j)] = rng.uniform(0.0, kTwoPi);
    }
    const double am_rate = rng.uniform(0.5, 2.0);
    const double am_phase = rng.uniform(0.0, kTwoPi);

    dsp::Waveform wave;
    wave.sample_rate = sample_rate;
    wave.samples.resize(static_cast<std::size_t>(length));
    double sum_sq = 0.0;
    for (int s = 0; s < length; ++s) {
        const double tsec = static_cast<double>(s) / sample_rate;
        double v = 0.0;
        for (int j = 0; j < partials; ++j)
            v += std::sin(kTwoPi * freq[static_cast<std::size_t>(j)] * tsec +
                          phase[static_cast<std::size_t>(j)]);
        const double am = 0.65 + 0.35 * std::sin(kTwoPi * am_rate * tsec + am_phase);
        const double out = v * am;
        wave.samples[static_cast<std::size_t>(s)] = out;
        sum_sq += out * out;
    }
    const double rms = std::sqrt(sum_sq / length);
    const double gain = rms > 0.0 ? 0.1 / rms : 0.0;
    for (double& s : wave.samples) s *= gain;
    return wave;
}

namespace {

std::string item_file(const std::string& id, const char* kind) {
    return id + "_" + kind + ".wav";
}

std::string format_snr(const std::optional<double>& snr) {
    if (!snr) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", *snr);
    return buf;
}

}  // namespace

std::vector<CorpusItem> build_desk_corpus(const CorpusSpec& spec) {
    if (spec.n_items < 1) throw ConfigError("corpus needs at least one item");
    if (spec.min_tokens < 1 || spec.min_tokens > spec.max_tokens)
        throw ConfigError("corpus token count range is invalid");
    if (spec.out_dir.empty()) throw ConfigError("corpus out_dir is empty");
    std::filesystem::create_directories(spec.out_dir);

    std::vector<CorpusItem> items;
    items.reserve(static_cast<std::size_t>(spec.n_items));
    for (int i = 0; i < spec.n_items; ++i) {
        Rng rng(Rng::mix(spec.seed, static_cast<std::uint64_t>(i)));

        const int n_tok =
            static_cast<int>(rng.uniform_int(spec.min_tokens, spec.max_tokens));
        std::vector<int> tokens(static_cast<std::size_t>(n_tok));
        std::string text;
        for (int t = 0; t < n_tok; ++t) {
            tokens[static_cast<std::size_t>(t)] =
                static_cast<int>(rng.uniform_int(0, Vocab::kToneTokens - 1));
            text += Vocab::id_to_char(tokens[static_cast<std::size_t>(t)]);
        }
        const dsp::Waveform clean = render_tones(tokens, spec.tone);

        const int band = static_cast<int>(rng.uniform_int(0, 2));
        const dsp::Waveform env_raw = render_band_noise(
            static_cast<int>(clean.samples.size()), spec.tone.sample_rate,
            kNoiseBands[band][0], kNoiseBands[band][1], spec.noise_partials, rng);

        const MixResult mixed = augment(clean, {env_raw}, spec.mix, rng);

        char id[32];
        std::snprintf(id, sizeof(id), "item_%05d", i);
        CorpusItem item;
        item.id = id;
        item.text = text;
        item.snr_db = mixed.snr_db;
        item.clean_path = item_file(item.id, "clean");
        item.env_path = item_file(item.id, "env");
        item.mixture_path = item_file(item.id, "mix");

        const std::filesystem::path dir(spec.out_dir);
        wav::write_float32((dir / item.clean_path).string(), clean);
        wav::write_float32((dir / item.env_path).string(), mixed.env_scaled);
        wav::write_float32((dir / item.mixture_path).string(), mixed.mixture);
        items.push_back(std::move(item));
    }
    write_manifest((std::filesystem::path(spec.out_dir) / "manifest.tsv").string(), items);
    return items;
}

void write_manifest(const std::string& path, const std::vector<CorpusItem>& items) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (const auto& it : items)
        out << it.id << "\t" << it.clean_path << "\t" << it.env_path << "\t"
            << it.mixture_path << "\t" << format_snr(it.snr_db) << "\t" << it.text << "\n";
    if (!out.good()) throw IoError("write failed for " + path);
}

std::vector<CorpusItem> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    std::vector<CorpusItem> items;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream row(line);
        CorpusItem it;
        std::string snr;
        if (!std::getline(row, it.id, '\t') || !std::getline(row, it.clean_path, '\t') ||
            !std::getline(row, it.env_path, '\t') ||
            !std::getline(row, it.mixture_path, '\t') || !std::getline(row, snr, '\t') ||
            !std::getline(row, it.text))
            throw IoError(path + " line " + std::to_string(lineno) + ": malformed record");
        if (snr == "inf") {
            it.snr_db = std::nullopt;
        } else {
            try {
                it.snr_db = std::stod(snr);
            } catch (const std::exception&) {
                throw IoError(path + " line " + std::to_string(lineno) + ": bad snr: " + snr);
            }
        }
        items.push_back(std::move(it));
    }
    return items;
}

std::string resolve_manifest_path(const std::string& manifest_path, const std::string& entry) {
    const std::filesystem::path p(entry);
    if (p.is_absolute()) return entry;
    return (std::filesystem::path(manifest_path).parent_path() / p).string();
}

}  // namespace enviro::corpus
