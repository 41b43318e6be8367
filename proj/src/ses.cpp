#include "enviro/ses.hpp"

#include "enviro/nn.hpp"
#include "enviro/rng.hpp"
#include "enviro/wav.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>

namespace enviro::ses {

void SesConfig::validate() const {
    if (layers < 1) throw ConfigError("ses: layers must be >= 1");
    if (heads < 1 || embed_dim % heads != 0)
        throw ConfigError("ses: embed_dim must be divisible by heads");
    if (ffn_dim < 1 || freq_bins < 2) throw ConfigError("ses: bad ffn_dim or freq_bins");
}

void SesConfig::to_kv(KvConfig& kv) const {
    kv.set("ses.layers", std::to_string(layers));
    kv.set("ses.heads", std::to_string(heads));
    kv.set("ses.embed_dim", std::to_string(embed_dim));
    kv.set("ses.ffn_dim", std::to_string(ffn_dim));
    kv.set("ses.freq_bins", std::to_string(freq_bins));
}

SesConfig SesConfig::from_kv(const KvConfig& kv) {
    SesConfig cfg;
    cfg.layers = kv.get_int("ses.layers", cfg.layers);
    cfg.heads = kv.get_int("ses.heads", cfg.heads);
    cfg.embed_dim = kv.get_int("ses.embed_dim", cfg.embed_dim);
    cfg.ffn_dim = kv.get_int("ses.ffn_dim", cfg.ffn_dim);
    cfg.freq_bins = kv.get_int("ses.freq_bins", cfg.freq_bins);
    cfg.validate();
    return cfg;
}

namespace {

constexpr int kConvKernel = 3;

std::string blk(int i, const char* suffix) {
    return "blk" + std::to_string(i) + "." + suffix;
}

}  // namespace

params::ParamStore init_params(const SesConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(Rng::mix(seed, 0x5e5u));
    params::ParamStore store;
    store.add("in_conv.w", nn::xavier(cfg.embed_dim, cfg.freq_bins * kConvKernel, rng));
    store.add("in_conv.b", Mat::Zero(cfg.embed_dim, 1));
    for (int i = 0; i < cfg.layers; ++i) {
        nn::add_layernorm_params(store, blk(i, "ln1"), cfg.embed_dim);
        nn::add_attention_params(store, blk(i, "attn"), cfg.embed_dim, cfg.embed_dim, rng);
        nn::add_layernorm_params(store, blk(i, "ln2"), cfg.embed_dim);
        store.add(blk(i, "ffn.w1"), nn::xavier(cfg.ffn_dim, cfg.embed_dim, rng));
        store.add(blk(i, "ffn.b1"), Mat::Zero(cfg.ffn_dim, 1));
        store.add(blk(i, "ffn.w2"), nn::xavier(cfg.embed_dim, cfg.ffn_dim, rng));
        store.add(blk(i, "ffn.b2"), Mat::Zero(cfg.embed_dim, 1));
    }
    store.add("out_env_suppress.w", nn::xavier(cfg.freq_bins, cfg.embed_dim * kConvKernel, rng));
    store.add("out_env_suppress.b", Mat::Zero(cfg.freq_bins, 1));
    store.add("out_speech_suppress.w",
              nn::xavier(cfg.freq_bins, cfg.embed_dim * kConvKernel, rng));
    store.add("out_speech_suppress.b", Mat::Zero(cfg.freq_bins, 1));
    return store;
}

std::pair<graph::Var, graph::Var> masks_on_tape(graph::Tape& tape, params::ParamStore& store,
                                                const SesConfig& cfg, const Mat& mag) {
    if (mag.rows() != cfg.freq_bins)
        throw ShapeError("ses forward: " + std::to_string(mag.rows()) +
                         " frequency bins, model expects " + std::to_string(cfg.freq_bins));
    if ((mag.array() < 0.0).any()) throw DomainError("ses forward: negative magnitudes");

    auto& t = tape;
    graph::Var x = t.input(mag.array().log1p().matrix());
    graph::Var h = t.add_col(t.conv1d(x, nn::pvar(t, store, "in_conv.w"), kConvKernel),
                             nn::pvar(t, store, "in_conv.b"));
    h = t.add(h, t.constant(nn::sinusoid_table(cfg.embed_dim, static_cast<int>(mag.cols()))));

    for (int i = 0; i < cfg.layers; ++i) {
        graph::Var normed = nn::affine_layernorm(t, store, blk(i, "ln1"), h);
        h = t.add(h, nn::attention(t, store, blk(i, "attn"), normed, normed, cfg.heads));
        graph::Var normed2 = nn::affine_layernorm(t, store, blk(i, "ln2"), h);
        graph::Var hidden = t.gelu(t.add_col(
            t.matmul(nn::pvar(t, store, blk(i, "ffn.w1")), normed2),
            nn::pvar(t, store, blk(i, "ffn.b1"))));
        graph::Var ffn_out = t.add_col(
            t.matmul(nn::pvar(t, store, blk(i, "ffn.w2")), hidden),
            nn::pvar(t, store, blk(i, "ffn.b2")));
        h = t.add(h, ffn_out);
    }

    graph::Var env_sup = t.sigmoid(
        t.add_col(t.conv1d(h, nn::pvar(t, store, "out_env_suppress.w"), kConvKernel),
                  nn::pvar(t, store, "out_env_suppress.b")));
    graph::Var speech_sup = t.sigmoid(
        t.add_col(t.conv1d(h, nn::pvar(t, store, "out_speech_suppress.w"), kConvKernel),
                  nn::pvar(t, store, "out_speech_suppress.b")));
    return {env_sup, speech_sup};
}

MaskPair masking_net_forward(const dsp::MagnitudeSpectrogram& mag, params::ParamStore& store,
                             const SesConfig& cfg) {
    graph::Tape tape;
    auto [env_sup, speech_sup] = masks_on_tape(tape, store, cfg, mag.frames);
    return MaskPair{tape.value(speech_sup), tape.value(env_sup)};
}

std::pair<dsp::MagnitudeSpectrogram, dsp::MagnitudeSpectrogram> apply_masks(
    const dsp::MagnitudeSpectrogram& mag, const MaskPair& masks) {
    if (masks.env_suppressing_mask.rows() != mag.frames.rows() ||
        masks.env_suppressing_mask.cols() != mag.frames.cols() ||
        masks.speech_suppressing_mask.rows() != mag.frames.rows() ||
        masks.speech_suppressing_mask.cols() != mag.frames.cols())
        throw ShapeError("apply_masks: mask shape does not match spectrogram");
    dsp::MagnitudeSpectrogram speech;
    speech.config = mag.config;
    speech.frames = mag.frames.cwiseProduct(masks.env_suppressing_mask);
    dsp::MagnitudeSpectrogram env;
    env.config = mag.config;
    env.frames = mag.frames.cwiseProduct(masks.speech_suppressing_mask);
    return {std::move(speech), std::move(env)};
}

std::pair<dsp::ComplexSpectrogram, dsp::ComplexSpectrogram> apply_masks_complex(
    const dsp::ComplexSpectrogram& spec, const MaskPair& masks) {
    if (masks.env_suppressing_mask.rows() != spec.frames.rows() ||
        masks.env_suppressing_mask.cols() != spec.frames.cols() ||
        masks.speech_suppressing_mask.rows() != spec.frames.rows() ||
        masks.speech_suppressing_mask.cols() != spec.frames.cols())
        throw ShapeError("apply_masks_complex: mask shape does not match spectrogram");
    dsp::ComplexSpectrogram speech;
    speech.config = spec.config;
    speech.frames =
        spec.frames.cwiseProduct(masks.env_suppressing_mask.cast<std::complex<double>>());
    dsp::ComplexSpectrogram env;
    env.config = spec.config;
    env.frames =
        spec.frames.cwiseProduct(masks.speech_suppressing_mask.cast<std::complex<double>>());
    return {std::move(speech), std::move(env)};
}

MaskPair oracle_masks(const dsp::MagnitudeSpectrogram& clean_mag,
                      const dsp::MagnitudeSpectrogram& env_mag, double eps) {
    if (clean_mag.frames.rows() != env_mag.frames.rows() ||
        clean_mag.frames.cols() != env_mag.frames.cols())
        throw ShapeError("oracle_masks: component shapes differ");
    const Mat denom = clean_mag.frames + env_mag.frames + Mat::Constant(
        clean_mag.frames.rows(), clean_mag.frames.cols(), eps);
    MaskPair masks;
    masks.env_suppressing_mask = clean_mag.frames.cwiseQuotient(denom);
    masks.speech_suppressing_mask = env_mag.frames.cwiseQuotient(denom);
    return masks;
}

std::pair<dsp::MelSpectrogram, dsp::MelSpectrogram> separate_to_mel(
    const dsp::Waveform& wave, params::ParamStore& store, const SesConfig& cfg,
    const dsp::StftConfig& stft_cfg, const dsp::MelFilterbank& fb) {
    const dsp::MagnitudeSpectrogram mag = dsp::magnitude(dsp::stft(wave, stft_cfg));
    const MaskPair masks = masking_net_forward(mag, store, cfg);
    auto [speech_mag, env_mag] = apply_masks(mag, masks);
    return {dsp::mag_to_mel(speech_mag, fb), dsp::mag_to_mel(env_mag, fb)};
}

std::pair<dsp::MelSpectrogram, dsp::MelSpectrogram> separate_to_mel_oracle(
    const dsp::Waveform& mixture, const dsp::Waveform& clean, const dsp::Waveform& env,
    const dsp::StftConfig& stft_cfg, const dsp::MelFilterbank& fb) {
    const dsp::MagnitudeSpectrogram mix_mag = dsp::magnitude(dsp::stft(mixture, stft_cfg));
    const dsp::MagnitudeSpectrogram clean_mag = dsp::magnitude(dsp::stft(clean, stft_cfg));
    const dsp::MagnitudeSpectrogram env_mag = dsp::magnitude(dsp::stft(env, stft_cfg));
    const MaskPair masks = oracle_masks(clean_mag, env_mag);
    auto [speech_mag, bg_mag] = apply_masks(mix_mag, masks);
    return {dsp::mag_to_mel(speech_mag, fb), dsp::mag_to_mel(bg_mag, fb)};
}

double item_loss(graph::Tape& tape, params::ParamStore& store, const SesConfig& cfg,
                 const Triple& triple, const std::string& loss_mode, bool backward,
                 double grad_scale) {
    auto& t = tape;
    auto [env_sup, speech_sup] = masks_on_tape(t, store, cfg, triple.mix_mag);
    const double denom =
        2.0 * static_cast<double>(triple.mix_mag.rows()) * triple.mix_mag.cols();
    const Vec ones = Vec::Ones(triple.mix_mag.cols());

    graph::Var loss{};
    if (loss_mode == "reconstruction") {
        graph::Var mix_c = t.constant(triple.mix_mag);
        graph::Var speech_err =
            t.sub(t.mul(env_sup, mix_c), t.constant(triple.clean_mag));
        graph::Var env_err =
            t.sub(t.mul(speech_sup, mix_c), t.constant(triple.env_mag));
        loss = t.add(t.sum_sq_cols_weighted(speech_err, ones, denom),
                     t.sum_sq_cols_weighted(env_err, ones, denom));
    } else if (loss_mode == "oracle_mask") {
        dsp::MagnitudeSpectrogram clean_m, env_m;
        clean_m.frames = triple.clean_mag;
        env_m.frames = triple.env_mag;
        const MaskPair oracle = oracle_masks(clean_m, env_m);
        graph::Var env_err = t.sub(env_sup, t.constant(oracle.env_suppressing_mask));
        graph::Var speech_err =
            t.sub(speech_sup, t.constant(oracle.speech_suppressing_mask));
        loss = t.add(t.sum_sq_cols_weighted(env_err, ones, denom),
                     t.sum_sq_cols_weighted(speech_err, ones, denom));
    } else {
        throw ConfigError("unknown ses loss mode: " + loss_mode);
    }
    const double value = t.value(loss)(0, 0);
    if (backward) t.backward(loss, grad_scale);
    return value;
}

params::ParamStore train_ses(const std::vector<Triple>& corpus, const SesTrainConfig& cfg,
                             std::vector<TrainLogEntry>* log) {
    if (corpus.empty()) throw ConfigError("ses training corpus is empty");
    if (cfg.steps < 0 || cfg.batch_size < 1)
        throw ConfigError("ses training needs steps >= 0 and batch_size >= 1");
    cfg.model.validate();

    params::ParamStore store = init_params(cfg.model, cfg.seed);
    params::Adam opt(cfg.adam);
    if (!cfg.resume_from.empty()) {
        const params::Checkpoint ckpt = params::load_checkpoint(cfg.resume_from);
        params::restore_params(store, ckpt, &opt);
    }

    std::ofstream csv;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        const auto csv_path = std::filesystem::path(cfg.out_dir) / "ses_loss.csv";
        csv.open(csv_path, opt.steps_done() > 0 ? std::ios::app : std::ios::trunc);
        if (!csv) throw IoError("cannot open " + csv_path.string());
        if (opt.steps_done() == 0) csv << "step,loss,wall_ms\n";
    }

    const auto t_start = std::chrono::steady_clock::now();
    const std::int64_t first = opt.steps_done();
    for (std::int64_t s = first; s < cfg.steps; ++s) {
        Rng step_rng(Rng::mix(cfg.seed, 0x10000u + static_cast<std::uint64_t>(s)));
        store.zero_grads();
        double loss_sum = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto idx = static_cast<std::size_t>(
                step_rng.uniform_int(0, static_cast<int>(corpus.size()) - 1));
            graph::Tape tape;
            loss_sum += item_loss(tape, store, cfg.model, corpus[idx], cfg.loss_mode, true,
                                  1.0 / cfg.batch_size);
        }
        const double loss = loss_sum / cfg.batch_size;
        if (!std::isfinite(loss))
            throw DomainError("ses training diverged: non-finite loss at step " +
                              std::to_string(s + 1));
        opt.step(store);

        const double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                      t_start)
                .count();
        if (log) log->push_back({static_cast<int>(s + 1), loss, wall_ms});
        if (csv.is_open()) {
            csv << (s + 1) << "," << std::setprecision(17) << loss << ","
                << std::setprecision(6) << wall_ms << "\n";
        }
        if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 &&
            (s + 1) % cfg.checkpoint_every == 0) {
            const auto path = std::filesystem::path(cfg.out_dir) /
                              ("ses_step" + std::to_string(s + 1) + ".ckpt");
            save_ses_checkpoint(path.string(), cfg.model, cfg.stft, cfg.sample_rate, store,
                                &opt);
        }
    }
    if (!cfg.out_dir.empty()) {
        const auto path = std::filesystem::path(cfg.out_dir) / "ses_final.ckpt";
        save_ses_checkpoint(path.string(), cfg.model, cfg.stft, cfg.sample_rate, store, &opt);
    }
    return store;
}

std::vector<Triple> load_triples(const std::string& manifest_path,
                                 const dsp::StftConfig& stft_cfg, int max_items) {
    const auto items = corpus::read_manifest(manifest_path);
    std::vector<Triple> triples;
    triples.reserve(items.size());
    for (const auto& item : items) {
        if (max_items > 0 && static_cast<int>(triples.size()) >= max_items) break;
        const auto mix =
            wav::read(corpus::resolve_manifest_path(manifest_path, item.mixture_path));
        const auto clean =
            wav::read(corpus::resolve_manifest_path(manifest_path, item.clean_path));
        const auto env =
            wav::read(corpus::resolve_manifest_path(manifest_path, item.env_path));
        Triple t;
        t.mix_mag = dsp::magnitude(dsp::stft(mix, stft_cfg)).frames;
        t.clean_mag = dsp::magnitude(dsp::stft(clean, stft_cfg)).frames;
        if ((env.samples.size() >= static_cast<std::size_t>(stft_cfg.window_size)) &&
            dsp::energy(env) > 0.0) {
            t.env_mag = dsp::magnitude(dsp::stft(env, stft_cfg)).frames;
        } else {
            t.env_mag = Mat::Zero(t.mix_mag.rows(), t.mix_mag.cols());
        }
        if (t.clean_mag.cols() != t.mix_mag.cols() || t.env_mag.cols() != t.mix_mag.cols())
            throw ShapeError("manifest item " + item.id + " has misaligned lengths");
        triples.push_back(std::move(t));
    }
    if (triples.empty()) throw ConfigError("manifest " + manifest_path + " yielded no items");
    return triples;
}

void save_ses_checkpoint(const std::string& path, const SesConfig& cfg,
                         const dsp::StftConfig& stft_cfg, int sample_rate,
                         const params::ParamStore& store, const params::Adam* opt) {
    KvConfig kv;
    kv.set("kind", "ses");
    cfg.to_kv(kv);
    kv.set("stft.fft_size", std::to_string(stft_cfg.fft_size));
    kv.set("stft.window_size", std::to_string(stft_cfg.window_size));
    kv.set("stft.hop_size", std::to_string(stft_cfg.hop_size));
    kv.set("stft.window", dsp::window_name(stft_cfg.window));
    kv.set("sample_rate", std::to_string(sample_rate));
    params::save_checkpoint(path, kv, store, opt);
}

LoadedSes load_ses_checkpoint(const std::string& path, params::Adam* opt) {
    const params::Checkpoint ckpt = params::load_checkpoint(path);
    if (ckpt.config.get_str("kind", "") != "ses")
        throw IoError(path + " is not a separation checkpoint");
    LoadedSes loaded;
    loaded.config = SesConfig::from_kv(ckpt.config);
    loaded.stft.fft_size = ckpt.config.get_int("stft.fft_size", 1024);
    loaded.stft.window_size = ckpt.config.get_int("stft.window_size", 1024);
    loaded.stft.hop_size = ckpt.config.get_int("stft.hop_size", 256);
    loaded.stft.window = dsp::window_from_name(ckpt.config.get_str("stft.window", "hann"));
    loaded.sample_rate = ckpt.config.get_int("sample_rate", 24000);
    loaded.store = init_params(loaded.config, 0);
    params::restore_params(loaded.store, ckpt, opt);
    return loaded;
}

}  // namespace enviro::ses
