#include "enviro/train.hpp"

#include "enviro/wav.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>

namespace enviro::train {

FlowPoint make_flow_point(const Mat& x1, double t, Rng& rng) {
    if (!(t >= 0.0 && t <= 1.0))
        throw DomainError("flow step " + std::to_string(t) + " outside [0,1]");
    FlowPoint fp;
    fp.x1 = x1;
    fp.t = t;
    fp.x0.resize(x1.rows(), x1.cols());
    for (Eigen::Index c = 0; c < x1.cols(); ++c)
        for (Eigen::Index r = 0; r < x1.rows(); ++r) fp.x0(r, c) = rng.normal();
    fp.psi_t = (1.0 - t) * fp.x0 + t * fp.x1;
    return fp;
}

void DropoutPolicy::validate() const {
    for (double p : {p_all_null, p_env_null, p_speech_text_null})
        if (!(p >= 0.0 && p <= 1.0))
            throw ConfigError("dropout probabilities must lie in [0,1]");
    if (p_all_null + p_env_null + p_speech_text_null > 1.0)
        throw ConfigError("dropout probabilities must sum to at most 1");
}

ConditionPattern draw_pattern(const DropoutPolicy& policy, Rng& rng) {
    policy.validate();
    const double u = rng.uniform();
    if (u < policy.p_all_null) return ConditionPattern::AllNull;
    if (u < policy.p_all_null + policy.p_env_null) return ConditionPattern::EnvNull;
    if (u < policy.p_all_null + policy.p_env_null + policy.p_speech_text_null)
        return ConditionPattern::SpeechTextNull;
    return ConditionPattern::Full;
}

namespace {

Mat mask_columns(const Mat& m, const corpus::SpanMask& mask, bool keep_unmasked) {
    // keep_unmasked: zero the masked span (condition view); otherwise inverse.
    Mat out = m;
    for (int c = 0; c < mask.length(); ++c) {
        const bool masked = mask.flags[static_cast<std::size_t>(c)] != 0;
        if (masked == keep_unmasked) out.col(c).setZero();
    }
    return out;
}

}  // namespace

net::ConditionSet make_conditions(const TrainItem& item, ConditionPattern pattern) {
    const int L = static_cast<int>(item.x1.cols());
    if (item.m_spk.length() != L || item.m_env.length() != L ||
        item.text.length() != L || item.c_spk.cols() != L || item.c_env.cols() != L)
        throw ShapeError("train item sequence lengths disagree");

    net::ConditionSet cond;
    const bool keep_speech =
        pattern == ConditionPattern::Full || pattern == ConditionPattern::EnvNull;
    const bool keep_env =
        pattern == ConditionPattern::Full || pattern == ConditionPattern::SpeechTextNull;
    if (keep_speech) {
        cond.text = item.text.tokens;
        cond.speaker_mel = mask_columns(item.c_spk, item.m_spk, true);
    }
    if (keep_env) cond.env_mel = mask_columns(item.c_env, item.m_env, true);
    return cond;
}

CfmLossResult cfm_loss_on_tape(graph::Tape& tape, params::ParamStore& store,
                               const net::DitConfig& cfg, const TrainItem& item,
                               const FlowPoint& flow, ConditionPattern pattern,
                               bool backward, double grad_scale) {
    if (flow.x1.rows() != item.x1.rows() || flow.x1.cols() != item.x1.cols())
        throw ShapeError("flow point does not match train item");

    const int n_masked = item.m_spk.masked_count();
    if (n_masked == 0) return {0.0, true};

    const net::ConditionSet cond = make_conditions(item, pattern);
    graph::Var x_t = tape.input(flow.psi_t);
    graph::Var v = net::forward_on_tape(tape, store, cfg, x_t, flow.t, cond);
    graph::Var diff = tape.sub(v, tape.constant(flow.x1 - flow.x0));
    const double denom = static_cast<double>(item.x1.rows()) * n_masked;
    graph::Var loss = tape.sum_sq_cols_weighted(diff, item.m_spk.as_vec(), denom);

    const double value = tape.value(loss)(0, 0);
    if (backward) tape.backward(loss, grad_scale);
    return {value, false};
}

CfmLossResult cfm_loss(params::ParamStore& store, const net::DitConfig& cfg,
                       const TrainItem& item, const FlowPoint& flow,
                       ConditionPattern pattern) {
    graph::Tape tape;
    return cfm_loss_on_tape(tape, store, cfg, item, flow, pattern, false, 1.0);
}

namespace {

TrainItem assemble_item(const CorpusEntry& entry, double mask_lo, double mask_hi, Rng& rng) {
    TrainItem item;
    item.x1 = entry.x1;
    item.c_spk = entry.c_spk;
    item.c_env = entry.c_env;
    const int L = static_cast<int>(entry.x1.cols());
    item.text = corpus::extend_text(entry.text, L);
    item.m_spk = corpus::sample_span_mask(L, mask_lo, mask_hi, rng);
    item.m_env = corpus::sample_span_mask(L, mask_lo, mask_hi, rng);
    return item;
}

}  // namespace

params::ParamStore train_tts(const std::vector<CorpusEntry>& data, const TtsTrainConfig& cfg,
                             std::vector<TrainLogEntry>* log) {
    if (data.empty()) throw ConfigError("tts training corpus is empty");
    if (cfg.steps < 0 || cfg.batch_size < 1)
        throw ConfigError("tts training needs steps >= 0 and batch_size >= 1");
    cfg.model.validate();
    cfg.dropout.validate();
    for (const auto& entry : data)
        if (entry.x1.rows() != cfg.model.mel_bins)
            throw ShapeError("corpus entry mel bins do not match the model");

    params::ParamStore store = net::init_params(cfg.model, cfg.seed);
    params::Adam opt(cfg.adam);
    if (!cfg.resume_from.empty()) {
        const params::Checkpoint ckpt = params::load_checkpoint(cfg.resume_from);
        params::restore_params(store, ckpt, &opt);
    }

    std::ofstream csv;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        const auto csv_path = std::filesystem::path(cfg.out_dir) / "tts_loss.csv";
        csv.open(csv_path, opt.steps_done() > 0 ? std::ios::app : std::ios::trunc);
        if (!csv) throw IoError("cannot open " + csv_path.string());
        if (opt.steps_done() == 0) csv << "step,loss,wall_ms\n";
    }

    const auto t_start = std::chrono::steady_clock::now();
    for (std::int64_t s = opt.steps_done(); s < cfg.steps; ++s) {
        Rng step_rng(Rng::mix(cfg.seed, 0x775000000000ULL + static_cast<std::uint64_t>(s)));
        store.zero_grads();
        double loss_sum = 0.0;
        int contributing = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto idx = static_cast<std::size_t>(
                step_rng.uniform_int(0, static_cast<int>(data.size()) - 1));
            const TrainItem item =
                assemble_item(data[idx], cfg.mask_ratio_lo, cfg.mask_ratio_hi, step_rng);
            const double t = step_rng.uniform();
            const FlowPoint flow = make_flow_point(item.x1, t, step_rng);
            const ConditionPattern pattern = draw_pattern(cfg.dropout, step_rng);
            graph::Tape tape;
            const CfmLossResult res = cfm_loss_on_tape(tape, store, cfg.model, item, flow,
                                                       pattern, true, 1.0 / cfg.batch_size);
            loss_sum += res.value;
            if (!res.empty_mask) ++contributing;
        }
        const double loss = loss_sum / cfg.batch_size;
        if (!std::isfinite(loss))
            throw DomainError("tts training diverged: non-finite loss at step " +
                              std::to_string(s + 1) + " (lr " +
                              std::to_string(opt.lr_for(s + 1)) + ", " +
                              std::to_string(contributing) + " contributing items)");
        opt.step(store);

        const double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                      t_start)
                .count();
        if (log) log->push_back({static_cast<int>(s + 1), loss, wall_ms});
        if (csv.is_open())
            csv << (s + 1) << "," << std::setprecision(17) << loss << ","
                << std::setprecision(6) << wall_ms << "\n";
        if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 &&
            (s + 1) % cfg.checkpoint_every == 0) {
            const auto path = std::filesystem::path(cfg.out_dir) /
                              ("tts_step" + std::to_string(s + 1) + ".ckpt");
            net::save_dit_checkpoint(path.string(), cfg.model, cfg.meta, store, &opt);
        }
    }
    if (!cfg.out_dir.empty()) {
        const auto path = std::filesystem::path(cfg.out_dir) / "tts_final.ckpt";
        net::save_dit_checkpoint(path.string(), cfg.model, cfg.meta, store, &opt);
    }
    return store;
}

double gradient_check(params::ParamStore& store, const net::DitConfig& cfg,
                      const TrainItem& item, const FlowPoint& flow, double epsilon,
                      int n_samples, std::uint64_t seed) {
    if (epsilon <= 0.0) throw DomainError("gradient_check: epsilon must be positive");
    if (n_samples < 1) throw DomainError("gradient_check: need at least one sample");

    store.zero_grads();
    {
        graph::Tape tape;
        cfm_loss_on_tape(tape, store, cfg, item, flow, ConditionPattern::Full, true, 1.0);
    }
    std::vector<Mat> analytic;
    analytic.reserve(store.entries().size());
    for (const auto& e : store.entries()) analytic.push_back(e.grad);

    Rng rng(Rng::mix(seed, 0x9cadu));
    double max_rel = 0.0;
    const int n_params = static_cast<int>(store.entries().size());
    for (int s = 0; s < n_samples; ++s) {
        const int pi = static_cast<int>(rng.uniform_int(0, n_params - 1));
        auto& entry = store.entries()[static_cast<std::size_t>(pi)];
        const auto flat = static_cast<Eigen::Index>(
            rng.uniform_int(0, static_cast<int>(entry.value.size()) - 1));
        double& w = entry.value.data()[flat];
        const double saved = w;

        w = saved + epsilon;
        const double plus =
            cfm_loss(store, cfg, item, flow, ConditionPattern::Full).value;
        w = saved - epsilon;
        const double minus =
            cfm_loss(store, cfg, item, flow, ConditionPattern::Full).value;
        w = saved;

        const double numeric = (plus - minus) / (2.0 * epsilon);
        const double exact = analytic[static_cast<std::size_t>(pi)].data()[flat];
        const double rel = std::abs(numeric - exact) /
                           std::max({std::abs(numeric), std::abs(exact), 1e-4});
        max_rel = std::max(max_rel, rel);
    }
    store.zero_grads();
    return max_rel;
}

dsp::MelFilterbank MelSettings::filterbank() const {
    return dsp::build_mel_filterbank(mel_bins, stft, sample_rate, freq_lo, freq_hi);
}

Mat MelSettings::normalize(const Mat& log_mel) const {
    if (scale <= 0.0) throw ConfigError("mel scale must be positive");
    return (log_mel.array() - offset).matrix() / scale;
}

Mat MelSettings::denormalize(const Mat& model_mel) const {
    return (model_mel.array() * scale + offset).matrix();
}

void MelSettings::to_kv(KvConfig& kv) const {
    kv.set("stft.fft_size", std::to_string(stft.fft_size));
    kv.set("stft.window_size", std::to_string(stft.window_size));
    kv.set("stft.hop_size", std::to_string(stft.hop_size));
    kv.set("stft.window", dsp::window_name(stft.window));
    kv.set("sample_rate", std::to_string(sample_rate));
    kv.set("mel.bins", std::to_string(mel_bins));
    kv.set("mel.freq_lo", std::to_string(freq_lo));
    kv.set("mel.freq_hi", std::to_string(freq_hi));
    kv.set("mel.offset", std::to_string(offset));
    kv.set("mel.scale", std::to_string(scale));
}

MelSettings MelSettings::from_kv(const KvConfig& kv) {
    MelSettings m;
    m.stft.fft_size = kv.get_int("stft.fft_size", m.stft.fft_size);
    m.stft.window_size = kv.get_int("stft.window_size", m.stft.window_size);
    m.stft.hop_size = kv.get_int("stft.hop_size", m.stft.hop_size);
    m.stft.window = dsp::window_from_name(kv.get_str("stft.window", "hann"));
    m.sample_rate = kv.get_int("sample_rate", m.sample_rate);
    m.mel_bins = kv.get_int("mel.bins", m.mel_bins);
    m.freq_lo = kv.get_double("mel.freq_lo", m.freq_lo);
    m.freq_hi = kv.get_double("mel.freq_hi", m.freq_hi);
    m.offset = kv.get_double("mel.offset", m.offset);
    m.scale = kv.get_double("mel.scale", m.scale);
    return m;
}

std::vector<CorpusEntry> prepare_corpus(const std::string& manifest_path,
                                        const MelSettings& mel, ses::LoadedSes* separator,
                                        int max_items) {
    if (separator && !(separator->stft == mel.stft))
        throw ConfigError("prepare_corpus: separator was trained with different analysis "
                          "settings");
    const auto items = corpus::read_manifest(manifest_path);
    const dsp::MelFilterbank fb = mel.filterbank();

    std::vector<CorpusEntry> out;
    out.reserve(items.size());
    for (const auto& it : items) {
        if (max_items > 0 && static_cast<int>(out.size()) >= max_items) break;
        const auto mixture =
            wav::read(corpus::resolve_manifest_path(manifest_path, it.mixture_path));
        if (mixture.sample_rate != mel.sample_rate)
            throw ConfigError("prepare_corpus: " + it.mixture_path + " has sample rate " +
                              std::to_string(mixture.sample_rate) + ", expected " +
                              std::to_string(mel.sample_rate));

        const auto mix_mag = dsp::magnitude(dsp::stft(mixture, mel.stft));
        ses::MaskPair masks;
        if (separator) {
            masks = ses::masking_net_forward(mix_mag, separator->store, separator->config);
        } else {
            const auto clean =
                wav::read(corpus::resolve_manifest_path(manifest_path, it.clean_path));
            const auto env =
                wav::read(corpus::resolve_manifest_path(manifest_path, it.env_path));
            masks = ses::oracle_masks(dsp::magnitude(dsp::stft(clean, mel.stft)),
                                      dsp::magnitude(dsp::stft(env, mel.stft)));
        }
        const auto [speech_mag, env_mag] = ses::apply_masks(mix_mag, masks);

        CorpusEntry entry;
        entry.x1 = mel.normalize(dsp::mag_to_mel(mix_mag, fb).frames);
        entry.c_spk = mel.normalize(dsp::mag_to_mel(speech_mag, fb).frames);
        entry.c_env = mel.normalize(dsp::mag_to_mel(env_mag, fb).frames);
        entry.text = it.text;
        out.push_back(std::move(entry));
    }
    if (out.empty()) throw ConfigError("prepare_corpus: no usable items in " + manifest_path);
    return out;
}

}  // namespace enviro::train
