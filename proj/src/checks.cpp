#include "enviro/checks.hpp"

#include "enviro/corpus.hpp"
#include "enviro/dsp.hpp"
#include "enviro/infer.hpp"
#include "enviro/net.hpp"
#include "enviro/nn.hpp"
#include "enviro/params.hpp"
#include "enviro/ses.hpp"
#include "enviro/train.hpp"
#include "enviro/wav.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

namespace enviro::checks {
namespace {

namespace fs = std::filesystem;

struct CheckFail : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fmt(double v, int prec = 3) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// Shared signal helpers
// ---------------------------------------------------------------------------

dsp::Waveform white_noise(int length, int sample_rate, Rng& rng) {
    dsp::Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(static_cast<std::size_t>(length));
    for (auto& s : w.samples) s = rng.uniform(-0.3, 0.3);
    return w;
}

dsp::Waveform random_tone_wave(Rng& rng, int n_tokens) {
    std::vector<int> toks;
    toks.reserve(static_cast<std::size_t>(n_tokens));
    for (int i = 0; i < n_tokens; ++i) toks.push_back(rng.uniform_int(0, 7));
    return corpus::render_tones(toks, corpus::ToneSpec{});
}

dsp::Waveform silence_wave(int length, int sample_rate) {
    dsp::Waveform w;
    w.sample_rate = sample_rate;
    w.samples.assign(static_cast<std::size_t>(length), 0.0);
    return w;
}

// Energy of |STFT|^2 restricted to bins whose center frequency lies in
// [freq_lo, freq_hi].
double band_energy(const dsp::Waveform& w, const dsp::StftConfig& cfg, double freq_lo,
                   double freq_hi) {
    const auto mag = dsp::magnitude(dsp::stft(w, cfg));
    const double bin_hz = static_cast<double>(w.sample_rate) / cfg.fft_size;
    double e = 0.0;
    for (int k = 0; k < mag.freq_bins(); ++k) {
        const double f = k * bin_hz;
        if (f >= freq_lo && f <= freq_hi) e += mag.frames.row(k).squaredNorm();
    }
    return e;
}

// Oracle separation for desk signals: tone harmonics all live below 4 kHz and
// the noise bands all above 4.4 kHz, so a frequency split recovers the
// speech/environment ratio.
double band_split_snr_db(const dsp::Waveform& w, const dsp::StftConfig& cfg) {
    const double speech = band_energy(w, cfg, 0.0, 4000.0);
    const double env = band_energy(w, cfg, 4400.0, w.sample_rate / 2.0);
    return dsp::snr_db(speech, env).value;
}

struct CsvRow {
    long step = 0;
    double loss = 0.0;
};

std::vector<CsvRow> read_loss_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open loss log: " + path);
    std::vector<CsvRow> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string step_s, loss_s;
        if (!std::getline(ls, step_s, ',') || !std::getline(ls, loss_s, ','))
            throw IoError("malformed loss log line in " + path + ": " + line);
        rows.push_back({std::stol(step_s), std::stod(loss_s)});
    }
    return rows;
}

double mean_loss(const std::vector<CsvRow>& rows, std::size_t begin, std::size_t end) {
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += rows[i].loss;
    return s / static_cast<double>(end - begin);
}

// ---------------------------------------------------------------------------
// Desk-scale artifacts (full profile), cached in work_dir across runs
// ---------------------------------------------------------------------------

train::MelSettings desk_mel_settings() {
    train::MelSettings mel;  // defaults: 1024/256 analysis, 80 bins, 0..12 kHz
    return mel;
}

struct DeskArtifacts {
    std::string manifest;
    ses::LoadedSes separation;
    std::string ses_ckpt;
    std::string tts_ckpt;
    train::MelSettings mel;
    double ses_first10 = 0.0;  // loss means for the halving check
    double ses_last10 = 0.0;
    double train_seconds = 0.0;  // time spent training in THIS process
};

struct Context {
    const CheckOptions& opts;
    std::ostream& log;
    std::optional<DeskArtifacts> desk;

    DeskArtifacts& desk_artifacts();
};

DeskArtifacts& Context::desk_artifacts() {
    if (desk) return *desk;

    DeskArtifacts a;
    a.mel = desk_mel_settings();
    const fs::path work = fs::path(opts.work_dir);
    fs::create_directories(work);
    const auto t0 = std::chrono::steady_clock::now();

    // Corpus.
    const fs::path corpus_dir = work / "corpus";
    a.manifest = (corpus_dir / "manifest.tsv").string();
    bool have_corpus = false;
    if (fs::exists(a.manifest)) {
        try {
            have_corpus = corpus::read_manifest(a.manifest).size() >= 500;
        } catch (const std::exception&) {
            have_corpus = false;
        }
    }
    if (!have_corpus) {
        log << "[desk] building corpus (500 items) in " << corpus_dir.string() << "\n";
        corpus::CorpusSpec spec;
        spec.n_items = 500;
        spec.seed = opts.seed;
        spec.out_dir = corpus_dir.string();
        fs::create_directories(corpus_dir);
        corpus::build_desk_corpus(spec);
    } else {
        log << "[desk] reusing corpus at " << corpus_dir.string() << "\n";
    }

    // Separation model: 2000 steps.
    const fs::path ses_dir = work / "ses";
    a.ses_ckpt = (ses_dir / "ses_final.ckpt").string();
    bool have_ses = false;
    if (fs::exists(a.ses_ckpt)) {
        try {
            a.separation = ses::load_ses_checkpoint(a.ses_ckpt);
            have_ses = true;
        } catch (const std::exception&) {
            have_ses = false;
        }
    }
    if (!have_ses) {
        log << "[desk] training separation model (2000 steps)\n";
        ses::SesTrainConfig cfg;
        cfg.stft = a.mel.stft;
        cfg.adam.lr = 3e-4;
        cfg.adam.warmup_steps = 100;
        cfg.steps = 2000;
        cfg.batch_size = 4;
        cfg.seed = opts.seed;
        cfg.out_dir = ses_dir.string();
        cfg.sample_rate = a.mel.sample_rate;
        const auto triples = ses::load_triples(a.manifest, cfg.stft);
        ses::train_ses(triples, cfg);
        a.separation = ses::load_ses_checkpoint(a.ses_ckpt);
    } else {
        log << "[desk] reusing separation checkpoint\n";
    }
    {
        const auto rows = read_loss_csv((ses_dir / "ses_loss.csv").string());
        if (rows.size() >= 20) {
            a.ses_first10 = mean_loss(rows, 0, 10);
            a.ses_last10 = mean_loss(rows, rows.size() - 10, rows.size());
        }
    }

    // Velocity model: 10000 steps on the separated corpus.
    const fs::path tts_dir = work / "tts";
    a.tts_ckpt = (tts_dir / "tts_final.ckpt").string();
    bool have_tts = false;
    if (fs::exists(a.tts_ckpt)) {
        try {
            net::load_dit_checkpoint(a.tts_ckpt);
            have_tts = true;
        } catch (const std::exception&) {
            have_tts = false;
        }
    }
    if (!have_tts) {
        log << "[desk] preparing training entries through the separation model\n";
        const auto entries = train::prepare_corpus(a.manifest, a.mel, &a.separation);
        log << "[desk] training velocity model (10000 steps)\n";
        train::TtsTrainConfig cfg;
        cfg.adam.lr = 3e-4;
        cfg.adam.warmup_steps = 500;
        cfg.steps = 10000;
        cfg.batch_size = 4;
        cfg.seed = opts.seed;
        cfg.out_dir = tts_dir.string();
        cfg.checkpoint_every = 2500;
        a.mel.to_kv(cfg.meta);
        train::train_tts(entries, cfg);
    } else {
        log << "[desk] reusing velocity checkpoint\n";
    }

    a.train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    desk = std::move(a);
    return *desk;
}

infer::Synthesizer load_desk_synthesizer(DeskArtifacts& a) {
    return infer::make_synthesizer(a.ses_ckpt, a.tts_ckpt);
}

// ---------------------------------------------------------------------------
// Suite 1: dsp
// ---------------------------------------------------------------------------

std::string suite_dsp(Context& ctx) {
    Rng rng(Rng::mix(ctx.opts.seed, 0xd59u));

    // Analysis/synthesis round trip across shapes and hops.
    double worst_rt = 0.0;
    for (const int hop : {256, 128}) {
        dsp::StftConfig cfg;
        cfg.hop_size = hop;
        for (const int len : {4096, 10240, 24000}) {
            dsp::Waveform w = white_noise(len, 24000, rng);
            for (int i = 0; i < len; ++i)
                w.samples[static_cast<std::size_t>(i)] +=
                    0.4 * std::sin(2.0 * M_PI * 440.0 * i / 24000.0);
            const auto rec = dsp::istft_aligned(dsp::stft(w, cfg), w.sample_rate, len);
            double err = 0.0;
            for (int i = 0; i < len; ++i)
                err = std::max(err, std::abs(rec.samples[static_cast<std::size_t>(i)] -
                                             w.samples[static_cast<std::size_t>(i)]));
            worst_rt = std::max(worst_rt, err);
        }
    }
    if (worst_rt >= 1e-6)
        throw CheckFail("round-trip error " + fmt(worst_rt) + " >= 1e-6");

    // Waveform-domain SNR matches spectrogram-domain SNR for stationary pairs.
    dsp::StftConfig cfg;
    double worst_snr = 0.0;
    for (int i = 0; i < 20; ++i) {
        const auto clean = white_noise(24000, 24000, rng);
        const auto env = white_noise(24000, 24000, rng);
        const double snr = rng.uniform(-5.0, 15.0);
        const auto mixed = corpus::mix_at_snr(clean, env, snr, rng);
        const double spec_snr =
            dsp::snr_db(dsp::energy(dsp::magnitude(dsp::stft(clean, cfg))),
                        dsp::energy(dsp::magnitude(dsp::stft(mixed.env_scaled, cfg))))
                .value;
        worst_snr = std::max(worst_snr, std::abs(spec_snr - snr));
    }
    if (worst_snr > 0.2)
        throw CheckFail("spectrogram snr deviates by " + fmt(worst_snr) + " dB > 0.2");

    // Phase reconstruction error never increases.
    const auto target = random_tone_wave(rng, 4);
    const auto mag = dsp::magnitude(dsp::stft(target, cfg));
    std::vector<double> trace;
    dsp::griffin_lim_traced(mag, 25, target.sample_rate, 0.99, &trace);
    for (std::size_t i = 1; i < trace.size(); ++i)
        if (trace[i] > trace[i - 1] + 1e-12)
            throw CheckFail("reconstruction error rose at iteration " + std::to_string(i));
    if (trace.back() >= trace.front())
        throw CheckFail("phase reconstruction made no progress");

    return "round-trip " + fmt(worst_rt) + ", snr correspondence " + fmt(worst_snr) +
           " dB, monotone trace over " + std::to_string(trace.size()) + " iterations";
}

// ---------------------------------------------------------------------------
// Suite 2: snr_adaptation
// ---------------------------------------------------------------------------

std::string suite_snr_adaptation(Context& ctx) {
    Rng rng(Rng::mix(ctx.opts.seed, 0x54au));
    const dsp::StftConfig cfg;

    // Substitution oracle: the computed gain makes the rebuilt pair's ratio
    // equal the environment prompt's own ratio.
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
        const auto speech_a = random_tone_wave(rng, rng.uniform_int(4, 6));
        const auto speech_b = random_tone_wave(rng, rng.uniform_int(4, 6));
        const auto band = corpus::kNoiseBands[rng.uniform_int(0, 2)];
        const auto env_a =
            corpus::render_band_noise(static_cast<int>(speech_a.samples.size()), 24000,
                                      band[0], band[1], 48, rng);
        const auto env_b =
            corpus::render_band_noise(static_cast<int>(speech_b.samples.size()), 24000,
                                      band[0], band[1], 48, rng);
        const auto prompt_spk =
            corpus::mix_at_snr(speech_a, env_a, rng.uniform(-5.0, 15.0), rng);
        const auto prompt_env =
            corpus::mix_at_snr(speech_b, env_b, rng.uniform(0.0, 20.0), rng);

        const auto sep = [&](const dsp::Waveform& mix, const dsp::Waveform& clean,
                             const dsp::Waveform& env) {
            const auto mask = ses::oracle_masks(dsp::magnitude(dsp::stft(clean, cfg)),
                                                dsp::magnitude(dsp::stft(env, cfg)));
            return ses::apply_masks(dsp::magnitude(dsp::stft(mix, cfg)), mask);
        };
        const auto [spk_speech, spk_bg] = sep(prompt_spk.mixture, speech_a, prompt_spk.env_scaled);
        const auto [env_speech, env_bg] = sep(prompt_env.mixture, speech_b, prompt_env.env_scaled);

        const double scale = infer::snr_scale_factor(spk_speech, env_speech, env_bg).value;
        const double lhs =
            dsp::snr_db(dsp::energy(spk_speech), scale * scale * dsp::energy(env_bg)).value;
        const double rhs = dsp::snr_db(dsp::energy(env_speech), dsp::energy(env_bg)).value;
        worst = std::max(worst, std::abs(lhs - rhs));
    }
    if (worst > 0.1)
        throw CheckFail("gain substitution misses target by " + fmt(worst) + " dB > 0.1");

    if (!ctx.opts.full)
        return "substitution oracle within " + fmt(worst) +
               " dB over 50 pairs (end-to-end part runs in the full profile)";

    // End-to-end: synthesized output, re-separated by the frequency-split
    // oracle, lands near the environment prompt's ratio.
    DeskArtifacts& desk = ctx.desk_artifacts();
    auto synth = load_desk_synthesizer(desk);
    const auto items = corpus::read_manifest(desk.manifest);
    std::vector<corpus::CorpusItem> silent, noisy;
    for (const auto& it : items) {
        if (it.snr_db)
            noisy.push_back(it);
        else
            silent.push_back(it);
    }
    if (silent.size() < 4 || noisy.size() < 3)
        throw CheckFail("corpus lacks prompt variety for the end-to-end check");

    double worst_e2e = 0.0;
    for (int i = 0; i < 3; ++i) {
        const auto& spk_item = silent[static_cast<std::size_t>(i)];
        const auto& env_item = noisy[static_cast<std::size_t>(i)];
        infer::SynthesisRequest req;
        req.speaker_prompt =
            wav::read(corpus::resolve_manifest_path(desk.manifest, spk_item.mixture_path));
        req.env_prompt =
            wav::read(corpus::resolve_manifest_path(desk.manifest, env_item.mixture_path));
        req.ref_text = spk_item.text;
        req.gen_text = env_item.text;
        req.snr_adapt = true;
        req.seed = Rng::mix(ctx.opts.seed, 0x2e2e0 + static_cast<std::uint64_t>(i));
        const auto out = infer::synthesize(synth, req);
        const double target = band_split_snr_db(req.env_prompt, synth.stft);
        const double achieved = band_split_snr_db(out.wave, synth.stft);
        ctx.log << "[snr e2e] pair " << i << ": target " << target << " dB, achieved "
                << achieved << " dB (gain " << out.scale_applied << ")\n";
        worst_e2e = std::max(worst_e2e, std::abs(achieved - target));
    }
    if (worst_e2e > 1.5)
        throw CheckFail("end-to-end ratio misses prompt by " + fmt(worst_e2e) + " dB > 1.5");
    return "substitution within " + fmt(worst) + " dB, end-to-end within " + fmt(worst_e2e) +
           " dB";
}

// ---------------------------------------------------------------------------
// Suite 3: mixing
// ---------------------------------------------------------------------------

std::string suite_mixing(Context& ctx) {
    Rng rng(Rng::mix(ctx.opts.seed, 0x313cu));

    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto clean = white_noise(4096, 24000, rng);
        const auto env = white_noise(i % 3 == 0 ? 3000 : 5000, 24000, rng);
        const double snr =
            (i % 2 == 0) ? rng.uniform(-5.0, 15.0) : rng.uniform(0.0, 20.0);
        const auto mixed = corpus::mix_at_snr(clean, env, snr, rng);
        const double achieved =
            dsp::snr_db(dsp::energy(clean), dsp::energy(mixed.env_scaled)).value;
        worst = std::max(worst, std::abs(achieved - snr));
    }
    if (worst >= 1e-6)
        throw CheckFail("achieved snr off by " + fmt(worst) + " dB >= 1e-6");

    const auto clean = white_noise(1024, 24000, rng);
    const std::vector<dsp::Waveform> pool = {white_noise(1500, 24000, rng),
                                             white_noise(900, 24000, rng),
                                             white_noise(1024, 24000, rng)};
    corpus::MixSpec spec;
    int silent = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i)
        if (!corpus::augment(clean, pool, spec, rng).snr_db) ++silent;
    const double frac = static_cast<double>(silent) / draws;
    if (std::abs(frac - 0.5) > 0.02)
        throw CheckFail("silence fraction " + fmt(frac) + " outside 0.5 +/- 0.02");

    return "snr error " + fmt(worst) + " dB over 1000 mixes, silence fraction " + fmt(frac);
}

// ---------------------------------------------------------------------------
// Suite 4: cfm_objective
// ---------------------------------------------------------------------------

train::TrainItem tiny_item(int M, int L, Rng& rng, bool nonempty_masks = true) {
    train::TrainItem item;
    item.x1 = Mat::NullaryExpr(M, L, [&]() { return rng.normal(); });
    item.c_spk = Mat::NullaryExpr(M, L, [&]() { return rng.normal(); });
    item.c_env = Mat::NullaryExpr(M, L, [&]() { return rng.normal(); });
    std::string text;
    for (int i = 0; i < std::min(L, 5); ++i)
        text.push_back(static_cast<char>('a' + rng.uniform_int(0, 7)));
    item.text = corpus::extend_text(text, L);
    do {
        item.m_spk = corpus::sample_span_mask(L, 0.3, 0.8, rng);
    } while (nonempty_masks && item.m_spk.masked_count() == 0);
    do {
        item.m_env = corpus::sample_span_mask(L, 0.3, 0.8, rng);
    } while (nonempty_masks && item.m_env.masked_count() == 0);
    return item;
}

std::string suite_cfm(Context& ctx) {
    Rng rng(Rng::mix(ctx.opts.seed, 0xcf3u));

    // The objective seen by a perfect predictor, built directly on the loss
    // graph with a probe tensor in place of the model output.
    const int M = 6, L = 10;
    train::TrainItem item = tiny_item(M, L, rng);
    const double t = 0.37;
    train::FlowPoint flow;
    flow.x1 = item.x1;
    flow.t = t;
    flow.x0 = Mat::NullaryExpr(M, L, [&]() { return rng.normal(); });
    flow.psi_t = (1.0 - t) * flow.x0 + t * flow.x1;
    const Mat target = flow.x1 - flow.x0;
    const double denom = static_cast<double>(M) * item.m_spk.masked_count();

    {
        params::ParamStore probe;
        probe.add("probe.v", target);
        graph::Tape tape;
        graph::Var v = nn::pvar(tape, probe, "probe.v");
        graph::Var loss = tape.sum_sq_cols_weighted(tape.sub(v, tape.constant(target)),
                                                    item.m_spk.as_vec(), denom);
        if (tape.value(loss)(0, 0) != 0.0)
            throw CheckFail("perfect predictor loss is " + fmt(tape.value(loss)(0, 0)) +
                            ", expected exactly 0");
    }

    // Gradient gating: nothing flows through unmasked frames.
    {
        params::ParamStore probe;
        probe.add("probe.v", Mat::NullaryExpr(M, L, [&]() { return rng.normal(); }));
        graph::Tape tape;
        graph::Var v = nn::pvar(tape, probe, "probe.v");
        graph::Var loss = tape.sum_sq_cols_weighted(tape.sub(v, tape.constant(target)),
                                                    item.m_spk.as_vec(), denom);
        tape.backward(loss);
        const Mat& g = probe.grad("probe.v");
        for (int c = 0; c < L; ++c) {
            const bool masked = item.m_spk.flags[static_cast<std::size_t>(c)] != 0;
            if (!masked && g.col(c).cwiseAbs().maxCoeff() != 0.0)
                throw CheckFail("gradient leaked into unmasked frame " + std::to_string(c));
            if (masked && g.col(c).cwiseAbs().maxCoeff() == 0.0)
                throw CheckFail("masked frame " + std::to_string(c) + " received no gradient");
        }
    }

    // Analytic gradients of the full model against central differences.
    net::DitConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.embed_dim = 32;
    cfg.ffn_dim = 64;
    cfg.mel_bins = 16;
    cfg.time_embed_dim = 32;
    const std::size_t n_params = net::param_count(cfg);
    if (n_params > 50000)
        throw CheckFail("finite-difference config has " + std::to_string(n_params) +
                        " parameters > 50k");
    params::ParamStore store = net::init_params(cfg, Rng::mix(ctx.opts.seed, 1u));
    train::TrainItem fd_item = tiny_item(cfg.mel_bins, 12, rng);
    Rng frng(Rng::mix(ctx.opts.seed, 2u));
    const train::FlowPoint fd_flow = train::make_flow_point(fd_item.x1, 0.61, frng);
    // Step 1e-5 keeps central-difference truncation (O(eps^2), and the
    // normalization layers feeding cross-attention have third derivatives
    // large enough to pollute eps 1e-3) far below the 1e-3 gate while
    // staying two decades clear of roundoff on an O(1) loss.
    const double max_rel =
        train::gradient_check(store, cfg, fd_item, fd_flow, 1e-5, 200, ctx.opts.seed);
    if (max_rel >= 1e-3)
        throw CheckFail("finite-difference mismatch " + fmt(max_rel) + " >= 1e-3");

    return "perfect-predictor loss 0, gating exact, fd max rel err " + fmt(max_rel) + " over " +
           std::to_string(n_params) + " params";
}

// ---------------------------------------------------------------------------
// Suite 5: dcfg
// ---------------------------------------------------------------------------

std::string suite_dcfg(Context& ctx) {
    Rng rng(Rng::mix(ctx.opts.seed, 0xdc4u));
    net::DitConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.embed_dim = 32;
    cfg.ffn_dim = 64;
    cfg.mel_bins = 16;
    cfg.time_embed_dim = 32;
    params::ParamStore store = net::init_params(cfg, Rng::mix(ctx.opts.seed, 3u));

    const int L = 9;
    const Mat x = Mat::NullaryExpr(cfg.mel_bins, L, [&]() { return rng.normal(); });
    net::ConditionSet cond;
    std::vector<int> text;
    for (int i = 0; i < L; ++i) text.push_back(rng.uniform_int(0, 9));
    cond.text = text;
    cond.speaker_mel = Mat::NullaryExpr(cfg.mel_bins, L, [&]() { return rng.normal(); });
    cond.env_mel = Mat::NullaryExpr(cfg.mel_bins, 7, [&]() { return rng.normal(); });
    const double t = 0.42;

    const Mat v_full = net::forward(x, t, cond, store, cfg);
    const Mat v_speech = net::forward(x, t, net::null_out(cond, false, true), store, cfg);
    const Mat v_env = net::forward(x, t, net::null_out(cond, true, false), store, cfg);
    const Mat v_null = net::forward(x, t, net::null_out(cond, true, true), store, cfg);

    infer::GuidanceConfig g;  // defaults 2.0 / 2.0
    int forwards = 0;
    const Mat guided = infer::dcfg_velocity(x, t, cond, g, store, cfg, &forwards);
    if (forwards != 4)
        throw CheckFail("guided velocity used " + std::to_string(forwards) +
                        " forward passes, expected 4");
    const Mat expected = v_full + 2.0 * (v_speech - v_null) + 2.0 * (v_env - v_null);
    const double recomb = (guided - expected).cwiseAbs().maxCoeff();
    if (recomb > 1e-12)
        throw CheckFail("recombination error " + fmt(recomb) + " > 1e-12");

    infer::GuidanceConfig g0;
    g0.alpha_speech = 0.0;
    g0.alpha_env = 0.0;
    const Mat collapsed = infer::dcfg_velocity(x, t, cond, g0, store, cfg);
    if ((collapsed - v_full).cwiseAbs().maxCoeff() != 0.0)
        throw CheckFail("zero-strength guidance does not collapse to the conditional pass");

    // All-null conditions telescope: every term evaluates the same pass.
    net::ConditionSet null_cond;
    const Mat base = net::forward(x, t, null_cond, store, cfg);
    for (const auto [as, ae] : {std::pair{2.0, 2.0}, std::pair{5.0, 3.0}}) {
        infer::GuidanceConfig gi;
        gi.alpha_speech = as;
        gi.alpha_env = ae;
        const Mat tele = infer::dcfg_velocity(x, t, null_cond, gi, store, cfg);
        if ((tele - base).cwiseAbs().maxCoeff() != 0.0)
            throw CheckFail("null-condition guidance drifts at strengths " + fmt(as) + "/" +
                            fmt(ae));
    }

    return "recombination " + fmt(recomb) + ", collapse and telescoping exact";
}

// ---------------------------------------------------------------------------
// Suite 6: ode
// ---------------------------------------------------------------------------

std::string suite_ode(Context& ctx) {
    Rng rng(Rng::mix(ctx.opts.seed, 0x0d3u));
    const double s = ctx.opts.euler_dt_scale;

    const Mat x0 = Mat::NullaryExpr(4, 6, [&]() { return rng.normal(); });
    const Mat c = Mat::NullaryExpr(4, 6, [&]() { return rng.normal(); });
    auto constant_field = [&](const Mat&, double) -> Mat { return s * c; };

    std::vector<Mat> results;
    double worst = 0.0;
    for (const int steps : {1, 8, 32}) {
        const Mat r = infer::ode_solve(x0, constant_field, steps);
        worst = std::max(worst, (r - (x0 + c)).cwiseAbs().maxCoeff());
        results.push_back(r);
    }
    for (std::size_t i = 1; i < results.size(); ++i)
        worst = std::max(worst, (results[i] - results[0]).cwiseAbs().maxCoeff());
    if (worst > 1e-12)
        throw CheckFail("constant-field integration off by " + fmt(worst) + " > 1e-12");

    const Mat y0 = Mat::NullaryExpr(3, 3, [&]() { return 1.0 + rng.uniform(); });
    auto decay_field = [&](const Mat& x, double) -> Mat { return -s * x; };
    const Mat y1 = infer::ode_solve(y0, decay_field, 1000);
    const Mat truth = std::exp(-1.0) * y0;
    const double rel = (y1 - truth).norm() / truth.norm();
    if (rel >= 1e-2)
        throw CheckFail("exponential decay relative error " + fmt(rel) + " >= 1e-2");

    return "constant field exact to " + fmt(worst) + ", decay error " + fmt(rel) +
           " at 1000 steps";
}

// ---------------------------------------------------------------------------
// Suite 7: desk_e2e
// ---------------------------------------------------------------------------

std::string overfit_one_batch(Context& ctx, const std::string& manifest,
                              const train::MelSettings& mel, ses::LoadedSes& separation,
                              double& out_ratio) {
    const auto entries = train::prepare_corpus(manifest, mel, &separation, 8);
    if (entries.size() < 4) throw CheckFail("not enough entries for the overfit check");

    net::DitConfig cfg;  // desk-scale defaults
    params::ParamStore store = net::init_params(cfg, Rng::mix(ctx.opts.seed, 0x0f17u));
    params::AdamConfig acfg;
    acfg.lr = 1e-3;
    acfg.warmup_steps = 40;
    params::Adam opt(acfg);

    // One fully frozen batch: items, masks, flow steps and noise all fixed,
    // so the only moving part is the optimizer.
    Rng brng(Rng::mix(ctx.opts.seed, 0xba7c4u));
    const double ts[4] = {0.2, 0.45, 0.7, 0.95};
    std::vector<std::pair<train::TrainItem, train::FlowPoint>> batch;
    for (int i = 0; i < 4; ++i) {
        const auto& e = entries[static_cast<std::size_t>(i)];
        train::TrainItem item;
        item.x1 = e.x1;
        item.c_spk = e.c_spk;
        item.c_env = e.c_env;
        const int L = static_cast<int>(e.x1.cols());
        item.text = corpus::extend_text(e.text, L);
        item.m_spk = corpus::sample_span_mask(L, 0.7, 1.0, brng);
        item.m_env = corpus::sample_span_mask(L, 0.7, 1.0, brng);
        const train::FlowPoint flow = train::make_flow_point(item.x1, ts[i], brng);
        batch.emplace_back(std::move(item), flow);
    }

    const int steps = 800;
    double first = 0.0;
    std::vector<double> tail;
    for (int s = 1; s <= steps; ++s) {
        store.zero_grads();
        double loss = 0.0;
        for (auto& [item, flow] : batch) {
            graph::Tape tape;
            loss += train::cfm_loss_on_tape(tape, store, cfg, item, flow,
                                            train::ConditionPattern::Full, true, 0.25)
                        .value;
        }
        loss /= 4.0;
        if (s == 1) first = loss;
        if (s > steps - 10) tail.push_back(loss);
        opt.step(store);
        if (s % 200 == 0) ctx.log << "[overfit] step " << s << " loss " << loss << "\n";
    }
    double tail_mean = 0.0;
    for (double v : tail) tail_mean += v;
    tail_mean /= static_cast<double>(tail.size());
    out_ratio = tail_mean / first;
    if (out_ratio >= 0.05)
        throw CheckFail("one-batch loss only fell to " + fmt(100.0 * out_ratio) +
                        "% of initial (needs < 5%)");
    return "overfit ratio " + fmt(100.0 * out_ratio) + "%";
}

std::string suite_desk_e2e_full(Context& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    DeskArtifacts& desk = ctx.desk_artifacts();

    // Separation learning curve: desk run must at least halve its loss.
    if (desk.ses_first10 <= 0.0)
        throw CheckFail("separation loss log too short to evaluate");
    const double halve = desk.ses_last10 / desk.ses_first10;
    if (halve >= 0.5)
        throw CheckFail("separation loss only fell to " + fmt(100.0 * halve) +
                        "% of its early mean (needs < 50%)");

    double overfit_ratio = 0.0;
    overfit_one_batch(ctx, desk.manifest, desk.mel, desk.separation, overfit_ratio);

    // Tone accuracy with a silent environment prompt over 20 held-in items.
    auto synth = load_desk_synthesizer(desk);
    const auto items = corpus::read_manifest(desk.manifest);
    std::vector<corpus::CorpusItem> silent;
    for (const auto& it : items)
        if (!it.snr_db) silent.push_back(it);
    if (silent.size() < 21) throw CheckFail("needs at least 21 silent-environment items");

    int correct = 0, total = 0;
    dsp::Waveform first_silent_output;
    infer::SynthesisRequest first_req;
    for (int i = 0; i < 20; ++i) {
        const auto& ref = silent[static_cast<std::size_t>(i)];
        const auto& gen = silent[static_cast<std::size_t>(i) + 1];
        infer::SynthesisRequest req;
        req.speaker_prompt =
            wav::read(corpus::resolve_manifest_path(desk.manifest, ref.mixture_path));
        req.env_prompt = silence_wave(24000, synth.sample_rate);
        req.ref_text = ref.text;
        req.gen_text = gen.text;
        req.seed = Rng::mix(ctx.opts.seed, 0x7e57 + static_cast<std::uint64_t>(i));
        const auto out = infer::synthesize(synth, req);
        const auto expected = corpus::Vocab::tokenize(gen.text);
        const auto decoded = corpus::decode_tones(out.wave, static_cast<int>(expected.size()),
                                                  corpus::ToneSpec{}, synth.stft);
        for (std::size_t k = 0; k < expected.size(); ++k) {
            ++total;
            if (decoded[k] == expected[k]) ++correct;
        }
        if (i == 0) {
            first_silent_output = out.wave;
            first_req = req;
        }
        ctx.log << "[tones] prompt " << i << ": " << correct << "/" << total
                << " cumulative\n";
    }
    const double acc = static_cast<double>(correct) / total;
    if (acc < 0.9)
        throw CheckFail("tone accuracy " + fmt(100.0 * acc) + "% < 90%");

    // Environment control: a band-noise prompt must lift that band.
    Rng erng(Rng::mix(ctx.opts.seed, 0xe47u));
    infer::SynthesisRequest noisy_req = first_req;
    noisy_req.env_prompt = corpus::render_band_noise(
        24000, synth.sample_rate, corpus::kNoiseBands[1][0], corpus::kNoiseBands[1][1], 48,
        erng);
    const auto noisy_out = infer::synthesize(synth, noisy_req);
    const double e_noise = band_energy(noisy_out.wave, synth.stft, corpus::kNoiseBands[1][0],
                                       corpus::kNoiseBands[1][1]);
    const double e_base = band_energy(first_silent_output, synth.stft,
                                      corpus::kNoiseBands[1][0], corpus::kNoiseBands[1][1]);
    const double lift = 10.0 * std::log10((e_noise + 1e-20) / (e_base + 1e-20));
    if (lift < 6.0)
        throw CheckFail("band-noise prompt lifted its band by only " + fmt(lift) +
                        " dB (needs >= 6)");

    const double total_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (desk.train_seconds > 14400.0)
        throw CheckFail("training exceeded the 4 h budget: " + fmt(desk.train_seconds) + " s");

    return "ses loss to " + fmt(100.0 * halve) + "%, overfit to " +
           fmt(100.0 * overfit_ratio) + "%, tone accuracy " + fmt(100.0 * acc) +
           "%, band lift " + fmt(lift) + " dB (" + fmt(total_s, 4) + " s)";
}

std::string suite_desk_e2e_smoke(Context& ctx) {
    const fs::path work = fs::path(ctx.opts.work_dir) / "smoke";
    fs::remove_all(work);
    fs::create_directories(work);

    // Small corpus.
    corpus::CorpusSpec spec;
    spec.n_items = 24;
    spec.min_tokens = 3;
    spec.max_tokens = 4;
    spec.seed = ctx.opts.seed;
    spec.out_dir = (work / "corpus").string();
    fs::create_directories(spec.out_dir);
    const auto items = corpus::build_desk_corpus(spec);
    if (items.size() != 24) throw CheckFail("smoke corpus produced wrong item count");
    const std::string manifest = (work / "corpus" / "manifest.tsv").string();

    train::MelSettings mel = desk_mel_settings();
    mel.mel_bins = 32;

    // Tiny separation train: loss must decrease.
    ses::SesTrainConfig scfg;
    scfg.model.layers = 1;
    scfg.model.heads = 2;
    scfg.model.embed_dim = 32;
    scfg.model.ffn_dim = 64;
    scfg.stft = mel.stft;
    scfg.adam.lr = 3e-4;
    scfg.adam.warmup_steps = 5;
    scfg.steps = 60;
    scfg.batch_size = 2;
    scfg.seed = ctx.opts.seed;
    scfg.out_dir = (work / "ses").string();
    std::vector<ses::TrainLogEntry> slog;
    ses::train_ses(ses::load_triples(manifest, scfg.stft, 12), scfg, &slog);
    double s_head = 0.0, s_tail = 0.0;
    for (int i = 0; i < 10; ++i) {
        s_head += slog[static_cast<std::size_t>(i)].loss;
        s_tail += slog[slog.size() - 10 + static_cast<std::size_t>(i)].loss;
    }
    if (!(s_tail < s_head))
        throw CheckFail("separation smoke loss did not decrease");

    // Tiny velocity train on oracle-separated entries.
    const auto entries = train::prepare_corpus(manifest, mel, nullptr, 12);
    train::TtsTrainConfig tcfg;
    tcfg.model.layers = 1;
    tcfg.model.heads = 2;
    tcfg.model.embed_dim = 48;
    tcfg.model.ffn_dim = 96;
    tcfg.model.mel_bins = mel.mel_bins;
    tcfg.model.time_embed_dim = 48;
    tcfg.adam.lr = 3e-4;
    tcfg.adam.warmup_steps = 5;
    tcfg.steps = 60;
    tcfg.batch_size = 2;
    tcfg.seed = ctx.opts.seed;
    tcfg.out_dir = (work / "tts").string();
    mel.to_kv(tcfg.meta);
    std::vector<train::TrainLogEntry> tlog;
    train::train_tts(entries, tcfg, &tlog);
    double t_head = 0.0, t_tail = 0.0;
    for (int i = 0; i < 10; ++i) {
        t_head += tlog[static_cast<std::size_t>(i)].loss;
        t_tail += tlog[tlog.size() - 10 + static_cast<std::size_t>(i)].loss;
    }
    if (!std::isfinite(t_tail) || !(t_tail < t_head))
        throw CheckFail("velocity smoke loss did not decrease");

    // A full synthesis pass through the tiny models: shape and finiteness.
    auto synth = infer::make_synthesizer((work / "ses" / "ses_final.ckpt").string(),
                                         (work / "tts" / "tts_final.ckpt").string());
    infer::SynthesisRequest req;
    req.speaker_prompt = wav::read(corpus::resolve_manifest_path(manifest, items[0].mixture_path));
    req.env_prompt = silence_wave(24000, synth.sample_rate);
    req.ref_text = items[0].text;
    req.gen_text = items[1].text;
    req.guidance.ode_steps = 8;
    req.griffin_lim_iters = 10;
    req.seed = ctx.opts.seed;
    const auto out = infer::synthesize(synth, req);
    const int expected_frames = infer::generated_frames(
        out.ref_frames, static_cast<int>(corpus::Vocab::tokenize(req.ref_text).size()),
        static_cast<int>(corpus::Vocab::tokenize(req.gen_text).size()));
    const int expected_len = (expected_frames - 1) * mel.stft.hop_size;
    if (static_cast<int>(out.wave.samples.size()) != expected_len)
        throw CheckFail("synthesis length " + std::to_string(out.wave.samples.size()) +
                        " != expected " + std::to_string(expected_len));
    for (double v : out.wave.samples)
        if (!std::isfinite(v)) throw CheckFail("synthesis produced non-finite samples");

    return "smoke profile: corpus 24 items, both trainers converging, synthesis shape ok "
           "(training-scale thresholds run in the full profile)";
}

std::string suite_desk_e2e(Context& ctx) {
    return ctx.opts.full ? suite_desk_e2e_full(ctx) : suite_desk_e2e_smoke(ctx);
}

// ---------------------------------------------------------------------------
// Suite 8: determinism
// ---------------------------------------------------------------------------

int run_cli(Context& ctx, const std::string& args, const fs::path& log_file) {
    const std::string cmd = "'" + ctx.opts.cli_path + "' " + args + " >'" +
                            log_file.string() + "' 2>&1";
    const int rc = std::system(cmd.c_str());
    if (rc == -1) throw CheckFail("failed to launch: " + cmd);
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw CheckFail("missing artifact: " + p.string());
    return std::vector<char>(std::istreambuf_iterator<char>(in),
                             std::istreambuf_iterator<char>());
}

void expect_identical(const fs::path& a, const fs::path& b) {
    if (read_bytes(a) != read_bytes(b))
        throw CheckFail("artifacts differ: " + a.string() + " vs " + b.string());
}

// Loss logs carry wall-clock times; compare the deterministic columns.
void expect_same_losses(const fs::path& a, const fs::path& b) {
    const auto ra = read_loss_csv(a.string());
    const auto rb = read_loss_csv(b.string());
    if (ra.size() != rb.size())
        throw CheckFail("loss logs have different lengths: " + a.string());
    for (std::size_t i = 0; i < ra.size(); ++i)
        if (ra[i].step != rb[i].step || ra[i].loss != rb[i].loss)
            throw CheckFail("loss logs diverge at row " + std::to_string(i) + ": " +
                            a.string());
}

std::string suite_determinism(Context& ctx) {
    if (ctx.opts.cli_path.empty())
        throw CheckFail("no binary path available for subcommand replay");
    const fs::path det = fs::path(ctx.opts.work_dir) / "determinism";
    fs::remove_all(det);
    fs::create_directories(det);
    const std::string seed = " --seed 7 --threads 1 ";

    // Tiny model configs shared by both replicas.
    const fs::path ses_cfg = det / "ses.cfg";
    {
        std::ofstream f(ses_cfg);
        f << "ses.layers = 1\nses.heads = 2\nses.embed_dim = 32\nses.ffn_dim = 64\n"
          << "adam.lr = 0.0003\nadam.warmup = 5\n";
    }
    const fs::path tts_cfg = det / "tts.cfg";
    {
        std::ofstream f(tts_cfg);
        f << "tts.layers = 1\ntts.heads = 2\ntts.embed_dim = 48\ntts.ffn_dim = 96\n"
          << "tts.time_embed_dim = 48\nmel.bins = 32\nadam.lr = 0.0003\nadam.warmup = 5\n";
    }

    auto pair_dirs = [&](const std::string& name) {
        return std::pair{det / (name + "1"), det / (name + "2")};
    };

    // build-corpus
    const auto [c1, c2] = pair_dirs("corpus");
    for (const auto& d : {c1, c2}) {
        if (run_cli(ctx,
                    "build-corpus --items 12 --min-tokens 3 --max-tokens 3" + seed +
                        "--output-dir '" + d.string() + "'",
                    det / "log_corpus.txt") != 0)
            throw CheckFail("build-corpus replica failed; see " +
                            (det / "log_corpus.txt").string());
    }
    expect_identical(c1 / "manifest.tsv", c2 / "manifest.tsv");
    const auto items = corpus::read_manifest((c1 / "manifest.tsv").string());
    const std::string m1 = (c1 / "manifest.tsv").string();
    for (const auto& rel :
         {items[0].clean_path, items[0].env_path, items[0].mixture_path})
        expect_identical(corpus::resolve_manifest_path(m1, rel),
                         fs::path(corpus::resolve_manifest_path(
                             (c2 / "manifest.tsv").string(), rel)));

    // train-ses
    const auto [s1, s2] = pair_dirs("ses");
    for (const auto& d : {s1, s2}) {
        if (run_cli(ctx,
                    "train-ses --manifest '" + m1 + "' --steps 25 --batch-size 2 --config '" +
                        ses_cfg.string() + "'" + seed + "--output-dir '" + d.string() + "'",
                    det / "log_ses.txt") != 0)
            throw CheckFail("train-ses replica failed; see " + (det / "log_ses.txt").string());
    }
    expect_identical(s1 / "ses_final.ckpt", s2 / "ses_final.ckpt");
    expect_same_losses(s1 / "ses_loss.csv", s2 / "ses_loss.csv");

    // train-tts (oracle-separated data prep keeps it fast)
    const auto [t1, t2] = pair_dirs("tts");
    for (const auto& d : {t1, t2}) {
        if (run_cli(ctx,
                    "train-tts --manifest '" + m1 +
                        "' --steps 25 --batch-size 2 --oracle-masks --config '" +
                        tts_cfg.string() + "'" + seed + "--output-dir '" + d.string() + "'",
                    det / "log_tts.txt") != 0)
            throw CheckFail("train-tts replica failed; see " + (det / "log_tts.txt").string());
    }
    expect_identical(t1 / "tts_final.ckpt", t2 / "tts_final.ckpt");
    expect_same_losses(t1 / "tts_loss.csv", t2 / "tts_loss.csv");

    // separate
    const std::string mix0 = corpus::resolve_manifest_path(m1, items[0].mixture_path);
    const auto [p1, p2] = pair_dirs("sep");
    for (const auto& d : {p1, p2}) {
        if (run_cli(ctx,
                    "separate --input '" + mix0 + "' --checkpoint '" +
                        (s1 / "ses_final.ckpt").string() + "'" + seed + "--output-dir '" +
                        d.string() + "'",
                    det / "log_sep.txt") != 0)
            throw CheckFail("separate replica failed; see " + (det / "log_sep.txt").string());
    }
    for (const char* f : {"speech.wav", "env.wav", "speech_mel.bin", "env_mel.bin"})
        expect_identical(p1 / f, p2 / f);

    // mix
    const std::string cl0 = corpus::resolve_manifest_path(m1, items[0].clean_path);
    const std::string cl1 = corpus::resolve_manifest_path(m1, items[1].clean_path);
    const auto [x1, x2] = pair_dirs("mix");
    for (const auto& d : {x1, x2}) {
        if (run_cli(ctx,
                    "mix --clean '" + cl0 + "' --env '" + cl1 + "' --snr 5" + seed +
                        "--output-dir '" + d.string() + "'",
                    det / "log_mix.txt") != 0)
            throw CheckFail("mix replica failed; see " + (det / "log_mix.txt").string());
    }
    expect_identical(x1 / "mixture.wav", x2 / "mixture.wav");

    // synth
    const auto [y1, y2] = pair_dirs("synth");
    for (const auto& d : {y1, y2}) {
        if (run_cli(ctx,
                    "synth --speaker-prompt '" + mix0 + "' --env-prompt '" + cl1 +
                        "' --ref-text " + items[0].text + " --gen-text abc" +
                        " --ses-checkpoint '" + (s1 / "ses_final.ckpt").string() +
                        "' --tts-checkpoint '" + (t1 / "tts_final.ckpt").string() +
                        "' --ode-steps 4 --gl-iters 8 --mel-dump" + seed + "--output-dir '" +
                        d.string() + "'",
                    det / "log_synth.txt") != 0)
            throw CheckFail("synth replica failed; see " + (det / "log_synth.txt").string());
    }
    expect_identical(y1 / "synth.wav", y2 / "synth.wav");
    expect_identical(y1 / "gen_mel.bin", y2 / "gen_mel.bin");

    // check (one fast suite; its report must be stable)
    const auto [k1, k2] = pair_dirs("check");
    for (const auto& d : {k1, k2}) {
        fs::create_directories(d);
        const fs::path log = d / "report.txt";
        if (run_cli(ctx, "check --only ode" + seed + "--output-dir '" + d.string() + "'",
                    log) != 0)
            throw CheckFail("check replica failed; see " + log.string());
        std::ifstream in(log);
        std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        if (text.find("ode: PASS") == std::string::npos)
            throw CheckFail("nested check report missing its pass line");
    }

    return "7 subcommands replayed bitwise-identically under seed 7";
}

}  // namespace

std::vector<SuiteResult> run_checks(const CheckOptions& opts, std::ostream& log) {
    if (!opts.only.empty()) {
        const auto& names = suite_names();
        if (std::find(names.begin(), names.end(), opts.only) == names.end())
            throw ConfigError("unknown suite: " + opts.only);
    }

    Context ctx{opts, log, std::nullopt};
    using SuiteFn = std::string (*)(Context&);
    // Execution order puts the expensive training run before the suite that
    // reuses its artifacts; reporting order is canonical.
    const std::vector<std::pair<std::string, SuiteFn>> order = {
        {"dsp", suite_dsp},           {"mixing", suite_mixing},
        {"cfm_objective", suite_cfm}, {"dcfg", suite_dcfg},
        {"ode", suite_ode},           {"desk_e2e", suite_desk_e2e},
        {"snr_adaptation", suite_snr_adaptation}, {"determinism", suite_determinism}};

    std::vector<SuiteResult> results;
    for (const auto& [name, fn] : order) {
        if (!opts.only.empty() && name != opts.only) continue;
        log << "[check] running " << name << "\n";
        SuiteResult r;
        r.name = name;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            r.detail = fn(ctx);
            r.passed = true;
        } catch (const std::exception& e) {
            r.passed = false;
            r.detail = e.what();
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log << "[check] " << name << (r.passed ? " passed" : " FAILED") << " in "
            << fmt(r.seconds, 4) << " s\n";
        results.push_back(std::move(r));
    }

    // Canonical order for the report.
    std::vector<SuiteResult> sorted;
    for (const auto& name : suite_names())
        for (auto& r : results)
            if (r.name == name) sorted.push_back(std::move(r));
    return sorted;
}

int print_report(const std::vector<SuiteResult>& results, std::ostream& out) {
    bool all = true;
    for (const auto& r : results) {
        out << r.name << ": " << (r.passed ? "PASS" : "FAIL") << " (" << fmt(r.seconds, 4)
            << "s) " << r.detail << "\n";
        all = all && r.passed;
    }
    out << "result: " << (all ? "PASS" : "FAIL") << " (" << results.size() << " suites)\n";
    return all ? 0 : 1;
}

}  // namespace enviro::checks
