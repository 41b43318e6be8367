#include "enviro/checks.hpp"
#include "enviro/corpus.hpp"
#include "enviro/dsp.hpp"
#include "enviro/infer.hpp"
#include "enviro/kv.hpp"
#include "enviro/net.hpp"
#include "enviro/ses.hpp"
#include "enviro/train.hpp"
#include "enviro/wav.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace enviro;

namespace {

// ENVIRO_INFILL_LOG: quiet | info (default) | debug.
int log_level() {
    const char* v = std::getenv("ENVIRO_INFILL_LOG");
    if (!v) return 1;
    const std::string s(v);
    if (s == "quiet") return 0;
    if (s == "debug") return 2;
    return 1;
}

void info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[enviro-infill] " << msg << "\n";
}

struct Global {
    std::string config_path;
    std::uint64_t seed = 1;
    std::string output_dir = "enviro_out";
    int threads = 1;
    KvConfig kv;

    void finish_parse() {
        if (!config_path.empty()) kv = KvConfig::parse_file(config_path);
        if (threads < 1) throw ConfigError("--threads must be >= 1");
        if (threads > 1)
            info("running single-threaded; --threads above 1 has no effect in this build");
    }

    // Flags override config; config overrides built-ins.
    int geti(const CLI::Option* o, int flag, const char* key, int dflt) const {
        return (o && o->count()) ? flag : kv.get_int(key, dflt);
    }
    double getd(const CLI::Option* o, double flag, const char* key, double dflt) const {
        return (o && o->count()) ? flag : kv.get_double(key, dflt);
    }
    std::string gets(const CLI::Option* o, const std::string& flag, const char* key,
                     const std::string& dflt) const {
        return (o && o->count()) ? flag : kv.get_str(key, dflt);
    }
    bool getb(const CLI::Option* o, bool flag, const char* key, bool dflt) const {
        return (o && o->count()) ? flag : kv.get_bool(key, dflt);
    }
};

ses::SesConfig ses_config_from(const Global& g, const dsp::StftConfig& stft) {
    ses::SesConfig cfg;
    cfg.layers = g.kv.get_int("ses.layers", cfg.layers);
    cfg.heads = g.kv.get_int("ses.heads", cfg.heads);
    cfg.embed_dim = g.kv.get_int("ses.embed_dim", cfg.embed_dim);
    cfg.ffn_dim = g.kv.get_int("ses.ffn_dim", cfg.ffn_dim);
    cfg.freq_bins = stft.freq_bins();
    return cfg;
}

net::DitConfig dit_config_from(const Global& g, int mel_bins) {
    net::DitConfig cfg;
    cfg.layers = g.kv.get_int("tts.layers", cfg.layers);
    cfg.heads = g.kv.get_int("tts.heads", cfg.heads);
    cfg.embed_dim = g.kv.get_int("tts.embed_dim", cfg.embed_dim);
    cfg.ffn_dim = g.kv.get_int("tts.ffn_dim", cfg.ffn_dim);
    cfg.time_embed_dim = g.kv.get_int("tts.time_embed_dim", cfg.time_embed_dim);
    cfg.mel_bins = mel_bins;
    return cfg;
}

params::AdamConfig adam_from(const Global& g, const CLI::Option* lr_opt, double lr_flag,
                             const CLI::Option* warm_opt, int warm_flag, int steps) {
    params::AdamConfig a;
    a.lr = g.getd(lr_opt, lr_flag, "adam.lr", 3e-4);
    a.beta1 = g.kv.get_double("adam.beta1", a.beta1);
    a.beta2 = g.kv.get_double("adam.beta2", a.beta2);
    a.eps = g.kv.get_double("adam.eps", a.eps);
    // Default warmup: 5% of the schedule.
    a.warmup_steps = g.geti(warm_opt, warm_flag, "adam.warmup", std::max(1, steps / 20));
    return a;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_build_corpus(const Global& g, const CLI::Option* items_o, int items,
                     const CLI::Option* mint_o, int mint, const CLI::Option* maxt_o, int maxt,
                     const CLI::Option* lo_o, double lo, const CLI::Option* hi_o, double hi,
                     const CLI::Option* ap_o, double ap) {
    corpus::CorpusSpec spec;
    spec.n_items = g.geti(items_o, items, "corpus.items", 500);
    spec.min_tokens = g.geti(mint_o, mint, "corpus.min_tokens", 4);
    spec.max_tokens = g.geti(maxt_o, maxt, "corpus.max_tokens", 6);
    spec.mix.train_snr_lo = g.getd(lo_o, lo, "corpus.snr_lo", spec.mix.train_snr_lo);
    spec.mix.train_snr_hi = g.getd(hi_o, hi, "corpus.snr_hi", spec.mix.train_snr_hi);
    spec.mix.augment_prob = g.getd(ap_o, ap, "corpus.augment_prob", spec.mix.augment_prob);
    spec.seed = g.seed;
    spec.out_dir = g.output_dir;
    fs::create_directories(spec.out_dir);
    const auto items_out = corpus::build_desk_corpus(spec);
    info("wrote " + std::to_string(items_out.size()) + " items to " + spec.out_dir);
    std::cout << (fs::path(spec.out_dir) / "manifest.tsv").string() << "\n";
    return 0;
}

int cmd_train_ses(const Global& g, const std::string& manifest, const CLI::Option* steps_o,
                  int steps, const CLI::Option* batch_o, int batch, const CLI::Option* lr_o,
                  double lr, const CLI::Option* warm_o, int warm, const CLI::Option* mode_o,
                  const std::string& mode, int ckpt_every, const std::string& resume,
                  int max_items) {
    const train::MelSettings mel = train::MelSettings::from_kv(g.kv);
    ses::SesTrainConfig cfg;
    cfg.stft = mel.stft;
    cfg.model = ses_config_from(g, cfg.stft);
    cfg.steps = g.geti(steps_o, steps, "train.steps", 2000);
    cfg.batch_size = g.geti(batch_o, batch, "train.batch_size", 4);
    cfg.adam = adam_from(g, lr_o, lr, warm_o, warm, cfg.steps);
    cfg.seed = g.seed;
    cfg.loss_mode = g.gets(mode_o, mode, "ses.loss_mode", "reconstruction");
    cfg.checkpoint_every = ckpt_every;
    cfg.out_dir = g.output_dir;
    cfg.resume_from = resume;
    cfg.sample_rate = mel.sample_rate;

    info("loading triples from " + manifest);
    const auto triples = ses::load_triples(manifest, cfg.stft, max_items);
    info("training separation model for " + std::to_string(cfg.steps) + " steps on " +
         std::to_string(triples.size()) + " items");
    ses::train_ses(triples, cfg);
    std::cout << (fs::path(cfg.out_dir) / "ses_final.ckpt").string() << "\n";
    return 0;
}

int cmd_train_tts(const Global& g, const std::string& manifest, const CLI::Option* steps_o,
                  int steps, const CLI::Option* batch_o, int batch, const CLI::Option* lr_o,
                  double lr, const CLI::Option* warm_o, int warm,
                  const std::string& ses_ckpt, bool oracle, int ckpt_every,
                  const std::string& resume, int max_items) {
    const train::MelSettings mel = train::MelSettings::from_kv(g.kv);
    train::TtsTrainConfig cfg;
    cfg.model = dit_config_from(g, mel.mel_bins);
    cfg.steps = g.geti(steps_o, steps, "train.steps", 10000);
    cfg.batch_size = g.geti(batch_o, batch, "train.batch_size", 4);
    cfg.adam = adam_from(g, lr_o, lr, warm_o, warm, cfg.steps);
    cfg.dropout.p_all_null = g.kv.get_double("dropout.all_null", 0.1);
    cfg.dropout.p_env_null = g.kv.get_double("dropout.env_null", 0.1);
    cfg.dropout.p_speech_text_null = g.kv.get_double("dropout.speech_text_null", 0.1);
    cfg.mask_ratio_lo = g.kv.get_double("train.mask_lo", 0.7);
    cfg.mask_ratio_hi = g.kv.get_double("train.mask_hi", 1.0);
    cfg.seed = g.seed;
    cfg.checkpoint_every = ckpt_every;
    cfg.out_dir = g.output_dir;
    cfg.resume_from = resume;
    mel.to_kv(cfg.meta);

    std::vector<train::CorpusEntry> entries;
    if (oracle) {
        info("preparing entries with ideal-ratio masks");
        entries = train::prepare_corpus(manifest, mel, nullptr, max_items);
    } else {
        if (ses_ckpt.empty())
            throw ConfigError("train-tts needs --ses-checkpoint (or --oracle-masks)");
        info("preparing entries through " + ses_ckpt);
        ses::LoadedSes sep = ses::load_ses_checkpoint(ses_ckpt);
        entries = train::prepare_corpus(manifest, mel, &sep, max_items);
    }
    info("training velocity model for " + std::to_string(cfg.steps) + " steps on " +
         std::to_string(entries.size()) + " entries");
    train::train_tts(entries, cfg);
    std::cout << (fs::path(cfg.out_dir) / "tts_final.ckpt").string() << "\n";
    return 0;
}

int cmd_separate(const Global& g, const std::string& input, const std::string& ckpt,
                 bool oracle, const std::string& clean_path, const std::string& env_path) {
    const auto wave = wav::read(input);
    dsp::StftConfig stft_cfg;
    ses::MaskPair masks;
    if (oracle) {
        if (clean_path.empty() || env_path.empty())
            throw ConfigError("separate --oracle-masks needs --clean and --env");
        stft_cfg = train::MelSettings::from_kv(g.kv).stft;
        const auto clean = wav::read(clean_path);
        const auto env = wav::read(env_path);
        masks = ses::oracle_masks(dsp::magnitude(dsp::stft(clean, stft_cfg)),
                                  dsp::magnitude(dsp::stft(env, stft_cfg)));
    } else {
        if (ckpt.empty()) throw ConfigError("separate needs --checkpoint (or --oracle-masks)");
        ses::LoadedSes sep = ses::load_ses_checkpoint(ckpt);
        if (wave.sample_rate != sep.sample_rate)
            throw ConfigError("separate: input sample rate " +
                              std::to_string(wave.sample_rate) + " differs from the model's " +
                              std::to_string(sep.sample_rate));
        stft_cfg = sep.stft;
        masks = ses::masking_net_forward(dsp::magnitude(dsp::stft(wave, stft_cfg)), sep.store,
                                         sep.config);
    }

    const auto spec = dsp::stft(wave, stft_cfg);
    const auto [speech_spec, env_spec] = ses::apply_masks_complex(spec, masks);
    const int n = static_cast<int>(wave.samples.size());
    const auto speech = dsp::istft_aligned(speech_spec, wave.sample_rate, n);
    const auto env = dsp::istft_aligned(env_spec, wave.sample_rate, n);

    const train::MelSettings mel = train::MelSettings::from_kv(g.kv);
    const auto fb = mel.filterbank();
    const auto [speech_mag, env_mag] = ses::apply_masks(dsp::magnitude(spec), masks);

    fs::create_directories(g.output_dir);
    const fs::path out(g.output_dir);
    wav::write_float32((out / "speech.wav").string(), speech);
    wav::write_float32((out / "env.wav").string(), env);
    infer::write_mel_dump((out / "speech_mel.bin").string(),
                          dsp::mag_to_mel(speech_mag, fb).frames);
    infer::write_mel_dump((out / "env_mel.bin").string(), dsp::mag_to_mel(env_mag, fb).frames);
    info("separated " + input + " into " + g.output_dir);
    std::cout << (out / "speech.wav").string() << "\n" << (out / "env.wav").string() << "\n";
    return 0;
}

int cmd_mix(const Global& g, const std::string& clean_path, const std::string& env_path,
            double snr) {
    const auto clean = wav::read(clean_path);
    const auto env = wav::read(env_path);
    Rng rng(Rng::mix(g.seed, 0x31dcu));
    const auto mixed = corpus::mix_at_snr(clean, env, snr, rng);
    fs::create_directories(g.output_dir);
    const fs::path out = fs::path(g.output_dir) / "mixture.wav";
    wav::write_float32(out.string(), mixed.mixture);
    const double achieved =
        dsp::snr_db(dsp::energy(clean), dsp::energy(mixed.env_scaled)).value;
    info("achieved snr " + std::to_string(achieved) + " dB");
    std::cout << out.string() << "\n";
    return 0;
}

int cmd_synth(const Global& g, const std::string& spk_path, const std::string& env_path,
              const std::string& ref_text, const std::string& gen_text,
              const std::string& ses_ckpt, const std::string& tts_ckpt,
              const CLI::Option* as_o, double as, const CLI::Option* ae_o, double ae,
              const CLI::Option* steps_o, int ode_steps, const CLI::Option* adapt_o,
              bool adapt, const CLI::Option* gl_o, int gl_iters, bool mel_dump) {
    auto synth = infer::make_synthesizer(ses_ckpt, tts_ckpt);
    infer::SynthesisRequest req;
    req.speaker_prompt = wav::read(spk_path);
    req.env_prompt = wav::read(env_path);
    req.ref_text = ref_text;
    req.gen_text = gen_text;
    req.guidance.alpha_speech = g.getd(as_o, as, "guidance.alpha_speech", 2.0);
    req.guidance.alpha_env = g.getd(ae_o, ae, "guidance.alpha_env", 2.0);
    req.guidance.ode_steps = g.geti(steps_o, ode_steps, "guidance.ode_steps", 32);
    req.snr_adapt = g.getb(adapt_o, adapt, "synth.snr_adapt", false);
    req.griffin_lim_iters = g.geti(gl_o, gl_iters, "synth.gl_iters", 60);
    req.seed = g.seed;

    const auto result = infer::synthesize(synth, req);
    fs::create_directories(g.output_dir);
    const fs::path out(g.output_dir);
    wav::write_float32((out / "synth.wav").string(), result.wave);
    if (mel_dump) {
        infer::write_mel_dump((out / "gen_mel.bin").string(), result.gen_mel);
        infer::write_mel_dump((out / "full_mel.bin").string(), result.full_mel);
    }
    if (req.snr_adapt)
        info("environment gain applied: " + std::to_string(result.scale_applied));
    info("synthesized " + std::to_string(result.wave.samples.size()) + " samples");
    std::cout << (out / "synth.wav").string() << "\n";
    return 0;
}

int cmd_check(const Global& g, const std::string& argv0, bool full, const std::string& only,
              const std::string& fault) {
    checks::CheckOptions opts;
    opts.seed = g.seed;
    opts.work_dir = g.output_dir;
    opts.full = full;
    opts.only = only;
    opts.cli_path = fs::absolute(argv0).string();
    if (fault == "euler-step")
        opts.euler_dt_scale = 1.02;
    else if (!fault.empty())
        throw ConfigError("unknown fault: " + fault + " (supported: euler-step)");
    const auto results = checks::run_checks(opts, std::cerr);
    return checks::print_report(results, std::cout);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Environment-aware speech infilling pipeline"};
    app.require_subcommand(1);

    Global g;
    app.add_option("--config", g.config_path, "Key-value config file")->expected(1);
    app.add_option("--seed", g.seed, "Master seed for all randomness");
    app.add_option("--output-dir", g.output_dir, "Directory for artifacts");
    app.add_option("--threads", g.threads, "Worker cap (this build is single-threaded)");
    app.fallthrough();

    // build-corpus
    auto* bc = app.add_subcommand("build-corpus", "Render the synthetic training corpus");
    int bc_items = 500, bc_min = 4, bc_max = 6;
    double bc_lo = -5.0, bc_hi = 15.0, bc_ap = 0.5;
    auto* bc_items_o = bc->add_option("--items", bc_items, "Item count");
    auto* bc_min_o = bc->add_option("--min-tokens", bc_min, "Shortest text");
    auto* bc_max_o = bc->add_option("--max-tokens", bc_max, "Longest text");
    auto* bc_lo_o = bc->add_option("--snr-lo", bc_lo, "Mixture snr lower bound (dB)");
    auto* bc_hi_o = bc->add_option("--snr-hi", bc_hi, "Mixture snr upper bound (dB)");
    auto* bc_ap_o = bc->add_option("--augment-prob", bc_ap, "Probability of a noisy mixture");

    // train-ses
    auto* ts = app.add_subcommand("train-ses", "Train the masking separation model");
    std::string ts_manifest, ts_mode = "reconstruction", ts_resume;
    int ts_steps = 2000, ts_batch = 4, ts_warm = 0, ts_every = 0, ts_max = 0;
    double ts_lr = 3e-4;
    ts->add_option("--manifest", ts_manifest, "Corpus manifest")->required();
    auto* ts_steps_o = ts->add_option("--steps", ts_steps, "Training steps");
    auto* ts_batch_o = ts->add_option("--batch-size", ts_batch, "Items per step");
    auto* ts_lr_o = ts->add_option("--lr", ts_lr, "Peak learning rate");
    auto* ts_warm_o = ts->add_option("--warmup", ts_warm, "Warmup steps");
    auto* ts_mode_o = ts->add_option("--loss-mode", ts_mode,
                                     "reconstruction | oracle_mask");
    ts->add_option("--checkpoint-every", ts_every, "Periodic checkpoint interval");
    ts->add_option("--resume", ts_resume, "Checkpoint to resume from");
    ts->add_option("--max-items", ts_max, "Cap on manifest items (0 = all)");

    // train-tts
    auto* tt = app.add_subcommand("train-tts", "Train the velocity model");
    std::string tt_manifest, tt_ses, tt_resume;
    bool tt_oracle = false;
    int tt_steps = 10000, tt_batch = 4, tt_warm = 0, tt_every = 0, tt_max = 0;
    double tt_lr = 3e-4;
    tt->add_option("--manifest", tt_manifest, "Corpus manifest")->required();
    auto* tt_steps_o = tt->add_option("--steps", tt_steps, "Training steps");
    auto* tt_batch_o = tt->add_option("--batch-size", tt_batch, "Items per step");
    auto* tt_lr_o = tt->add_option("--lr", tt_lr, "Peak learning rate");
    auto* tt_warm_o = tt->add_option("--warmup", tt_warm, "Warmup steps");
    tt->add_option("--ses-checkpoint", tt_ses, "Separation model for data prep");
    tt->add_flag("--oracle-masks", tt_oracle, "Prep data with ideal-ratio masks instead");
    tt->add_option("--checkpoint-every", tt_every, "Periodic checkpoint interval");
    tt->add_option("--resume", tt_resume, "Checkpoint to resume from");
    tt->add_option("--max-items", tt_max, "Cap on manifest items (0 = all)");

    // separate
    auto* sp = app.add_subcommand("separate", "Split a recording into speech and environment");
    std::string sp_input, sp_ckpt, sp_clean, sp_env;
    bool sp_oracle = false;
    sp->add_option("--input", sp_input, "Input WAV")->required();
    sp->add_option("--checkpoint", sp_ckpt, "Separation checkpoint");
    sp->add_flag("--oracle-masks", sp_oracle, "Use ideal-ratio masks from known components");
    sp->add_option("--clean", sp_clean, "Known speech component (oracle mode)");
    sp->add_option("--env", sp_env, "Known environment component (oracle mode)");

    // mix
    auto* mx = app.add_subcommand("mix", "Mix two recordings at an exact snr");
    std::string mx_clean, mx_env;
    double mx_snr = 10.0;
    mx->add_option("--clean", mx_clean, "Speech WAV")->required();
    mx->add_option("--env", mx_env, "Environment WAV")->required();
    mx->add_option("--snr", mx_snr, "Target snr in dB")->required();

    // synth
    auto* sy = app.add_subcommand("synth", "Synthesize speech continuing both prompts");
    std::string sy_spk, sy_env, sy_ref, sy_gen, sy_ses, sy_tts;
    double sy_as = 2.0, sy_ae = 2.0;
    int sy_steps = 32, sy_gl = 60;
    bool sy_adapt = false, sy_dump = false;
    sy->add_option("--speaker-prompt", sy_spk, "Speaker prompt WAV")->required();
    sy->add_option("--env-prompt", sy_env, "Environment prompt WAV")->required();
    sy->add_option("--ref-text", sy_ref, "Transcript of the speaker prompt")->required();
    sy->add_option("--gen-text", sy_gen, "Text to synthesize")->required();
    sy->add_option("--ses-checkpoint", sy_ses, "Separation checkpoint")->required();
    sy->add_option("--tts-checkpoint", sy_tts, "Velocity model checkpoint")->required();
    auto* sy_as_o = sy->add_option("--alpha-speech", sy_as, "Speech guidance strength");
    auto* sy_ae_o = sy->add_option("--alpha-env", sy_ae, "Environment guidance strength");
    auto* sy_steps_o = sy->add_option("--ode-steps", sy_steps, "Euler integration steps");
    auto* sy_adapt_o = sy->add_flag("--snr-adapt", sy_adapt, "Match the env prompt's snr");
    auto* sy_gl_o = sy->add_option("--gl-iters", sy_gl, "Phase reconstruction iterations");
    sy->add_flag("--mel-dump", sy_dump, "Also write generated/full spectrogram dumps");

    // check
    auto* ck = app.add_subcommand("check", "Run the self-verification suites");
    bool ck_full = false;
    std::string ck_only, ck_fault;
    ck->add_flag("--full", ck_full, "Include the desk-scale training criteria");
    ck->add_option("--only", ck_only, "Run a single suite");
    ck->add_option("--inject-fault", ck_fault, "Deliberately break a component (euler-step)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        g.finish_parse();
        if (*bc)
            return cmd_build_corpus(g, bc_items_o, bc_items, bc_min_o, bc_min, bc_max_o,
                                    bc_max, bc_lo_o, bc_lo, bc_hi_o, bc_hi, bc_ap_o, bc_ap);
        if (*ts)
            return cmd_train_ses(g, ts_manifest, ts_steps_o, ts_steps, ts_batch_o, ts_batch,
                                 ts_lr_o, ts_lr, ts_warm_o, ts_warm, ts_mode_o, ts_mode,
                                 ts_every, ts_resume, ts_max);
        if (*tt)
            return cmd_train_tts(g, tt_manifest, tt_steps_o, tt_steps, tt_batch_o, tt_batch,
                                 tt_lr_o, tt_lr, tt_warm_o, tt_warm, tt_ses, tt_oracle,
                                 tt_every, tt_resume, tt_max);
        if (*sp) return cmd_separate(g, sp_input, sp_ckpt, sp_oracle, sp_clean, sp_env);
        if (*mx) return cmd_mix(g, mx_clean, mx_env, mx_snr);
        if (*sy)
            return cmd_synth(g, sy_spk, sy_env, sy_ref, sy_gen, sy_ses, sy_tts, sy_as_o,
                             sy_as, sy_ae_o, sy_ae, sy_steps_o, sy_steps, sy_adapt_o,
                             sy_adapt, sy_gl_o, sy_gl, sy_dump);
        if (*ck) return cmd_check(g, argv[0], ck_full, ck_only, ck_fault);
        std::cerr << "usage error: no subcommand\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
