#include "enviro/corpus.hpp"
#include "enviro/dsp.hpp"
#include "enviro/rng.hpp"
#include "enviro/ses.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace enviro;
namespace fs = std::filesystem;

namespace {

// Small model over a small spectrogram: fast enough for optimization tests.
ses::SesConfig tiny_config() {
    ses::SesConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.embed_dim = 32;
    cfg.ffn_dim = 64;
    cfg.freq_bins = 33;
    return cfg;
}

Mat random_nonneg(int rows, int cols, std::uint64_t seed, double scale = 1.0) {
    Mat m(rows, cols);
    Rng rng(seed);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) m(i, j) = scale * rng.uniform();
    return m;
}

// Components whose sum is exactly the mixture, so ideal masks reach loss 0.
ses::Triple additive_triple(int freq_bins, int L, std::uint64_t seed) {
    ses::Triple t;
    t.clean_mag = random_nonneg(freq_bins, L, seed);
    t.env_mag = random_nonneg(freq_bins, L, seed + 1, 0.5);
    t.mix_mag = t.clean_mag + t.env_mag;
    return t;
}

dsp::Waveform tone_plus_band_mixture(dsp::Waveform* clean_out, dsp::Waveform* env_out) {
    corpus::ToneSpec spec;
    const auto clean = corpus::render_tones({0, 3, 5, 2}, spec);
    Rng rng(55);
    auto env = corpus::render_band_noise(static_cast<int>(clean.samples.size()), 24000,
                                         7000.0, 9500.0, 48, rng);
    const auto mixed = corpus::mix_at_snr(clean, env, 0.0, rng);
    if (clean_out) *clean_out = clean;
    if (env_out) *env_out = mixed.env_scaled;
    return mixed.mixture;
}

}  // namespace

TEST_SUITE("ses") {

TEST_CASE("config validation") {
    ses::SesConfig cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.embed_dim = 33;  // not divisible by heads
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.layers = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    KvConfig kv;
    tiny_config().to_kv(kv);
    const auto back = ses::SesConfig::from_kv(kv);
    CHECK(back.embed_dim == 32);
    CHECK(back.freq_bins == 33);
}

TEST_CASE("forward produces valid masks deterministically") {
    const auto cfg = tiny_config();
    auto store = ses::init_params(cfg, 11);
    dsp::MagnitudeSpectrogram mag;
    mag.frames = random_nonneg(cfg.freq_bins, 20, 12);

    const auto masks = ses::masking_net_forward(mag, store, cfg);
    CHECK(masks.speech_suppressing_mask.rows() == cfg.freq_bins);
    CHECK(masks.speech_suppressing_mask.cols() == 20);
    CHECK(masks.env_suppressing_mask.minCoeff() > 0.0);
    CHECK(masks.env_suppressing_mask.maxCoeff() < 1.0);  // sigmoid is open
    CHECK(masks.speech_suppressing_mask.minCoeff() > 0.0);
    CHECK(masks.speech_suppressing_mask.maxCoeff() < 1.0);

    const auto again = ses::masking_net_forward(mag, store, cfg);
    CHECK((again.env_suppressing_mask.array() ==
           masks.env_suppressing_mask.array()).all());
    CHECK((again.speech_suppressing_mask.array() ==
           masks.speech_suppressing_mask.array()).all());

    dsp::MagnitudeSpectrogram bad;
    bad.frames = Mat::Constant(cfg.freq_bins, 4, -0.1);
    CHECK_THROWS_AS(ses::masking_net_forward(bad, store, cfg), DomainError);
    dsp::MagnitudeSpectrogram wrong;
    wrong.frames = random_nonneg(cfg.freq_bins + 1, 4, 13);
    CHECK_THROWS_AS(ses::masking_net_forward(wrong, store, cfg), ShapeError);
}

TEST_CASE("masking never adds energy") {
    const auto cfg = tiny_config();
    auto store = ses::init_params(cfg, 14);
    dsp::MagnitudeSpectrogram mag;
    mag.frames = random_nonneg(cfg.freq_bins, 16, 15);
    const auto masks = ses::masking_net_forward(mag, store, cfg);
    const auto [speech, env] = ses::apply_masks(mag, masks);
    CHECK(dsp::energy(speech) <= dsp::energy(mag));
    CHECK(dsp::energy(env) <= dsp::energy(mag));
    CHECK((speech.frames - mag.frames.cwiseProduct(masks.env_suppressing_mask)).norm() ==
          0.0);
}

TEST_CASE("complex masking preserves the mixture phase") {
    dsp::StftConfig stft_cfg;
    const auto mix = tone_plus_band_mixture(nullptr, nullptr);
    const auto spec = dsp::stft(mix, stft_cfg);
    const auto mag = dsp::magnitude(spec);

    ses::MaskPair masks;
    masks.env_suppressing_mask = random_nonneg(mag.frames.rows(), mag.frames.cols(), 16);
    masks.speech_suppressing_mask =
        Mat::Ones(mag.frames.rows(), mag.frames.cols()) - masks.env_suppressing_mask;

    const auto [speech_spec, env_spec] = ses::apply_masks_complex(spec, masks);
    const auto [speech_mag, env_mag] = ses::apply_masks(mag, masks);
    CHECK((dsp::magnitude(speech_spec).frames - speech_mag.frames).cwiseAbs().maxCoeff() <
          1e-12);
    // Phase is untouched wherever anything survives the mask.
    for (int j = 0; j < spec.frames.cols(); j += 7) {
        for (int i = 0; i < spec.frames.rows(); i += 31) {
            if (std::abs(speech_spec.frames(i, j)) < 1e-12) continue;
            CHECK(std::abs(std::arg(speech_spec.frames(i, j)) -
                           std::arg(spec.frames(i, j))) < 1e-9);
        }
    }
    CHECK((speech_spec.frames + env_spec.frames - spec.frames).cwiseAbs().maxCoeff() <
          1e-12);
}

TEST_CASE("oracle masks are the symmetric ideal-ratio solution") {
    dsp::MagnitudeSpectrogram a, b;
    a.frames = random_nonneg(12, 9, 17);
    b.frames = random_nonneg(12, 9, 18);
    const auto m = ses::oracle_masks(a, b);
    const auto swapped = ses::oracle_masks(b, a);
    CHECK((m.env_suppressing_mask - swapped.speech_suppressing_mask).norm() == 0.0);
    CHECK((m.speech_suppressing_mask - swapped.env_suppressing_mask).norm() == 0.0);
    CHECK(((m.env_suppressing_mask + m.speech_suppressing_mask).array() <= 1.0).all());
    CHECK(m.env_suppressing_mask.minCoeff() >= 0.0);
}

TEST_CASE("oracle masks lift component snr by more than 10 dB") {
    dsp::Waveform clean, env;
    const auto mix = tone_plus_band_mixture(&clean, &env);
    dsp::StftConfig stft_cfg;

    const auto spec = dsp::stft(mix, stft_cfg);
    const auto masks = ses::oracle_masks(dsp::magnitude(dsp::stft(clean, stft_cfg)),
                                         dsp::magnitude(dsp::stft(env, stft_cfg)));
    const auto [speech_spec, env_spec] = ses::apply_masks_complex(spec, masks);
    const auto speech = dsp::istft_aligned(speech_spec, 24000,
                                           static_cast<int>(mix.samples.size()));

    auto residual_energy = [&](const dsp::Waveform& est) {
        double e = 0.0;
        for (std::size_t i = 0; i < est.samples.size(); ++i) {
            const double d = est.samples[i] - clean.samples[i];
            e += d * d;
        }
        return e;
    };
    const double before = dsp::snr_db(dsp::energy(clean), residual_energy(mix)).value;
    const double after = dsp::snr_db(dsp::energy(clean), residual_energy(speech)).value;
    CHECK(after - before > 10.0);
}

TEST_CASE("separate_to_mel matches the explicit pipeline") {
    const auto cfg = tiny_config();
    dsp::StftConfig stft_cfg;
    stft_cfg.fft_size = 64;
    stft_cfg.window_size = 64;
    stft_cfg.hop_size = 16;
    auto store = ses::init_params(cfg, 19);
    const auto fb = dsp::build_mel_filterbank(20, stft_cfg, 24000, 0.0, 12000.0);

    dsp::Waveform wave;
    wave.sample_rate = 24000;
    Rng rng(20);
    wave.samples.resize(1600);
    for (auto& s : wave.samples) s = rng.uniform(-0.3, 0.3);

    const auto [spk_mel, env_mel] = ses::separate_to_mel(wave, store, cfg, stft_cfg, fb);
    const auto mag = dsp::magnitude(dsp::stft(wave, stft_cfg));
    const auto masks = ses::masking_net_forward(mag, store, cfg);
    const auto [speech_mag, env_mag] = ses::apply_masks(mag, masks);
    CHECK((spk_mel.frames - dsp::mag_to_mel(speech_mag, fb).frames).norm() == 0.0);
    CHECK((env_mel.frames - dsp::mag_to_mel(env_mag, fb).frames).norm() == 0.0);
}

TEST_CASE("gradient scale multiplies through item_loss backward") {
    const auto cfg = tiny_config();
    auto store = ses::init_params(cfg, 21);
    const auto triple = additive_triple(cfg.freq_bins, 10, 22);

    graph::Tape t1;
    ses::item_loss(t1, store, cfg, triple, "reconstruction", true, 1.0);
    Mat g1 = store.grad("in_conv.w");
    store.zero_grads();
    graph::Tape t2;
    ses::item_loss(t2, store, cfg, triple, "reconstruction", true, 2.0);
    Mat g2 = store.grad("in_conv.w");
    store.zero_grads();
    CHECK((g2 - 2.0 * g1).cwiseAbs().maxCoeff() < 1e-12);

    graph::Tape t3;
    CHECK_THROWS_AS(ses::item_loss(t3, store, cfg, triple, "nonsense", false, 1.0),
                    ConfigError);
}

TEST_CASE("a single additive triple can be overfit") {
    const auto cfg = tiny_config();
    const auto triple = additive_triple(cfg.freq_bins, 12, 23);

    ses::SesTrainConfig tc;
    tc.model = cfg;
    tc.steps = 400;
    tc.batch_size = 1;
    tc.seed = 24;
    tc.adam.lr = 3e-3;
    tc.adam.warmup_steps = 20;
    std::vector<ses::TrainLogEntry> log;
    ses::train_ses({triple}, tc, &log);
    REQUIRE(log.size() == 400);
    CHECK(log.back().loss < 0.05 * log.front().loss);
}

TEST_CASE("oracle-supervised training drives masks toward the ideal ratio") {
    const auto cfg = tiny_config();
    const auto triple = additive_triple(cfg.freq_bins, 12, 25);

    ses::SesTrainConfig tc;
    tc.model = cfg;
    tc.steps = 300;
    tc.batch_size = 1;
    tc.seed = 26;
    tc.loss_mode = "oracle_mask";
    tc.adam.lr = 3e-3;
    tc.adam.warmup_steps = 20;
    std::vector<ses::TrainLogEntry> log;
    auto store = ses::train_ses({triple}, tc, &log);

    // Mean squared mask error is the loss itself in this mode.
    CHECK(log.back().loss < 0.05);
    CHECK(log.back().loss < 0.2 * log.front().loss);
}

TEST_CASE("training is deterministic in the seed") {
    const auto cfg = tiny_config();
    std::vector<ses::Triple> data = {additive_triple(cfg.freq_bins, 8, 27),
                                     additive_triple(cfg.freq_bins, 10, 28)};
    ses::SesTrainConfig tc;
    tc.model = cfg;
    tc.steps = 20;
    tc.batch_size = 2;
    tc.seed = 29;
    const auto s1 = ses::train_ses(data, tc);
    const auto s2 = ses::train_ses(data, tc);
    REQUIRE(s1.entries().size() == s2.entries().size());
    for (std::size_t i = 0; i < s1.entries().size(); ++i)
        CHECK((s1.entries()[i].value.array() == s2.entries()[i].value.array()).all());
}

TEST_CASE("checkpoints reload into an equivalent model") {
    const auto cfg = tiny_config();
    auto store = ses::init_params(cfg, 30);
    dsp::StftConfig stft_cfg;
    stft_cfg.fft_size = 64;
    stft_cfg.window_size = 64;
    stft_cfg.hop_size = 16;

    const auto path = (fs::temp_directory_path() / "enviro_ses_rt.ckpt").string();
    ses::save_ses_checkpoint(path, cfg, stft_cfg, 24000, store);
    auto loaded = ses::load_ses_checkpoint(path);
    CHECK(loaded.config.embed_dim == cfg.embed_dim);
    CHECK(loaded.config.freq_bins == cfg.freq_bins);
    CHECK(loaded.stft == stft_cfg);
    CHECK(loaded.sample_rate == 24000);

    dsp::MagnitudeSpectrogram mag;
    mag.frames = random_nonneg(cfg.freq_bins, 6, 31);
    const auto m1 = ses::masking_net_forward(mag, store, cfg);
    const auto m2 = ses::masking_net_forward(mag, loaded.store, loaded.config);
    // float32 storage: close, not bitwise.
    CHECK((m1.env_suppressing_mask - m2.env_suppressing_mask).cwiseAbs().maxCoeff() < 1e-6);
    fs::remove(path);
}

}  // TEST_SUITE
