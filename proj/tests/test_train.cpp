#include "enviro/corpus.hpp"
#include "enviro/net.hpp"
#include "enviro/train.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

using namespace enviro;
namespace fs = std::filesystem;

namespace {

net::DitConfig tiny_config() {
    net::DitConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.embed_dim = 32;
    cfg.ffn_dim = 64;
    cfg.mel_bins = 12;
    cfg.time_embed_dim = 32;
    return cfg;
}

Mat random_mat(int rows, int cols, std::uint64_t seed) {
    Mat m(rows, cols);
    Rng rng(seed);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) m(i, j) = 0.5 * rng.normal();
    return m;
}

train::TrainItem tiny_item(const net::DitConfig& cfg, int L, std::uint64_t seed) {
    train::TrainItem item;
    item.x1 = random_mat(cfg.mel_bins, L, seed);
    item.c_spk = random_mat(cfg.mel_bins, L, seed + 1);
    item.c_env = random_mat(cfg.mel_bins, L, seed + 2);
    item.text = corpus::extend_text("abcd", L);
    Rng rng(seed + 3);
    item.m_spk = corpus::sample_span_mask(L, 0.4, 0.8, rng);
    item.m_env = corpus::sample_span_mask(L, 0.4, 0.8, rng);
    return item;
}

train::CorpusEntry tiny_entry(const net::DitConfig& cfg, int L, std::uint64_t seed) {
    train::CorpusEntry e;
    e.x1 = random_mat(cfg.mel_bins, L, seed);
    e.c_spk = random_mat(cfg.mel_bins, L, seed + 1);
    e.c_env = random_mat(cfg.mel_bins, L, seed + 2);
    e.text = "abc";
    return e;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("flow point interpolates exactly") {
    Rng rng(1);
    const Mat x1 = random_mat(6, 9, 2);

    const auto p0 = train::make_flow_point(x1, 0.0, rng);
    CHECK((p0.psi_t - p0.x0).norm() == 0.0);

    const auto p1 = train::make_flow_point(x1, 1.0, rng);
    CHECK((p1.psi_t - x1).norm() == 0.0);

    const auto ph = train::make_flow_point(x1, 0.5, rng);
    CHECK((ph.psi_t - 0.5 * (ph.x0 + x1)).cwiseAbs().maxCoeff() < 1e-15);

    // Noise is standard normal, not degenerate.
    CHECK(std::abs(p0.x0.mean()) < 0.5);
    CHECK(p0.x0.array().square().mean() > 0.3);
}

TEST_CASE("dropout pattern frequencies match the policy") {
    train::DropoutPolicy policy;  // 0.1 / 0.1 / 0.1
    Rng rng(3);
    const int n = 10000;
    int all_null = 0, env_null = 0, st_null = 0, full = 0;
    for (int i = 0; i < n; ++i) {
        switch (train::draw_pattern(policy, rng)) {
            case train::ConditionPattern::AllNull: ++all_null; break;
            case train::ConditionPattern::EnvNull: ++env_null; break;
            case train::ConditionPattern::SpeechTextNull: ++st_null; break;
            case train::ConditionPattern::Full: ++full; break;
        }
    }
    CHECK(std::abs(all_null / static_cast<double>(n) - 0.1) < 0.02);
    CHECK(std::abs(env_null / static_cast<double>(n) - 0.1) < 0.02);
    CHECK(std::abs(st_null / static_cast<double>(n) - 0.1) < 0.02);
    CHECK(std::abs(full / static_cast<double>(n) - 0.7) < 0.02);

    train::DropoutPolicy bad;
    bad.p_all_null = 0.7;
    bad.p_env_null = 0.4;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("conditions are zero-filled at masked frames and dropped by pattern") {
    const auto cfg = tiny_config();
    const auto item = tiny_item(cfg, 14, 4);

    const auto full = train::make_conditions(item, train::ConditionPattern::Full);
    REQUIRE(full.text.has_value());
    REQUIRE(full.speaker_mel.has_value());
    REQUIRE(full.env_mel.has_value());
    for (int j = 0; j < 14; ++j) {
        if (item.m_spk.flags[static_cast<std::size_t>(j)])
            CHECK(full.speaker_mel->col(j).norm() == 0.0);
        else
            CHECK((full.speaker_mel->col(j) - item.c_spk.col(j)).norm() == 0.0);
    }

    const auto envn = train::make_conditions(item, train::ConditionPattern::EnvNull);
    CHECK(envn.text.has_value());
    CHECK_FALSE(envn.env_mel.has_value());

    const auto stn = train::make_conditions(item, train::ConditionPattern::SpeechTextNull);
    CHECK_FALSE(stn.text.has_value());
    CHECK_FALSE(stn.speaker_mel.has_value());
    CHECK(stn.env_mel.has_value());

    const auto none = train::make_conditions(item, train::ConditionPattern::AllNull);
    CHECK_FALSE(none.text.has_value());
    CHECK_FALSE(none.env_mel.has_value());
}

TEST_CASE("an empty speaker mask yields zero loss and zero gradients") {
    const auto cfg = tiny_config();
    auto store = net::init_params(cfg, 5);
    auto item = tiny_item(cfg, 10, 6);
    item.m_spk.flags.assign(10, 0);

    Rng rng(7);
    const auto flow = train::make_flow_point(item.x1, 0.4, rng);
    graph::Tape tape;
    const auto result = train::cfm_loss_on_tape(tape, store, cfg, item, flow,
                                                train::ConditionPattern::Full, true, 1.0);
    CHECK(result.value == 0.0);
    CHECK(result.empty_mask);
    for (const auto& e : store.entries()) CHECK(e.grad.norm() == 0.0);
}

TEST_CASE("loss gradients scale linearly with grad_scale") {
    const auto cfg = tiny_config();
    auto store = net::init_params(cfg, 8);
    const auto item = tiny_item(cfg, 10, 9);
    Rng rng(10);
    const auto flow = train::make_flow_point(item.x1, 0.6, rng);

    graph::Tape t1;
    train::cfm_loss_on_tape(t1, store, cfg, item, flow, train::ConditionPattern::Full, true,
                            1.0);
    const Mat g1 = store.grad("out.w");
    store.zero_grads();
    graph::Tape t2;
    train::cfm_loss_on_tape(t2, store, cfg, item, flow, train::ConditionPattern::Full, true,
                            2.5);
    const Mat g2 = store.grad("out.w");
    store.zero_grads();
    CHECK((g2 - 2.5 * g1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("the loss value is invariant to which tape helper computes it") {
    const auto cfg = tiny_config();
    auto store = net::init_params(cfg, 11);
    const auto item = tiny_item(cfg, 12, 12);
    Rng rng(13);
    const auto flow = train::make_flow_point(item.x1, 0.3, rng);

    graph::Tape tape;
    const auto on_tape = train::cfm_loss_on_tape(tape, store, cfg, item, flow,
                                                 train::ConditionPattern::Full, false, 1.0);
    const auto direct = train::cfm_loss(store, cfg, item, flow);
    CHECK(on_tape.value == doctest::Approx(direct.value).epsilon(1e-14));
}

TEST_CASE("gradient check on a reduced model") {
    const auto cfg = tiny_config();
    auto store = net::init_params(cfg, 14);
    const auto item = tiny_item(cfg, 8, 15);
    Rng rng(16);
    const auto flow = train::make_flow_point(item.x1, 0.61, rng);
    const double max_rel = train::gradient_check(store, cfg, item, flow, 1e-3, 60, 17);
    CHECK(max_rel < 1e-3);
}

TEST_CASE("training runs are reproducible") {
    const auto cfg = tiny_config();
    std::vector<train::CorpusEntry> data = {tiny_entry(cfg, 10, 18), tiny_entry(cfg, 12, 19),
                                            tiny_entry(cfg, 11, 20)};
    train::TtsTrainConfig tc;
    tc.model = cfg;
    tc.steps = 15;
    tc.batch_size = 2;
    tc.seed = 21;
    tc.adam.lr = 1e-3;
    tc.adam.warmup_steps = 5;

    std::vector<train::TrainLogEntry> log1, log2;
    const auto s1 = train::train_tts(data, tc, &log1);
    const auto s2 = train::train_tts(data, tc, &log2);
    REQUIRE(log1.size() == log2.size());
    for (std::size_t i = 0; i < log1.size(); ++i) CHECK(log1[i].loss == log2[i].loss);
    for (std::size_t i = 0; i < s1.entries().size(); ++i)
        CHECK((s1.entries()[i].value.array() == s2.entries()[i].value.array()).all());
}

TEST_CASE("resuming from a checkpoint stays within float32 noise") {
    const auto cfg = tiny_config();
    std::vector<train::CorpusEntry> data = {tiny_entry(cfg, 10, 22), tiny_entry(cfg, 12, 23)};
    const fs::path dir = fs::temp_directory_path() / "enviro_train_resume";
    fs::remove_all(dir);

    train::TtsTrainConfig tc;
    tc.model = cfg;
    tc.steps = 30;
    tc.batch_size = 2;
    tc.seed = 24;
    tc.adam.lr = 1e-3;
    tc.adam.warmup_steps = 5;
    tc.checkpoint_every = 15;
    tc.out_dir = (dir / "full").string();
    const auto uninterrupted = train::train_tts(data, tc);

    train::TtsTrainConfig first_half = tc;
    first_half.steps = 15;
    first_half.out_dir = (dir / "half").string();
    train::train_tts(data, first_half);

    train::TtsTrainConfig second_half = tc;
    second_half.out_dir = (dir / "resumed").string();
    second_half.resume_from = (dir / "half" / "tts_final.ckpt").string();
    const auto resumed = train::train_tts(data, second_half);

    for (std::size_t i = 0; i < uninterrupted.entries().size(); ++i) {
        const auto& a = uninterrupted.entries()[i];
        const auto& b = resumed.entries()[i];
        const double scale = std::max(1.0, a.value.cwiseAbs().maxCoeff());
        CHECK((a.value - b.value).cwiseAbs().maxCoeff() / scale < 1e-4);
    }
    fs::remove_all(dir);
}

TEST_CASE("mel settings round-trip through kv") {
    train::MelSettings mel;
    mel.mel_bins = 48;
    mel.offset = -3.5;
    mel.scale = 3.0;
    mel.stft.hop_size = 128;
    KvConfig kv;
    mel.to_kv(kv);
    const auto back = train::MelSettings::from_kv(kv);
    CHECK(back.mel_bins == 48);
    CHECK(back.offset == doctest::Approx(-3.5));
    CHECK(back.scale == doctest::Approx(3.0));
    CHECK(back.stft == mel.stft);
    CHECK(back.sample_rate == mel.sample_rate);

    const Mat x = random_mat(4, 5, 25);
    CHECK((mel.denormalize(mel.normalize(x)) - x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("prepare_corpus with oracle masks produces aligned normalized mels") {
    const fs::path dir = fs::temp_directory_path() / "enviro_train_prep";
    fs::remove_all(dir);
    corpus::CorpusSpec spec;
    spec.n_items = 4;
    spec.seed = 26;
    spec.out_dir = dir.string();
    corpus::build_desk_corpus(spec);

    train::MelSettings mel;
    const auto entries =
        train::prepare_corpus((dir / "manifest.tsv").string(), mel, nullptr);
    REQUIRE(entries.size() == 4);
    for (const auto& e : entries) {
        CHECK(e.x1.rows() == mel.mel_bins);
        CHECK(e.c_spk.rows() == mel.mel_bins);
        CHECK(e.c_env.rows() == mel.mel_bins);
        CHECK(e.x1.cols() == e.c_spk.cols());
        CHECK(e.x1.cols() == e.c_env.cols());
        CHECK(e.x1.allFinite());
        // Tone text of n tokens spans exactly 16n frames.
        CHECK(e.x1.cols() == 16 * static_cast<int>(e.text.size()));
        // Normalized log-mels should sit roughly in [-2, 2.5].
        CHECK(e.x1.minCoeff() > -3.0);
        CHECK(e.x1.maxCoeff() < 3.0);
    }
    fs::remove_all(dir);
}

}  // TEST_SUITE
