#include "enviro/corpus.hpp"
#include "enviro/dsp.hpp"
#include "enviro/rng.hpp"
#include "enviro/wav.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace enviro;
namespace fs = std::filesystem;

namespace {

dsp::Waveform uniform_wave(int length, std::uint64_t seed, double amp = 0.3) {
    dsp::Waveform w;
    w.sample_rate = 24000;
    w.samples.resize(static_cast<std::size_t>(length));
    Rng rng(seed);
    for (auto& s : w.samples) s = rng.uniform(-amp, amp);
    return w;
}

int transitions(const std::vector<int>& flags) {
    int t = 0;
    for (std::size_t i = 1; i < flags.size(); ++i)
        if (flags[i] != flags[i - 1]) ++t;
    return t;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("vocabulary maps tone letters to stable ids") {
    CHECK(corpus::Vocab::char_to_id('a') == 0);
    CHECK(corpus::Vocab::char_to_id('h') == 7);
    CHECK(corpus::Vocab::char_to_id('z') == corpus::Vocab::unknown_id());
    CHECK(corpus::Vocab::id_to_char(3) == 'd');
    CHECK(corpus::Vocab::id_to_char(corpus::Vocab::fill_id()) == '_');
    const auto toks = corpus::Vocab::tokenize("abch");
    CHECK(toks == std::vector<int>{0, 1, 2, 7});
}

TEST_CASE("extend_text pads with fill ids up to the requested length") {
    const auto seq = corpus::extend_text("abc", 7);
    REQUIRE(seq.length() == 7);
    CHECK(seq.tokens[0] == 0);
    CHECK(seq.tokens[2] == 2);
    for (int i = 3; i < 7; ++i) CHECK(seq.tokens[static_cast<std::size_t>(i)] ==
                                      corpus::Vocab::fill_id());
    CHECK_THROWS_AS(corpus::extend_text("abcdefgh", 4), DomainError);
}

TEST_CASE("span masks are single contiguous runs of the right size") {
    Rng rng(77);
    const int L = 50;
    for (int trial = 0; trial < 2000; ++trial) {
        const auto mask = corpus::sample_span_mask(L, 0.3, 0.8, rng);
        REQUIRE(mask.length() == L);
        const int count = mask.masked_count();
        CHECK(count >= static_cast<int>(std::lround(0.3 * L)));
        CHECK(count <= static_cast<int>(std::lround(0.8 * L)));
        CHECK(transitions(mask.flags) <= 2);  // one run: at most rise and fall
        CHECK(mask.span_end() - mask.span_begin() == count);
    }
}

TEST_CASE("span ratios are uniform over the requested range") {
    // Kolmogorov-Smirnov against U[0.7, 1.0] at the 1% level.
    Rng rng(78);
    const int L = 1000, n = 10000;
    std::vector<double> ratios;
    ratios.reserve(n);
    for (int i = 0; i < n; ++i)
        ratios.push_back(corpus::sample_span_mask(L, 0.7, 1.0, rng).masked_count() /
                         static_cast<double>(L));
    std::sort(ratios.begin(), ratios.end());
    double d = 0.0;
    for (int i = 0; i < n; ++i) {
        const double cdf = std::clamp((ratios[static_cast<std::size_t>(i)] - 0.7) / 0.3, 0.0, 1.0);
        d = std::max(d, std::abs(cdf - (i + 1.0) / n));
        d = std::max(d, std::abs(cdf - static_cast<double>(i) / n));
    }
    CHECK(d < 1.63 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("mix_at_snr hits the requested ratio exactly") {
    Rng rng(80);
    const auto clean = uniform_wave(4800, 1);
    const auto env = uniform_wave(4800, 2, 0.1);
    for (double snr : {-10.0, -3.0, 0.0, 5.5, 20.0}) {
        const auto mixed = corpus::mix_at_snr(clean, env, snr, rng);
        REQUIRE(mixed.mixture.samples.size() == clean.samples.size());
        const double achieved =
            dsp::snr_db(dsp::energy(clean), dsp::energy(mixed.env_scaled)).value;
        CHECK(std::abs(achieved - snr) < 1e-9);
        REQUIRE(mixed.snr_db.has_value());
        CHECK(*mixed.snr_db == doctest::Approx(snr));
        for (std::size_t i = 0; i < clean.samples.size(); ++i)
            CHECK(std::abs(mixed.mixture.samples[i] -
                           (clean.samples[i] + mixed.env_scaled.samples[i])) < 1e-12);
    }
}

TEST_CASE("mix_at_snr crops long env and loops short env") {
    Rng rng(81);
    const auto clean = uniform_wave(4800, 3);
    const auto long_env = uniform_wave(12000, 4, 0.1);
    const auto cropped = corpus::mix_at_snr(clean, long_env, 6.0, rng);
    CHECK(cropped.mixture.samples.size() == clean.samples.size());
    CHECK(std::abs(dsp::snr_db(dsp::energy(clean), dsp::energy(cropped.env_scaled)).value -
                   6.0) < 1e-9);

    const auto short_env = uniform_wave(1700, 5, 0.1);
    const auto looped = corpus::mix_at_snr(clean, short_env, 6.0, rng);
    CHECK(looped.mixture.samples.size() == clean.samples.size());
    CHECK(std::abs(dsp::snr_db(dsp::energy(clean), dsp::energy(looped.env_scaled)).value -
                   6.0) < 1e-9);
}

TEST_CASE("augment leaves the configured fraction clean and draws snr uniformly") {
    Rng rng(82);
    const auto clean = uniform_wave(2400, 6);
    const std::vector<dsp::Waveform> pool = {uniform_wave(2400, 7, 0.1),
                                             uniform_wave(3000, 8, 0.1)};
    corpus::MixSpec spec;  // augment_prob 0.5, train snr [-5, 15]
    const int n = 10000;
    int silent = 0;
    std::vector<int> bins(10, 0);
    for (int i = 0; i < n; ++i) {
        const auto r = corpus::augment(clean, pool, spec, rng);
        if (!r.snr_db.has_value()) {
            ++silent;
            CHECK(dsp::energy(r.env_scaled) == 0.0);
            continue;
        }
        const double u = (*r.snr_db - spec.train_snr_lo) /
                         (spec.train_snr_hi - spec.train_snr_lo);
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        ++bins[static_cast<std::size_t>(std::min(9, static_cast<int>(u * 10)))];
    }
    CHECK(std::abs(silent / static_cast<double>(n) - 0.5) < 0.02);

    const double expected = (n - silent) / 10.0;
    double chi2 = 0.0;
    for (int b : bins) chi2 += (b - expected) * (b - expected) / expected;
    CHECK(chi2 < 21.666);  // chi-square, 9 dof, 1% level
}

TEST_CASE("tone frequencies stay below the speech band edge") {
    CHECK(corpus::tone_frequency(0) == doctest::Approx(240.0));
    CHECK(corpus::tone_frequency(3) == doctest::Approx(480.0));
    CHECK(corpus::tone_frequency(6) == doctest::Approx(960.0));
    const double top_harmonic = 3.0 * corpus::tone_frequency(7);
    CHECK(top_harmonic <= 3630.0);
}

TEST_CASE("rendered tones decode back to the same token string") {
    corpus::ToneSpec spec;
    dsp::StftConfig stft_cfg;
    Rng rng(83);
    for (int trial = 0; trial < 6; ++trial) {
        const int n_tokens = rng.uniform_int(3, 8);
        std::vector<int> tokens;
        for (int i = 0; i < n_tokens; ++i) tokens.push_back(rng.uniform_int(0, 7));
        const auto wave = corpus::render_tones(tokens, spec);
        CHECK(static_cast<int>(wave.samples.size()) ==
              (n_tokens * spec.frames_per_token - 1) * spec.hop_size);
        CHECK(corpus::decode_tones(wave, n_tokens, spec, stft_cfg) == tokens);
    }
}

TEST_CASE("band noise is normalized and stays inside its band") {
    Rng rng(84);
    const auto noise = corpus::render_band_noise(24000, 24000, 7000.0, 9500.0, 48, rng);
    double sum_sq = 0.0;
    for (double s : noise.samples) sum_sq += s * s;
    CHECK(std::sqrt(sum_sq / static_cast<double>(noise.samples.size())) ==
          doctest::Approx(0.1));

    dsp::StftConfig cfg;
    const auto mag = dsp::magnitude(dsp::stft(noise, cfg));
    const double hz_per_bin = 24000.0 / cfg.fft_size;
    double in_band = 0.0, total = 0.0;
    for (int k = 0; k < mag.freq_bins(); ++k) {
        const double e = mag.frames.row(k).squaredNorm();
        total += e;
        const double f = k * hz_per_bin;
        if (f >= 6800.0 && f <= 9700.0) in_band += e;
    }
    CHECK(in_band / total > 0.95);
}

TEST_CASE("desk corpus builds, reads back, and mixes consistently") {
    const fs::path dir = fs::temp_directory_path() / "enviro_corpus_test";
    fs::remove_all(dir);
    corpus::CorpusSpec spec;
    spec.n_items = 10;
    spec.seed = 5;
    spec.out_dir = dir.string();
    const auto items = corpus::build_desk_corpus(spec);
    REQUIRE(items.size() == 10);

    const auto back = corpus::read_manifest((dir / "manifest.tsv").string());
    REQUIRE(back.size() == items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        CHECK(back[i].id == items[i].id);
        CHECK(back[i].text == items[i].text);
        CHECK(back[i].snr_db.has_value() == items[i].snr_db.has_value());
        if (items[i].snr_db)
            CHECK(*back[i].snr_db == doctest::Approx(*items[i].snr_db));
    }

    int with_env = 0;
    for (const auto& item : items) {
        const auto manifest = (dir / "manifest.tsv").string();
        const auto clean =
            wav::read(corpus::resolve_manifest_path(manifest, item.clean_path));
        const auto env = wav::read(corpus::resolve_manifest_path(manifest, item.env_path));
        const auto mix =
            wav::read(corpus::resolve_manifest_path(manifest, item.mixture_path));
        REQUIRE(clean.samples.size() == mix.samples.size());
        REQUIRE(env.samples.size() == mix.samples.size());

        // Text length fixes the sample count.
        const int n_tok = static_cast<int>(item.text.size());
        CHECK(static_cast<int>(clean.samples.size()) == (n_tok * 16 - 1) * 256);

        // The stored components recombine into the stored mixture; all three
        // went through float32 quantization.
        double err = 0.0;
        for (std::size_t s = 0; s < mix.samples.size(); ++s)
            err = std::max(err, std::abs(clean.samples[s] + env.samples[s] -
                                         mix.samples[s]));
        CHECK(err < 3e-7);

        if (item.snr_db) {
            ++with_env;
            const double achieved =
                dsp::snr_db(dsp::energy(clean), dsp::energy(env)).value;
            CHECK(std::abs(achieved - *item.snr_db) < 1e-3);  // float32 rounding
        } else {
            CHECK(dsp::energy(env) == 0.0);
        }
    }
    CHECK(with_env >= 1);  // seed 5 must produce at least one noisy item
    fs::remove_all(dir);
}

TEST_CASE("corpus generation is deterministic in the seed") {
    const fs::path d1 = fs::temp_directory_path() / "enviro_corpus_det1";
    const fs::path d2 = fs::temp_directory_path() / "enviro_corpus_det2";
    fs::remove_all(d1);
    fs::remove_all(d2);
    corpus::CorpusSpec spec;
    spec.n_items = 6;
    spec.seed = 9;
    spec.out_dir = d1.string();
    corpus::build_desk_corpus(spec);
    spec.out_dir = d2.string();
    corpus::build_desk_corpus(spec);

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        REQUIRE(in.good());
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(d1 / "manifest.tsv") == slurp(d2 / "manifest.tsv"));
    const auto items = corpus::read_manifest((d1 / "manifest.tsv").string());
    CHECK(slurp(d1 / items[0].mixture_path) == slurp(d2 / items[0].mixture_path));
    fs::remove_all(d1);
    fs::remove_all(d2);
}

}  // TEST_SUITE
