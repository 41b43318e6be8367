#include "enviro/infer.hpp"

#include "enviro/corpus.hpp"
#include "enviro/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace enviro::infer {

void GuidanceConfig::validate() const {
    if (!std::isfinite(alpha_speech) || alpha_speech < 0.0)
        throw ConfigError("guidance: alpha_speech must be finite and >= 0");
    if (!std::isfinite(alpha_env) || alpha_env < 0.0)
        throw ConfigError("guidance: alpha_env must be finite and >= 0");
    if (ode_steps < 1) throw ConfigError("guidance: ode_steps must be >= 1");
}

ScaleFactor snr_scale_factor(const dsp::MagnitudeSpectrogram& spk_speech_mag,
                             const dsp::MagnitudeSpectrogram& env_speech_mag,
                             const dsp::MagnitudeSpectrogram& env_bg_mag) {
    const double e_spk = dsp::energy(spk_speech_mag);
    const double e_env_speech = dsp::energy(env_speech_mag);
    const double e_env_bg = dsp::energy(env_bg_mag);
    if (e_spk <= 0.0)
        throw DomainError("snr_scale_factor: speaker prompt speech branch has zero energy");
    if (e_env_speech <= 0.0)
        throw DomainError("snr_scale_factor: environment prompt speech branch has zero energy");
    if (e_env_bg <= 0.0)
        throw DomainError("snr_scale_factor: environment prompt background branch has zero energy");
    return ScaleFactor{std::sqrt(e_spk / e_env_speech)};
}

Mat dcfg_velocity(const Mat& x, double t, const net::ConditionSet& cond,
                  const GuidanceConfig& guidance, params::ParamStore& store,
                  const net::DitConfig& cfg, int* forward_count) {
    guidance.validate();
    auto eval = [&](const net::ConditionSet& c) {
        if (forward_count) ++*forward_count;
        return net::forward(x, t, c, store, cfg);
    };
    const Mat v_full = eval(cond);
    const Mat v_speech = eval(net::null_out(cond, /*drop_text_speaker=*/false, /*drop_env=*/true));
    const Mat v_env = eval(net::null_out(cond, /*drop_text_speaker=*/true, /*drop_env=*/false));
    const Mat v_null = eval(net::null_out(cond, /*drop_text_speaker=*/true, /*drop_env=*/true));
    return v_full + guidance.alpha_speech * (v_speech - v_null) +
           guidance.alpha_env * (v_env - v_null);
}

Mat ode_solve(const Mat& x0, const std::function<Mat(const Mat&, double)>& field, int steps) {
    if (steps < 1) throw ConfigError("ode_solve: steps must be >= 1");
    Mat x = x0;
    const double dt = 1.0 / static_cast<double>(steps);
    for (int k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(steps);
        Mat v = field(x, t);
        if (v.rows() != x.rows() || v.cols() != x.cols())
            throw ShapeError("ode_solve: field changed the state shape at step " +
                             std::to_string(k));
        x += dt * v;
        if (!x.allFinite())
            throw DomainError("ode_solve: state diverged at step " + std::to_string(k));
    }
    return x;
}

Mat mel_to_linear(const Mat& log_mel, const dsp::MelFilterbank& fb) {
    if (log_mel.rows() != fb.weights.rows())
        throw ShapeError("mel_to_linear: expected " + std::to_string(fb.weights.rows()) +
                         " mel rows, got " + std::to_string(log_mel.rows()));
    const Mat& W = fb.weights;
    const Mat energies = (log_mel.array().exp() - dsp::kMelLogEps).max(0.0).matrix();
    // Right pseudo-inverse W^T (W W^T)^-1; W W^T is SPD because every
    // filterbank row has a nonzero entry.
    const Mat wwt = W * W.transpose();
    Eigen::LDLT<Mat> solver(wwt);
    if (solver.info() != Eigen::Success)
        throw DomainError("mel_to_linear: filterbank normal matrix is not factorizable");
    Mat lifted = (W.transpose() * solver.solve(energies)).cwiseMax(0.0);

    // Clipping the least-squares solution only ever adds band energy (the
    // discarded entries were negative), which reads as a large error once the
    // result is taken back through the log. Repair per column: shrink the
    // smooth solution until it undershoots every band, then top the deficit
    // back up at each band's private peak bin. Each triangle carries weight 1
    // at its own center and 0 at its neighbors' centers, so the top-up is
    // surgical and the reprojection W * lifted matches the band energies
    // exactly.
    std::vector<Eigen::Index> peak(static_cast<std::size_t>(W.rows()), -1);
    for (Eigen::Index m = 0; m < W.rows(); ++m)
        for (Eigen::Index f = 0; f < W.cols(); ++f) {
            if (W(m, f) != 1.0) continue;
            bool exclusive = true;
            for (Eigen::Index k = 0; k < W.rows() && exclusive; ++k)
                if (k != m && W(k, f) != 0.0) exclusive = false;
            if (exclusive) {
                peak[static_cast<std::size_t>(m)] = f;
                break;
            }
        }
    const Mat spread = W * lifted;
    for (Eigen::Index j = 0; j < energies.cols(); ++j) {
        double gamma = 1.0;
        for (Eigen::Index m = 0; m < W.rows(); ++m)
            if (spread(m, j) > 0.0) gamma = std::min(gamma, energies(m, j) / spread(m, j));
        lifted.col(j) *= gamma;
        for (Eigen::Index m = 0; m < W.rows(); ++m) {
            const Eigen::Index f = peak[static_cast<std::size_t>(m)];
            if (f < 0) continue;  // no private bin: leave the shrunk estimate
            const double deficit = energies(m, j) - gamma * spread(m, j);
            if (deficit > 0.0) lifted(f, j) += deficit;
        }
    }
    return lifted;
}

void write_mel_dump(const std::string& path, const Mat& mel) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "ENVIRO-MEL-V1 " << mel.rows() << " " << mel.cols() << "\n";
    for (Eigen::Index j = 0; j < mel.cols(); ++j) {
        for (Eigen::Index i = 0; i < mel.rows(); ++i) {
            const float f = static_cast<float>(mel(i, j));
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            const unsigned char bytes[4] = {
                static_cast<unsigned char>(bits & 0xff),
                static_cast<unsigned char>((bits >> 8) & 0xff),
                static_cast<unsigned char>((bits >> 16) & 0xff),
                static_cast<unsigned char>((bits >> 24) & 0xff)};
            out.write(reinterpret_cast<const char*>(bytes), 4);
        }
    }
    if (!out) throw IoError("write failed: " + path);
}

Mat read_mel_dump(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string header;
    if (!std::getline(in, header)) throw IoError("truncated header: " + path);
    std::istringstream hs(header);
    std::string magic;
    long rows = 0, cols = 0;
    hs >> magic >> rows >> cols;
    if (magic != "ENVIRO-MEL-V1" || rows < 1 || cols < 1)
        throw IoError("not a spectrogram dump: " + path);
    Mat mel(rows, cols);
    for (long j = 0; j < cols; ++j) {
        for (long i = 0; i < rows; ++i) {
            unsigned char bytes[4];
            if (!in.read(reinterpret_cast<char*>(bytes), 4))
                throw IoError("truncated payload: " + path);
            const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                                       (static_cast<std::uint32_t>(bytes[1]) << 8) |
                                       (static_cast<std::uint32_t>(bytes[2]) << 16) |
                                       (static_cast<std::uint32_t>(bytes[3]) << 24);
            float f;
            std::memcpy(&f, &bits, 4);
            mel(i, j) = static_cast<double>(f);
        }
    }
    return mel;
}

int generated_frames(int ref_frames, int ref_tokens, int gen_tokens) {
    if (ref_frames < 1) throw DomainError("duration rule: reference must have frames");
    if (ref_tokens < 1) throw DomainError("duration rule: reference text is empty");
    if (gen_tokens < 1) throw DomainError("duration rule: generation text is empty");
    const double raw =
        static_cast<double>(ref_frames) * static_cast<double>(gen_tokens) / ref_tokens;
    const double clamped = std::clamp(raw, 0.3 * ref_frames, 10.0 * ref_frames);
    return std::max(1, static_cast<int>(std::lround(clamped)));
}

Synthesizer make_synthesizer(const std::string& ses_ckpt, const std::string& dit_ckpt) {
    Synthesizer synth;
    synth.separation = ses::load_ses_checkpoint(ses_ckpt);
    synth.velocity = net::load_dit_checkpoint(dit_ckpt);

    const KvConfig& meta = synth.velocity.meta;
    synth.stft.fft_size = meta.get_int("stft.fft_size", synth.separation.stft.fft_size);
    synth.stft.window_size = meta.get_int("stft.window_size", synth.separation.stft.window_size);
    synth.stft.hop_size = meta.get_int("stft.hop_size", synth.separation.stft.hop_size);
    synth.stft.window = dsp::window_from_name(
        meta.get_str("stft.window", dsp::window_name(synth.separation.stft.window)));
    synth.sample_rate = meta.get_int("sample_rate", synth.separation.sample_rate);
    synth.mel_offset = meta.get_double("mel.offset", -4.0);
    synth.mel_scale = meta.get_double("mel.scale", 4.0);
    if (synth.mel_scale <= 0.0) throw ConfigError("checkpoint: mel.scale must be positive");

    if (!(synth.stft == synth.separation.stft))
        throw ConfigError("checkpoint mismatch: separation and velocity models disagree on "
                          "analysis settings");
    if (synth.sample_rate != synth.separation.sample_rate)
        throw ConfigError("checkpoint mismatch: sample rates differ");

    const double freq_lo = meta.get_double("mel.freq_lo", 0.0);
    const double freq_hi = meta.get_double("mel.freq_hi", synth.sample_rate / 2.0);
    synth.fb = dsp::build_mel_filterbank(synth.velocity.config.mel_bins, synth.stft,
                                         synth.sample_rate, freq_lo, freq_hi);
    return synth;
}

namespace {

Mat normalize_mel(const Mat& log_mel, const Synthesizer& synth) {
    return (log_mel.array() - synth.mel_offset).matrix() / synth.mel_scale;
}

Mat denormalize_mel(const Mat& model_mel, const Synthesizer& synth) {
    return (model_mel.array() * synth.mel_scale + synth.mel_offset).matrix();
}

bool near_mel_floor(const Mat& log_mel) {
    return log_mel.mean() < std::log(dsp::kMelLogEps) + 1.0;
}

}  // namespace

SynthesisResult synthesize(Synthesizer& synth, const SynthesisRequest& request) {
    request.guidance.validate();
    if (request.gen_text.empty()) throw DomainError("synthesize: generation text is empty");
    if (request.ref_text.empty()) throw DomainError("synthesize: reference text is empty");
    if (request.speaker_prompt.sample_rate != synth.sample_rate ||
        request.env_prompt.sample_rate != synth.sample_rate)
        throw ConfigError("synthesize: prompt sample rate differs from the models'");
    if (request.griffin_lim_iters < 1)
        throw ConfigError("synthesize: griffin_lim_iters must be >= 1");
    // A silent environment prompt is legitimate (it conditions toward quiet
    // backgrounds); a silent speaker prompt carries no voice to continue.
    if (dsp::energy(request.speaker_prompt) <= 0.0)
        throw DomainError("synthesize: speaker prompt is silent");

    const dsp::StftConfig& stft_cfg = synth.stft;
    ses::LoadedSes& sep = synth.separation;

    // Speaker prompt: its speech branch is the voice condition; its
    // magnitude feeds the gain rule.
    const auto spk_spec = dsp::stft(request.speaker_prompt, stft_cfg);
    const auto spk_mag = dsp::magnitude(spk_spec);
    const auto spk_masks = ses::masking_net_forward(spk_mag, sep.store, sep.config);
    auto [spk_speech_mag, spk_bg_mag] = ses::apply_masks(spk_mag, spk_masks);

    // Environment prompt: its background branch is the ambience condition.
    const auto env_spec = dsp::stft(request.env_prompt, stft_cfg);
    const auto env_mag = dsp::magnitude(env_spec);
    const auto env_masks = ses::masking_net_forward(env_mag, sep.store, sep.config);
    auto [env_speech_mag, env_bg_mag] = ses::apply_masks(env_mag, env_masks);

    double scale_applied = 1.0;
    if (request.snr_adapt) {
        // A near-silent branch leaves the gain undefined; keep the prompt
        // as-is rather than failing the whole synthesis.
        const Mat bg_check = dsp::mag_to_mel(env_bg_mag, synth.fb).frames;
        const Mat speech_check = dsp::mag_to_mel(env_speech_mag, synth.fb).frames;
        if (!near_mel_floor(bg_check) && !near_mel_floor(speech_check)) {
            scale_applied = snr_scale_factor(spk_speech_mag, env_speech_mag, env_bg_mag).value;
            env_bg_mag.frames *= scale_applied;
        }
    }

    const Mat c_spk_ref = normalize_mel(dsp::mag_to_mel(spk_speech_mag, synth.fb).frames, synth);
    const Mat c_env = normalize_mel(dsp::mag_to_mel(env_bg_mag, synth.fb).frames, synth);

    const int L_ref = static_cast<int>(c_spk_ref.cols());
    const int ref_tokens = static_cast<int>(corpus::Vocab::tokenize(request.ref_text).size());
    const int gen_tokens = static_cast<int>(corpus::Vocab::tokenize(request.gen_text).size());
    const int L_gen = generated_frames(L_ref, ref_tokens, gen_tokens);
    const int L = L_ref + L_gen;

    const corpus::TextSequence z = corpus::extend_text(request.ref_text + request.gen_text, L);

    const int M = synth.velocity.config.mel_bins;
    Mat c_spk = Mat::Zero(M, L);
    c_spk.leftCols(L_ref) = c_spk_ref;

    net::ConditionSet cond;
    cond.text = z.tokens;
    cond.speaker_mel = c_spk;
    cond.env_mel = c_env;

    Rng noise_rng(Rng::mix(request.seed, 0x0de0ULL));
    Mat x0(M, L);
    for (int j = 0; j < L; ++j)
        for (int i = 0; i < M; ++i) x0(i, j) = noise_rng.normal();

    auto field = [&](const Mat& x, double t) {
        return dcfg_velocity(x, t, cond, request.guidance, synth.velocity.store,
                             synth.velocity.config);
    };
    const Mat x1 = ode_solve(x0, field, request.guidance.ode_steps);

    SynthesisResult result;
    result.full_mel = denormalize_mel(x1, synth);
    result.gen_mel = result.full_mel.rightCols(L_gen);
    result.ref_frames = L_ref;
    result.scale_applied = scale_applied;

    dsp::MagnitudeSpectrogram gen_mag;
    gen_mag.frames = mel_to_linear(result.gen_mel, synth.fb);
    gen_mag.config = stft_cfg;
    result.wave = dsp::griffin_lim(gen_mag, request.griffin_lim_iters, synth.sample_rate);
    return result;
}

}  // namespace enviro::infer
