#include "enviro/net.hpp"

#include "enviro/nn.hpp"
#include "enviro/rng.hpp"

#include <cmath>
#include <string>

namespace enviro::net {

void DitConfig::validate() const {
    if (layers < 1) throw ConfigError("dit: layers must be >= 1");
    if (heads < 1 || embed_dim % heads != 0)
        throw ConfigError("dit: embed_dim must be divisible by heads");
    if (ffn_dim < 1 || mel_bins < 1 || time_embed_dim < 2)
        throw ConfigError("dit: bad ffn_dim, mel_bins or time_embed_dim");
    if (vocab_size < corpus::Vocab::size() + 1)
        throw ConfigError("dit: vocab_size must cover the text vocabulary plus a null id");
}

void DitConfig::to_kv(KvConfig& kv) const {
    kv.set("dit.layers", std::to_string(layers));
    kv.set("dit.heads", std::to_string(heads));
    kv.set("dit.embed_dim", std::to_string(embed_dim));
    kv.set("dit.ffn_dim", std::to_string(ffn_dim));
    kv.set("dit.mel_bins", std::to_string(mel_bins));
    kv.set("dit.vocab_size", std::to_string(vocab_size));
    kv.set("dit.time_embed_dim", std::to_string(time_embed_dim));
}

DitConfig DitConfig::from_kv(const KvConfig& kv) {
    DitConfig cfg;
    cfg.layers = kv.get_int("dit.layers", cfg.layers);
    cfg.heads = kv.get_int("dit.heads", cfg.heads);
    cfg.embed_dim = kv.get_int("dit.embed_dim", cfg.embed_dim);
    cfg.ffn_dim = kv.get_int("dit.ffn_dim", cfg.ffn_dim);
    cfg.mel_bins = kv.get_int("dit.mel_bins", cfg.mel_bins);
    cfg.vocab_size = kv.get_int("dit.vocab_size", cfg.vocab_size);
    cfg.time_embed_dim = kv.get_int("dit.time_embed_dim", cfg.time_embed_dim);
    cfg.validate();
    return cfg;
}

ConditionSet null_out(const ConditionSet& cond, bool drop_text_speaker, bool drop_env) {
    ConditionSet out = cond;
    if (drop_text_speaker) {
        out.text.reset();
        out.speaker_mel.reset();
    }
    if (drop_env) out.env_mel.reset();
    return out;
}

Vec embed_timestep(double t, int dim) {
    if (!(t >= 0.0 && t <= 1.0))
        throw DomainError("flow step " + std::to_string(t) + " outside [0,1]");
    if (dim < 2) throw ConfigError("timestep embedding needs dim >= 2");
    const int pairs = dim / 2;
    Vec e = Vec::Zero(dim);
    for (int p = 0; p < pairs; ++p) {
        const double omega =
            pairs == 1 ? 1.0 : std::pow(10000.0, static_cast<double>(p) / (pairs - 1));
        e(2 * p) = std::sin(omega * t);
        e(2 * p + 1) = std::cos(omega * t);
    }
    return e;
}

namespace {

std::string blk(int i, const char* suffix) {
    return "blk" + std::to_string(i) + "." + suffix;
}

Mat small_normal(int rows, int cols, Rng& rng) {
    Mat m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = 0.02 * rng.normal();
    return m;
}

}  // namespace

params::ParamStore init_params(const DitConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(Rng::mix(seed, 0xd17u));
    params::ParamStore store;
    const int C = cfg.embed_dim;
    const int M = cfg.mel_bins;

    store.add("text_emb", small_normal(M, cfg.vocab_size, rng));
    store.add("null_spk", small_normal(M, 1, rng));
    store.add("null_env", small_normal(M, 1, rng));
    store.add("in_proj.w", nn::xavier(C, 3 * M, rng));
    store.add("in_proj.b", Mat::Zero(C, 1));
    store.add("conv_pos.w", nn::xavier(C, DitConfig::kConvPosKernel, rng));
    store.add("t_mlp.w1", nn::xavier(cfg.time_embed_dim, cfg.time_embed_dim, rng));
    store.add("t_mlp.b1", Mat::Zero(cfg.time_embed_dim, 1));
    store.add("t_mlp.w2", nn::xavier(cfg.time_embed_dim, cfg.time_embed_dim, rng));
    store.add("t_mlp.b2", Mat::Zero(cfg.time_embed_dim, 1));
    store.add("env_proj.w", nn::xavier(C, M, rng));
    store.add("env_proj.b", Mat::Zero(C, 1));

    for (int i = 0; i < cfg.layers; ++i) {
        // Zero-init modulation: scales start at 1, shifts and gates at 0, so
        // every modulated sublayer is initially silent.
        store.add(blk(i, "mod.w"), Mat::Zero(6 * C, cfg.time_embed_dim));
        store.add(blk(i, "mod.b"), Mat::Zero(6 * C, 1));
        nn::add_attention_params(store, blk(i, "attn"), C, C, rng);
        nn::add_layernorm_params(store, blk(i, "ca.lnq"), C);
        nn::add_layernorm_params(store, blk(i, "ca.lnkv"), C);
        nn::add_attention_params(store, blk(i, "ca"), C, C, rng);
        store.add(blk(i, "ffn.w1"), nn::xavier(cfg.ffn_dim, C, rng));
        store.add(blk(i, "ffn.b1"), Mat::Zero(cfg.ffn_dim, 1));
        store.add(blk(i, "ffn.w2"), nn::xavier(C, cfg.ffn_dim, rng));
        store.add(blk(i, "ffn.b2"), Mat::Zero(C, 1));
    }
    store.add("final.mod.w", Mat::Zero(2 * C, cfg.time_embed_dim));
    store.add("final.mod.b", Mat::Zero(2 * C, 1));
    store.add("out.w", nn::xavier(M, C, rng));
    store.add("out.b", Mat::Zero(M, 1));
    return store;
}

std::size_t param_count(const DitConfig& cfg) {
    return init_params(cfg, 0).scalar_count();
}

graph::Var forward_on_tape(graph::Tape& tape, params::ParamStore& store, const DitConfig& cfg,
                           graph::Var x_t, double t, const ConditionSet& cond) {
    cfg.validate();
    auto& tp = tape;
    const Mat& x_val = tp.value(x_t);
    const int M = cfg.mel_bins;
    const int C = cfg.embed_dim;
    const int L = static_cast<int>(x_val.cols());
    if (x_val.rows() != M)
        throw ShapeError("dit forward: input has " + std::to_string(x_val.rows()) +
                         " mel bins, model expects " + std::to_string(M));
    if (L < 1) throw ShapeError("dit forward: empty input");

    // Text tokens; the null condition is the reserved trailing vocab id.
    std::vector<int> tokens;
    if (cond.text) {
        tokens = *cond.text;
        if (static_cast<int>(tokens.size()) != L)
            throw ShapeError("dit forward: text length " + std::to_string(tokens.size()) +
                             " does not match " + std::to_string(L) + " frames");
        for (int id : tokens)
            if (id < 0 || id >= cfg.vocab_size)
                throw ShapeError("dit forward: token id " + std::to_string(id) +
                                 " outside vocab");
    } else {
        tokens.assign(static_cast<std::size_t>(L), cfg.null_text_id());
    }
    graph::Var text = tp.embed(nn::pvar(tp, store, "text_emb"), tokens);

    graph::Var spk{};
    if (cond.speaker_mel) {
        if (cond.speaker_mel->rows() != M || cond.speaker_mel->cols() != L)
            throw ShapeError("dit forward: speaker condition shape mismatch");
        spk = tp.constant(*cond.speaker_mel);
    } else {
        spk = tp.matmul(nn::pvar(tp, store, "null_spk"), tp.constant(Mat::Ones(1, L)));
    }

    graph::Var env{};
    if (cond.env_mel) {
        if (cond.env_mel->rows() != M || cond.env_mel->cols() < 1)
            throw ShapeError("dit forward: env condition shape mismatch");
        env = tp.constant(*cond.env_mel);
    } else {
        env = nn::pvar(tp, store, "null_env");
    }

    graph::Var t_raw = tp.constant(embed_timestep(t, cfg.time_embed_dim));
    graph::Var t_feat = tp.add_col(
        tp.matmul(nn::pvar(tp, store, "t_mlp.w2"),
                  tp.gelu(tp.add_col(tp.matmul(nn::pvar(tp, store, "t_mlp.w1"), t_raw),
                                     nn::pvar(tp, store, "t_mlp.b1")))),
        nn::pvar(tp, store, "t_mlp.b2"));

    graph::Var stream = tp.vstack(tp.vstack(x_t, spk), text);
    graph::Var h = tp.add_col(tp.matmul(nn::pvar(tp, store, "in_proj.w"), stream),
                              nn::pvar(tp, store, "in_proj.b"));
    h = tp.add(h, tp.dwconv1d(h, nn::pvar(tp, store, "conv_pos.w")));

    graph::Var env_base = tp.add_col(tp.matmul(nn::pvar(tp, store, "env_proj.w"), env),
                                     nn::pvar(tp, store, "env_proj.b"));

    for (int i = 0; i < cfg.layers; ++i) {
        graph::Var mod = tp.add_col(tp.matmul(nn::pvar(tp, store, blk(i, "mod.w")), t_feat),
                                    nn::pvar(tp, store, blk(i, "mod.b")));
        graph::Var sa_shift = tp.rows(mod, 0, C);
        graph::Var sa_scale = tp.rows(mod, C, C);
        graph::Var sa_gate = tp.rows(mod, 2 * C, C);
        graph::Var ffn_shift = tp.rows(mod, 3 * C, C);
        graph::Var ffn_scale = tp.rows(mod, 4 * C, C);
        graph::Var ffn_gate = tp.rows(mod, 5 * C, C);

        graph::Var sa_in = tp.add_col(
            tp.mul_col(tp.layernorm(h), tp.add_scalar(sa_scale, 1.0)), sa_shift);
        graph::Var sa_out = nn::attention(tp, store, blk(i, "attn"), sa_in, sa_in, cfg.heads);
        h = tp.add(h, tp.mul_col(sa_out, sa_gate));

        graph::Var ca_q = nn::affine_layernorm(tp, store, blk(i, "ca.lnq"), h);
        graph::Var ca_kv = nn::affine_layernorm(tp, store, blk(i, "ca.lnkv"), env_base);
        graph::Var ca_out = nn::attention(tp, store, blk(i, "ca"), ca_q, ca_kv, cfg.heads);
        h = tp.add(h, ca_out);

        graph::Var ffn_in = tp.add_col(
            tp.mul_col(tp.layernorm(h), tp.add_scalar(ffn_scale, 1.0)), ffn_shift);
        graph::Var hidden = tp.gelu(
            tp.add_col(tp.matmul(nn::pvar(tp, store, blk(i, "ffn.w1")), ffn_in),
                       nn::pvar(tp, store, blk(i, "ffn.b1"))));
        graph::Var ffn_out =
            tp.add_col(tp.matmul(nn::pvar(tp, store, blk(i, "ffn.w2")), hidden),
                       nn::pvar(tp, store, blk(i, "ffn.b2")));
        h = tp.add(h, tp.mul_col(ffn_out, ffn_gate));
    }

    graph::Var fmod = tp.add_col(tp.matmul(nn::pvar(tp, store, "final.mod.w"), t_feat),
                                 nn::pvar(tp, store, "final.mod.b"));
    graph::Var f_shift = tp.rows(fmod, 0, C);
    graph::Var f_scale = tp.rows(fmod, C, C);
    graph::Var f_in = tp.add_col(
        tp.mul_col(tp.layernorm(h), tp.add_scalar(f_scale, 1.0)), f_shift);
    return tp.add_col(tp.matmul(nn::pvar(tp, store, "out.w"), f_in),
                      nn::pvar(tp, store, "out.b"));
}

Mat forward(const Mat& x_t, double t, const ConditionSet& cond, params::ParamStore& store,
            const DitConfig& cfg) {
    graph::Tape tape;
    graph::Var x = tape.input(x_t);
    graph::Var v = forward_on_tape(tape, store, cfg, x, t, cond);
    return tape.value(v);
}

void save_dit_checkpoint(const std::string& path, const DitConfig& cfg, const KvConfig& extra,
                         const params::ParamStore& store, const params::Adam* opt) {
    KvConfig kv = extra;
    kv.set("kind", "dit");
    cfg.to_kv(kv);
    params::save_checkpoint(path, kv, store, opt);
}

LoadedDit load_dit_checkpoint(const std::string& path, params::Adam* opt) {
    const params::Checkpoint ckpt = params::load_checkpoint(path);
    if (ckpt.config.get_str("kind", "") != "dit")
        throw IoError(path + " is not a velocity-model checkpoint");
    LoadedDit loaded;
    loaded.config = DitConfig::from_kv(ckpt.config);
    loaded.meta = ckpt.config;
    loaded.store = init_params(loaded.config, 0);
    params::restore_params(loaded.store, ckpt, opt);
    return loaded;
}

}  // namespace enviro::net
