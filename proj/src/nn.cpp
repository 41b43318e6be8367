#include "enviro/nn.hpp"

#include <cmath>

namespace enviro::nn {

Mat xavier(int rows, int cols, Rng& rng) {
    const double a = std::sqrt(6.0 / (rows + cols));
    Mat m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-a, a);
    return m;
}

Mat sinusoid_table(int dim, int length) {
    Mat table(dim, length);
    const int pairs = dim / 2;
    for (int p = 0; p < pairs; ++p) {
        const double freq = std::pow(10000.0, -static_cast<double>(p) / pairs);
        for (int l = 0; l < length; ++l) {
            table(2 * p, l) = std::sin(freq * l);
            table(2 * p + 1, l) = std::cos(freq * l);
        }
    }
    if (dim % 2 == 1)
        for (int l = 0; l < length; ++l) table(dim - 1, l) = 0.0;
    return table;
}

void add_attention_params(params::ParamStore& store, const std::string& prefix, int embed_dim,
                          int kv_dim, Rng& rng) {
    store.add(prefix + ".wq", xavier(embed_dim, embed_dim, rng));
    store.add(prefix + ".bq", Mat::Zero(embed_dim, 1));
    store.add(prefix + ".wk", xavier(embed_dim, kv_dim, rng));
    store.add(prefix + ".bk", Mat::Zero(embed_dim, 1));
    store.add(prefix + ".wv", xavier(embed_dim, kv_dim, rng));
    store.add(prefix + ".bv", Mat::Zero(embed_dim, 1));
    store.add(prefix + ".wo", xavier(embed_dim, embed_dim, rng));
    store.add(prefix + ".bo", Mat::Zero(embed_dim, 1));
}

graph::Var pvar(graph::Tape& tape, params::ParamStore& store, const std::string& name) {
    return tape.param(&store.value(name), &store.grad(name));
}

graph::Var attention(graph::Tape& tape, params::ParamStore& store, const std::string& prefix,
                     graph::Var q_in, graph::Var kv_in, int heads) {
    const int embed = static_cast<int>(tape.value(q_in).rows());
    if (heads < 1 || embed % heads != 0)
        throw ShapeError("attention: embed dim " + std::to_string(embed) +
                         " not divisible by " + std::to_string(heads) + " heads");
    const int dh = embed / heads;

    auto& t = tape;
    graph::Var q = t.add_col(t.matmul(pvar(t, store, prefix + ".wq"), q_in),
                             pvar(t, store, prefix + ".bq"));
    graph::Var k = t.add_col(t.matmul(pvar(t, store, prefix + ".wk"), kv_in),
                             pvar(t, store, prefix + ".bk"));
    graph::Var v = t.add_col(t.matmul(pvar(t, store, prefix + ".wv"), kv_in),
                             pvar(t, store, prefix + ".bv"));

    graph::Var merged{};
    for (int h = 0; h < heads; ++h) {
        graph::Var qh = t.rows(q, h * dh, dh);
        graph::Var kh = t.rows(k, h * dh, dh);
        graph::Var vh = t.rows(v, h * dh, dh);
        graph::Var scores = t.scale(t.matmul(t.transpose(qh), kh), 1.0 / std::sqrt(dh));
        graph::Var weights = t.softmax_rows(scores);
        graph::Var oh = t.matmul(vh, t.transpose(weights));
        merged = h == 0 ? oh : t.vstack(merged, oh);
    }
    return t.add_col(t.matmul(pvar(t, store, prefix + ".wo"), merged),
                     pvar(t, store, prefix + ".bo"));
}

void add_layernorm_params(params::ParamStore& store, const std::string& prefix, int dim) {
    store.add(prefix + ".g", Mat::Ones(dim, 1));
    store.add(prefix + ".b", Mat::Zero(dim, 1));
}

graph::Var affine_layernorm(graph::Tape& tape, params::ParamStore& store,
                            const std::string& prefix, graph::Var x) {
    graph::Var normed = tape.layernorm(x);
    return tape.add_col(tape.mul_col(normed, pvar(tape, store, prefix + ".g")),
                        pvar(tape, store, prefix + ".b"));
}

}  // namespace enviro::nn
