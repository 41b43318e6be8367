#pragma once

#include "enviro/graph.hpp"
#include "enviro/params.hpp"
#include "enviro/rng.hpp"

#include <string>

namespace enviro::nn {

// Xavier-uniform init: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
Mat xavier(int rows, int cols, Rng& rng);

// Sinusoidal position table, dim x length: even rows sin, odd rows cos, with
// wavelengths geometric from 2*pi to 2*pi*10^4.
Mat sinusoid_table(int dim, int length);

// Weights for one multi-head attention layer, registered under
// prefix + {.wq,.bq,.wk,.bk,.wv,.bv,.wo,.bo}. kv_dim is the key/value input
// width (equal to embed_dim for self-attention).
void add_attention_params(params::ParamStore& store, const std::string& prefix, int embed_dim,
                          int kv_dim, Rng& rng);

// Pre-projected multi-head attention on the tape: queries from q_in
// (embed x Lq), keys/values from kv_in (kv_dim x Lk).
graph::Var attention(graph::Tape& tape, params::ParamStore& store, const std::string& prefix,
                     graph::Var q_in, graph::Var kv_in, int heads);

// Column-wise layernorm with learned gain/bias held at prefix + {.g,.b}.
void add_layernorm_params(params::ParamStore& store, const std::string& prefix, int dim);
graph::Var affine_layernorm(graph::Tape& tape, params::ParamStore& store,
                            const std::string& prefix, graph::Var x);

// Convenience: registered parameter as a tape var.
graph::Var pvar(graph::Tape& tape, params::ParamStore& store, const std::string& name);

}  // namespace enviro::nn
