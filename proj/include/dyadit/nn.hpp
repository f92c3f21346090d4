#pragma once

#include <string>
#include <vector>

#include "dyadit/autodiff.hpp"
#include "dyadit/rng.hpp"

namespace dyadit::nn {

using ad::Var;

// Ordered named registry of trainable leaves. The order is the registration order,
// which fixes optimizer iteration and checkpoint layout deterministically.
class ParameterStore {
public:
    Var add(const std::string& name, Tensor init);
    Var find(const std::string& name) const;  // throws if absent
    const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
    void zero_grad();
    std::int64_t total_size() const;

private:
    std::vector<std::pair<std::string, Var>> items_;
};

struct Linear {
    Var weight;  // [in, out]
    Var bias;    // [1, out]

    Linear() = default;
    Linear(ParameterStore& store, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
           bool zero_init = false);
    Var forward(const Var& x) const { return ad::add_bias_row(ad::matmul(x, weight), bias); }
    std::int64_t in_dim() const { return weight->value.dim(0); }
    std::int64_t out_dim() const { return weight->value.dim(1); }
};

struct LayerNorm {
    Var gamma;
    Var beta;

    LayerNorm() = default;
    LayerNorm(ParameterStore& store, const std::string& name, std::int64_t dim);
    Var forward(const Var& x) const { return ad::layer_norm(x, gamma, beta); }
};

struct Conv1d {
    Var weight;  // [out, in*k]
    Var bias;    // [1, out]
    std::int64_t kernel = 1, stride = 1, pad = 0;

    Conv1d() = default;
    Conv1d(ParameterStore& store, const std::string& name, std::int64_t in, std::int64_t out,
           std::int64_t kernel, std::int64_t stride, std::int64_t pad, Rng& rng);
    Var forward(const Var& x) const { return ad::conv1d(x, weight, bias, kernel, stride, pad); }
};

// Standard multi-head attention with learned projections; biases start at zero.
struct MultiheadAttention {
    Linear wq, wk, wv, wo;
    int heads = 1;

    MultiheadAttention() = default;
    MultiheadAttention(ParameterStore& store, const std::string& name, std::int64_t width, int heads,
                       Rng& rng);
    Var forward(const Var& query, const Var& keyvalue, Tensor* probs_out = nullptr) const;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(ParameterStore& store, AdamConfig cfg);
    void step();

private:
    ParameterStore& store_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::int64_t t_ = 0;
};

// Interleaved sinusoidal embedding: out[2i] = sin(pos * w_i), out[2i+1] = cos(pos * w_i),
// w_i = 10000^(-2i/dim).
Tensor sinusoidal_embedding(double position, std::int64_t dim);
// Rows 0..len-1 of the embedding table, for positional encodings.
Tensor sinusoidal_table(std::int64_t len, std::int64_t dim);

}  // namespace dyadit::nn
