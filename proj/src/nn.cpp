#include "dyadit/nn.hpp"

#include <cmath>

namespace dyadit::nn {

Var ParameterStore::add(const std::string& name, Tensor init) {
    for (const auto& [n, _] : items_)
        if (n == name) throw ConfigError("duplicate parameter name: " + name);
    Var v = ad::parameter(std::move(init));
    items_.emplace_back(name, v);
    return v;
}

Var ParameterStore::find(const std::string& name) const {
    for (const auto& [n, v] : items_)
        if (n == name) return v;
    throw ConfigError("unknown parameter name: " + name);
}

void ParameterStore::zero_grad() {
    for (auto& [_, v] : items_)
        if (!v->grad.empty()) v->grad.fill(0.0);
}

std::int64_t ParameterStore::total_size() const {
    std::int64_t n = 0;
    for (const auto& [_, v] : items_) n += v->value.size();
    return n;
}

Linear::Linear(ParameterStore& store, const std::string& name, std::int64_t in, std::int64_t out,
               Rng& rng, bool zero_init) {
    if (zero_init) {
        weight = store.add(name + ".weight", Tensor({in, out}));
    } else {
        double std = std::sqrt(2.0 / static_cast<double>(in + out));
        weight = store.add(name + ".weight", Tensor::randn({in, out}, rng, std));
    }
    bias = store.add(name + ".bias", Tensor({1, out}));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::int64_t dim) {
    gamma = store.add(name + ".gamma", Tensor::full({1, dim}, 1.0));
    beta = store.add(name + ".beta", Tensor({1, dim}));
}

Conv1d::Conv1d(ParameterStore& store, const std::string& name, std::int64_t in, std::int64_t out,
               std::int64_t kernel, std::int64_t stride, std::int64_t pad, Rng& rng)
    : kernel(kernel), stride(stride), pad(pad) {
    double std = std::sqrt(2.0 / static_cast<double>(in * kernel + out));
    weight = store.add(name + ".weight", Tensor::randn({out, in * kernel}, rng, std));
    bias = store.add(name + ".bias", Tensor({1, out}));
}

MultiheadAttention::MultiheadAttention(ParameterStore& store, const std::string& name,
                                       std::int64_t width, int heads, Rng& rng)
    : heads(heads) {
    if (heads < 1 || width % heads != 0) throw ConfigError("attention width must be divisible by heads");
    wq = Linear(store, name + ".wq", width, width, rng);
    wk = Linear(store, name + ".wk", width, width, rng);
    wv = Linear(store, name + ".wv", width, width, rng);
    wo = Linear(store, name + ".wo", width, width, rng);
}

Var MultiheadAttention::forward(const Var& query, const Var& keyvalue, Tensor* probs_out) const {
    Var q = wq.forward(query);
    Var k = wk.forward(keyvalue);
    Var v = wv.forward(keyvalue);
    return wo.forward(ad::attention(q, k, v, heads, probs_out));
}

Adam::Adam(ParameterStore& store, AdamConfig cfg) : store_(store), cfg_(cfg) {
    for (const auto& [_, v] : store.items()) {
        m_.emplace_back(v->value.shape());
        v_.emplace_back(v->value.shape());
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto& items = store_.items();
    for (std::size_t p = 0; p < items.size(); ++p) {
        Var var = items[p].second;
        if (var->grad.empty()) continue;
        Tensor& m = m_[p];
        Tensor& v = v_[p];
        for (std::int64_t i = 0; i < var->value.size(); ++i) {
            double g = var->grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            double mh = m[i] / bc1;
            double vh = v[i] / bc2;
            var->value[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
    }
}

Tensor sinusoidal_embedding(double position, std::int64_t dim) {
    Tensor out({1, dim});
    for (std::int64_t i = 0; i < dim / 2; ++i) {
        double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
        out[2 * i] = std::sin(position * freq);
        out[2 * i + 1] = std::cos(position * freq);
    }
    if (dim % 2 == 1) {
        double freq = std::pow(10000.0, -static_cast<double>(dim - 1) / static_cast<double>(dim));
        out[dim - 1] = std::sin(position * freq);
    }
    return out;
}

Tensor sinusoidal_table(std::int64_t len, std::int64_t dim) {
    Tensor out({len, dim});
    for (std::int64_t p = 0; p < len; ++p) {
        Tensor row = sinusoidal_embedding(static_cast<double>(p), dim);
        std::copy(row.data(), row.data() + dim, out.data() + p * dim);
    }
    return out;
}

}  // namespace dyadit::nn
