#pragma once

#include <string>

#include "dyadit/nn.hpp"

#include "json.hpp"

namespace dyadit {

struct DictionaryConfig {
    int bases = 1000;       // prototype count
    int width = 512;        // basis dimension = conditioning width
    int heads = 4;
    int style_hidden = 256;  // style encoder hidden width
    int style_input = 64;    // latent width of the reference motion

    void validate() const;
    nlohmann::json to_json() const;
    static DictionaryConfig from_json(const nlohmann::json& j);
};

// Orthonormal-rows initialization. For n <= dim this is exact (QR of a seeded
// Gaussian matrix); for n > dim, independent orthonormal blocks of dim rows each,
// so every row is unit norm and rows are orthogonal within a block.
Tensor init_orthonormal(std::int64_t n, std::int64_t dim, std::uint64_t seed);

// Learnable bank of motion-style bases. Style weights aggregate the bases into a
// single token that modulates the partner-audio stream through residual
// cross-attention: out = a_other + CA(a_other, sum_k m_k d_k).
class MotionDictionary {
public:
    MotionDictionary() = default;
    MotionDictionary(const DictionaryConfig& cfg, nn::ParameterStore& store, const std::string& prefix,
                     Rng& rng, std::uint64_t init_seed);

    const DictionaryConfig& config() const { return cfg_; }
    const ad::Var& bases() const { return bases_; }

    // Softmax style weights [1, n] from a reference motion latent [T_l, style_input].
    ad::Var extract_style(const ad::Var& reference_latent) const;

    // Weighted basis aggregation [1, width]; linear in the weights.
    ad::Var aggregate(const ad::Var& style_weights) const;

    ad::Var modulate(const ad::Var& a_other, const ad::Var& style_weights) const;

private:
    DictionaryConfig cfg_;
    ad::Var bases_;  // [n, width]
    nn::Linear style_in_, style_out_;
    nn::MultiheadAttention ca_;
};

}  // namespace dyadit
