#include "dyadit/motion_dictionary.hpp"

#include <cmath>

#include "dyadit/json_util.hpp"

namespace dyadit {

using ad::Var;
using nlohmann::json;

void DictionaryConfig::validate() const {
    if (bases < 1 || width < 1) throw ConfigError("dictionary: bases/width must be positive");
    if (heads < 1 || width % heads != 0) throw ConfigError("dictionary: heads must divide width");
    if (style_hidden < 1 || style_input < 1) throw ConfigError("dictionary: style dims must be positive");
}

json DictionaryConfig::to_json() const {
    return json{{"bases", bases},
                {"width", width},
                {"heads", heads},
                {"style_hidden", style_hidden},
                {"style_input", style_input}};
}

DictionaryConfig DictionaryConfig::from_json(const json& j) {
    require_keys(j, {"bases", "width", "heads", "style_hidden", "style_input"},
                 "dictionary config");
    DictionaryConfig c;
    c.bases = j.value("bases", c.bases);
    c.width = j.value("width", c.width);
    c.heads = j.value("heads", c.heads);
    c.style_hidden = j.value("style_hidden", c.style_hidden);
    c.style_input = j.value("style_input", c.style_input);
    c.validate();
    return c;
}

Tensor init_orthonormal(std::int64_t n, std::int64_t dim, std::uint64_t seed) {
    Rng rng(seed);
    Tensor out({n, dim});
    // Modified Gram-Schmidt over blocks of `dim` rows; each block is independently
    // orthonormal, rows beyond a block restart from fresh Gaussian samples.
    for (std::int64_t block = 0; block * dim < n; ++block) {
        const std::int64_t lo = block * dim;
        const std::int64_t hi = std::min(n, lo + dim);
        for (std::int64_t r = lo; r < hi; ++r) {
            double* row = out.data() + r * dim;
            for (;;) {
                for (std::int64_t j = 0; j < dim; ++j) row[j] = rng.normal();
                for (std::int64_t p = lo; p < r; ++p) {
                    const double* prev = out.data() + p * dim;
                    double dot = 0.0;
                    for (std::int64_t j = 0; j < dim; ++j) dot += row[j] * prev[j];
                    for (std::int64_t j = 0; j < dim; ++j) row[j] -= dot * prev[j];
                }
                double norm = 0.0;
                for (std::int64_t j = 0; j < dim; ++j) norm += row[j] * row[j];
                norm = std::sqrt(norm);
                if (norm > 1e-10) {
                    for (std::int64_t j = 0; j < dim; ++j) row[j] /= norm;
                    break;
                }
            }
        }
    }
    return out;
}

MotionDictionary::MotionDictionary(const DictionaryConfig& cfg, nn::ParameterStore& store,
                                   const std::string& prefix, Rng& rng, std::uint64_t init_seed)
    : cfg_(cfg) {
    cfg_.validate();
    bases_ = store.add(prefix + ".bases", init_orthonormal(cfg_.bases, cfg_.width, init_seed));
    style_in_ = nn::Linear(store, prefix + ".style_in", cfg_.style_input, cfg_.style_hidden, rng);
    style_out_ = nn::Linear(store, prefix + ".style_out", cfg_.style_hidden, cfg_.bases, rng);
    ca_ = nn::MultiheadAttention(store, prefix + ".ca", cfg_.width, cfg_.heads, rng);
}

Var MotionDictionary::extract_style(const Var& reference_latent) const {
    if (reference_latent->value.dim(1) != cfg_.style_input)
        throw ShapeError("extract_style: reference width mismatch");
    Var pooled = ad::mean_rows(ad::gelu(style_in_.forward(reference_latent)));
    return ad::softmax_rows(style_out_.forward(pooled));
}

Var MotionDictionary::aggregate(const Var& style_weights) const {
    if (style_weights->value.dim(0) != 1 || style_weights->value.dim(1) != cfg_.bases)
        throw ShapeError("aggregate: expected [1,n] style weights");
    return ad::matmul(style_weights, bases_);
}

Var MotionDictionary::modulate(const Var& a_other, const Var& style_weights) const {
    if (a_other->value.dim(1) != cfg_.width) throw ShapeError("modulate: stream width mismatch");
    return ad::add(a_other, ca_.forward(a_other, aggregate(style_weights)));
}

}  // namespace dyadit
