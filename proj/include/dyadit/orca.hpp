#pragma once

#include <optional>
#include <string>

#include "dyadit/nn.hpp"

#include "json.hpp"

namespace dyadit {

enum class OrthoMode { kAnalytic, kLearned };

OrthoMode ortho_mode_from_string(const std::string& s);
std::string to_string(OrthoMode mode);

struct OrcaConfig {
    int input_dim = 768;  // raw audio feature width
    int width = 512;      // projected conditioning width
    int heads = 4;
    OrthoMode mode = OrthoMode::kAnalytic;
    int phi_hidden = 0;  // learned-mode MLP hidden width; 0 = width

    void validate() const;
    nlohmann::json to_json() const;
    static OrcaConfig from_json(const nlohmann::json& j);
};

// Analytic per-timestep orthogonalization: a_self minus its projection onto the
// 1-D span of the same timestep of a_other. Rows of a_other below the degeneracy
// tolerance leave a_self unchanged.
Tensor orthogonalize_analytic(const Tensor& a_self, const Tensor& a_other);
ad::Var orthogonalize_analytic(const ad::Var& a_self, const ad::Var& a_other);

// Convex per-channel combination sigma(w_g) * h1 + (1 - sigma(w_g)) * h2.
Tensor gated_fuse(const Tensor& h_self_to_other, const Tensor& h_other_to_self, const Tensor& gate);

// Audio Orthogonalization Cross Attention: projects both speakers' raw tracks to
// `width`, removes the redundant component of a_self, exchanges information with two
// symmetric cross-attentions, and fuses them through a learnable per-channel gate.
class OrcaModule {
public:
    OrcaModule() = default;
    OrcaModule(const OrcaConfig& cfg, nn::ParameterStore& store, const std::string& prefix, Rng& rng);

    const OrcaConfig& config() const { return cfg_; }

    // Raw track [T,input_dim] -> projected+normalized [T,width] with positions added.
    ad::Var project_self(const ad::Var& raw) const;
    ad::Var project_other(const ad::Var& raw) const;

    // Orthogonalization in projected space (mode-dependent).
    ad::Var orthogonalize(const ad::Var& self_proj, const ad::Var& other_proj) const;

    // Cross-attentions + gate on projected streams. `probs` optionally captures the
    // first module's attention rows.
    ad::Var fuse(const ad::Var& self_proj, const ad::Var& other_proj, Tensor* probs = nullptr) const;

    // Full forward from raw tracks: project -> orthogonalize -> attend -> gate.
    ad::Var forward(const ad::Var& a_self_raw, const ad::Var& a_other_raw) const;

    const ad::Var& gate() const { return gate_; }
    const nn::MultiheadAttention& attention_self_to_other() const { return ca_self_to_other_; }
    const nn::MultiheadAttention& attention_other_to_self() const { return ca_other_to_self_; }

private:
    OrcaConfig cfg_;
    nn::Linear proj_self_, proj_other_;
    nn::LayerNorm ln_self_, ln_other_;
    nn::Linear phi_hidden_, phi_out_;  // learned projection, only registered in learned mode
    nn::MultiheadAttention ca_self_to_other_;  // query = a_other, kv = a_self_perp
    nn::MultiheadAttention ca_other_to_self_;  // query = a_self_perp, kv = a_other
    ad::Var gate_;                              // [1, width]
};

}  // namespace dyadit
