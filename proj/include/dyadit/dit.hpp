#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dyadit/motion_dictionary.hpp"
#include "dyadit/orca.hpp"

namespace dyadit {

struct DiTConfig {
    int blocks = 4;
    int heads = 4;
    int hidden = 512;
    int head_width = 128;
    int ffn_width = 2048;
    int latent_io = 64;
    int time_embed_dim = 512;
    int time_steps = 1000;  // diffusion step range the time conditioning covers

    void validate() const;
    nlohmann::json to_json() const;
    static DiTConfig from_json(const nlohmann::json& j);
};

// Sinusoidal step embedding [1, dim]; throws OutOfRange for t outside [0, schedule_len).
Tensor time_embedding(int t, std::int64_t dim, int schedule_len);

// x * (1 + gamma) + beta, with [gamma | beta] produced from cond_vec by `proj`
// (a Linear hidden -> 2*hidden). Zero-initialized proj makes this the identity.
ad::Var film_modulate(const ad::Var& x, const ad::Var& cond_vec, const nn::Linear& proj);

// Per-signal CFG drop switches. A set flag substitutes the learned null embedding.
struct DropFlags {
    bool audio = false;
    bool partner = false;
    bool relationship = false;
    bool personality = false;
    bool style = false;

    static DropFlags all() { return {true, true, true, true, true}; }
};

// Raw per-sample conditioning inputs. Validation enforces the one-hot-or-zero
// relationship contract and finite personality values.
struct ConditioningBundle {
    Tensor audio_self;   // [Ta, input_dim]
    Tensor audio_other;  // [Ta, input_dim]
    std::optional<Tensor> partner_latent;    // [Tp, latent_io]
    std::optional<Tensor> style_reference;   // [Ts, latent_io] reference motion latent
    Tensor relationship;  // [4]
    Tensor personality;   // [5]
    DropFlags drop;

    void validate() const;
};

struct DenoiserConfig {
    DiTConfig dit;
    OrcaConfig orca;
    DictionaryConfig dictionary;

    void validate() const;  // also checks cross-module width consistency
    nlohmann::json to_json() const;
    static DenoiserConfig from_json(const nlohmann::json& j);
};

// Context token sequence + social FiLM vector, reusable across denoising steps.
struct EncodedConditioning {
    ad::Var ctx;     // [Tc, hidden]
    ad::Var social;  // [1, hidden] relationship + personality projections
};

// The denoising transformer with its conditioning stack (ORCA audio fusion, motion
// dictionary, partner/social projections, learned null embeddings). Predicts the
// noise added to the latent motion tokens.
class DenoiserModel {
public:
    DenoiserModel(DenoiserConfig cfg, std::uint64_t seed);

    const DenoiserConfig& config() const { return cfg_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }
    const OrcaModule& orca() const { return orca_; }
    const MotionDictionary& dictionary() const { return md_; }

    // target_latent_len sizes the null-partner substitute when no partner motion is given.
    EncodedConditioning encode_conditioning(const ConditioningBundle& bundle,
                                            std::int64_t target_latent_len) const;

    // Autodiff path: x_tokens [Tl, latent_io] -> predicted eps [Tl, latent_io].
    ad::Var forward_eps(const ad::Var& x_tokens, int t, const EncodedConditioning& cond) const;

    // Inference convenience (no-grad): full bundle path.
    Tensor predict_noise(const Tensor& x_t, int t, const ConditioningBundle& bundle) const;

    void save(const std::string& dir, const nlohmann::json& extra_config = {}) const;
    static DenoiserModel load(const std::string& dir);

private:
    struct Block {
        nn::LayerNorm ln1, ln2, ln3;
        nn::Linear film1, film2, film3;
        nn::MultiheadAttention self_attn, cross_attn;
        nn::Linear ffn1, ffn2;
    };

    DenoiserConfig cfg_;
    nn::ParameterStore params_;
    OrcaModule orca_;
    MotionDictionary md_;
    nn::Linear in_proj_, out_proj_;
    nn::Linear partner_proj_, rel_proj_, pers_proj_;
    nn::Linear time_in_, time_out_;
    nn::LayerNorm final_ln_;
    ad::Var null_audio_, null_partner_, null_rel_, null_pers_;
    std::vector<Block> blocks_;
};

}  // namespace dyadit
