#include "dyadit/dit.hpp"

#include <cmath>

#include "dyadit/checkpoint.hpp"

#include "dyadit/json_util.hpp"

namespace dyadit {

using ad::Var;
using nlohmann::json;

void DiTConfig::validate() const {
    if (blocks < 1 || heads < 1 || hidden < 1 || head_width < 1 || ffn_width < 1 || latent_io < 1 ||
        time_embed_dim < 1 || time_steps < 1)
        throw ConfigError("dit: all dimensions must be positive");
    if (heads * head_width != hidden)
        throw ConfigError("dit: heads * head_width must equal hidden (" + std::to_string(heads) + "*" +
                          std::to_string(head_width) + " != " + std::to_string(hidden) + ")");
}

json DiTConfig::to_json() const {
    return json{{"blocks", blocks},         {"heads", heads},
                {"hidden", hidden},         {"head_width", head_width},
                {"ffn_width", ffn_width},   {"latent_io", latent_io},
                {"time_embed_dim", time_embed_dim}, {"time_steps", time_steps}};
}

DiTConfig DiTConfig::from_json(const json& j) {
    require_keys(j,
                 {"blocks", "heads", "hidden", "head_width", "ffn_width", "latent_io",
                  "time_embed_dim", "time_steps"},
                 "dit config");
    DiTConfig c;
    c.blocks = j.value("blocks", c.blocks);
    c.heads = j.value("heads", c.heads);
    c.hidden = j.value("hidden", c.hidden);
    c.head_width = j.value("head_width", c.head_width);
    c.ffn_width = j.value("ffn_width", c.ffn_width);
    c.latent_io = j.value("latent_io", c.latent_io);
    c.time_embed_dim = j.value("time_embed_dim", c.time_embed_dim);
    c.time_steps = j.value("time_steps", c.time_steps);
    c.validate();
    return c;
}

Tensor time_embedding(int t, std::int64_t dim, int schedule_len) {
    if (t < 0 || t >= schedule_len)
        throw OutOfRange("time_embedding: step " + std::to_string(t) + " outside [0," +
                         std::to_string(schedule_len) + ")");
    return nn::sinusoidal_embedding(static_cast<double>(t), dim);
}

Var film_modulate(const Var& x, const Var& cond_vec, const nn::Linear& proj) {
    const std::int64_t h = x->value.dim(1);
    if (proj.out_dim() != 2 * h) throw ShapeError("film_modulate: projection must emit 2*hidden");
    Var gb = proj.forward(cond_vec);  // [1, 2H]
    Var gamma = ad::slice_cols(gb, 0, h);
    Var beta = ad::slice_cols(gb, h, 2 * h);
    return ad::add_bias_row(ad::mul_row(x, ad::add_scalar(gamma, 1.0)), beta);
}

void ConditioningBundle::validate() const {
    if (audio_self.rank() != 2 || !audio_self.same_shape(audio_other))
        throw ShapeError("bundle: audio tracks must be equal-shape [Ta, D]");
    if (relationship.size() != 4) throw ShapeError("bundle: relationship must have 4 entries");
    int ones = 0;
    for (std::int64_t i = 0; i < 4; ++i) {
        double v = relationship[i];
        if (v != 0.0 && v != 1.0)
            throw ConfigError("bundle: relationship must be one-hot or all-zero");
        ones += v == 1.0 ? 1 : 0;
    }
    if (ones > 1) throw ConfigError("bundle: relationship must be one-hot or all-zero");
    if (personality.size() != 5) throw ShapeError("bundle: personality must have 5 entries");
    if (!personality.all_finite()) throw ConfigError("bundle: personality must be finite");
}

void DenoiserConfig::validate() const {
    dit.validate();
    orca.validate();
    dictionary.validate();
    if (orca.width != dit.hidden)
        throw ConfigError("denoiser: orca.width must equal dit.hidden");
    if (dictionary.width != dit.hidden)
        throw ConfigError("denoiser: dictionary.width must equal dit.hidden");
    if (dictionary.style_input != dit.latent_io)
        throw ConfigError("denoiser: dictionary.style_input must equal dit.latent_io");
}

json DenoiserConfig::to_json() const {
    return json{{"dit", dit.to_json()}, {"orca", orca.to_json()}, {"dictionary", dictionary.to_json()}};
}

DenoiserConfig DenoiserConfig::from_json(const json& j) {
    require_keys(j, {"dit", "orca", "dictionary", "schedule", "dropout", "training"},
                 "denoiser config");
    DenoiserConfig c;
    if (j.contains("dit")) c.dit = DiTConfig::from_json(j["dit"]);
    if (j.contains("orca")) c.orca = OrcaConfig::from_json(j["orca"]);
    if (j.contains("dictionary")) c.dictionary = DictionaryConfig::from_json(j["dictionary"]);
    c.validate();
    return c;
}

DenoiserModel::DenoiserModel(DenoiserConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    orca_ = OrcaModule(cfg_.orca, params_, "orca", rng);
    md_ = MotionDictionary(cfg_.dictionary, params_, "dictionary", rng, derive_seed(seed, 0xD1C7));
    const int h = cfg_.dit.hidden;
    in_proj_ = nn::Linear(params_, "in_proj", cfg_.dit.latent_io, h, rng);
    out_proj_ = nn::Linear(params_, "out_proj", h, cfg_.dit.latent_io, rng);
    partner_proj_ = nn::Linear(params_, "partner_proj", cfg_.dit.latent_io, h, rng);
    rel_proj_ = nn::Linear(params_, "rel_proj", 4, h, rng);
    pers_proj_ = nn::Linear(params_, "pers_proj", 5, h, rng);
    time_in_ = nn::Linear(params_, "time_in", cfg_.dit.time_embed_dim, h, rng);
    time_out_ = nn::Linear(params_, "time_out", h, h, rng);
    null_audio_ = params_.add("null_audio", Tensor::randn({1, h}, rng, 0.02));
    null_partner_ = params_.add("null_partner", Tensor::randn({1, h}, rng, 0.02));
    null_rel_ = params_.add("null_rel", Tensor::randn({1, h}, rng, 0.02));
    null_pers_ = params_.add("null_pers", Tensor::randn({1, h}, rng, 0.02));
    blocks_.resize(static_cast<std::size_t>(cfg_.dit.blocks));
    for (int b = 0; b < cfg_.dit.blocks; ++b) {
        Block& blk = blocks_[static_cast<std::size_t>(b)];
        const std::string p = "block" + std::to_string(b);
        blk.ln1 = nn::LayerNorm(params_, p + ".ln1", h);
        blk.ln2 = nn::LayerNorm(params_, p + ".ln2", h);
        blk.ln3 = nn::LayerNorm(params_, p + ".ln3", h);
        // Zero-initialized FiLM projections: identity modulation at start.
        blk.film1 = nn::Linear(params_, p + ".film1", h, 2 * h, rng, /*zero_init=*/true);
        blk.film2 = nn::Linear(params_, p + ".film2", h, 2 * h, rng, /*zero_init=*/true);
        blk.film3 = nn::Linear(params_, p + ".film3", h, 2 * h, rng, /*zero_init=*/true);
        blk.self_attn = nn::MultiheadAttention(params_, p + ".self_attn", h, cfg_.dit.heads, rng);
        blk.cross_attn = nn::MultiheadAttention(params_, p + ".cross_attn", h, cfg_.dit.heads, rng);
        blk.ffn1 = nn::Linear(params_, p + ".ffn1", h, cfg_.dit.ffn_width, rng);
        blk.ffn2 = nn::Linear(params_, p + ".ffn2", cfg_.dit.ffn_width, h, rng);
    }
    final_ln_ = nn::LayerNorm(params_, "final_ln", h);
}

EncodedConditioning DenoiserModel::encode_conditioning(const ConditioningBundle& bundle,
                                                       std::int64_t target_latent_len) const {
    bundle.validate();
    const std::int64_t ta = bundle.audio_self.dim(0);

    Var audio_tokens;
    if (bundle.drop.audio) {
        audio_tokens = ad::broadcast_row(null_audio_, ta);
    } else {
        Var self_proj = orca_.project_self(ad::constant(bundle.audio_self));
        Var other_proj = orca_.project_other(ad::constant(bundle.audio_other));
        if (bundle.style_reference && !bundle.drop.style) {
            Var weights = md_.extract_style(ad::constant(*bundle.style_reference));
            other_proj = md_.modulate(other_proj, weights);
        }
        audio_tokens = orca_.fuse(self_proj, other_proj);
    }

    Var partner_tokens;
    if (bundle.partner_latent && !bundle.drop.partner) {
        Var p = partner_proj_.forward(ad::constant(*bundle.partner_latent));
        partner_tokens =
            ad::add(p, ad::constant(nn::sinusoidal_table(p->value.dim(0), p->value.dim(1))));
    } else {
        const std::int64_t rows = bundle.partner_latent
                                      ? bundle.partner_latent->dim(0)
                                      : target_latent_len;
        partner_tokens = ad::broadcast_row(null_partner_, rows);
    }

    bool rel_dropped = bundle.drop.relationship;
    double rel_sum = 0.0;
    for (std::int64_t i = 0; i < 4; ++i) rel_sum += bundle.relationship[i];
    if (rel_sum == 0.0) rel_dropped = true;  // all-zero one-hot means "not provided"
    Var rel_vec = rel_dropped
                      ? null_rel_
                      : rel_proj_.forward(ad::constant(bundle.relationship.reshaped({1, 4})));
    Var pers_vec = bundle.drop.personality
                       ? null_pers_
                       : pers_proj_.forward(ad::constant(bundle.personality.reshaped({1, 5})));

    EncodedConditioning out;
    out.ctx = ad::concat_rows({audio_tokens, partner_tokens, rel_vec, pers_vec});
    out.social = ad::add(rel_vec, pers_vec);
    return out;
}

Var DenoiserModel::forward_eps(const Var& x_tokens, int t, const EncodedConditioning& cond) const {
    if (x_tokens->value.rank() != 2 || x_tokens->value.dim(1) != cfg_.dit.latent_io)
        throw ShapeError("forward_eps: expected [T_l," + std::to_string(cfg_.dit.latent_io) +
                         "] latent tokens");
    const std::int64_t tl = x_tokens->value.dim(0);
    const int h = cfg_.dit.hidden;

    Var hseq = in_proj_.forward(x_tokens);
    hseq = ad::add(hseq, ad::constant(nn::sinusoidal_table(tl, h)));

    Tensor temb = time_embedding(t, cfg_.dit.time_embed_dim, cfg_.dit.time_steps);
    Var tvec = time_out_.forward(ad::gelu(time_in_.forward(ad::constant(std::move(temb)))));
    Var film_vec = ad::add(tvec, cond.social);

    for (const Block& blk : blocks_) {
        Var a = film_modulate(blk.ln1.forward(hseq), film_vec, blk.film1);
        hseq = ad::add(hseq, blk.self_attn.forward(a, a));
        Var q = film_modulate(blk.ln2.forward(hseq), film_vec, blk.film2);
        hseq = ad::add(hseq, blk.cross_attn.forward(q, cond.ctx));
        Var f = film_modulate(blk.ln3.forward(hseq), film_vec, blk.film3);
        hseq = ad::add(hseq, blk.ffn2.forward(ad::gelu(blk.ffn1.forward(f))));
    }
    return out_proj_.forward(final_ln_.forward(hseq));
}

Tensor DenoiserModel::predict_noise(const Tensor& x_t, int t, const ConditioningBundle& bundle) const {
    ad::NoGradGuard ng;
    EncodedConditioning cond = encode_conditioning(bundle, x_t.dim(0));
    return forward_eps(ad::constant(x_t), t, cond)->value;
}

void DenoiserModel::save(const std::string& dir, const json& extra_config) const {
    json cfg = cfg_.to_json();
    if (!extra_config.is_null())
        for (auto it = extra_config.begin(); it != extra_config.end(); ++it) cfg[it.key()] = it.value();
    save_checkpoint(dir, "dit", cfg, params_);
}

DenoiserModel DenoiserModel::load(const std::string& dir) {
    json cfg_json = read_checkpoint_meta(dir, "dit");
    DenoiserModel model(DenoiserConfig::from_json(cfg_json), /*seed=*/0);
    load_checkpoint_params(dir, model.params_);
    return model;
}

}  // namespace dyadit
