#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dyadit/motion.hpp"
#include "dyadit/nn.hpp"

#include "json.hpp"

namespace dyadit {

struct TokenizerConfig {
    int latent_dim = 64;
    int residual_depth = 4;
    int codebook_size = 512;
    int temporal_factor = 4;
    double commitment_weight = 0.25;
    std::vector<int> channels = {256, 256};  // hidden widths of the two outer conv stages
    double ema_decay = 0.99;
    int revival_patience = 100;  // batches an entry may stay unused before re-seeding
    int input_dim = kJointCount * kFeatureDim;

    void validate() const;
    nlohmann::json to_json() const;
    static TokenizerConfig from_json(const nlohmann::json& j);
};

// One residual stage. Row 0 is pinned to the zero vector and excluded from EMA
// updates, which makes residual norms non-increasing across stages.
struct Codebook {
    Tensor entries;  // [size, latent_dim]
    std::vector<std::int64_t> usage_counts;
    Tensor ema_cluster;  // [size]
    Tensor ema_sum;      // [size, latent_dim]
    std::vector<int> stale_batches;
};

struct MotionLatent {
    Tensor tokens;  // [T/factor, latent_dim]
    std::int64_t length() const { return tokens.dim(0); }
};

struct MotionTokens {
    std::vector<std::int64_t> indices;  // row-major [rows, depth]
    std::int64_t rows = 0;
    std::int64_t depth = 0;
    std::int64_t at(std::int64_t r, std::int64_t d) const {
        return indices[static_cast<std::size_t>(r * depth + d)];
    }
};

// Residual VQ-VAE over gesture sequences: x4 temporal compression into latent_dim
// channels, depth-wise residual quantization, mirrored upsampling decoder.
class TokenizerModel {
public:
    TokenizerModel(TokenizerConfig cfg, std::uint64_t seed);

    const TokenizerConfig& config() const { return cfg_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }
    std::vector<Codebook>& codebooks() { return codebooks_; }
    const std::vector<Codebook>& codebooks() const { return codebooks_; }

    MotionLatent encode(const GestureSequence& seq) const;
    GestureSequence decode(const MotionLatent& latent, int fps = kDefaultFps) const;

    std::pair<MotionTokens, MotionLatent> quantize(const MotionLatent& latent) const;
    MotionLatent dequantize(const MotionTokens& tokens) const;

    // Autodiff paths over [T, J*6] / [T/factor, latent] row matrices.
    ad::Var encode_var(const ad::Var& x) const;
    ad::Var decode_var(const ad::Var& z) const;

    // Copies codebook entries into their checkpoint alias parameters.
    void sync_codebooks();

    void save(const std::string& dir) const;
    static TokenizerModel load(const std::string& dir);

private:
    TokenizerConfig cfg_;
    nn::ParameterStore params_;
    nn::Conv1d enc1_, enc2_, enc3_;
    nn::Conv1d dec_in_, dec_up1_, dec_ref1_, dec_up2_, dec_ref2_, dec_out_;
    std::vector<Codebook> codebooks_;
    std::vector<nn::Var> codebook_vars_;  // checkpoint aliases of codebook entries
};

struct TokenizerTrainConfig {
    int epochs = 12;
    int batch_clips = 4;
    int crop_frames = 128;  // 0 = whole clips
    double lr = 1e-3;
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
    static TokenizerTrainConfig from_json(const nlohmann::json& j);
};

struct TokenizerTrainStats {
    std::vector<double> epoch_losses;      // total loss (recon + commitment) per epoch
    double initial_recon_mse = 0.0;        // dataset recon MSE before training
    double final_recon_mse = 0.0;          // dataset recon MSE after training
    double codebook_usage_fraction = 0.0;  // entries used at least once in the final eval
};

// Straight-through reconstruction training with EMA codebook updates.
TokenizerTrainStats train_tokenizer(TokenizerModel& model, const std::vector<GestureSequence>& dataset,
                                    const TokenizerTrainConfig& train_cfg,
                                    const std::function<void(int, double)>& epoch_hook = {});

}  // namespace dyadit
