#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dyadit/diffusion.hpp"
#include "dyadit/metrics.hpp"
#include "dyadit/synthetic.hpp"
#include "dyadit/tokenizer.hpp"

namespace dyadit::pipeline {

// Writes the dataset directory; returns the resolved config echo.
nlohmann::json make_synthetic(const SynthConfig& cfg, const std::string& out_dir);

struct TrainResult {
    std::string checkpoint_dir;
    nlohmann::json resolved_config;
    double final_loss = 0.0;
};

// config layout: {"model": {...}, "training": {...}}. seed_override replaces
// training.seed when set. Writes checkpoint + training_log.jsonl into out_dir.
TrainResult train_tokenizer_pipeline(const std::string& dataset_dir, nlohmann::json config,
                                     std::optional<std::uint64_t> seed_override,
                                     const std::string& out_dir);

// config layout: {"model": {"dit":…, "orca":…, "dictionary":…}, "schedule": {...},
// "dropout": {...}, "training": {...}}. Requires a tokenizer checkpoint for latents.
TrainResult train_dit_pipeline(const std::string& dataset_dir, const std::string& tokenizer_dir,
                               nlohmann::json config, std::optional<std::uint64_t> seed_override,
                               const std::string& out_dir);

struct GenerateOptions {
    std::string tokenizer_dir;
    std::string dit_dir;
    std::string out_dir;
    std::string dataset_dir;         // conditioning source; empty = synthetic audio
    std::vector<int> clip_indices;   // dataset mode: which clips (empty = first `count`)
    int count = 8;                   // clip count when clip_indices is empty / synthetic mode
    std::optional<int> relationship;                     // one-hot index override
    std::optional<std::array<double, 5>> personality;    // override
    SamplerConfig sampler;           // steps / cfg_scale / eta
    std::uint64_t noise_seed = 0;
    std::uint64_t audio_seed = 0;    // synthetic-audio mode only
    bool use_style = true;           // style conditioning from the source clip's motion
    bool use_partner = true;         // p_self conditioning from the source clip
    int length_frames = -1;          // -1 = source clip length (or 300 in synthetic mode)
};

struct GenerateResult {
    std::string out_dir;
    int clips = 0;
    nlohmann::json manifest_config;
};

GenerateResult generate_pipeline(const GenerateOptions& opts);

// Single-clip guided DDIM generation (bundle -> decoded gesture).
GestureSequence generate_one(const TokenizerModel& tokenizer, const DenoiserModel& denoiser,
                             const ConditioningBundle& bundle, const SamplerConfig& sampler,
                             const NoiseSchedule& schedule, const Tensor& init_noise, int fps);

// Evaluates generated/reference dataset directories; writes the JSON report to
// report_path when non-empty.
MetricReport evaluate_pipeline(const std::string& generated_dir, const std::string& reference_dir,
                               const std::string& report_path = "");

// Default pipeline-level configs (the shipped configs/*.json mirror these).
nlohmann::json default_tokenizer_config();
nlohmann::json default_dit_config();

}  // namespace dyadit::pipeline
