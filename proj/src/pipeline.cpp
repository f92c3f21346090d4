#include "dyadit/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include "dyadit/checkpoint.hpp"
#include "dyadit/json_util.hpp"

namespace dyadit::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

json make_synthetic(const SynthConfig& cfg, const std::string& out_dir) {
    Dataset ds = generate_synthetic(cfg);
    save_dataset(ds, out_dir);
    return ds.config;
}

json default_tokenizer_config() {
    return json{{"model", TokenizerConfig().to_json()}, {"training", TokenizerTrainConfig().to_json()}};
}

json default_dit_config() {
    return json{{"model", DenoiserConfig().to_json()},
                {"schedule", ScheduleConfig().to_json()},
                {"dropout", DropoutConfig().to_json()},
                {"training", DitTrainConfig().to_json()}};
}

namespace {

json merged_with_defaults(json defaults, const json& config) {
    if (config.is_null()) return defaults;
    defaults.merge_patch(config);
    return defaults;
}

void write_jsonl(const std::string& path, const std::vector<json>& lines) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& l : lines) out << l.dump() << "\n";
}

}  // namespace

TrainResult train_tokenizer_pipeline(const std::string& dataset_dir, json config,
                                     std::optional<std::uint64_t> seed_override,
                                     const std::string& out_dir) {
    require_keys(config, {"model", "training"}, "tokenizer pipeline config");
    config = merged_with_defaults(default_tokenizer_config(), config);
    if (seed_override) config["training"]["seed"] = *seed_override;

    Dataset ds = load_dataset(dataset_dir);
    if (ds.clips.empty()) throw ConfigError("train-tokenizer: dataset has no clips");
    std::vector<GestureSequence> clips;
    clips.reserve(ds.clips.size());
    for (auto& c : ds.clips) clips.push_back(c.gesture_other);

    TokenizerConfig model_cfg = TokenizerConfig::from_json(config["model"]);
    TokenizerTrainConfig train_cfg = TokenizerTrainConfig::from_json(config["training"]);
    TokenizerModel model(model_cfg, train_cfg.seed);

    std::vector<json> log_lines;
    TokenizerTrainStats stats = train_tokenizer(model, clips, train_cfg, [&](int epoch, double loss) {
        log_lines.push_back(json{{"epoch", epoch}, {"loss", loss}});
    });
    log_lines.push_back(json{{"initial_recon_mse", stats.initial_recon_mse},
                             {"final_recon_mse", stats.final_recon_mse},
                             {"codebook_usage_fraction", stats.codebook_usage_fraction}});

    if (!stats.epoch_losses.empty() && !std::isfinite(stats.epoch_losses.back()))
        throw NumericalFailure("train-tokenizer: non-finite loss at epoch " +
                               std::to_string(stats.epoch_losses.size() - 1));

    fs::create_directories(out_dir);
    model.sync_codebooks();
    save_checkpoint(out_dir, "tokenizer",
                    json{{"model", model_cfg.to_json()}, {"training", train_cfg.to_json()}},
                    model.params());
    write_jsonl((fs::path(out_dir) / "training_log.jsonl").string(), log_lines);

    TrainResult result;
    result.checkpoint_dir = out_dir;
    result.resolved_config = config;
    result.final_loss = stats.epoch_losses.empty() ? 0.0 : stats.epoch_losses.back();
    return result;
}

namespace {

TokenizerModel load_tokenizer_checkpoint(const std::string& dir) {
    json cfg_json = read_checkpoint_meta(dir, "tokenizer");
    // Accept both the bare model config and the pipeline echo.
    if (cfg_json.contains("model")) cfg_json = cfg_json["model"];
    TokenizerModel model(TokenizerConfig::from_json(cfg_json), 0);
    load_checkpoint_params(dir, model.params());
    for (std::size_t k = 0; k < model.codebooks().size(); ++k) {
        nn::Var v = model.params().find("codebook" + std::to_string(k) + ".entries");
        model.codebooks()[k].entries = v->value;
        model.codebooks()[k].ema_sum = v->value;
    }
    return model;
}

struct DitCheckpointBundle {
    DenoiserModel model;
    NoiseSchedule schedule;
    json config;
};

DitCheckpointBundle load_dit_checkpoint(const std::string& dir) {
    json cfg_json = read_checkpoint_meta(dir, "dit");
    json model_json = cfg_json.contains("model") ? cfg_json["model"] : cfg_json;
    DenoiserModel model(DenoiserConfig::from_json(model_json), 0);
    load_checkpoint_params(dir, model.params());
    ScheduleConfig sched_cfg = cfg_json.contains("schedule")
                                   ? ScheduleConfig::from_json(cfg_json["schedule"])
                                   : ScheduleConfig{};
    return DitCheckpointBundle{std::move(model), NoiseSchedule::linear(sched_cfg), cfg_json};
}

std::vector<TrainingSample> build_training_samples(const Dataset& ds, const TokenizerModel& tokenizer) {
    ad::NoGradGuard ng;
    std::vector<TrainingSample> samples;
    samples.reserve(ds.clips.size());
    for (const DyadSample& clip : ds.clips) {
        TrainingSample s;
        s.x0 = tokenizer.encode(clip.gesture_other).tokens;
        s.bundle.audio_self = clip.audio_self;
        s.bundle.audio_other = clip.audio_other;
        s.bundle.partner_latent = tokenizer.encode(clip.gesture_self).tokens;
        s.bundle.style_reference = s.x0;
        s.bundle.relationship = clip.relationship;
        s.bundle.personality = clip.personality;
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace

TrainResult train_dit_pipeline(const std::string& dataset_dir, const std::string& tokenizer_dir,
                               json config, std::optional<std::uint64_t> seed_override,
                               const std::string& out_dir) {
    require_keys(config, {"model", "schedule", "dropout", "training"}, "dit pipeline config");
    config = merged_with_defaults(default_dit_config(), config);
    if (seed_override) config["training"]["seed"] = *seed_override;

    Dataset ds = load_dataset(dataset_dir);
    if (ds.clips.empty()) throw ConfigError("train-dit: dataset has no clips");
    TokenizerModel tokenizer = load_tokenizer_checkpoint(tokenizer_dir);

    DenoiserConfig model_cfg = DenoiserConfig::from_json(config["model"]);
    if (model_cfg.dit.latent_io != tokenizer.config().latent_dim)
        throw ConfigError("train-dit: dit.latent_io (" + std::to_string(model_cfg.dit.latent_io) +
                          ") must match tokenizer latent_dim (" +
                          std::to_string(tokenizer.config().latent_dim) + ")");
    ScheduleConfig sched_cfg = ScheduleConfig::from_json(config["schedule"]);
    if (sched_cfg.steps != model_cfg.dit.time_steps)
        throw ConfigError("train-dit: schedule.steps must match dit.time_steps");
    DropoutConfig dropout = DropoutConfig::from_json(config["dropout"]);
    DitTrainConfig train_cfg = DitTrainConfig::from_json(config["training"]);

    std::vector<TrainingSample> samples = build_training_samples(ds, tokenizer);
    DenoiserModel model(model_cfg, train_cfg.seed);
    NoiseSchedule schedule = NoiseSchedule::linear(sched_cfg);

    std::vector<json> log_lines;
    DitTrainStats stats =
        train_denoiser(model, samples, schedule, dropout, train_cfg, [&](int step, double loss) {
            log_lines.push_back(json{{"step", step}, {"loss", loss}});
        });
    if (stats.divergence_step >= 0)
        throw NumericalFailure("train-dit: non-finite loss at step " +
                               std::to_string(stats.divergence_step));

    fs::create_directories(out_dir);
    json echo{{"model", model_cfg.to_json()},
              {"schedule", sched_cfg.to_json()},
              {"dropout", dropout.to_json()},
              {"training", train_cfg.to_json()}};
    save_checkpoint(out_dir, "dit", echo, model.params());
    write_jsonl((fs::path(out_dir) / "training_log.jsonl").string(), log_lines);

    TrainResult result;
    result.checkpoint_dir = out_dir;
    result.resolved_config = config;
    result.final_loss = stats.final_loss;
    return result;
}

GestureSequence generate_one(const TokenizerModel& tokenizer, const DenoiserModel& denoiser,
                             const ConditioningBundle& bundle, const SamplerConfig& sampler,
                             const NoiseSchedule& schedule, const Tensor& init_noise, int fps) {
    ad::NoGradGuard ng;
    const std::int64_t latent_len = init_noise.dim(0);
    EncodedConditioning cond = denoiser.encode_conditioning(bundle, latent_len);
    ConditioningBundle uncond_bundle = bundle;
    uncond_bundle.drop = DropFlags::all();
    EncodedConditioning uncond = denoiser.encode_conditioning(uncond_bundle, latent_len);

    DenoiseFn denoise = [&](const Tensor& x_t, int t) {
        ad::NoGradGuard inner;
        Tensor eps_cond = denoiser.forward_eps(ad::constant(x_t), t, cond)->value;
        if (sampler.cfg_scale == 1.0) return eps_cond;
        Tensor eps_uncond = denoiser.forward_eps(ad::constant(x_t), t, uncond)->value;
        return cfg_combine(eps_cond, eps_uncond, sampler.cfg_scale);
    };
    Tensor latent = ddim_sample(denoise, schedule, sampler, init_noise);
    return tokenizer.decode(MotionLatent{latent}, fps);
}

GenerateResult generate_pipeline(const GenerateOptions& opts) {
    TokenizerModel tokenizer = load_tokenizer_checkpoint(opts.tokenizer_dir);
    DitCheckpointBundle dit = load_dit_checkpoint(opts.dit_dir);
    const int latent_dim = tokenizer.config().latent_dim;
    const int factor = tokenizer.config().temporal_factor;

    std::optional<Dataset> source;
    std::vector<int> indices;
    if (!opts.dataset_dir.empty()) {
        source = load_dataset(opts.dataset_dir);
        if (source->clips.empty()) throw ConfigError("generate: conditioning dataset has no clips");
        indices = opts.clip_indices;
        if (indices.empty()) {
            const int n = std::min<int>(opts.count, static_cast<int>(source->clips.size()));
            for (int i = 0; i < n; ++i) indices.push_back(i);
        }
        for (int i : indices)
            if (i < 0 || i >= static_cast<int>(source->clips.size()))
                throw ConfigError("generate: clip index " + std::to_string(i) + " out of range");
    } else {
        for (int i = 0; i < opts.count; ++i) indices.push_back(i);
    }

    Tensor relationship({4});
    if (opts.relationship) {
        if (*opts.relationship < 0 || *opts.relationship > 3)
            throw ConfigError("generate: relationship index must be in [0,3]");
        relationship[*opts.relationship] = 1.0;
    }
    Tensor personality({5});
    if (opts.personality)
        for (int i = 0; i < 5; ++i) personality[i] = (*opts.personality)[static_cast<std::size_t>(i)];

    Dataset out;
    out.generated = true;
    out.seed = opts.noise_seed;
    out.fps = source ? source->fps : kDefaultFps;

    json clip_records = json::array();
    for (std::size_t slot = 0; slot < indices.size(); ++slot) {
        ConditioningBundle bundle;
        DyadSample sample;  // output record
        int frames;
        if (source) {
            const DyadSample& src = source->clips[static_cast<std::size_t>(indices[slot])];
            frames = opts.length_frames > 0 ? opts.length_frames
                                            : static_cast<int>(src.gesture_other.length());
            if (frames > src.gesture_other.length())
                throw ConfigError("generate: length exceeds source clip frames");
            if (frames % factor != 0)
                throw ConfigError("generate: length must be divisible by the temporal factor");
            auto crop = [&](const Tensor& t) {
                Tensor c({frames, t.dim(1)});
                std::copy(t.data(), t.data() + static_cast<std::int64_t>(frames) * t.dim(1), c.data());
                return c;
            };
            bundle.audio_self = crop(src.audio_self);
            bundle.audio_other = crop(src.audio_other);
            sample.turn_mask = crop(src.turn_mask);
            GestureSequence partner = src.gesture_self;
            if (frames < partner.length()) {
                Tensor pf({frames, partner.frames.dim(1), partner.frames.dim(2)});
                std::copy(partner.frames.data(),
                          partner.frames.data() + pf.size(), pf.data());
                partner = GestureSequence::from_frames(std::move(pf), partner.fps);
            }
            {
                ad::NoGradGuard ng;
                if (opts.use_partner) bundle.partner_latent = tokenizer.encode(partner).tokens;
                if (opts.use_style) {
                    GestureSequence style_src = src.gesture_other;
                    if (frames < style_src.length()) {
                        Tensor sf({frames, style_src.frames.dim(1), style_src.frames.dim(2)});
                        std::copy(style_src.frames.data(), style_src.frames.data() + sf.size(),
                                  sf.data());
                        style_src = GestureSequence::from_frames(std::move(sf), style_src.fps);
                    }
                    bundle.style_reference = tokenizer.encode(style_src).tokens;
                }
            }
            bundle.relationship = opts.relationship ? relationship : src.relationship;
            bundle.personality = opts.personality ? personality : src.personality;
            sample.gesture_self = partner;
        } else {
            frames = opts.length_frames > 0 ? opts.length_frames : 300;
            if (frames % factor != 0)
                throw ConfigError("generate: length must be divisible by the temporal factor");
            AudioSourceSpec spec;
            spec.frames = frames;
            spec.fps = kDefaultFps;
            spec.seed = derive_seed(opts.audio_seed, slot * 2);
            bundle.audio_self = audio_features("synthetic", spec);
            spec.seed = derive_seed(opts.audio_seed, slot * 2 + 1);
            bundle.audio_other = audio_features("synthetic", spec);
            bundle.relationship = relationship;
            bundle.personality = personality;
            sample.turn_mask = Tensor({frames, 2});
            Tensor zero_frames({frames, kJointCount, kFeatureDim});
            for (std::int64_t i = 0; i < frames; ++i)
                for (int jj = 0; jj < kJointCount; ++jj) {
                    zero_frames.at(i, jj, 0) = 1.0;  // identity 6D encoding
                    zero_frames.at(i, jj, 4) = 1.0;
                }
            sample.gesture_self = GestureSequence::from_frames(std::move(zero_frames), kDefaultFps);
        }

        Rng noise_rng(derive_seed(opts.noise_seed, slot));
        Tensor init_noise =
            Tensor::randn({frames / factor, static_cast<std::int64_t>(latent_dim)}, noise_rng);
        GestureSequence generated =
            generate_one(tokenizer, dit.model, bundle, opts.sampler, dit.schedule, init_noise, out.fps);
        // Outputs are persisted as f32; keep the in-memory copy identical.
        for (std::int64_t i = 0; i < generated.frames.size(); ++i)
            generated.frames[i] = static_cast<double>(static_cast<float>(generated.frames[i]));

        sample.gesture_other = std::move(generated);
        sample.audio_self = bundle.audio_self;
        sample.audio_other = bundle.audio_other;
        sample.relationship = bundle.relationship;
        sample.personality = bundle.personality;
        out.clips.push_back(std::move(sample));

        clip_records.push_back(json{{"slot", slot},
                                    {"source_clip", source ? json(indices[slot]) : json(nullptr)},
                                    {"noise_seed", derive_seed(opts.noise_seed, slot)},
                                    {"frames", frames}});
    }

    out.config = json{{"kind", "generation"},
                      {"tokenizer", opts.tokenizer_dir},
                      {"dit", opts.dit_dir},
                      {"conditioning_dataset", opts.dataset_dir},
                      {"sampler", opts.sampler.to_json()},
                      {"noise_seed", opts.noise_seed},
                      {"audio_seed", opts.audio_seed},
                      {"use_style", opts.use_style},
                      {"use_partner", opts.use_partner},
                      {"relationship_override",
                       opts.relationship ? json(*opts.relationship) : json(nullptr)},
                      {"personality_override",
                       opts.personality ? json(*opts.personality) : json(nullptr)},
                      {"clips", clip_records}};
    save_dataset(out, opts.out_dir);

    GenerateResult result;
    result.out_dir = opts.out_dir;
    result.clips = static_cast<int>(out.clips.size());
    result.manifest_config = out.config;
    return result;
}

MetricReport evaluate_pipeline(const std::string& generated_dir, const std::string& reference_dir,
                               const std::string& report_path) {
    Dataset gen = load_dataset(generated_dir);
    Dataset ref = load_dataset(reference_dir);
    if (gen.clips.empty() || ref.clips.empty())
        throw InsufficientSamples("evaluate: empty generated or reference set");

    std::vector<GestureSequence> gen_gestures, ref_gestures;
    std::vector<std::vector<double>> envelopes;
    for (const auto& c : gen.clips) {
        gen_gestures.push_back(c.gesture_other);
        envelopes.push_back(audio_envelope_rms(c.audio_other));
    }
    for (const auto& c : ref.clips) ref_gestures.push_back(c.gesture_other);

    MetricReport report = evaluate_sets(gen_gestures, ref_gestures, envelopes);
    report.config["generated_dir"] = generated_dir;
    report.config["reference_dir"] = reference_dir;

    if (!report_path.empty()) {
        std::ofstream out(report_path);
        if (!out) throw IoError("cannot write report: " + report_path);
        out << report.to_json().dump(2) << "\n";
    }
    return report;
}

}  // namespace dyadit::pipeline
