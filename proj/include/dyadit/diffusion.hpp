#pragma once

#include <functional>
#include <vector>

#include "dyadit/dit.hpp"

namespace dyadit {

struct ScheduleConfig {
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;

    nlohmann::json to_json() const;
    static ScheduleConfig from_json(const nlohmann::json& j);
};

// Beta / cumulative-alpha tables for the forward noising process. Betas must be
// strictly in (0,1), which makes alphas_bar strictly decreasing.
struct NoiseSchedule {
    std::vector<double> betas;
    std::vector<double> alphas_bar;

    int length() const { return static_cast<int>(betas.size()); }
    static NoiseSchedule linear(const ScheduleConfig& cfg);
    static NoiseSchedule from_betas(std::vector<double> betas);
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, with caller-supplied eps.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule);

// eps_uncond + w * (eps_cond - eps_uncond); w == 0 / w == 1 return the branch bit-exactly.
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double w);

struct DropoutConfig {
    double audio = 0.1;
    double relationship = 0.1;
    double personality = 0.1;
    double partner = 0.5;
    double style = 0.5;

    void validate() const;
    nlohmann::json to_json() const;
    static DropoutConfig from_json(const nlohmann::json& j);
};

// Independently sets each drop flag with its configured probability. Shapes are
// untouched; flags drive null-embedding substitution downstream.
ConditioningBundle condition_dropout(ConditioningBundle bundle, const DropoutConfig& p, Rng& rng);

struct SamplerConfig {
    int steps = 50;
    double cfg_scale = 2.0;
    double eta = 0.0;

    nlohmann::json to_json() const;
    static SamplerConfig from_json(const nlohmann::json& j);
};

using DenoiseFn = std::function<Tensor(const Tensor& x_t, int t)>;

// Uniformly strided DDIM timesteps over [0, S), always including S-1.
std::vector<int> ddim_timesteps(int schedule_len, int steps);

// Deterministic for eta == 0; eta > 0 draws per-step noise from noise_rng.
Tensor ddim_sample(const DenoiseFn& denoise, const NoiseSchedule& schedule, const SamplerConfig& cfg,
                   const Tensor& init_noise, Rng* noise_rng = nullptr);

struct TrainingSample {
    Tensor x0;  // [Tl, latent_io]
    ConditioningBundle bundle;
};

// Mean over batch rows of the per-token squared L2 error between drawn and predicted
// noise. Timesteps, noise, and condition dropout are drawn from rng in batch order.
ad::Var diffusion_training_loss(const DenoiserModel& model, const std::vector<TrainingSample>& batch,
                                const NoiseSchedule& schedule, const DropoutConfig& dropout, Rng& rng);

// Oracle-friendly variant: the predictor is a plain callback receiving (x_t, t, eps)
// per sample; used to pin the loss values with stub models.
double diffusion_training_loss_fn(
    const std::function<Tensor(const Tensor& x_t, int t, const Tensor& eps)>& predictor,
    const std::vector<Tensor>& batch_x0, const NoiseSchedule& schedule, Rng& rng);

struct DitTrainConfig {
    int steps = 900;
    int batch = 8;
    int crop_latent = 20;  // latent-token window length; 0 = whole clips
    double lr = 2e-3;
    std::uint64_t seed = 1;
    int log_every = 50;

    nlohmann::json to_json() const;
    static DitTrainConfig from_json(const nlohmann::json& j);
};

struct DitTrainStats {
    std::vector<std::pair<int, double>> logged_losses;  // (step, mean loss since last log)
    double final_loss = 0.0;
    int divergence_step = -1;  // set if a non-finite loss aborted training
};

// Joint training of ORCA + dictionary + DiT on precomputed latent clips.
DitTrainStats train_denoiser(DenoiserModel& model, const std::vector<TrainingSample>& clips,
                             const NoiseSchedule& schedule, const DropoutConfig& dropout,
                             const DitTrainConfig& cfg,
                             const std::function<void(int, double)>& log_hook = {});

}  // namespace dyadit
