#include "dyadit/diffusion.hpp"

#include <cmath>

#include "dyadit/json_util.hpp"

namespace dyadit {

using ad::Var;
using nlohmann::json;

json ScheduleConfig::to_json() const {
    return json{{"steps", steps}, {"beta_start", beta_start}, {"beta_end", beta_end}};
}

ScheduleConfig ScheduleConfig::from_json(const json& j) {
    require_keys(j, {"steps", "beta_start", "beta_end"}, "schedule config");
    ScheduleConfig c;
    c.steps = j.value("steps", c.steps);
    c.beta_start = j.value("beta_start", c.beta_start);
    c.beta_end = j.value("beta_end", c.beta_end);
    return c;
}

NoiseSchedule NoiseSchedule::linear(const ScheduleConfig& cfg) {
    if (cfg.steps < 1) throw ConfigError("schedule: steps must be >= 1");
    std::vector<double> betas(static_cast<std::size_t>(cfg.steps));
    for (int i = 0; i < cfg.steps; ++i) {
        double f = cfg.steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(cfg.steps - 1);
        betas[static_cast<std::size_t>(i)] = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * f;
    }
    return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    if (betas.empty()) throw ConfigError("schedule: empty betas");
    NoiseSchedule s;
    s.alphas_bar.reserve(betas.size());
    double prod = 1.0;
    for (double b : betas) {
        if (!(b > 0.0 && b < 1.0)) throw ConfigError("schedule: betas must lie strictly in (0,1)");
        prod *= 1.0 - b;
        s.alphas_bar.push_back(prod);
    }
    s.betas = std::move(betas);
    return s;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
    if (t < 0 || t >= schedule.length())
        throw OutOfRange("q_sample: t=" + std::to_string(t) + " outside schedule of length " +
                         std::to_string(schedule.length()));
    check_same_shape(x0, eps, "q_sample");
    const double abar = schedule.alphas_bar[static_cast<std::size_t>(t)];
    const double a = std::sqrt(abar);
    const double b = std::sqrt(1.0 - abar);
    Tensor out = x0;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a * out[i] + b * eps[i];
    return out;
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double w) {
    check_same_shape(eps_cond, eps_uncond, "cfg_combine");
    if (w == 0.0) return eps_uncond;
    if (w == 1.0) return eps_cond;
    Tensor out = eps_uncond;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += w * (eps_cond[i] - out[i]);
    return out;
}

void DropoutConfig::validate() const {
    for (double p : {audio, relationship, personality, partner, style})
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("dropout probabilities must lie in [0,1]");
}

json DropoutConfig::to_json() const {
    return json{{"audio", audio},
                {"relationship", relationship},
                {"personality", personality},
                {"partner", partner},
                {"style", style}};
}

DropoutConfig DropoutConfig::from_json(const json& j) {
    require_keys(j, {"audio", "relationship", "personality", "partner", "style"},
                 "dropout config");
    DropoutConfig c;
    c.audio = j.value("audio", c.audio);
    c.relationship = j.value("relationship", c.relationship);
    c.personality = j.value("personality", c.personality);
    c.partner = j.value("partner", c.partner);
    c.style = j.value("style", c.style);
    c.validate();
    return c;
}

ConditioningBundle condition_dropout(ConditioningBundle bundle, const DropoutConfig& p, Rng& rng) {
    p.validate();
    // Draw order is part of the determinism contract: audio, partner, relationship,
    // personality, style.
    bundle.drop.audio = bundle.drop.audio || rng.uniform() < p.audio;
    bundle.drop.partner = bundle.drop.partner || rng.uniform() < p.partner;
    bundle.drop.relationship = bundle.drop.relationship || rng.uniform() < p.relationship;
    bundle.drop.personality = bundle.drop.personality || rng.uniform() < p.personality;
    bundle.drop.style = bundle.drop.style || rng.uniform() < p.style;
    return bundle;
}

json SamplerConfig::to_json() const {
    return json{{"steps", steps}, {"cfg_scale", cfg_scale}, {"eta", eta}};
}

SamplerConfig SamplerConfig::from_json(const json& j) {
    require_keys(j, {"steps", "cfg_scale", "eta"}, "sampler config");
    SamplerConfig c;
    c.steps = j.value("steps", c.steps);
    c.cfg_scale = j.value("cfg_scale", c.cfg_scale);
    c.eta = j.value("eta", c.eta);
    if (c.steps < 1) throw ConfigError("sampler: steps must be >= 1");
    if (c.cfg_scale < 0.0) throw ConfigError("sampler: cfg_scale must be >= 0");
    return c;
}

std::vector<int> ddim_timesteps(int schedule_len, int steps) {
    if (steps < 1) throw ConfigError("ddim: steps must be >= 1");
    if (steps > schedule_len)
        throw ConfigError("ddim: steps (" + std::to_string(steps) + ") exceed schedule length " +
                          std::to_string(schedule_len));
    std::vector<int> taus(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        taus[static_cast<std::size_t>(i)] = static_cast<int>(
            (static_cast<std::int64_t>(i + 1) * schedule_len) / steps - 1);
    }
    return taus;
}

Tensor ddim_sample(const DenoiseFn& denoise, const NoiseSchedule& schedule, const SamplerConfig& cfg,
                   const Tensor& init_noise, Rng* noise_rng) {
    if (cfg.eta > 0.0 && noise_rng == nullptr)
        throw ConfigError("ddim: eta > 0 requires a noise rng");
    const std::vector<int> taus = ddim_timesteps(schedule.length(), cfg.steps);
    Tensor x = init_noise;
    for (int i = cfg.steps - 1; i >= 0; --i) {
        const int t = taus[static_cast<std::size_t>(i)];
        const double abar_t = schedule.alphas_bar[static_cast<std::size_t>(t)];
        const double abar_prev =
            i > 0 ? schedule.alphas_bar[static_cast<std::size_t>(taus[static_cast<std::size_t>(i - 1)])]
                  : 1.0;
        Tensor eps = denoise(x, t);
        check_same_shape(x, eps, "ddim denoiser output");
        const double a = std::sqrt(abar_t);
        const double b = std::sqrt(1.0 - abar_t);
        const double ap = std::sqrt(abar_prev);
        double sigma = 0.0;
        if (cfg.eta > 0.0 && abar_t < 1.0) {
            sigma = cfg.eta * std::sqrt((1.0 - abar_prev) / (1.0 - abar_t)) *
                    std::sqrt(std::max(0.0, 1.0 - abar_t / abar_prev));
        }
        const double bp = std::sqrt(std::max(0.0, 1.0 - abar_prev - sigma * sigma));
        for (std::int64_t n = 0; n < x.size(); ++n) {
            double x0_pred = (x[n] - b * eps[n]) / a;
            x[n] = ap * x0_pred + bp * eps[n];
            if (sigma > 0.0) x[n] += sigma * noise_rng->normal();
        }
    }
    return x;
}

namespace {

struct NoisingDraw {
    int t;
    Tensor eps;
    Tensor x_t;
};

NoisingDraw draw_noising(const Tensor& x0, const NoiseSchedule& schedule, Rng& rng) {
    NoisingDraw d;
    d.t = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(schedule.length())));
    d.eps = Tensor(x0.shape());
    for (std::int64_t i = 0; i < d.eps.size(); ++i) d.eps[i] = rng.normal();
    d.x_t = q_sample(x0, d.t, d.eps, schedule);
    return d;
}

}  // namespace

Var diffusion_training_loss(const DenoiserModel& model, const std::vector<TrainingSample>& batch,
                            const NoiseSchedule& schedule, const DropoutConfig& dropout, Rng& rng) {
    if (batch.empty()) throw ConfigError("training loss: empty batch");
    Var loss;
    for (const TrainingSample& sample : batch) {
        ConditioningBundle bundle = condition_dropout(sample.bundle, dropout, rng);
        NoisingDraw d = draw_noising(sample.x0, schedule, rng);
        EncodedConditioning cond = model.encode_conditioning(bundle, sample.x0.dim(0));
        Var eps_hat = model.forward_eps(ad::constant(d.x_t), d.t, cond);
        Var err = ad::sub(eps_hat, ad::constant(d.eps));
        Var sample_loss = ad::mean_sq_rows(err);
        loss = loss ? ad::add(loss, sample_loss) : sample_loss;
    }
    return ad::scale(loss, 1.0 / static_cast<double>(batch.size()));
}

double diffusion_training_loss_fn(
    const std::function<Tensor(const Tensor& x_t, int t, const Tensor& eps)>& predictor,
    const std::vector<Tensor>& batch_x0, const NoiseSchedule& schedule, Rng& rng) {
    if (batch_x0.empty()) throw ConfigError("training loss: empty batch");
    double total = 0.0;
    for (const Tensor& x0 : batch_x0) {
        NoisingDraw d = draw_noising(x0, schedule, rng);
        Tensor eps_hat = predictor(d.x_t, d.t, d.eps);
        check_same_shape(eps_hat, d.eps, "training loss prediction");
        const std::int64_t rows = x0.dim(0), cols = x0.dim(1);
        double acc = 0.0;
        for (std::int64_t i = 0; i < rows * cols; ++i) {
            double e = eps_hat[i] - d.eps[i];
            acc += e * e;
        }
        total += acc / static_cast<double>(rows);
    }
    return total / static_cast<double>(batch_x0.size());
}

json DitTrainConfig::to_json() const {
    return json{{"steps", steps},       {"batch", batch}, {"crop_latent", crop_latent},
                {"lr", lr},             {"seed", seed},   {"log_every", log_every}};
}

DitTrainConfig DitTrainConfig::from_json(const json& j) {
    require_keys(j, {"steps", "batch", "crop_latent", "lr", "seed", "log_every"},
                 "dit training");
    DitTrainConfig c;
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    c.crop_latent = j.value("crop_latent", c.crop_latent);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    c.log_every = j.value("log_every", c.log_every);
    if (c.steps < 0 || c.batch < 1) throw ConfigError("dit training: bad steps/batch");
    return c;
}

namespace {

Tensor crop_rows(const Tensor& x, std::int64_t begin, std::int64_t len) {
    const std::int64_t c = x.dim(1);
    Tensor out({len, c});
    std::copy(x.data() + begin * c, x.data() + (begin + len) * c, out.data());
    return out;
}

}  // namespace

DitTrainStats train_denoiser(DenoiserModel& model, const std::vector<TrainingSample>& clips,
                             const NoiseSchedule& schedule, const DropoutConfig& dropout,
                             const DitTrainConfig& cfg,
                             const std::function<void(int, double)>& log_hook) {
    if (clips.empty()) throw ConfigError("train_denoiser: empty dataset");
    dropout.validate();
    Rng rng(cfg.seed);
    nn::Adam opt(model.params(), {cfg.lr});
    DitTrainStats stats;
    double window_sum = 0.0;
    int window_count = 0;

    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<TrainingSample> batch;
        batch.reserve(static_cast<std::size_t>(cfg.batch));
        for (int b = 0; b < cfg.batch; ++b) {
            const TrainingSample& clip =
                clips[static_cast<std::size_t>(rng.uniform_index(clips.size()))];
            const std::int64_t tl = clip.x0.dim(0);
            std::int64_t lw = cfg.crop_latent > 0 ? std::min<std::int64_t>(cfg.crop_latent, tl) : tl;
            std::int64_t w0 = 0;
            if (lw < tl) w0 = static_cast<std::int64_t>(rng.uniform_index(
                static_cast<std::uint64_t>(tl - lw + 1)));

            TrainingSample s;
            s.x0 = crop_rows(clip.x0, w0, lw);
            const std::int64_t ratio = clip.bundle.audio_self.dim(0) / tl;
            s.bundle.audio_self = crop_rows(clip.bundle.audio_self, w0 * ratio, lw * ratio);
            s.bundle.audio_other = crop_rows(clip.bundle.audio_other, w0 * ratio, lw * ratio);
            if (clip.bundle.partner_latent)
                s.bundle.partner_latent = crop_rows(*clip.bundle.partner_latent, w0, lw);
            s.bundle.style_reference = s.x0;  // ground-truth style comes from the target window
            s.bundle.relationship = clip.bundle.relationship;
            s.bundle.personality = clip.bundle.personality;
            batch.push_back(std::move(s));
        }

        model.params().zero_grad();
        Var loss = diffusion_training_loss(model, batch, schedule, dropout, rng);
        const double loss_val = loss->value[0];
        if (!std::isfinite(loss_val)) {
            stats.divergence_step = step;
            break;
        }
        ad::backward(loss);
        opt.step();

        window_sum += loss_val;
        ++window_count;
        if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
            const double mean = window_sum / window_count;
            stats.logged_losses.emplace_back(step + 1, mean);
            stats.final_loss = mean;
            if (log_hook) log_hook(step + 1, mean);
            window_sum = 0.0;
            window_count = 0;
        }
    }
    return stats;
}

}  // namespace dyadit
