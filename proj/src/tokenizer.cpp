#include "dyadit/tokenizer.hpp"

#include <cmath>

#include "dyadit/checkpoint.hpp"
#include "dyadit/json_util.hpp"

namespace dyadit {

using nlohmann::json;
using ad::Var;

void TokenizerConfig::validate() const {
    if (latent_dim < 1) throw ConfigError("tokenizer: latent_dim must be >= 1");
    if (residual_depth < 1) throw ConfigError("tokenizer: residual_depth must be >= 1");
    if (codebook_size < 2) throw ConfigError("tokenizer: codebook_size must be >= 2");
    if (temporal_factor != 4)
        throw ConfigError("tokenizer: temporal_factor is fixed at 4 by the conv architecture");
    if (channels.size() != 2) throw ConfigError("tokenizer: channels must list two widths");
    for (int c : channels)
        if (c < 1) throw ConfigError("tokenizer: channel widths must be positive");
    if (commitment_weight < 0) throw ConfigError("tokenizer: commitment_weight must be >= 0");
    if (ema_decay <= 0 || ema_decay >= 1) throw ConfigError("tokenizer: ema_decay must be in (0,1)");
    if (input_dim < 1) throw ConfigError("tokenizer: input_dim must be >= 1");
}

json TokenizerConfig::to_json() const {
    return json{{"latent_dim", latent_dim},
                {"residual_depth", residual_depth},
                {"codebook_size", codebook_size},
                {"temporal_factor", temporal_factor},
                {"commitment_weight", commitment_weight},
                {"channels", channels},
                {"ema_decay", ema_decay},
                {"revival_patience", revival_patience},
                {"input_dim", input_dim}};
}

TokenizerConfig TokenizerConfig::from_json(const json& j) {
    require_keys(j,
                 {"latent_dim", "residual_depth", "codebook_size", "temporal_factor",
                  "commitment_weight", "channels", "ema_decay", "revival_patience", "input_dim"},
                 "tokenizer config");
    TokenizerConfig c;
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.residual_depth = j.value("residual_depth", c.residual_depth);
    c.codebook_size = j.value("codebook_size", c.codebook_size);
    c.temporal_factor = j.value("temporal_factor", c.temporal_factor);
    c.commitment_weight = j.value("commitment_weight", c.commitment_weight);
    if (j.contains("channels")) c.channels = j["channels"].get<std::vector<int>>();
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.revival_patience = j.value("revival_patience", c.revival_patience);
    c.input_dim = j.value("input_dim", c.input_dim);
    c.validate();
    return c;
}

TokenizerModel::TokenizerModel(TokenizerConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    const int c0 = cfg_.channels[0], c1 = cfg_.channels[1];
    // Encoder: x4 downsampling via two stride-2 convolutions.
    enc1_ = nn::Conv1d(params_, "enc1", cfg_.input_dim, c0, 4, 2, 1, rng);
    enc2_ = nn::Conv1d(params_, "enc2", c0, c1, 4, 2, 1, rng);
    enc3_ = nn::Conv1d(params_, "enc3", c1, cfg_.latent_dim, 3, 1, 1, rng);
    // Decoder: mirrored, two linear-interpolation upsamples.
    dec_in_ = nn::Conv1d(params_, "dec_in", cfg_.latent_dim, c1, 3, 1, 1, rng);
    dec_up1_ = nn::Conv1d(params_, "dec_up1", c1, c1, 3, 1, 1, rng);
    dec_ref1_ = nn::Conv1d(params_, "dec_ref1", c1, c0, 3, 1, 1, rng);
    dec_up2_ = nn::Conv1d(params_, "dec_up2", c0, c0, 3, 1, 1, rng);
    dec_ref2_ = nn::Conv1d(params_, "dec_ref2", c0, c0, 3, 1, 1, rng);
    dec_out_ = nn::Conv1d(params_, "dec_out", c0, cfg_.input_dim, 3, 1, 1, rng);

    codebooks_.resize(static_cast<std::size_t>(cfg_.residual_depth));
    for (int k = 0; k < cfg_.residual_depth; ++k) {
        Codebook& cb = codebooks_[static_cast<std::size_t>(k)];
        double std = 1.0 / std::sqrt(static_cast<double>(cfg_.latent_dim));
        Tensor entries = Tensor::randn({cfg_.codebook_size, cfg_.latent_dim}, rng, std);
        for (std::int64_t j = 0; j < cfg_.latent_dim; ++j) entries.at(0, j) = 0.0;  // pinned zero entry
        Var v = params_.add("codebook" + std::to_string(k) + ".entries", std::move(entries));
        codebook_vars_.push_back(v);
        cb.entries = v->value;
        cb.usage_counts.assign(static_cast<std::size_t>(cfg_.codebook_size), 0);
        cb.ema_cluster = Tensor::full({cfg_.codebook_size}, 1.0);
        cb.ema_sum = v->value;
        cb.stale_batches.assign(static_cast<std::size_t>(cfg_.codebook_size), 0);
    }
}

Var TokenizerModel::encode_var(const Var& x) const {
    Var h = ad::leaky_relu(enc1_.forward(x), 0.2);
    h = ad::leaky_relu(enc2_.forward(h), 0.2);
    return enc3_.forward(h);
}

Var TokenizerModel::decode_var(const Var& z) const {
    Var h = ad::leaky_relu(dec_in_.forward(z), 0.2);
    h = ad::leaky_relu(dec_up1_.forward(ad::upsample_linear_2x(h)), 0.2);
    h = ad::leaky_relu(dec_ref1_.forward(h), 0.2);
    h = ad::leaky_relu(dec_up2_.forward(ad::upsample_linear_2x(h)), 0.2);
    h = ad::leaky_relu(dec_ref2_.forward(h), 0.2);
    return dec_out_.forward(h);
}

MotionLatent TokenizerModel::encode(const GestureSequence& seq) const {
    const std::int64_t t = seq.length();
    if (t % cfg_.temporal_factor != 0)
        throw ShapeError("encode: sequence length " + std::to_string(t) + " not divisible by " +
                         std::to_string(cfg_.temporal_factor));
    Tensor flat = seq.frames.reshaped({t, static_cast<std::int64_t>(cfg_.input_dim)});
    Var out = encode_var(ad::constant(std::move(flat)));
    return MotionLatent{out->value};
}

GestureSequence TokenizerModel::decode(const MotionLatent& latent, int fps) const {
    if (latent.tokens.rank() != 2 || latent.tokens.dim(1) != cfg_.latent_dim)
        throw ShapeError("decode: latent width mismatch");
    Var out = decode_var(ad::constant(latent.tokens));
    const std::int64_t t = out->value.dim(0);
    return GestureSequence::from_frames(
        out->value.reshaped({t, static_cast<std::int64_t>(kJointCount), 6}), fps);
}

std::pair<MotionTokens, MotionLatent> TokenizerModel::quantize(const MotionLatent& latent) const {
    if (latent.tokens.dim(1) != cfg_.latent_dim) throw ShapeError("quantize: latent width mismatch");
    const std::int64_t rows = latent.tokens.dim(0);
    const std::int64_t d = cfg_.latent_dim;
    MotionTokens tokens;
    tokens.rows = rows;
    tokens.depth = cfg_.residual_depth;
    tokens.indices.assign(static_cast<std::size_t>(rows * cfg_.residual_depth), 0);
    Tensor quantized({rows, d});
    Tensor residual = latent.tokens;
    // Stages evaluated low-to-high; each quantizes the running residual.
    for (int k = 0; k < cfg_.residual_depth; ++k) {
        const Tensor& entries = codebooks_[static_cast<std::size_t>(k)].entries;
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* rr = residual.data() + r * d;
            std::int64_t best = 0;
            double best_dist = 1e300;
            for (std::int64_t e = 0; e < cfg_.codebook_size; ++e) {
                const double* ev = entries.data() + e * d;
                double dist = 0.0;
                for (std::int64_t j = 0; j < d; ++j) {
                    double diff = rr[j] - ev[j];
                    dist += diff * diff;
                }
                if (dist < best_dist) {
                    best_dist = dist;
                    best = e;
                }
            }
            tokens.indices[static_cast<std::size_t>(r * cfg_.residual_depth + k)] = best;
            const double* ev = entries.data() + best * d;
            double* res = residual.data() + r * d;
            double* q = quantized.data() + r * d;
            for (std::int64_t j = 0; j < d; ++j) {
                q[j] += ev[j];
                res[j] -= ev[j];
            }
        }
    }
    return {std::move(tokens), MotionLatent{std::move(quantized)}};
}

MotionLatent TokenizerModel::dequantize(const MotionTokens& tokens) const {
    if (tokens.depth != cfg_.residual_depth) throw ShapeError("dequantize: depth mismatch");
    const std::int64_t d = cfg_.latent_dim;
    Tensor out({tokens.rows, d});
    for (std::int64_t r = 0; r < tokens.rows; ++r) {
        double* orow = out.data() + r * d;
        for (std::int64_t k = 0; k < tokens.depth; ++k) {
            std::int64_t idx = tokens.at(r, k);
            if (idx < 0 || idx >= cfg_.codebook_size)
                throw IndexOutOfRange("dequantize: code index " + std::to_string(idx) +
                                      " out of [0," + std::to_string(cfg_.codebook_size) + ")");
            const double* ev =
                codebooks_[static_cast<std::size_t>(k)].entries.data() + idx * d;
            for (std::int64_t j = 0; j < d; ++j) orow[j] += ev[j];
        }
    }
    return MotionLatent{std::move(out)};
}

void TokenizerModel::sync_codebooks() {
    for (std::size_t k = 0; k < codebooks_.size(); ++k)
        codebook_vars_[k]->value = codebooks_[k].entries;
}

void TokenizerModel::save(const std::string& dir) const {
    for (std::size_t k = 0; k < codebooks_.size(); ++k)
        codebook_vars_[k]->value = codebooks_[k].entries;
    save_checkpoint(dir, "tokenizer", cfg_.to_json(), params_);
}

TokenizerModel TokenizerModel::load(const std::string& dir) {
    json cfg_json = read_checkpoint_meta(dir, "tokenizer");
    TokenizerModel model(TokenizerConfig::from_json(cfg_json), /*seed=*/0);
    load_checkpoint_params(dir, model.params_);
    for (std::size_t k = 0; k < model.codebooks_.size(); ++k) {
        model.codebooks_[k].entries = model.codebook_vars_[k]->value;
        model.codebooks_[k].ema_sum = model.codebook_vars_[k]->value;
    }
    return model;
}

json TokenizerTrainConfig::to_json() const {
    return json{{"epochs", epochs}, {"batch_clips", batch_clips}, {"crop_frames", crop_frames},
                {"lr", lr},         {"seed", seed}};
}

TokenizerTrainConfig TokenizerTrainConfig::from_json(const json& j) {
    require_keys(j, {"epochs", "batch_clips", "crop_frames", "lr", "seed"}, "tokenizer training");
    TokenizerTrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_clips = j.value("batch_clips", c.batch_clips);
    c.crop_frames = j.value("crop_frames", c.crop_frames);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    if (c.epochs < 0 || c.batch_clips < 1) throw ConfigError("tokenizer training: bad epochs/batch");
    return c;
}

namespace {

Tensor crop_window(const Tensor& flat, std::int64_t start, std::int64_t frames) {
    const std::int64_t c = flat.dim(1);
    Tensor out({frames, c});
    std::copy(flat.data() + start * c, flat.data() + (start + frames) * c, out.data());
    return out;
}

double eval_recon_mse(const TokenizerModel& model, const std::vector<Tensor>& flats) {
    double total = 0.0;
    std::int64_t count = 0;
    for (const auto& x : flats) {
        Var xv = ad::constant(x);
        Var z = model.encode_var(xv);
        auto [tokens, zq] = model.quantize(MotionLatent{z->value});
        (void)tokens;
        Var recon = model.decode_var(ad::constant(zq.tokens));
        const Tensor& rv = recon->value;
        for (std::int64_t i = 0; i < rv.size(); ++i) {
            double d = rv[i] - x[i];
            total += d * d;
        }
        count += rv.size();
    }
    return total / static_cast<double>(count);
}

}  // namespace

TokenizerTrainStats train_tokenizer(TokenizerModel& model, const std::vector<GestureSequence>& dataset,
                                    const TokenizerTrainConfig& train_cfg,
                                    const std::function<void(int, double)>& epoch_hook) {
    const TokenizerConfig& cfg = model.config();
    if (dataset.empty()) throw ConfigError("train_tokenizer: empty dataset");
    for (const auto& seq : dataset)
        if (seq.length() % cfg.temporal_factor != 0)
            throw ConfigError("train_tokenizer: clip length not divisible by temporal factor");
    if (train_cfg.crop_frames != 0 && train_cfg.crop_frames % cfg.temporal_factor != 0)
        throw ConfigError("train_tokenizer: crop_frames must be divisible by the temporal factor");

    std::vector<Tensor> flats;
    flats.reserve(dataset.size());
    for (const auto& seq : dataset)
        flats.push_back(seq.frames.reshaped({seq.length(), static_cast<std::int64_t>(cfg.input_dim)}));

    Rng rng(train_cfg.seed);
    nn::Adam opt(model.params(), {train_cfg.lr});
    TokenizerTrainStats stats;
    stats.initial_recon_mse = eval_recon_mse(model, flats);

    const std::int64_t depth = cfg.residual_depth;
    const std::int64_t d = cfg.latent_dim;

    std::vector<std::size_t> order(flats.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        // Seeded Fisher-Yates shuffle.
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(rng.uniform_index(i));
            std::swap(order[i - 1], order[j]);
        }
        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(train_cfg.batch_clips)) {
            std::size_t hi = std::min(order.size(), b + static_cast<std::size_t>(train_cfg.batch_clips));
            model.params().zero_grad();

            // Per-stage EMA accumulators for this batch.
            std::vector<Tensor> assign_sum;
            std::vector<std::vector<std::int64_t>> assign_count;
            for (std::int64_t k = 0; k < depth; ++k) {
                assign_sum.emplace_back(Tensor({cfg.codebook_size, d}));
                assign_count.emplace_back(static_cast<std::size_t>(cfg.codebook_size), 0);
            }
            std::vector<Tensor> encoder_rows;  // revival pool

            Var loss;
            for (std::size_t s = b; s < hi; ++s) {
                const Tensor& full = flats[order[s]];
                Tensor x = full;
                if (train_cfg.crop_frames > 0 && full.dim(0) > train_cfg.crop_frames) {
                    std::int64_t latent_starts =
                        (full.dim(0) - train_cfg.crop_frames) / cfg.temporal_factor + 1;
                    std::int64_t start = static_cast<std::int64_t>(
                                             rng.uniform_index(static_cast<std::uint64_t>(latent_starts))) *
                                         cfg.temporal_factor;
                    x = crop_window(full, start, train_cfg.crop_frames);
                }
                Var xv = ad::constant(x);
                Var z = model.encode_var(xv);

                auto [tokens, zq] = model.quantize(MotionLatent{z->value});
                // Straight-through: forward value is z_q, gradient flows to the encoder.
                Tensor gap = zq.tokens;
                for (std::int64_t i = 0; i < gap.size(); ++i) gap[i] -= z->value[i];
                Var z_st = ad::add(z, ad::constant(std::move(gap)));
                Var recon = model.decode_var(z_st);
                Var recon_loss = ad::mean_all(ad::mul(ad::sub(recon, xv), ad::sub(recon, xv)));
                Var commit = ad::mean_all(
                    ad::mul(ad::sub(z, ad::constant(zq.tokens)), ad::sub(z, ad::constant(zq.tokens))));
                Var sample_loss = ad::add(recon_loss, ad::scale(commit, cfg.commitment_weight));
                loss = loss ? ad::add(loss, sample_loss) : sample_loss;

                // Stage-k EMA statistics accumulate the residual inputs each entry absorbed.
                Tensor residual = z->value;
                const std::int64_t rows = residual.dim(0);
                for (std::int64_t k = 0; k < depth; ++k) {
                    const Tensor& entries = model.codebooks()[static_cast<std::size_t>(k)].entries;
                    for (std::int64_t r = 0; r < rows; ++r) {
                        std::int64_t idx = tokens.at(r, k);
                        model.codebooks()[static_cast<std::size_t>(k)]
                            .usage_counts[static_cast<std::size_t>(idx)]++;
                        double* sum_row = assign_sum[static_cast<std::size_t>(k)].data() + idx * d;
                        const double* res_row = residual.data() + r * d;
                        for (std::int64_t jd = 0; jd < d; ++jd) sum_row[jd] += res_row[jd];
                        assign_count[static_cast<std::size_t>(k)][static_cast<std::size_t>(idx)]++;
                        const double* ev = entries.data() + idx * d;
                        double* res_mut = residual.data() + r * d;
                        for (std::int64_t jd = 0; jd < d; ++jd) res_mut[jd] -= ev[jd];
                    }
                }
                for (std::int64_t r = 0; r < rows; ++r) {
                    Tensor row({1, d});
                    std::copy(z->value.data() + r * d, z->value.data() + (r + 1) * d, row.data());
                    encoder_rows.push_back(std::move(row));
                }
            }

            loss = ad::scale(loss, 1.0 / static_cast<double>(hi - b));
            ad::backward(loss);
            opt.step();
            epoch_loss += loss->value[0];
            ++batches;

            // EMA codebook update; entry 0 stays pinned at zero.
            const double decay = cfg.ema_decay;
            for (std::int64_t k = 0; k < depth; ++k) {
                Codebook& cb = model.codebooks()[static_cast<std::size_t>(k)];
                for (std::int64_t e = 1; e < cfg.codebook_size; ++e) {
                    const auto n = assign_count[static_cast<std::size_t>(k)][static_cast<std::size_t>(e)];
                    cb.ema_cluster[e] = decay * cb.ema_cluster[e] + (1.0 - decay) * static_cast<double>(n);
                    double* sum_row = cb.ema_sum.data() + e * d;
                    const double* batch_row = assign_sum[static_cast<std::size_t>(k)].data() + e * d;
                    for (std::int64_t jd = 0; jd < d; ++jd)
                        sum_row[jd] = decay * sum_row[jd] + (1.0 - decay) * batch_row[jd];
                    double denom = std::max(cb.ema_cluster[e], 1e-8);
                    double* ev = cb.entries.data() + e * d;
                    for (std::int64_t jd = 0; jd < d; ++jd) ev[jd] = sum_row[jd] / denom;

                    if (n == 0) {
                        if (++cb.stale_batches[static_cast<std::size_t>(e)] >= cfg.revival_patience &&
                            !encoder_rows.empty()) {
                            const Tensor& seed_row = encoder_rows[static_cast<std::size_t>(
                                rng.uniform_index(encoder_rows.size()))];
                            for (std::int64_t jd = 0; jd < d; ++jd) ev[jd] = seed_row[jd];
                            cb.ema_cluster[e] = 1.0;
                            for (std::int64_t jd = 0; jd < d; ++jd) sum_row[jd] = ev[jd];
                            cb.stale_batches[static_cast<std::size_t>(e)] = 0;
                        }
                    } else {
                        cb.stale_batches[static_cast<std::size_t>(e)] = 0;
                    }
                }
            }
        }
        epoch_loss /= std::max(1, batches);
        stats.epoch_losses.push_back(epoch_loss);
        if (epoch_hook) epoch_hook(epoch, epoch_loss);
    }

    stats.final_recon_mse = eval_recon_mse(model, flats);

    // Usage over one deterministic pass (fresh counters).
    for (auto& cb : model.codebooks()) cb.usage_counts.assign(cb.usage_counts.size(), 0);
    std::int64_t used = 0, total = 0;
    for (const auto& x : flats) {
        Var z = model.encode_var(ad::constant(x));
        auto [tokens, zq] = model.quantize(MotionLatent{z->value});
        (void)zq;
        for (std::int64_t r = 0; r < tokens.rows; ++r)
            for (std::int64_t k = 0; k < tokens.depth; ++k)
                model.codebooks()[static_cast<std::size_t>(k)]
                    .usage_counts[static_cast<std::size_t>(tokens.at(r, k))]++;
    }
    for (const auto& cb : model.codebooks()) {
        for (auto c : cb.usage_counts) {
            total += 1;
            if (c > 0) used += 1;
        }
    }
    stats.codebook_usage_fraction = total ? static_cast<double>(used) / static_cast<double>(total) : 0.0;
    return stats;
}

}  // namespace dyadit
