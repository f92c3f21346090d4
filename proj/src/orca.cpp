#include "dyadit/orca.hpp"

#include <cmath>

#include "dyadit/json_util.hpp"

namespace dyadit {

using ad::Var;
using nlohmann::json;

namespace {
constexpr double kDegenerateTol = 1e-8;
}

OrthoMode ortho_mode_from_string(const std::string& s) {
    if (s == "analytic") return OrthoMode::kAnalytic;
    if (s == "learned") return OrthoMode::kLearned;
    throw ConfigError("unknown orthogonalization mode: " + s);
}

std::string to_string(OrthoMode mode) {
    return mode == OrthoMode::kAnalytic ? "analytic" : "learned";
}

void OrcaConfig::validate() const {
    if (input_dim < 1 || width < 1) throw ConfigError("orca: dims must be positive");
    if (heads < 1 || width % heads != 0) throw ConfigError("orca: heads must divide width");
}

json OrcaConfig::to_json() const {
    return json{{"input_dim", input_dim},
                {"width", width},
                {"heads", heads},
                {"mode", to_string(mode)},
                {"phi_hidden", phi_hidden}};
}

OrcaConfig OrcaConfig::from_json(const json& j) {
    require_keys(j, {"input_dim", "width", "heads", "mode", "phi_hidden"}, "orca config");
    OrcaConfig c;
    c.input_dim = j.value("input_dim", c.input_dim);
    c.width = j.value("width", c.width);
    c.heads = j.value("heads", c.heads);
    if (j.contains("mode")) c.mode = ortho_mode_from_string(j["mode"].get<std::string>());
    c.phi_hidden = j.value("phi_hidden", c.phi_hidden);
    c.validate();
    return c;
}

Tensor orthogonalize_analytic(const Tensor& a_self, const Tensor& a_other) {
    check_same_shape(a_self, a_other, "orthogonalize");
    const std::int64_t t = a_self.dim(0), c = a_self.dim(1);
    Tensor out = a_self;
    for (std::int64_t i = 0; i < t; ++i) {
        const double* a = a_self.data() + i * c;
        const double* b = a_other.data() + i * c;
        double bb = 0.0, ab = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            bb += b[j] * b[j];
            ab += a[j] * b[j];
        }
        if (std::sqrt(bb) <= kDegenerateTol) continue;  // degenerate span: keep a_self
        const double s = ab / bb;
        double* o = out.data() + i * c;
        for (std::int64_t j = 0; j < c; ++j) o[j] -= s * b[j];
    }
    return out;
}

Var orthogonalize_analytic(const Var& a_self, const Var& a_other) {
    Tensor out = orthogonalize_analytic(a_self->value, a_other->value);
    const std::int64_t t = out.dim(0), c = out.dim(1);
    return ad::custom(std::move(out), {a_self, a_other}, [t, c](ad::Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        const bool need_a = n.parents[0]->requires_grad;
        const bool need_b = n.parents[1]->requires_grad;
        Tensor* ga = need_a ? &n.parents[0]->ensure_grad() : nullptr;
        Tensor* gb = need_b ? &n.parents[1]->ensure_grad() : nullptr;
        for (std::int64_t i = 0; i < t; ++i) {
            const double* a = av.data() + i * c;
            const double* b = bv.data() + i * c;
            const double* g = n.grad.data() + i * c;
            double bb = 0.0, ab = 0.0, gb_dot = 0.0;
            for (std::int64_t j = 0; j < c; ++j) {
                bb += b[j] * b[j];
                ab += a[j] * b[j];
                gb_dot += g[j] * b[j];
            }
            if (std::sqrt(bb) <= kDegenerateTol) {
                if (need_a) {
                    double* gar = ga->data() + i * c;
                    for (std::int64_t j = 0; j < c; ++j) gar[j] += g[j];
                }
                continue;
            }
            const double s = ab / bb;
            if (need_a) {
                double* gar = ga->data() + i * c;
                for (std::int64_t j = 0; j < c; ++j) gar[j] += g[j] - (gb_dot / bb) * b[j];
            }
            if (need_b) {
                double* gbr = gb->data() + i * c;
                for (std::int64_t j = 0; j < c; ++j)
                    gbr[j] += -s * g[j] - gb_dot * (a[j] - 2.0 * s * b[j]) / bb;
            }
        }
    });
}

Tensor gated_fuse(const Tensor& h_self_to_other, const Tensor& h_other_to_self, const Tensor& gate) {
    check_same_shape(h_self_to_other, h_other_to_self, "gated_fuse");
    const std::int64_t t = h_self_to_other.dim(0), c = h_self_to_other.dim(1);
    if (gate.size() != c) throw ShapeError("gated_fuse: gate width mismatch");
    Tensor out({t, c});
    for (std::int64_t j = 0; j < c; ++j) {
        const double w = 1.0 / (1.0 + std::exp(-gate[j]));
        for (std::int64_t i = 0; i < t; ++i)
            out.at(i, j) = w * h_self_to_other.at(i, j) + (1.0 - w) * h_other_to_self.at(i, j);
    }
    return out;
}

OrcaModule::OrcaModule(const OrcaConfig& cfg, nn::ParameterStore& store, const std::string& prefix,
                       Rng& rng)
    : cfg_(cfg) {
    cfg_.validate();
    proj_self_ = nn::Linear(store, prefix + ".proj_self", cfg_.input_dim, cfg_.width, rng);
    proj_other_ = nn::Linear(store, prefix + ".proj_other", cfg_.input_dim, cfg_.width, rng);
    ln_self_ = nn::LayerNorm(store, prefix + ".ln_self", cfg_.width);
    ln_other_ = nn::LayerNorm(store, prefix + ".ln_other", cfg_.width);
    if (cfg_.mode == OrthoMode::kLearned) {
        const int hidden = cfg_.phi_hidden > 0 ? cfg_.phi_hidden : cfg_.width;
        phi_hidden_ = nn::Linear(store, prefix + ".phi_hidden", 2 * cfg_.width, hidden, rng);
        phi_out_ = nn::Linear(store, prefix + ".phi_out", hidden, cfg_.width, rng);
    }
    ca_self_to_other_ = nn::MultiheadAttention(store, prefix + ".ca_self_to_other", cfg_.width,
                                               cfg_.heads, rng);
    ca_other_to_self_ = nn::MultiheadAttention(store, prefix + ".ca_other_to_self", cfg_.width,
                                               cfg_.heads, rng);
    gate_ = store.add(prefix + ".gate", Tensor({1, cfg_.width}));
}

namespace {

Var project_track(const nn::Linear& proj, const nn::LayerNorm& ln, const Var& raw) {
    Var h = ln.forward(proj.forward(raw));
    // Positions let downstream attention align the two streams in time.
    return ad::add(h, ad::constant(nn::sinusoidal_table(h->value.dim(0), h->value.dim(1))));
}

}  // namespace

Var OrcaModule::project_self(const Var& raw) const { return project_track(proj_self_, ln_self_, raw); }

Var OrcaModule::project_other(const Var& raw) const {
    return project_track(proj_other_, ln_other_, raw);
}

Var OrcaModule::orthogonalize(const Var& self_proj, const Var& other_proj) const {
    if (cfg_.mode == OrthoMode::kAnalytic) return orthogonalize_analytic(self_proj, other_proj);
    Var joint = ad::concat_cols(self_proj, other_proj);
    Var redundant = phi_out_.forward(ad::sigmoid(phi_hidden_.forward(joint)));
    return ad::sub(self_proj, redundant);
}

Var OrcaModule::fuse(const Var& self_proj, const Var& other_proj, Tensor* probs) const {
    Var self_perp = orthogonalize(self_proj, other_proj);
    Var h_self_to_other = ca_self_to_other_.forward(other_proj, self_perp, probs);
    Var h_other_to_self = ca_other_to_self_.forward(self_perp, other_proj);
    Var w = ad::sigmoid(gate_);
    Var one_minus_w = ad::add_scalar(ad::scale(w, -1.0), 1.0);
    return ad::add(ad::mul_row(h_self_to_other, w), ad::mul_row(h_other_to_self, one_minus_w));
}

Var OrcaModule::forward(const Var& a_self_raw, const Var& a_other_raw) const {
    if (!a_self_raw->value.same_shape(a_other_raw->value))
        throw ShapeError("orca: speaker tracks must share shape, got " +
                         a_self_raw->value.shape_str() + " vs " + a_other_raw->value.shape_str());
    return fuse(project_self(a_self_raw), project_other(a_other_raw));
}

}  // namespace dyadit
