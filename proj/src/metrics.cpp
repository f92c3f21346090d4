#include "dyadit/metrics.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace dyadit {

using nlohmann::json;

namespace {

constexpr double kEigClampTol = 1e-10;

Eigen::MatrixXd to_eigen(const Tensor& t) {
    Eigen::MatrixXd m(t.dim(0), t.dim(1));
    for (std::int64_t i = 0; i < t.dim(0); ++i)
        for (std::int64_t j = 0; j < t.dim(1); ++j) m(i, j) = t.at(i, j);
    return m;
}

Tensor from_eigen(const Eigen::MatrixXd& m) {
    Tensor t({m.rows(), m.cols()});
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) t.at(i, j) = m(i, j);
    return t;
}

// Symmetric PSD square root with clamped eigenvalues.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& sym, Eigen::MatrixXd* inv_sqrt = nullptr) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    if (eig.info() != Eigen::Success)
        throw NumericalFailure("matrix square root: eigendecomposition did not converge");
    Eigen::VectorXd vals = eig.eigenvalues();
    Eigen::VectorXd roots(vals.size()), inv_roots(vals.size());
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        double v = vals(i) > kEigClampTol ? vals(i) : 0.0;
        roots(i) = std::sqrt(v);
        inv_roots(i) = v > kEigClampTol ? 1.0 / roots(i) : 0.0;
    }
    if (inv_sqrt)
        *inv_sqrt = eig.eigenvectors() * inv_roots.asDiagonal() * eig.eigenvectors().transpose();
    return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

void check_cov(const GaussianSummary& g, const char* what) {
    if (g.cov.rank() != 2 || g.cov.dim(0) != g.cov.dim(1) || g.mean.size() != g.cov.dim(0))
        throw ShapeError(std::string(what) + ": inconsistent summary shapes");
}

}  // namespace

GaussianSummary fit_gaussian(const Tensor& samples, double shrinkage_lambda) {
    if (samples.rank() != 2) throw ShapeError("fit_gaussian: expected [n,d] samples");
    const std::int64_t n = samples.dim(0), d = samples.dim(1);
    if (n < 2) throw InsufficientSamples("fit_gaussian: need at least 2 samples");
    GaussianSummary g;
    g.n = n;
    g.mean = Tensor({d});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) g.mean[j] += samples.at(i, j);
    for (std::int64_t j = 0; j < d; ++j) g.mean[j] /= static_cast<double>(n);

    g.cov = Tensor({d, d});
    // Accumulate upper triangle, mirror after.
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = samples.data() + i * d;
        for (std::int64_t a = 0; a < d; ++a) {
            const double da = row[a] - g.mean[a];
            double* cov_row = g.cov.data() + a * d;
            for (std::int64_t b = a; b < d; ++b) cov_row[b] += da * (row[b] - g.mean[b]);
        }
    }
    const double inv = 1.0 / static_cast<double>(n - 1);
    for (std::int64_t a = 0; a < d; ++a)
        for (std::int64_t b = a; b < d; ++b) {
            const double v = g.cov.at(a, b) * inv;
            g.cov.at(a, b) = v;
            g.cov.at(b, a) = v;
        }

    if (n < 10 * d && shrinkage_lambda > 0.0) {
        double tr = 0.0;
        for (std::int64_t a = 0; a < d; ++a) tr += g.cov.at(a, a);
        const double ridge = shrinkage_lambda * tr / static_cast<double>(d);
        for (std::int64_t a = 0; a < d; ++a)
            for (std::int64_t b = 0; b < d; ++b)
                g.cov.at(a, b) = (1.0 - shrinkage_lambda) * g.cov.at(a, b) + (a == b ? ridge : 0.0);
    }
    return g;
}

double frechet(const GaussianSummary& g1, const GaussianSummary& g2) {
    check_cov(g1, "frechet");
    check_cov(g2, "frechet");
    if (g1.mean.size() != g2.mean.size())
        throw ShapeError("frechet: dimension mismatch " + std::to_string(g1.mean.size()) + " vs " +
                         std::to_string(g2.mean.size()));
    const std::int64_t d = g1.mean.size();

    double mean_term = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
        const double diff = g1.mean[i] - g2.mean[i];
        mean_term += diff * diff;
    }

    Eigen::MatrixXd c1 = to_eigen(g1.cov);
    Eigen::MatrixXd c2 = to_eigen(g2.cov);
    c1 = 0.5 * (c1 + c1.transpose());
    c2 = 0.5 * (c2 + c2.transpose());

    Eigen::MatrixXd s1 = psd_sqrt(c1);
    Eigen::MatrixXd inner = s1 * c2 * s1;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner);
    if (eig.info() != Eigen::Success)
        throw NumericalFailure("frechet: eigendecomposition did not converge");
    double tr_sqrt = 0.0;
    for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i)
        tr_sqrt += std::sqrt(std::max(0.0, eig.eigenvalues()(i)));

    const double value = mean_term + c1.trace() + c2.trace() - 2.0 * tr_sqrt;
    return value > 0.0 ? value : 0.0;
}

Tensor matrix_sqrt_product(const Tensor& cov1, const Tensor& cov2) {
    if (cov1.rank() != 2 || !cov1.same_shape(cov2) || cov1.dim(0) != cov1.dim(1))
        throw ShapeError("matrix_sqrt_product: expected equal square matrices");
    Eigen::MatrixXd c1 = to_eigen(cov1);
    Eigen::MatrixXd c2 = to_eigen(cov2);
    c1 = 0.5 * (c1 + c1.transpose());
    c2 = 0.5 * (c2 + c2.transpose());
    Eigen::MatrixXd s1_inv;
    Eigen::MatrixXd s1 = psd_sqrt(c1, &s1_inv);
    Eigen::MatrixXd inner = s1 * c2 * s1;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::MatrixXd inner_sqrt = psd_sqrt(inner);
    // M = S1 (S1 C2 S1)^{1/2} S1^{-1}; M^2 = C1 C2 when C1 is nonsingular.
    return from_eigen(s1 * inner_sqrt * s1_inv);
}

Tensor pose_feature_rows(const std::vector<GestureSequence>& clips) {
    if (clips.empty()) throw InsufficientSamples("pose features: empty clip set");
    std::int64_t total = 0;
    for (const auto& c : clips) total += c.length();
    const std::int64_t d = 3 * clips.front().joint_count;
    Tensor out({total, d});
    std::int64_t row = 0;
    for (const auto& c : clips) {
        Tensor f = to_pose_features(c);  // [T, 3, J]
        std::copy(f.data(), f.data() + f.size(), out.data() + row * d);
        row += c.length();
    }
    return out;
}

Tensor velocity_feature_rows(const std::vector<GestureSequence>& clips) {
    if (clips.empty()) throw InsufficientSamples("velocity features: empty clip set");
    std::int64_t total = 0;
    for (const auto& c : clips) {
        if (c.length() < 2) throw TooShort("velocity features: clip shorter than 2 frames");
        total += c.length() - 1;
    }
    const std::int64_t d = 3 * clips.front().joint_count;
    Tensor out({total, d});
    std::int64_t row = 0;
    for (const auto& c : clips) {
        Tensor v = velocities(to_pose_features(c), c.fps);
        std::copy(v.data(), v.data() + v.size(), out.data() + row * d);
        row += c.length() - 1;
    }
    return out;
}

namespace {

double fd_between(const Tensor& gen_rows, const Tensor& ref_rows) {
    if (gen_rows.dim(0) < 2 || ref_rows.dim(0) < 2)
        throw InsufficientSamples("fd: need at least 2 feature frames per set");
    return frechet(fit_gaussian(gen_rows), fit_gaussian(ref_rows));
}

double pairwise_mse(const std::vector<Tensor>& features) {
    if (features.size() < 2) throw InsufficientSamples("diversity: need at least 2 clips");
    for (std::size_t i = 1; i < features.size(); ++i)
        if (!features[i].same_shape(features[0]))
            throw ShapeError("diversity: clips must share shape");
    double total = 0.0;
    std::int64_t pairs = 0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        for (std::size_t j = i + 1; j < features.size(); ++j) {
            const Tensor& a = features[i];
            const Tensor& b = features[j];
            double acc = 0.0;
            for (std::int64_t k = 0; k < a.size(); ++k) {
                const double diff = a[k] - b[k];
                acc += diff * diff;
            }
            total += acc / static_cast<double>(a.size());
            ++pairs;
        }
    }
    return total / static_cast<double>(pairs);
}

}  // namespace

double fd_static(const std::vector<GestureSequence>& generated,
                 const std::vector<GestureSequence>& reference) {
    return fd_between(pose_feature_rows(generated), pose_feature_rows(reference));
}

double fd_kinetic(const std::vector<GestureSequence>& generated,
                  const std::vector<GestureSequence>& reference) {
    return fd_between(velocity_feature_rows(generated), velocity_feature_rows(reference));
}

double diversity_static(const std::vector<GestureSequence>& clips) {
    std::vector<Tensor> feats;
    feats.reserve(clips.size());
    for (const auto& c : clips) feats.push_back(to_pose_features(c));
    return pairwise_mse(feats);
}

double diversity_kinetic(const std::vector<GestureSequence>& clips) {
    std::vector<Tensor> feats;
    feats.reserve(clips.size());
    for (const auto& c : clips) {
        if (c.length() < 2) throw TooShort("diversity_kinetic: clip shorter than 2 frames");
        feats.push_back(velocities(to_pose_features(c), c.fps));
    }
    return pairwise_mse(feats);
}

json BeatConsistencyParams::to_json() const {
    return json{{"sigma_frames", sigma_frames}, {"speed_threshold", speed_threshold}};
}

double beat_alignment_score(const std::vector<int>& audio_beats,
                            const std::vector<int>& kinematic_beats, double sigma_frames) {
    if (audio_beats.empty() || kinematic_beats.empty()) return 0.0;
    double total = 0.0;
    for (int ab : audio_beats) {
        int best = std::numeric_limits<int>::max();
        for (int kb : kinematic_beats) best = std::min(best, std::abs(ab - kb));
        const double d = static_cast<double>(best);
        total += std::exp(-d * d / (2.0 * sigma_frames * sigma_frames));
    }
    return total / static_cast<double>(audio_beats.size());
}

BeatResult beat_consistency(const GestureSequence& gesture, const std::vector<double>& envelope,
                            const BeatConsistencyParams& params) {
    const std::int64_t t = gesture.length();
    if (static_cast<std::int64_t>(envelope.size()) != t)
        throw ShapeError("beat_consistency: envelope length must match gesture frames");
    BeatResult result;
    if (t < 3) {
        result.no_beats = true;
        return result;
    }

    // Central-difference total joint speed per interior frame.
    Tensor feats = to_pose_features(gesture);  // [T, 3, J]
    const std::int64_t j = feats.dim(2);
    std::vector<double> speed(static_cast<std::size_t>(t), 0.0);
    double max_speed = 0.0;
    for (std::int64_t fi = 1; fi + 1 < t; ++fi) {
        double s = 0.0;
        for (std::int64_t jj = 0; jj < j; ++jj) {
            double acc = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double diff = feats.at(fi + 1, c, jj) - feats.at(fi - 1, c, jj);
                acc += diff * diff;
            }
            s += std::sqrt(acc);
        }
        s *= static_cast<double>(gesture.fps) / 2.0;
        speed[static_cast<std::size_t>(fi)] = s;
        max_speed = std::max(max_speed, s);
    }
    for (std::int64_t fi = 2; fi + 2 < t; ++fi) {
        const double s = speed[static_cast<std::size_t>(fi)];
        if (s < speed[static_cast<std::size_t>(fi - 1)] && s <= speed[static_cast<std::size_t>(fi + 1)] &&
            s <= params.speed_threshold * max_speed)
            result.kinematic_beats.push_back(static_cast<int>(fi));
    }

    // Onset strength: positive envelope increments; beats at its local maxima.
    std::vector<double> onset(static_cast<std::size_t>(t), 0.0);
    for (std::int64_t fi = 1; fi < t; ++fi)
        onset[static_cast<std::size_t>(fi)] =
            std::max(0.0, envelope[static_cast<std::size_t>(fi)] - envelope[static_cast<std::size_t>(fi - 1)]);
    for (std::int64_t fi = 1; fi + 1 < t; ++fi) {
        const double o = onset[static_cast<std::size_t>(fi)];
        if (o > 0.0 && o > onset[static_cast<std::size_t>(fi - 1)] &&
            o >= onset[static_cast<std::size_t>(fi + 1)])
            result.audio_beats.push_back(static_cast<int>(fi));
    }

    if (result.audio_beats.empty() || result.kinematic_beats.empty()) {
        result.no_beats = true;
        result.score = 0.0;
        return result;
    }
    result.score = beat_alignment_score(result.audio_beats, result.kinematic_beats, params.sigma_frames);
    return result;
}

std::vector<double> audio_envelope_rms(const Tensor& track) {
    if (track.rank() != 2) throw ShapeError("audio_envelope_rms: expected [T,D] track");
    const std::int64_t t = track.dim(0), d = track.dim(1);
    std::vector<double> env(static_cast<std::size_t>(t));
    for (std::int64_t i = 0; i < t; ++i) {
        const double* row = track.data() + i * d;
        double acc = 0.0;
        for (std::int64_t k = 0; k < d; ++k) acc += row[k] * row[k];
        env[static_cast<std::size_t>(i)] = std::sqrt(acc / static_cast<double>(d));
    }
    return env;
}

double mean_pose_amplitude(const GestureSequence& seq) {
    Tensor feats = to_pose_features(seq);
    const std::int64_t t = feats.dim(0), j = feats.dim(2);
    double total = 0.0;
    for (std::int64_t fi = 0; fi < t; ++fi)
        for (std::int64_t jj = 0; jj < j; ++jj) {
            double acc = 0.0;
            for (int c = 0; c < 3; ++c) acc += feats.at(fi, c, jj) * feats.at(fi, c, jj);
            total += std::sqrt(acc);
        }
    return total / static_cast<double>(t * j);
}

json MetricReport::to_json() const {
    return json{{"fd_static", fd_static},
                {"fd_kinetic", fd_kinetic},
                {"diversity_static", diversity_static},
                {"diversity_kinetic", diversity_kinetic},
                {"beat_consistency", beat_consistency},
                {"reference",
                 {{"diversity_static", reference_diversity_static},
                  {"diversity_kinetic", reference_diversity_kinetic}}},
                {"config", config},
                {"warnings", warnings}};
}

MetricReport evaluate_sets(const std::vector<GestureSequence>& generated,
                           const std::vector<GestureSequence>& reference,
                           const std::vector<std::vector<double>>& generated_envelopes,
                           const BeatConsistencyParams& bc_params) {
    MetricReport report;
    report.fd_static = fd_static(generated, reference);
    report.fd_kinetic = fd_kinetic(generated, reference);
    report.diversity_static = diversity_static(generated);
    report.diversity_kinetic = diversity_kinetic(generated);
    report.reference_diversity_static = diversity_static(reference);
    report.reference_diversity_kinetic = diversity_kinetic(reference);

    if (generated_envelopes.size() != generated.size())
        throw ShapeError("evaluate: one envelope per generated clip required");
    double bc_total = 0.0;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        BeatResult r = beat_consistency(generated[i], generated_envelopes[i], bc_params);
        bc_total += r.score;
        if (r.no_beats)
            report.warnings.push_back("clip " + std::to_string(i) + ": no beats detected, BC = 0");
    }
    report.beat_consistency = bc_total / static_cast<double>(generated.size());
    report.config = json{{"beat_consistency", bc_params.to_json()},
                         {"speed", "central differences"},
                         {"envelope", "per-frame feature RMS"},
                         {"shrinkage_lambda", 1e-3},
                         {"fps", generated.empty() ? kDefaultFps : generated.front().fps}};
    return report;
}

}  // namespace dyadit
