#pragma once

#include <string>
#include <vector>

#include "dyadit/motion.hpp"

#include "json.hpp"

namespace dyadit {

struct GaussianSummary {
    Tensor mean;  // [d]
    Tensor cov;   // [d, d] symmetric PSD (after clamping)
    std::int64_t n = 0;
};

// Sample mean/covariance (unbiased, n-1). Shrinkage (1-l)*Cov + l*tr(Cov)/d*I is
// applied when n < 10*d. Throws InsufficientSamples for n < 2.
GaussianSummary fit_gaussian(const Tensor& samples, double shrinkage_lambda = 1e-3);

// Wasserstein-2 distance between Gaussians:
//   |mu1-mu2|^2 + tr(C1) + tr(C2) - 2 tr((C1 C2)^{1/2}).
// The trace term uses eigendecomposition of sqrt(C1) C2 sqrt(C1) with negative
// eigenvalues clamped at 0 (tolerance 1e-10); small negative totals clamp to 0.
double frechet(const GaussianSummary& g1, const GaussianSummary& g2);

// Full square root M of the product C1*C2 (M*M ~ C1*C2), exposed for validation.
Tensor matrix_sqrt_product(const Tensor& cov1, const Tensor& cov2);

// Pooled per-frame pose features [sum T_i, 3*J] across a clip set.
Tensor pose_feature_rows(const std::vector<GestureSequence>& clips);
// Pooled per-frame velocity features [sum (T_i - 1), 3*J].
Tensor velocity_feature_rows(const std::vector<GestureSequence>& clips);

double fd_static(const std::vector<GestureSequence>& generated,
                 const std::vector<GestureSequence>& reference);
double fd_kinetic(const std::vector<GestureSequence>& generated,
                  const std::vector<GestureSequence>& reference);

// Mean over unordered clip pairs (lexicographic order) of the MSE between the two
// clips' pose/velocity feature tensors. Requires >= 2 equal-length clips.
double diversity_static(const std::vector<GestureSequence>& clips);
double diversity_kinetic(const std::vector<GestureSequence>& clips);

struct BeatConsistencyParams {
    double sigma_frames = 3.0;
    double speed_threshold = 0.2;  // relative to the clip's max total joint speed

    nlohmann::json to_json() const;
};

struct BeatResult {
    double score = 0.0;  // in [0,1]
    bool no_beats = false;
    std::vector<int> audio_beats;
    std::vector<int> kinematic_beats;
};

// Kinematic beats: frames whose central-difference total joint speed is a local
// minimum below speed_threshold * max speed. Audio beats: local maxima of the
// envelope's onset strength (positive increments). Score: mean over audio beats of
// exp(-d^2 / (2 sigma^2)) with d the frame distance to the nearest kinematic beat.
BeatResult beat_consistency(const GestureSequence& gesture, const std::vector<double>& envelope,
                            const BeatConsistencyParams& params = {});

// The scoring kernel alone, for oracle checks.
double beat_alignment_score(const std::vector<int>& audio_beats,
                            const std::vector<int>& kinematic_beats, double sigma_frames);

// Per-frame RMS of the feature rows; the envelope used for BC in evaluation.
std::vector<double> audio_envelope_rms(const Tensor& track);

// Mean axis-angle magnitude over frames and joints.
double mean_pose_amplitude(const GestureSequence& seq);

struct MetricReport {
    double fd_static = 0.0;
    double fd_kinetic = 0.0;
    double diversity_static = 0.0;
    double diversity_kinetic = 0.0;
    double beat_consistency = 0.0;
    double reference_diversity_static = 0.0;
    double reference_diversity_kinetic = 0.0;
    nlohmann::json config;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

// Full evaluation of a generated set against a reference set. BC is averaged over
// generated clips using each clip's own-speech envelope.
MetricReport evaluate_sets(const std::vector<GestureSequence>& generated,
                           const std::vector<GestureSequence>& reference,
                           const std::vector<std::vector<double>>& generated_envelopes,
                           const BeatConsistencyParams& bc_params = {});

}  // namespace dyadit
