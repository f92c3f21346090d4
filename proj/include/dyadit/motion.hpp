#pragma once

#include <array>

#include "dyadit/tensor.hpp"

namespace dyadit {

// Row-major 3x3 matrix, just enough for rotation math.
struct Mat3 {
    std::array<double, 9> m{};

    double& at(int r, int c) { return m[static_cast<std::size_t>(3 * r + c)]; }
    double at(int r, int c) const { return m[static_cast<std::size_t>(3 * r + c)]; }
    static Mat3 identity();
    Mat3 mul(const Mat3& other) const;
    double det() const;
    // max |R^T R - I| entry
    double orthonormality_error() const;
};

inline constexpr int kJointCount = 43;
inline constexpr int kDefaultFps = 30;
inline constexpr int kFeatureDim = 6;

// Upper-body gesture clip: frames[t][j] is the 6-D rotation feature of joint j.
struct GestureSequence {
    Tensor frames;  // [T, J, 6]
    int fps = kDefaultFps;
    int joint_count = kJointCount;

    std::int64_t length() const { return frames.rank() == 3 ? frames.dim(0) : 0; }
    static GestureSequence from_frames(Tensor frames, int fps = kDefaultFps);
};

// Gram-Schmidt decode of the 6-D rotation feature (two leading matrix columns).
// Throws DegenerateInput if the first 3-vector is near zero or the two are parallel.
Mat3 rot6d_to_matrix(const std::array<double, 6>& r6);

// First two columns of a validated rotation matrix. Throws InvalidRotation if R is
// not orthonormal with det +1 within 1e-5.
std::array<double, 6> matrix_to_rot6d(const Mat3& r);

// Rodrigues exponential map.
Mat3 axis_angle_to_matrix(const std::array<double, 3>& w);
// Log map; returns theta * unit_axis, |theta| <= pi.
std::array<double, 3> matrix_to_axis_angle(const Mat3& r);

// Per-frame pose-space features: axis-angle vector per joint, shape [T, 3, J].
Tensor to_pose_features(const GestureSequence& seq);

// Frame differences scaled by fps over [T,3,J] features -> [T-1,3,J].
// Throws TooShort for T < 2.
Tensor velocities(const Tensor& features, int fps = kDefaultFps);

}  // namespace dyadit
