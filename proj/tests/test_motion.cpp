#include "doctest.h"

#include <array>
#include <cmath>

#include "dyadit/motion.hpp"
#include "dyadit/rng.hpp"

using namespace dyadit;

TEST_SUITE_BEGIN("motion");

namespace {

// Oracle rotations built from unit quaternions, independent of the library's
// Rodrigues/Gram-Schmidt paths.
Mat3 quat_to_matrix(double w, double x, double y, double z) {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    w /= n; x /= n; y /= n; z /= n;
    Mat3 r;
    r.at(0, 0) = 1 - 2 * (y * y + z * z);
    r.at(0, 1) = 2 * (x * y - z * w);
    r.at(0, 2) = 2 * (x * z + y * w);
    r.at(1, 0) = 2 * (x * y + z * w);
    r.at(1, 1) = 1 - 2 * (x * x + z * z);
    r.at(1, 2) = 2 * (y * z - x * w);
    r.at(2, 0) = 2 * (x * z - y * w);
    r.at(2, 1) = 2 * (y * z + x * w);
    r.at(2, 2) = 1 - 2 * (x * x + y * y);
    return r;
}

Mat3 random_rotation(Rng& rng) {
    // Uniformly random unit quaternion.
    return quat_to_matrix(rng.normal(), rng.normal(), rng.normal(), rng.normal());
}

double max_abs_diff(const Mat3& a, const Mat3& b) {
    double m = 0.0;
    for (int i = 0; i < 9; ++i) m = std::max(m, std::fabs(a.m[static_cast<std::size_t>(i)] -
                                                          b.m[static_cast<std::size_t>(i)]));
    return m;
}

}  // namespace

TEST_CASE("quaternion oracle shortcut: rotation about z by 90 degrees") {
    // Oracle quaternion (cos45, 0, 0, sin45); columns pinned by hand.
    Mat3 r = quat_to_matrix(std::cos(M_PI / 4), 0, 0, std::sin(M_PI / 4));
    CHECK(r.at(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.at(1, 0) == doctest::Approx(1.0));
    CHECK(r.at(0, 1) == doctest::Approx(-1.0));
}

TEST_CASE("rot6d_to_matrix canonical and scale-invariance cases") {
    Mat3 id = rot6d_to_matrix({1, 0, 0, 0, 1, 0});
    CHECK(max_abs_diff(id, Mat3::identity()) < 1e-12);
    Mat3 scaled = rot6d_to_matrix({2, 0, 0, 0, 3, 0});
    CHECK(max_abs_diff(scaled, Mat3::identity()) < 1e-12);

    CHECK_THROWS_AS(rot6d_to_matrix({0, 0, 0, 0, 1, 0}), DegenerateInput);
    CHECK_THROWS_AS(rot6d_to_matrix({1, 0, 0, 2, 0, 0}), DegenerateInput);
    CHECK_THROWS_AS(rot6d_to_matrix({1e-9, 0, 0, 0, 1, 0}), DegenerateInput);
}

TEST_CASE("rot6d recovers oracle rotations from their first two columns") {
    Rng rng(101);
    for (int trial = 0; trial < 500; ++trial) {
        Mat3 r = random_rotation(rng);
        std::array<double, 6> r6 = {r.at(0, 0), r.at(1, 0), r.at(2, 0),
                                    r.at(0, 1), r.at(1, 1), r.at(2, 1)};
        Mat3 rec = rot6d_to_matrix(r6);
        CHECK(max_abs_diff(rec, r) < 1e-6);
        CHECK(rec.orthonormality_error() < 1e-5);
        CHECK(std::fabs(rec.det() - 1.0) < 1e-5);
    }
}

TEST_CASE("matrix_to_rot6d canonical cases") {
    auto r6 = matrix_to_rot6d(Mat3::identity());
    std::array<double, 6> expected = {1, 0, 0, 0, 1, 0};
    for (int i = 0; i < 6; ++i) CHECK(r6[static_cast<std::size_t>(i)] == doctest::Approx(expected[static_cast<std::size_t>(i)]));

    // 90-degree rotation about z via the quaternion oracle.
    Mat3 rz = quat_to_matrix(std::cos(M_PI / 4), 0, 0, std::sin(M_PI / 4));
    auto r6z = matrix_to_rot6d(rz);
    std::array<double, 6> expected_z = {0, 1, 0, -1, 0, 0};
    for (int i = 0; i < 6; ++i)
        CHECK(r6z[static_cast<std::size_t>(i)] == doctest::Approx(expected_z[static_cast<std::size_t>(i)]).epsilon(1e-9));

    Mat3 not_rotation = Mat3::identity();
    not_rotation.at(0, 0) = 2.0;
    CHECK_THROWS_AS(matrix_to_rot6d(not_rotation), InvalidRotation);
}

TEST_CASE("round trip over 1000 random rotations stays within 1e-6") {
    Rng rng(202);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        Mat3 r = random_rotation(rng);
        Mat3 rec = rot6d_to_matrix(matrix_to_rot6d(r));
        worst = std::max(worst, max_abs_diff(rec, r));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("rot6d is invariant to positive scaling of either 3-vector") {
    Rng rng(303);
    for (int trial = 0; trial < 100; ++trial) {
        Mat3 r = random_rotation(rng);
        auto r6 = matrix_to_rot6d(r);
        auto scaled = r6;
        const double s1 = rng.uniform(0.1, 10.0), s2 = rng.uniform(0.1, 10.0);
        for (int i = 0; i < 3; ++i) scaled[static_cast<std::size_t>(i)] *= s1;
        for (int i = 3; i < 6; ++i) scaled[static_cast<std::size_t>(i)] *= s2;
        CHECK(max_abs_diff(rot6d_to_matrix(r6), rot6d_to_matrix(scaled)) < 1e-9);
    }
}

TEST_CASE("axis-angle log map vs exp map, including near-pi branch") {
    Rng rng(404);
    for (int trial = 0; trial < 500; ++trial) {
        double angle = trial < 450 ? rng.uniform(1e-6, M_PI - 1e-3) : rng.uniform(M_PI - 1e-5, M_PI);
        double x = rng.normal(), y = rng.normal(), z = rng.normal();
        double n = std::sqrt(x * x + y * y + z * z);
        std::array<double, 3> w = {angle * x / n, angle * y / n, angle * z / n};
        auto back = matrix_to_axis_angle(axis_angle_to_matrix(w));
        // Near pi, w and -w encode the same rotation.
        double direct = 0.0, flipped = 0.0;
        for (int i = 0; i < 3; ++i) {
            direct = std::max(direct, std::fabs(back[static_cast<std::size_t>(i)] - w[static_cast<std::size_t>(i)]));
            flipped = std::max(flipped, std::fabs(back[static_cast<std::size_t>(i)] + w[static_cast<std::size_t>(i)]));
        }
        CHECK(std::min(direct, flipped) < 1e-5);
    }
}

namespace {

GestureSequence identity_sequence(int t) {
    Tensor frames({t, kJointCount, 6});
    for (int fi = 0; fi < t; ++fi)
        for (int j = 0; j < kJointCount; ++j) {
            frames.at(fi, j, 0) = 1.0;
            frames.at(fi, j, 4) = 1.0;
        }
    return GestureSequence::from_frames(std::move(frames));
}

}  // namespace

TEST_CASE("to_pose_features: identity frames give exactly zero") {
    GestureSequence seq = identity_sequence(5);
    Tensor f = to_pose_features(seq);
    REQUIRE(f.shape() == std::vector<std::int64_t>{5, 3, kJointCount});
    for (std::int64_t i = 0; i < f.size(); ++i) CHECK(f[i] == 0.0);
}

TEST_CASE("to_pose_features: single joint rotated 90 degrees about z") {
    GestureSequence seq = identity_sequence(3);
    // Oracle: the 6D encoding of Rz(90) is (0,1,0,-1,0,0); log map gives (0,0,pi/2).
    for (int fi = 0; fi < 3; ++fi) {
        seq.frames.at(fi, 7, 0) = 0.0;
        seq.frames.at(fi, 7, 1) = 1.0;
        seq.frames.at(fi, 7, 3) = -1.0;
        seq.frames.at(fi, 7, 4) = 0.0;
    }
    Tensor f = to_pose_features(seq);
    for (int fi = 0; fi < 3; ++fi) {
        CHECK(f.at(fi, 0, 7) == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(f.at(fi, 1, 7) == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(f.at(fi, 2, 7) == doctest::Approx(M_PI / 2).epsilon(1e-9));
        CHECK(f.at(fi, 2, 8) == 0.0);
    }
}

TEST_CASE("to_pose_features shape contract at T=300") {
    GestureSequence seq = identity_sequence(300);
    Tensor f = to_pose_features(seq);
    CHECK(f.shape() == std::vector<std::int64_t>{300, 3, 43});
}

TEST_CASE("velocities: constants, ramps, shape") {
    Tensor f({4, 3, 2});
    f.fill(0.5);
    Tensor v = velocities(f, 30);
    CHECK(v.shape() == std::vector<std::int64_t>{3, 3, 2});
    for (std::int64_t i = 0; i < v.size(); ++i) CHECK(v[i] == 0.0);

    // Linear ramp slope s per frame -> constant fps * s.
    const double slope = 0.01;
    Tensor ramp({5, 3, 2});
    for (int t = 0; t < 5; ++t)
        for (std::int64_t k = 0; k < 6; ++k) ramp[t * 6 + k] = slope * t;
    Tensor rv = velocities(ramp, 30);
    for (std::int64_t i = 0; i < rv.size(); ++i) CHECK(rv[i] == doctest::Approx(30.0 * slope).epsilon(1e-9));

    Tensor single({1, 3, 2});
    CHECK_THROWS_AS(velocities(single, 30), TooShort);

    Tensor big({300, 3, 43});
    CHECK(velocities(big, 30).shape() == std::vector<std::int64_t>{299, 3, 43});
}

TEST_SUITE_END();
