#include "dyadit/motion.hpp"

#include <cmath>

namespace dyadit {

namespace {

constexpr double kDegenerateTol = 1e-8;
constexpr double kRotationTol = 1e-5;

}  // namespace

Mat3 Mat3::identity() {
    Mat3 r;
    r.at(0, 0) = r.at(1, 1) = r.at(2, 2) = 1.0;
    return r;
}

Mat3 Mat3::mul(const Mat3& other) const {
    Mat3 out;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += at(i, k) * other.at(k, j);
            out.at(i, j) = acc;
        }
    return out;
}

double Mat3::det() const {
    return at(0, 0) * (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) -
           at(0, 1) * (at(1, 0) * at(2, 2) - at(1, 2) * at(2, 0)) +
           at(0, 2) * (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0));
}

double Mat3::orthonormality_error() const {
    double worst = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += at(k, i) * at(k, j);
            worst = std::max(worst, std::fabs(acc - (i == j ? 1.0 : 0.0)));
        }
    return worst;
}

GestureSequence GestureSequence::from_frames(Tensor frames, int fps) {
    if (frames.rank() != 3 || frames.dim(2) != kFeatureDim)
        throw ShapeError("GestureSequence expects [T,J,6] frames, got " + frames.shape_str());
    if (frames.dim(0) < 1) throw ShapeError("GestureSequence requires T >= 1");
    GestureSequence seq;
    seq.joint_count = static_cast<int>(frames.dim(1));
    seq.frames = std::move(frames);
    seq.fps = fps;
    return seq;
}

Mat3 rot6d_to_matrix(const std::array<double, 6>& r6) {
    for (double v : r6)
        if (!std::isfinite(v)) throw DegenerateInput("rot6d: non-finite input");

    const double a[3] = {r6[0], r6[1], r6[2]};
    const double b[3] = {r6[3], r6[4], r6[5]};

    double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    if (na <= kDegenerateTol) throw DegenerateInput("rot6d: first column norm below 1e-8");
    double c0[3] = {a[0] / na, a[1] / na, a[2] / na};

    double dot = c0[0] * b[0] + c0[1] * b[1] + c0[2] * b[2];
    double r[3] = {b[0] - dot * c0[0], b[1] - dot * c0[1], b[2] - dot * c0[2]};
    double nr = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
    if (nr <= kDegenerateTol) throw DegenerateInput("rot6d: columns parallel within 1e-8");
    double c1[3] = {r[0] / nr, r[1] / nr, r[2] / nr};

    double c2[3] = {c0[1] * c1[2] - c0[2] * c1[1], c0[2] * c1[0] - c0[0] * c1[2],
                    c0[0] * c1[1] - c0[1] * c1[0]};

    Mat3 out;
    for (int i = 0; i < 3; ++i) {
        out.at(i, 0) = c0[i];
        out.at(i, 1) = c1[i];
        out.at(i, 2) = c2[i];
    }
    return out;
}

std::array<double, 6> matrix_to_rot6d(const Mat3& r) {
    if (r.orthonormality_error() > kRotationTol || std::fabs(r.det() - 1.0) > kRotationTol)
        throw InvalidRotation("matrix_to_rot6d: input is not a rotation within 1e-5");
    return {r.at(0, 0), r.at(1, 0), r.at(2, 0), r.at(0, 1), r.at(1, 1), r.at(2, 1)};
}

Mat3 axis_angle_to_matrix(const std::array<double, 3>& w) {
    double theta = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
    Mat3 out = Mat3::identity();
    if (theta < 1e-12) return out;
    double nx = w[0] / theta, ny = w[1] / theta, nz = w[2] / theta;
    double c = std::cos(theta), s = std::sin(theta), ic = 1.0 - c;
    out.at(0, 0) = c + nx * nx * ic;
    out.at(0, 1) = nx * ny * ic - nz * s;
    out.at(0, 2) = nx * nz * ic + ny * s;
    out.at(1, 0) = ny * nx * ic + nz * s;
    out.at(1, 1) = c + ny * ny * ic;
    out.at(1, 2) = ny * nz * ic - nx * s;
    out.at(2, 0) = nz * nx * ic - ny * s;
    out.at(2, 1) = nz * ny * ic + nx * s;
    out.at(2, 2) = c + nz * nz * ic;
    return out;
}

std::array<double, 3> matrix_to_axis_angle(const Mat3& r) {
    double tr = r.at(0, 0) + r.at(1, 1) + r.at(2, 2);
    double ct = std::min(1.0, std::max(-1.0, (tr - 1.0) * 0.5));
    double theta = std::acos(ct);

    // vee(R - R^T): twice sin(theta) times the unit axis.
    double vx = r.at(2, 1) - r.at(1, 2);
    double vy = r.at(0, 2) - r.at(2, 0);
    double vz = r.at(1, 0) - r.at(0, 1);

    if (theta < 1e-7) {
        return {0.5 * vx, 0.5 * vy, 0.5 * vz};
    }
    if (theta > M_PI - 1e-4) {
        // Axis from the diagonal; signs from the symmetric off-diagonal part.
        double nx = std::sqrt(std::max(0.0, (r.at(0, 0) + 1.0) * 0.5));
        double ny = std::sqrt(std::max(0.0, (r.at(1, 1) + 1.0) * 0.5));
        double nz = std::sqrt(std::max(0.0, (r.at(2, 2) + 1.0) * 0.5));
        if (nx >= ny && nx >= nz) {
            if (r.at(0, 1) + r.at(1, 0) < 0.0) ny = -ny;
            if (r.at(0, 2) + r.at(2, 0) < 0.0) nz = -nz;
        } else if (ny >= nz) {
            if (r.at(0, 1) + r.at(1, 0) < 0.0) nx = -nx;
            if (r.at(1, 2) + r.at(2, 1) < 0.0) nz = -nz;
        } else {
            if (r.at(0, 2) + r.at(2, 0) < 0.0) nx = -nx;
            if (r.at(1, 2) + r.at(2, 1) < 0.0) ny = -ny;
        }
        double norm = std::sqrt(nx * nx + ny * ny + nz * nz);
        return {theta * nx / norm, theta * ny / norm, theta * nz / norm};
    }
    double scale = theta / (2.0 * std::sin(theta));
    return {scale * vx, scale * vy, scale * vz};
}

Tensor to_pose_features(const GestureSequence& seq) {
    const std::int64_t t = seq.frames.dim(0);
    const std::int64_t j = seq.frames.dim(1);
    Tensor out({t, 3, j});
    for (std::int64_t fi = 0; fi < t; ++fi) {
        for (std::int64_t ji = 0; ji < j; ++ji) {
            std::array<double, 6> r6;
            for (int c = 0; c < 6; ++c) r6[static_cast<std::size_t>(c)] = seq.frames.at(fi, ji, c);
            auto w = matrix_to_axis_angle(rot6d_to_matrix(r6));
            out.at(fi, 0, ji) = w[0];
            out.at(fi, 1, ji) = w[1];
            out.at(fi, 2, ji) = w[2];
        }
    }
    return out;
}

Tensor velocities(const Tensor& features, int fps) {
    if (features.rank() != 3) throw ShapeError("velocities: expected [T,3,J] features");
    const std::int64_t t = features.dim(0);
    if (t < 2) throw TooShort("velocities: need at least 2 frames");
    const std::int64_t per_frame = features.dim(1) * features.dim(2);
    Tensor out({t - 1, features.dim(1), features.dim(2)});
    const double s = static_cast<double>(fps);
    for (std::int64_t fi = 0; fi + 1 < t; ++fi) {
        const double* a = features.data() + fi * per_frame;
        const double* b = features.data() + (fi + 1) * per_frame;
        double* o = out.data() + fi * per_frame;
        for (std::int64_t k = 0; k < per_frame; ++k) o[k] = (b[k] - a[k]) * s;
    }
    return out;
}

}  // namespace dyadit
