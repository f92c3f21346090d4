#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dyadit/metrics.hpp"
#include "dyadit/synthetic.hpp"

using namespace dyadit;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("synthetic");

namespace {

SynthConfig tiny_config() {
    SynthConfig cfg;
    cfg.clip_length_frames = 40;
    cfg.clips = 3;
    cfg.seed = 77;
    cfg.noise_level = 0.0;
    return cfg;
}

// Independent reimplementation of the documented construction law for one clip's
// target gesture. Rotations go through quaternions rather than the library's
// Rodrigues + Gram-Schmidt path.
struct LawOracle {
    Tensor c_sil{std::vector<std::int64_t>{kAudioFeatureDim}};
    Tensor u_base{std::vector<std::int64_t>{kAudioFeatureDim}};
    Tensor v[3];
    double axis[kJointCount][3];
    double b[kJointCount], w[kJointCount];

    explicit LawOracle(std::uint64_t seed) {
        Rng rng(derive_seed(seed, 0xA0D10));
        const double inv = 1.0 / std::sqrt(static_cast<double>(kAudioFeatureDim));
        for (int i = 0; i < kAudioFeatureDim; ++i) c_sil[i] = 0.1 * inv * rng.normal();
        for (int i = 0; i < kAudioFeatureDim; ++i) u_base[i] = inv * rng.normal();
        for (auto& vk : v) {
            vk = Tensor({kAudioFeatureDim});
            for (int i = 0; i < kAudioFeatureDim; ++i) vk[i] = 0.5 * inv * rng.normal();
        }
        for (int j = 0; j < kJointCount; ++j) {
            for (;;) {
                double x = rng.normal(), y = rng.normal(), z = rng.normal();
                double n = std::sqrt(x * x + y * y + z * z);
                if (n >= 1e-6) {
                    axis[j][0] = x / n;
                    axis[j][1] = y / n;
                    axis[j][2] = z / n;
                    break;
                }
            }
            b[j] = rng.uniform(0.5, 1.0);
            w[j] = rng.uniform(0.3, 1.0);
        }
    }

    // 6D feature of the axis-angle rotation theta*n via a quaternion.
    static std::array<double, 6> rot6d_via_quat(double theta, const double n[3]) {
        const double hw = std::cos(theta / 2), s = std::sin(theta / 2);
        const double qx = s * n[0], qy = s * n[1], qz = s * n[2];
        // Rotation matrix columns 0 and 1 from the quaternion.
        return {1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy + qz * hw), 2 * (qx * qz - qy * hw),
                2 * (qx * qy - qz * hw),     1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz + qx * hw)};
    }
};

}  // namespace

TEST_CASE("same seed gives bit-identical datasets") {
    SynthConfig cfg = tiny_config();
    Dataset a = generate_synthetic(cfg);
    Dataset b = generate_synthetic(cfg);
    REQUIRE(a.clips.size() == b.clips.size());
    for (std::size_t i = 0; i < a.clips.size(); ++i) {
        const DyadSample& x = a.clips[i];
        const DyadSample& y = b.clips[i];
        for (std::int64_t k = 0; k < x.audio_self.size(); ++k)
            REQUIRE(x.audio_self[k] == y.audio_self[k]);
        for (std::int64_t k = 0; k < x.gesture_other.frames.size(); ++k)
            REQUIRE(x.gesture_other.frames[k] == y.gesture_other.frames[k]);
        for (std::int64_t k = 0; k < 5; ++k) REQUIRE(x.personality[k] == y.personality[k]);
    }
    Dataset c = generate_synthetic([&] {
        SynthConfig other = cfg;
        other.seed = 78;
        return other;
    }());
    bool all_equal = true;
    for (std::int64_t k = 0; k < 40 && all_equal; ++k)
        all_equal = a.clips[0].gesture_other.frames[k] == c.clips[0].gesture_other.frames[k];
    CHECK_FALSE(all_equal);
}

TEST_CASE("noise-free clips match an independent reimplementation of the law") {
    SynthConfig cfg = tiny_config();
    Dataset ds = generate_synthetic(cfg);
    LawOracle oracle(cfg.seed);

    for (std::size_t ci = 0; ci < ds.clips.size(); ++ci) {
        // Replay the documented per-clip draw order.
        Rng rng(derive_seed(cfg.seed, ci));
        const int rel = static_cast<int>(rng.uniform_index(4));
        double p[5];
        for (double& x : p) x = rng.uniform();
        const int cadence = cfg.cadence_frames[static_cast<std::size_t>(rel)];
        const int offset = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(cadence)));
        double f_env[2], phi_env[2];
        for (int s = 0; s < 2; ++s) {
            f_env[s] = rng.uniform(0.8, 1.6);
            phi_env[s] = rng.uniform(0.0, 2.0 * M_PI);
        }
        double f_det[2][3], phi_det[2][3];
        for (int s = 0; s < 2; ++s)
            for (int k = 0; k < 3; ++k) {
                f_det[s][k] = rng.uniform(2.0, 8.0);
                phi_det[s][k] = rng.uniform(0.0, 2.0 * M_PI);
            }
        std::vector<double> psi(2 * kJointCount);
        for (double& x : psi) x = rng.uniform(0.0, 2.0 * M_PI);

        const DyadSample& clip = ds.clips[ci];
        CHECK(clip.relationship[rel] == 1.0);

        auto env = [&](int s, int t) {
            const bool speaking = ((t + offset) / cadence) % 2 == s;
            return speaking ? 0.6 + 0.4 * std::sin(2.0 * M_PI * f_env[s] * t / cfg.fps + phi_env[s])
                            : 0.0;
        };

        // Audio oracle, spot-checked over a handful of (t, d) cells.
        for (int t : {0, 7, 23, 39}) {
            for (int d : {0, 100, 767}) {
                double detail = 0.0;
                for (int k = 0; k < 3; ++k)
                    detail += std::sin(2.0 * M_PI * f_det[0][k] * t / cfg.fps + phi_det[0][k]) *
                              oracle.v[k][d];
                const double expected =
                    oracle.c_sil[d] + env(0, t) * (oracle.u_base[d] + detail);
                CHECK(clip.audio_self.at(t, d) == doctest::Approx(expected).epsilon(1e-6));
            }
        }

        // Target gesture oracle (speaker 1), all frames and joints.
        const double amp = cfg.amp_base + cfg.amp_extraversion * p[0] + cfg.amp_openness * p[4];
        double worst = 0.0;
        for (int t = 0; t < cfg.clip_length_frames; ++t) {
            const double drive = 0.7 * env(1, t) + 0.3 * env(0, t);
            for (int j = 0; j < kJointCount; ++j) {
                const double wig =
                    std::sin(M_PI * t / cadence + psi[static_cast<std::size_t>(kJointCount + j)]) *
                    oracle.w[j];
                const double theta = amp * drive * oracle.b[j] + amp * 0.25 * wig;
                auto r6 = LawOracle::rot6d_via_quat(theta, oracle.axis[j]);
                for (int c = 0; c < 6; ++c)
                    worst = std::max(worst, std::fabs(clip.gesture_other.frames.at(t, j, c) -
                                                      r6[static_cast<std::size_t>(c)]));
            }
        }
        CHECK(worst < 1e-6);  // f32 quantization is the only difference
    }
}

TEST_CASE("extraversion scales mean amplitude by the configured coefficient") {
    SynthConfig base = tiny_config();
    base.clips = 100;
    base.clip_length_frames = 32;
    base.fixed_personality = {{0.0, 0.5, 0.5, 0.5, 0.5}};
    SynthConfig high = base;
    high.fixed_personality = {{1.0, 0.5, 0.5, 0.5, 0.5}};

    Dataset low_ds = generate_synthetic(base);
    Dataset high_ds = generate_synthetic(high);
    double low_amp = 0.0, high_amp = 0.0;
    for (int i = 0; i < 100; ++i) {
        low_amp += mean_pose_amplitude(low_ds.clips[static_cast<std::size_t>(i)].gesture_other);
        high_amp += mean_pose_amplitude(high_ds.clips[static_cast<std::size_t>(i)].gesture_other);
    }
    const double a_low = base.amp_base + base.amp_openness * 0.5;
    const double a_high = a_low + base.amp_extraversion;
    const double expected_ratio = a_high / a_low;
    CHECK(high_amp > low_amp);
    CHECK(high_amp / low_amp == doctest::Approx(expected_ratio).epsilon(0.05));
}

TEST_CASE("save/load round trip is bit-exact; format errors are typed") {
    const std::string dir = (fs::temp_directory_path() / "dyadit_ds_test").string();
    fs::remove_all(dir);
    SynthConfig cfg = tiny_config();
    Dataset ds = generate_synthetic(cfg);
    save_dataset(ds, dir);
    Dataset loaded = load_dataset(dir);
    REQUIRE(loaded.clips.size() == ds.clips.size());
    for (std::size_t i = 0; i < ds.clips.size(); ++i) {
        const DyadSample& a = ds.clips[i];
        const DyadSample& b = loaded.clips[i];
        for (std::int64_t k = 0; k < a.audio_self.size(); ++k)
            REQUIRE(a.audio_self[k] == b.audio_self[k]);
        for (std::int64_t k = 0; k < a.audio_other.size(); ++k)
            REQUIRE(a.audio_other[k] == b.audio_other[k]);
        for (std::int64_t k = 0; k < a.gesture_self.frames.size(); ++k)
            REQUIRE(a.gesture_self.frames[k] == b.gesture_self.frames[k]);
        for (std::int64_t k = 0; k < a.gesture_other.frames.size(); ++k)
            REQUIRE(a.gesture_other.frames[k] == b.gesture_other.frames[k]);
        for (std::int64_t k = 0; k < 4; ++k) REQUIRE(a.relationship[k] == b.relationship[k]);
        for (std::int64_t k = 0; k < 5; ++k) REQUIRE(a.personality[k] == b.personality[k]);
        for (std::int64_t k = 0; k < a.turn_mask.size(); ++k)
            REQUIRE(a.turn_mask[k] == b.turn_mask[k]);
    }

    // Truncated tensor file: FormatError naming the file.
    {
        std::ofstream trunc(fs::path(dir) / "clip_1_personality.f32",
                            std::ios::binary | std::ios::trunc);
        trunc << "zz";
    }
    try {
        load_dataset(dir);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("clip_1_personality.f32") != std::string::npos);
    }

    // Unknown schema version: FormatError carrying found/expected versions.
    save_dataset(ds, dir);
    {
        std::ifstream in(fs::path(dir) / "manifest.json");
        nlohmann::json manifest;
        in >> manifest;
        in.close();
        manifest["schema_version"] = 999;
        std::ofstream out(fs::path(dir) / "manifest.json");
        out << manifest.dump();
    }
    try {
        load_dataset(dir);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("999") != std::string::npos);
        CHECK(msg.find("1") != std::string::npos);
    }

    CHECK_THROWS_AS(load_dataset(dir + "_does_not_exist"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("config parsing is strict about unknown keys") {
    nlohmann::json good = tiny_config().to_json();
    SynthConfig parsed = SynthConfig::from_json(good);
    CHECK(parsed.clips == 3);
    nlohmann::json bad = good;
    bad["clps"] = 9;
    try {
        SynthConfig::from_json(bad);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("clps") != std::string::npos);
    }
}

TEST_CASE("audio provider: width, determinism, silence embedding") {
    AudioSourceSpec spec;
    spec.frames = 16;
    spec.seed = 5;
    Tensor track = audio_features("synthetic", spec);
    CHECK(track.shape() == std::vector<std::int64_t>{16, kAudioFeatureDim});
    Tensor track2 = audio_features("synthetic", spec);
    for (std::int64_t i = 0; i < track.size(); ++i) REQUIRE(track[i] == track2[i]);

    // All-zero turn mask: every row equals the documented silence embedding.
    spec.turn_mask = Tensor({16});
    Tensor silent = audio_features("synthetic", spec);
    Tensor embedding = synthetic_silence_embedding(spec.seed);
    for (int t = 0; t < 16; ++t)
        for (int d = 0; d < kAudioFeatureDim; ++d) REQUIRE(silent.at(t, d) == embedding[d]);

    CHECK_THROWS_AS(audio_features("wav2vec2", spec), UnknownProvider);

    register_audio_provider("test_constant", [](const AudioSourceSpec& s) {
        return Tensor::full({s.frames, kAudioFeatureDim}, 0.25);
    });
    Tensor constant = audio_features("test_constant", spec);
    CHECK(constant.at(3, 3) == 0.25);
}

TEST_CASE("turn masks alternate with the relationship cadence") {
    SynthConfig cfg = tiny_config();
    cfg.fixed_relationship = 0;  // cadence 24
    cfg.clip_length_frames = 96;
    Dataset ds = generate_synthetic(cfg);
    const Tensor& mask = ds.clips[0].turn_mask;
    for (int t = 0; t < 96; ++t) {
        CHECK(mask.at(t, 0) + mask.at(t, 1) == 1.0);  // exactly one speaker at a time
    }
    // Runs of each speaker have the cadence length away from clip edges.
    int flips = 0;
    for (int t = 1; t < 96; ++t) flips += mask.at(t, 0) != mask.at(t - 1, 0) ? 1 : 0;
    CHECK(flips >= 2);
}

TEST_SUITE_END();
