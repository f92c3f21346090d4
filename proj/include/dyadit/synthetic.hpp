#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dyadit/motion.hpp"

#include "json.hpp"

namespace dyadit {

inline constexpr int kAudioFeatureDim = 768;

struct SynthConfig {
    int clip_length_frames = 300;
    int clips = 64;
    std::uint64_t seed = 7;
    double noise_level = 0.02;
    int fps = kDefaultFps;
    // amplitude_map: personality traits -> gesture amplitude A.
    double amp_base = 0.25;
    double amp_extraversion = 0.75;
    double amp_openness = 0.10;
    // tempo_map: relationship class -> speaking half-period in frames.
    std::array<int, 4> cadence_frames = {24, 40, 60, 90};
    // Fixed values suppress the corresponding per-clip draws (for paired cohorts).
    std::optional<int> fixed_relationship;
    std::optional<std::array<double, 5>> fixed_personality;

    void validate() const;
    nlohmann::json to_json() const;
    // Strict: unknown keys raise ConfigError naming the key.
    static SynthConfig from_json(const nlohmann::json& j);
};

struct DyadSample {
    Tensor audio_self;   // [Ta, 768]
    Tensor audio_other;  // [Ta, 768]
    GestureSequence gesture_self;   // partner motion (p_self source)
    GestureSequence gesture_other;  // generation target
    Tensor relationship;  // [4] one-hot
    Tensor personality;   // [5] in [0,1]
    Tensor turn_mask;     // [T, 2]; column 0 = self speaking, 1 = other speaking
};

struct Dataset {
    nlohmann::json config;  // config echo (synthesis or generation record)
    std::uint64_t seed = 0;
    int fps = kDefaultFps;
    bool generated = false;
    std::vector<DyadSample> clips;
};

// Deterministic synthetic dyad generator. Construction law (all values quantized
// through float32 so datasets round-trip disk bit-exactly):
//
// Dataset-level draws, engine mt19937_64 seeded derive_seed(seed, 0xA0D10), in order:
//   c_sil[768]   entries (0.1/sqrt(768)) * normal()       silence embedding
//   u_base[768]  entries (1.0/sqrt(768)) * normal()       envelope carrier direction
//   v_k[768]     entries (0.5/sqrt(768)) * normal(), k=0,1,2   detail directions
//   per joint j = 0..42: axis n_j (3 normals, normalized; redrawn if norm < 1e-6),
//                        b_j = U[0.5,1], w_j = U[0.3,1]
//
// Per-clip draws, engine seeded derive_seed(seed, clip_index), in order:
//   relationship r = uniform_index(4)            (skipped when fixed_relationship)
//   personality p[0..4] = uniform()              (skipped when fixed_personality)
//   turn offset o = uniform_index(L),  L = cadence_frames[r]
//   per speaker s in {self, other}: f_env_s = U[0.8,1.6] Hz, phi_s = U[0,2pi)
//   per speaker s: (f_k_s = U[2,8] Hz, phi_k_s = U[0,2pi)) for k = 0,1,2
//   per speaker s: wiggle phases psi_{s,j} = U[0,2pi) for j = 0..42
//   per speaker s: noise eta_{s,t,j} = normal() for t = 0..T-1, j = 0..42
//
// Signals (fps-based time in seconds, speaker s with opponent s')):
//   mask_s(t)  = 1 if floor((t+o)/L) mod 2 == s else 0    (self = 0 speaks first)
//   env_s(t)   = mask_s(t) * (0.6 + 0.4 sin(2pi f_env_s t/fps + phi_s))
//   audio_s(t) = c_sil + env_s(t) * (u_base + sum_k sin(2pi f_k_s t/fps + phi_k_s) v_k)
//   A          = amp_base + amp_extraversion * p[0] + amp_openness * p[4]
//   theta_{s,j}(t) = A*(0.7 env_s(t) + 0.3 env_s'(t))*b_j
//                  + A*0.25*sin(pi t/L + psi_{s,j})*w_j + noise_level*eta_{s,t,j}
//   frame_{s}(t)[j] = rot6d(axis_angle_to_matrix(theta_{s,j}(t) * n_j))
//
// gesture_self is speaker 0's motion, gesture_other (the target) speaker 1's; the
// audio/motion alignment is 1:1 (Ta == T).
Dataset generate_synthetic(const SynthConfig& cfg);

// Directory format: manifest.json + clip_{i}_{field}.f32 raw little-endian float32.
void save_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

inline constexpr int kDatasetSchemaVersion = 1;

// Pluggable audio feature source ("wav2vec-like" interface). Providers emit
// [frames, 768] tracks.
struct AudioSourceSpec {
    int frames = 0;
    int fps = kDefaultFps;
    std::uint64_t seed = 0;
    std::optional<Tensor> turn_mask;  // [frames]; absent = speaking throughout
};

using AudioProviderFn = std::function<Tensor(const AudioSourceSpec&)>;

void register_audio_provider(const std::string& provider_id, AudioProviderFn fn);
// Throws UnknownProvider for unregistered ids. "synthetic" ships by default.
Tensor audio_features(const std::string& provider_id, const AudioSourceSpec& spec);

// The synthetic provider's constant silence row (its output wherever the mask is 0).
Tensor synthetic_silence_embedding(std::uint64_t seed);

}  // namespace dyadit
