#include "dyadit/synthetic.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>

#include "dyadit/checkpoint.hpp"

namespace dyadit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kDirectionStream = 0xA0D10;

void quantize_f32(Tensor& t) {
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(static_cast<float>(t[i]));
}

// Dataset-level carrier directions and per-joint geometry, all from one stream.
struct GlobalDirections {
    Tensor c_sil;    // [768]
    Tensor u_base;   // [768]
    Tensor v[3];     // [768]
    std::array<std::array<double, 3>, kJointCount> axis;
    std::array<double, kJointCount> b;
    std::array<double, kJointCount> w;
};

GlobalDirections draw_directions(std::uint64_t seed) {
    Rng rng(derive_seed(seed, kDirectionStream));
    GlobalDirections g;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(kAudioFeatureDim));
    g.c_sil = Tensor({kAudioFeatureDim});
    for (std::int64_t i = 0; i < kAudioFeatureDim; ++i) g.c_sil[i] = 0.1 * inv_sqrt * rng.normal();
    g.u_base = Tensor({kAudioFeatureDim});
    for (std::int64_t i = 0; i < kAudioFeatureDim; ++i) g.u_base[i] = inv_sqrt * rng.normal();
    for (auto& vk : g.v) {
        vk = Tensor({kAudioFeatureDim});
        for (std::int64_t i = 0; i < kAudioFeatureDim; ++i) vk[i] = 0.5 * inv_sqrt * rng.normal();
    }
    for (int j = 0; j < kJointCount; ++j) {
        for (;;) {
            double x = rng.normal(), y = rng.normal(), z = rng.normal();
            double n = std::sqrt(x * x + y * y + z * z);
            if (n >= 1e-6) {
                g.axis[static_cast<std::size_t>(j)] = {x / n, y / n, z / n};
                break;
            }
        }
        g.b[static_cast<std::size_t>(j)] = rng.uniform(0.5, 1.0);
        g.w[static_cast<std::size_t>(j)] = rng.uniform(0.3, 1.0);
    }
    return g;
}

struct ClipDraws {
    int relationship;
    std::array<double, 5> personality;
    int offset;
    double f_env[2], phi_env[2];
    double f_det[2][3], phi_det[2][3];
    std::vector<double> psi;    // [2 * J]
    std::vector<double> noise;  // [2 * T * J]
};

ClipDraws draw_clip(const SynthConfig& cfg, std::uint64_t clip_index) {
    Rng rng(derive_seed(cfg.seed, clip_index));
    ClipDraws d;
    d.relationship = cfg.fixed_relationship ? *cfg.fixed_relationship
                                            : static_cast<int>(rng.uniform_index(4));
    if (cfg.fixed_personality) {
        d.personality = *cfg.fixed_personality;
    } else {
        for (auto& p : d.personality) p = rng.uniform();
    }
    const int cadence = cfg.cadence_frames[static_cast<std::size_t>(d.relationship)];
    d.offset = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(cadence)));
    for (int s = 0; s < 2; ++s) {
        d.f_env[s] = rng.uniform(0.8, 1.6);
        d.phi_env[s] = rng.uniform(0.0, 2.0 * M_PI);
    }
    for (int s = 0; s < 2; ++s)
        for (int k = 0; k < 3; ++k) {
            d.f_det[s][k] = rng.uniform(2.0, 8.0);
            d.phi_det[s][k] = rng.uniform(0.0, 2.0 * M_PI);
        }
    d.psi.resize(2 * kJointCount);
    for (auto& p : d.psi) p = rng.uniform(0.0, 2.0 * M_PI);
    const std::size_t t = static_cast<std::size_t>(cfg.clip_length_frames);
    d.noise.resize(2 * t * kJointCount);
    for (auto& n : d.noise) n = rng.normal();
    return d;
}

Tensor build_audio_track(const GlobalDirections& g, const std::vector<double>& env, double f_det[3],
                         double phi_det[3], int fps) {
    const std::int64_t t = static_cast<std::int64_t>(env.size());
    Tensor out({t, kAudioFeatureDim});
    for (std::int64_t ti = 0; ti < t; ++ti) {
        double det[3];
        for (int k = 0; k < 3; ++k)
            det[k] = std::sin(2.0 * M_PI * f_det[k] * static_cast<double>(ti) / fps + phi_det[k]);
        double* row = out.data() + ti * kAudioFeatureDim;
        const double e = env[static_cast<std::size_t>(ti)];
        for (std::int64_t dd = 0; dd < kAudioFeatureDim; ++dd) {
            double detail = det[0] * g.v[0][dd] + det[1] * g.v[1][dd] + det[2] * g.v[2][dd];
            row[dd] = g.c_sil[dd] + e * (g.u_base[dd] + detail);
        }
    }
    return out;
}

}  // namespace

void SynthConfig::validate() const {
    if (clip_length_frames < 1) throw ConfigError("synthetic: clip_length_frames must be >= 1");
    if (clips < 1) throw ConfigError("synthetic: clips must be >= 1");
    if (noise_level < 0) throw ConfigError("synthetic: noise_level must be >= 0");
    if (fps < 1) throw ConfigError("synthetic: fps must be >= 1");
    for (int c : cadence_frames)
        if (c < 1) throw ConfigError("synthetic: cadence_frames entries must be >= 1");
    if (fixed_relationship && (*fixed_relationship < 0 || *fixed_relationship > 3))
        throw ConfigError("synthetic: fixed_relationship must be in [0,3]");
}

json SynthConfig::to_json() const {
    json j{{"clip_length_frames", clip_length_frames},
           {"clips", clips},
           {"seed", seed},
           {"noise_level", noise_level},
           {"fps", fps},
           {"amplitude_map",
            {{"base", amp_base}, {"extraversion", amp_extraversion}, {"openness", amp_openness}}},
           {"tempo_map", {{"cadence_frames", cadence_frames}}},
           {"fixed_relationship", nullptr},
           {"fixed_personality", nullptr}};
    if (fixed_relationship) j["fixed_relationship"] = *fixed_relationship;
    if (fixed_personality) j["fixed_personality"] = *fixed_personality;
    return j;
}

SynthConfig SynthConfig::from_json(const json& j) {
    static const std::vector<std::string> known = {
        "clip_length_frames", "clips", "seed", "noise_level", "fps",
        "amplitude_map",      "tempo_map", "fixed_relationship", "fixed_personality"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("synthetic config: unknown key '" + it.key() + "'");
    }
    SynthConfig c;
    c.clip_length_frames = j.value("clip_length_frames", c.clip_length_frames);
    c.clips = j.value("clips", c.clips);
    c.seed = j.value("seed", c.seed);
    c.noise_level = j.value("noise_level", c.noise_level);
    c.fps = j.value("fps", c.fps);
    if (j.contains("amplitude_map")) {
        const json& a = j["amplitude_map"];
        for (auto it = a.begin(); it != a.end(); ++it)
            if (it.key() != "base" && it.key() != "extraversion" && it.key() != "openness")
                throw ConfigError("synthetic config: unknown key 'amplitude_map." + it.key() + "'");
        c.amp_base = a.value("base", c.amp_base);
        c.amp_extraversion = a.value("extraversion", c.amp_extraversion);
        c.amp_openness = a.value("openness", c.amp_openness);
    }
    if (j.contains("tempo_map")) {
        const json& t = j["tempo_map"];
        for (auto it = t.begin(); it != t.end(); ++it)
            if (it.key() != "cadence_frames")
                throw ConfigError("synthetic config: unknown key 'tempo_map." + it.key() + "'");
        if (t.contains("cadence_frames")) {
            auto v = t["cadence_frames"].get<std::vector<int>>();
            if (v.size() != 4) throw ConfigError("synthetic: cadence_frames must list 4 values");
            std::copy(v.begin(), v.end(), c.cadence_frames.begin());
        }
    }
    if (j.contains("fixed_relationship") && !j["fixed_relationship"].is_null())
        c.fixed_relationship = j["fixed_relationship"].get<int>();
    if (j.contains("fixed_personality") && !j["fixed_personality"].is_null()) {
        auto v = j["fixed_personality"].get<std::vector<double>>();
        if (v.size() != 5) throw ConfigError("synthetic: fixed_personality must list 5 values");
        std::array<double, 5> arr;
        std::copy(v.begin(), v.end(), arr.begin());
        c.fixed_personality = arr;
    }
    c.validate();
    return c;
}

Dataset generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    const GlobalDirections dirs = draw_directions(cfg.seed);
    const int t = cfg.clip_length_frames;

    Dataset ds;
    ds.config = cfg.to_json();
    ds.seed = cfg.seed;
    ds.fps = cfg.fps;
    ds.clips.reserve(static_cast<std::size_t>(cfg.clips));

    for (int ci = 0; ci < cfg.clips; ++ci) {
        const ClipDraws d = draw_clip(cfg, static_cast<std::uint64_t>(ci));
        const int cadence = cfg.cadence_frames[static_cast<std::size_t>(d.relationship)];

        Tensor mask({t, 2});
        std::vector<double> env[2];
        for (int s = 0; s < 2; ++s) env[s].resize(static_cast<std::size_t>(t));
        for (int ti = 0; ti < t; ++ti) {
            for (int s = 0; s < 2; ++s) {
                const bool speaking = ((ti + d.offset) / cadence) % 2 == s;
                mask.at(ti, s) = speaking ? 1.0 : 0.0;
                env[s][static_cast<std::size_t>(ti)] =
                    speaking ? 0.6 + 0.4 * std::sin(2.0 * M_PI * d.f_env[s] * ti / cfg.fps +
                                                    d.phi_env[s])
                             : 0.0;
            }
        }

        DyadSample sample;
        sample.turn_mask = mask;
        double f_det0[3], phi_det0[3], f_det1[3], phi_det1[3];
        std::copy(d.f_det[0], d.f_det[0] + 3, f_det0);
        std::copy(d.phi_det[0], d.phi_det[0] + 3, phi_det0);
        std::copy(d.f_det[1], d.f_det[1] + 3, f_det1);
        std::copy(d.phi_det[1], d.phi_det[1] + 3, phi_det1);
        sample.audio_self = build_audio_track(dirs, env[0], f_det0, phi_det0, cfg.fps);
        sample.audio_other = build_audio_track(dirs, env[1], f_det1, phi_det1, cfg.fps);

        const double amp = cfg.amp_base + cfg.amp_extraversion * d.personality[0] +
                           cfg.amp_openness * d.personality[4];
        for (int s = 0; s < 2; ++s) {
            Tensor frames({t, kJointCount, kFeatureDim});
            const int opp = 1 - s;
            for (int ti = 0; ti < t; ++ti) {
                const double drive = 0.7 * env[s][static_cast<std::size_t>(ti)] +
                                     0.3 * env[opp][static_cast<std::size_t>(ti)];
                for (int jj = 0; jj < kJointCount; ++jj) {
                    const double wig =
                        std::sin(M_PI * static_cast<double>(ti) / cadence +
                                 d.psi[static_cast<std::size_t>(s * kJointCount + jj)]) *
                        dirs.w[static_cast<std::size_t>(jj)];
                    const double eta =
                        d.noise[static_cast<std::size_t>((s * t + ti) * kJointCount + jj)];
                    const double theta = amp * drive * dirs.b[static_cast<std::size_t>(jj)] +
                                         amp * 0.25 * wig + cfg.noise_level * eta;
                    const auto& ax = dirs.axis[static_cast<std::size_t>(jj)];
                    Mat3 rot = axis_angle_to_matrix({theta * ax[0], theta * ax[1], theta * ax[2]});
                    auto r6 = matrix_to_rot6d(rot);
                    for (int cc = 0; cc < kFeatureDim; ++cc) frames.at(ti, jj, cc) = r6[static_cast<std::size_t>(cc)];
                }
            }
            quantize_f32(frames);
            if (s == 0)
                sample.gesture_self = GestureSequence::from_frames(std::move(frames), cfg.fps);
            else
                sample.gesture_other = GestureSequence::from_frames(std::move(frames), cfg.fps);
        }

        sample.relationship = Tensor({4});
        sample.relationship[d.relationship] = 1.0;
        sample.personality = Tensor({5});
        for (int i = 0; i < 5; ++i) sample.personality[i] = d.personality[static_cast<std::size_t>(i)];

        quantize_f32(sample.audio_self);
        quantize_f32(sample.audio_other);
        quantize_f32(sample.personality);
        ds.clips.push_back(std::move(sample));
    }
    return ds;
}

void save_dataset(const Dataset& dataset, const std::string& dir) {
    fs::create_directories(dir);
    json manifest;
    manifest["schema_version"] = kDatasetSchemaVersion;
    manifest["kind"] = "dyadit-dataset";
    manifest["seed"] = dataset.seed;
    manifest["fps"] = dataset.fps;
    manifest["generated"] = dataset.generated;
    manifest["config"] = dataset.config;
    json clips = json::array();
    for (std::size_t i = 0; i < dataset.clips.size(); ++i) {
        const DyadSample& s = dataset.clips[i];
        const std::string prefix = "clip_" + std::to_string(i) + "_";
        json fields;
        auto put = [&](const std::string& name, const Tensor& t) {
            fields[name] = t.shape();
            write_f32_file((fs::path(dir) / (prefix + name + ".f32")).string(), t);
        };
        put("audio_self", s.audio_self);
        put("audio_other", s.audio_other);
        put("gesture_self", s.gesture_self.frames);
        put("gesture_other", s.gesture_other.frames);
        put("relationship", s.relationship);
        put("personality", s.personality);
        put("turn_mask", s.turn_mask);
        clips.push_back(json{{"index", i},
                             {"frames", s.gesture_other.length()},
                             {"audio_frames", s.audio_self.dim(0)},
                             {"fields", fields}});
    }
    manifest["clips"] = clips;
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw IoError("cannot write manifest.json in " + dir);
    out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw IoError("missing manifest.json in " + dir);
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw FormatError("invalid manifest.json in " + dir + ": " + e.what());
    }
    const int version = manifest.value("schema_version", -1);
    if (version != kDatasetSchemaVersion)
        throw FormatError("dataset schema version " + std::to_string(version) + ", expected " +
                          std::to_string(kDatasetSchemaVersion));

    Dataset ds;
    ds.seed = manifest.value("seed", 0ull);
    ds.fps = manifest.value("fps", kDefaultFps);
    ds.generated = manifest.value("generated", false);
    if (manifest.contains("config")) ds.config = manifest["config"];

    for (const json& clip : manifest["clips"]) {
        const auto index = clip["index"].get<std::size_t>();
        const std::string prefix = "clip_" + std::to_string(index) + "_";
        const json& fields = clip["fields"];
        auto get = [&](const std::string& name) {
            const auto shape = fields.at(name).get<std::vector<std::int64_t>>();
            return read_f32_file((fs::path(dir) / (prefix + name + ".f32")).string(), shape);
        };
        DyadSample s;
        s.audio_self = get("audio_self");
        s.audio_other = get("audio_other");
        s.gesture_self = GestureSequence::from_frames(get("gesture_self"), ds.fps);
        s.gesture_other = GestureSequence::from_frames(get("gesture_other"), ds.fps);
        s.relationship = get("relationship");
        s.personality = get("personality");
        s.turn_mask = get("turn_mask");
        ds.clips.push_back(std::move(s));
    }
    return ds;
}

namespace {

std::map<std::string, AudioProviderFn>& provider_registry() {
    static std::map<std::string, AudioProviderFn> registry;
    return registry;
}

std::mutex& provider_mutex() {
    static std::mutex m;
    return m;
}

Tensor synthetic_provider(const AudioSourceSpec& spec) {
    if (spec.frames < 1) throw ConfigError("audio provider: frames must be >= 1");
    const GlobalDirections dirs = draw_directions(spec.seed);
    Rng rng(derive_seed(spec.seed, 0));
    double f_env = rng.uniform(0.8, 1.6);
    double phi_env = rng.uniform(0.0, 2.0 * M_PI);
    double f_det[3], phi_det[3];
    for (int k = 0; k < 3; ++k) {
        f_det[k] = rng.uniform(2.0, 8.0);
        phi_det[k] = rng.uniform(0.0, 2.0 * M_PI);
    }
    std::vector<double> env(static_cast<std::size_t>(spec.frames));
    for (int ti = 0; ti < spec.frames; ++ti) {
        double m = 1.0;
        if (spec.turn_mask) {
            if (spec.turn_mask->size() != spec.frames)
                throw ShapeError("audio provider: turn_mask length mismatch");
            m = (*spec.turn_mask)[ti];
        }
        env[static_cast<std::size_t>(ti)] =
            m != 0.0 ? 0.6 + 0.4 * std::sin(2.0 * M_PI * f_env * ti / spec.fps + phi_env) : 0.0;
    }
    Tensor track = build_audio_track(dirs, env, f_det, phi_det, spec.fps);
    quantize_f32(track);
    return track;
}

}  // namespace

void register_audio_provider(const std::string& provider_id, AudioProviderFn fn) {
    std::lock_guard<std::mutex> lk(provider_mutex());
    provider_registry()[provider_id] = std::move(fn);
}

Tensor audio_features(const std::string& provider_id, const AudioSourceSpec& spec) {
    AudioProviderFn fn;
    {
        std::lock_guard<std::mutex> lk(provider_mutex());
        auto& registry = provider_registry();
        if (registry.empty()) registry["synthetic"] = synthetic_provider;
        auto it = registry.find(provider_id);
        if (it == registry.end()) throw UnknownProvider("unknown audio provider: " + provider_id);
        fn = it->second;
    }
    Tensor track = fn(spec);
    if (track.rank() != 2 || track.dim(1) != kAudioFeatureDim)
        throw ShapeError("audio provider must emit [frames,768] tracks");
    return track;
}

Tensor synthetic_silence_embedding(std::uint64_t seed) {
    Tensor row = draw_directions(seed).c_sil;
    quantize_f32(row);
    return row;
}

}  // namespace dyadit
