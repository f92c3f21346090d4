#include "dyadit/checkpoint.hpp"

#include <filesystem>
#include <fstream>

namespace dyadit {

namespace fs = std::filesystem;
using nlohmann::json;

void write_f32_file(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    std::vector<float> buf(static_cast<std::size_t>(t.size()));
    for (std::int64_t i = 0; i < t.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(t[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw IoError("write failed: " + path);
}

Tensor read_f32_file(const std::string& path, const std::vector<std::int64_t>& shape) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::int64_t expected = 1;
    for (auto d : shape) expected *= d;
    const auto bytes = static_cast<std::int64_t>(in.tellg());
    if (bytes != expected * static_cast<std::int64_t>(sizeof(float)))
        throw FormatError("tensor file " + path + " has " + std::to_string(bytes) + " bytes, expected " +
                          std::to_string(expected * sizeof(float)));
    in.seekg(0);
    std::vector<float> buf(static_cast<std::size_t>(expected));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw IoError("read failed: " + path);
    Tensor t(shape);
    for (std::int64_t i = 0; i < expected; ++i) t[i] = static_cast<double>(buf[static_cast<std::size_t>(i)]);
    return t;
}

void save_checkpoint(const std::string& dir, const std::string& kind, const json& config,
                     const nn::ParameterStore& params) {
    fs::create_directories(dir);
    json meta;
    meta["format_version"] = kCheckpointFormatVersion;
    meta["kind"] = kind;
    meta["config"] = config;
    json plist = json::array();
    for (const auto& [name, var] : params.items()) {
        json p;
        p["name"] = name;
        p["shape"] = var->value.shape();
        p["file"] = name + ".f32";
        plist.push_back(p);
        write_f32_file((fs::path(dir) / (name + ".f32")).string(), var->value);
    }
    meta["params"] = plist;
    std::ofstream out(fs::path(dir) / "meta.json");
    if (!out) throw IoError("cannot write meta.json in " + dir);
    out << meta.dump(2) << "\n";
}

json read_checkpoint_meta(const std::string& dir, const std::string& expected_kind) {
    std::ifstream in(fs::path(dir) / "meta.json");
    if (!in) throw IoError("missing checkpoint meta.json in " + dir);
    json meta;
    try {
        in >> meta;
    } catch (const json::exception& e) {
        throw FormatError("invalid meta.json in " + dir + ": " + e.what());
    }
    const int version = meta.value("format_version", -1);
    if (version != kCheckpointFormatVersion)
        throw FormatError("checkpoint format version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointFormatVersion));
    const std::string kind = meta.value("kind", "");
    if (kind != expected_kind)
        throw FormatError("checkpoint kind '" + kind + "', expected '" + expected_kind + "'");
    return meta["config"];
}

void load_checkpoint_params(const std::string& dir, nn::ParameterStore& params) {
    std::ifstream in(fs::path(dir) / "meta.json");
    if (!in) throw IoError("missing checkpoint meta.json in " + dir);
    json meta;
    in >> meta;
    for (const auto& p : meta["params"]) {
        const std::string name = p["name"].get<std::string>();
        const auto shape = p["shape"].get<std::vector<std::int64_t>>();
        nn::Var var = params.find(name);
        if (var->value.shape() != shape)
            throw FormatError("checkpoint tensor " + name + " has shape mismatch");
        var->value = read_f32_file((fs::path(dir) / p["file"].get<std::string>()).string(), shape);
    }
}

}  // namespace dyadit
