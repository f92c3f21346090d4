#pragma once

#include <initializer_list>
#include <string>

#include "dyadit/errors.hpp"

#include "json.hpp"

namespace dyadit {

// Rejects unknown keys: every key in j must appear in allowed.
inline void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& scope) {
    if (!j.is_object()) {
        if (j.is_null()) return;
        throw ConfigError(scope + ": expected a JSON object");
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError(scope + ": unknown key '" + it.key() + "'");
    }
}

// Applies a dotted-key override (e.g. "training.lr=0.01") onto a JSON object,
// parsing the value as JSON when possible and as a string otherwise.
inline void apply_override(nlohmann::json& config, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + spec + "' must have the form key=value");
    const std::string key = spec.substr(0, eq);
    const std::string value = spec.substr(eq + 1);
    if (key.empty()) throw ConfigError("override '" + spec + "' has an empty key");

    nlohmann::json* node = &config;
    std::size_t start = 0;
    for (;;) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
        if (part.empty()) throw ConfigError("override '" + spec + "' has an empty key segment");
        if (dot == std::string::npos) {
            auto parsed = nlohmann::json::parse(value, nullptr, false);
            (*node)[part] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

}  // namespace dyadit
