// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#include "gags/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <memory>

#include "gags/errors.hpp"

namespace gags {

std::string hash_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw DataError("cannot open input for hashing: " + path);
    std::uint64_t h = 1469598103934665603ull;
    unsigned char buffer[16384];
    std::size_t n;
    while ((n = std::fread(buffer, 1, sizeof buffer, f)) > 0)
        for (std::size_t i = 0; i < n; ++i)
            h = (h ^ buffer[i]) * 1099511628211ull;
    std::fclose(f);
    char out[17];
    std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
    return out;
}

void check_config_keys(const nlohmann::json& j,
                       const std::vector<std::string>& allowed,
                       const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (const auto& a : allowed)
            if (key == a) {
                known = true;
                break;
            }
        if (!known) throw ConfigError(where + ": unknown config key '" + key + "'");
    }
}

void require_schema_version(const nlohmann::json& j) {
    if (!j.contains("schema_version"))
        throw ConfigError("config missing schema_version");
    if (j.at("schema_version").get<int>() != 1)
        throw ConfigError("unsupported schema_version");
}

void Manifest::write(const std::string& output_dir) const {
    nlohmann::json hashes = nlohmann::json::object();
    for (const auto& path : inputs) hashes[path] = hash_file(path);
    nlohmann::json j = {{"command", command},
                        {"schema_version", 1},
                        {"tool_version", "0.1.0"},
                        {"config", config},
                        {"inputs", hashes}};
    write_json_file(output_dir + "/manifest.json", j);
}

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open JSON file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("malformed JSON in " + path + ": " + e.what());
    }
    return j;
}

void write_json_file(const std::string& path, const nlohmann::json& j, int indent) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write JSON file: " + path);
    out << j.dump(indent) << "\n";
}

}  // namespace gags
