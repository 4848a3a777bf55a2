// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace gags {

/// FNV-1a over the file bytes, as a 16-hex-digit string.
std::string hash_file(const std::string& path);

/// Rejects unknown keys so config typos fail loudly.
void check_config_keys(const nlohmann::json& j,
                       const std::vector<std::string>& allowed,
                       const std::string& where);

void require_schema_version(const nlohmann::json& j);

/// Every command writes one of these next to its outputs: the exact config,
/// the hash of every input file, and the tool version.
struct Manifest {
    std::string command;
    nlohmann::json config;
    std::vector<std::string> inputs;

    void write(const std::string& output_dir) const;
};

nlohmann::json load_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j, int indent = 2);

}  // namespace gags
