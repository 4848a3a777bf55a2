// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

namespace gags::cli {

void cmd_gen_scene(const nlohmann::json& cfg);
void cmd_render(const nlohmann::json& cfg);
void cmd_prompt(const nlohmann::json& cfg);
void cmd_segment(const nlohmann::json& cfg);
void cmd_distill(const nlohmann::json& cfg);
void cmd_query(const nlohmann::json& cfg);
void cmd_eval(const nlohmann::json& cfg);

}  // namespace gags::cli
