// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "gags/decoder.hpp"

namespace gags {

/// Decoder checkpoint: one tensor file per parameter block plus a JSON
/// manifest carrying the layer sizes.
void save_decoder(const Decoderd& decoder, const std::string& dir);
Decoderd load_decoder(const std::string& dir);

}  // namespace gags
