// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#include "gags/checkpoint.hpp"

#include <filesystem>

#include "gags/manifest.hpp"
#include "gags/tensor_file.hpp"

namespace gags {

namespace {

const char* kTensorNames[6] = {"w1", "w2", "w3", "b1", "b2", "b3"};

}  // namespace

void save_decoder(const Decoderd& decoder, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const Eigen::MatrixXd tensors[6] = {decoder.w1, decoder.w2, decoder.w3,
                                        decoder.b1, decoder.b2, decoder.b3};
    nlohmann::json files = nlohmann::json::object();
    for (int k = 0; k < 6; ++k) {
        std::string name = std::string(kTensorNames[k]) + ".tnsr";
        write_tensor(dir + "/" + name, TensorFile::from_matrix(tensors[k]));
        files[kTensorNames[k]] = name;
    }
    write_json_file(dir + "/decoder.json",
                    {{"schema_version", 1},
                     {"feature_dim", decoder.feature_dim},
                     {"clip_dim", decoder.clip_dim},
                     {"hidden", decoder.hidden},
                     {"tensors", files}});
}

Decoderd load_decoder(const std::string& dir) {
    nlohmann::json j = load_json_file(dir + "/decoder.json");
    Decoderd dec;
    dec.feature_dim = j.at("feature_dim").get<int>();
    dec.clip_dim = j.at("clip_dim").get<int>();
    dec.hidden = j.at("hidden").get<int>();
    auto load = [&](const char* name) {
        std::string file = j.at("tensors").at(name).get<std::string>();
        return read_tensor(dir + "/" + file).to_matrix();
    };
    dec.w1 = load("w1");
    dec.w2 = load("w2");
    dec.w3 = load("w3");
    dec.b1 = load("b1");
    dec.b2 = load("b2");
    dec.b3 = load("b3");
    if (dec.w1.rows() != dec.hidden || dec.w1.cols() != dec.feature_dim ||
        dec.w3.rows() != dec.clip_dim + 3 || dec.w3.cols() != dec.hidden)
        throw DataError("decoder checkpoint shapes do not match its manifest");
    return dec;
}

}  // namespace gags
