// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gags/errors.hpp"
#include "gags/image.hpp"

namespace gags {

/// Canonical-phrase softmax ratio:
/// min_i exp(f.t) / (exp(f.c_i) + exp(f.t)); strictly inside (0, 1).
double relevancy(const Eigen::VectorXd& f_clip, const Eigen::VectorXd& f_text,
                 const std::array<Eigen::VectorXd, 4>& canonical);

/// k x k mean filter over valid pixels only (k odd); invalid pixels are
/// excluded from every window average and stay invalid.
Image<double> mean_filter(const Image<double>& raw,
                          const Image<std::uint8_t>& valid, int k);

struct RelevancyMap {
    Image<double> raw;
    Image<double> smoothed;
    Image<double> normalized;  // min-max over valid pixels, in [0, 1]
    Image<std::uint8_t> valid;
    bool degenerate = false;   // constant map: normalized forced to 0
};

/// Relevancy of every valid pixel of a decoded feature map against one text
/// embedding. By default the relevancy scores are smoothed; with
/// smooth_features the feature map is mean-filtered (and renormalized)
/// before scoring instead.
RelevancyMap relevancy_map(const Eigen::MatrixXd& f_clip, int width, int height,
                           const Image<std::uint8_t>& valid,
                           const Eigen::VectorXd& f_text,
                           const std::array<Eigen::VectorXd, 4>& canonical,
                           int smooth_kernel = 5, bool smooth_features = false);

/// Argmax of the smoothed map over valid pixels; row-major first on ties.
std::pair<int, int> localize(const RelevancyMap& map);

/// Threshold mask over the normalized map (>= tau), restricted to valid
/// pixels. Degenerate maps yield an empty mask.
Image<std::uint8_t> segment(const RelevancyMap& map, double tau = 0.4);

struct QueryResult {
    std::string label;
    int loc_x = 0, loc_y = 0;
    double peak = 0.0;
    Image<std::uint8_t> mask;
    bool degenerate = false;
};

struct GtBox {
    int x0 = 0, y0 = 0, x1 = -1, y1 = -1;
    bool contains(int x, int y) const {
        return x >= x0 && x <= x1 && y >= y0 && y <= y1;
    }
    bool empty() const { return x1 < x0 || y1 < y0; }
};

struct EvalInput {
    std::string query;
    int view = 0;
    int loc_x = 0, loc_y = 0;
    Image<std::uint8_t> pred_mask;
    GtBox box;
    Image<std::uint8_t> gt_mask;
};

struct EvalItem {
    std::string query;
    int view = 0;
    bool hit = false;
    double iou = 0.0;
    bool both_empty = false;  // IoU = 1 by convention, flagged
};

struct EvalRecord {
    std::vector<EvalItem> items;
    double mAcc = 0.0;
    double mIoU = 0.0;
};

double mask_iou(const Image<std::uint8_t>& a, const Image<std::uint8_t>& b,
                bool& both_empty);

/// Localization hits (inside the inclusive GT box) and mask IoU per entry,
/// aggregated into mAcc / mIoU.
EvalRecord eval_metrics(const std::vector<EvalInput>& entries);

GtBox mask_bbox(const Image<std::uint8_t>& mask);

}  // namespace gags
