// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#include "gags/query.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace gags {

double relevancy(const Eigen::VectorXd& f_clip, const Eigen::VectorXd& f_text,
                 const std::array<Eigen::VectorXd, 4>& canonical) {
    double text_exp = std::exp(f_clip.dot(f_text));
    double result = 1.0;
    for (const auto& canon : canonical) {
        if (canon.size() == 0) throw DataError("relevancy: empty canonical set");
        double ratio = text_exp / (std::exp(f_clip.dot(canon)) + text_exp);
        result = std::min(result, ratio);
    }
    return result;
}

Image<double> mean_filter(const Image<double>& raw,
                          const Image<std::uint8_t>& valid, int k) {
    if (k < 1 || k % 2 == 0) throw DataError("mean filter kernel must be odd");
    const int w = raw.width(), h = raw.height();
    if (!raw.same_shape(valid)) throw DataError("mean filter shape mismatch");
    const int r = k / 2;

    // summed-area tables over raw*valid and the valid counts
    std::vector<double> sat(static_cast<std::size_t>(w + 1) * (h + 1), 0.0);
    std::vector<long> cnt(static_cast<std::size_t>(w + 1) * (h + 1), 0);
    auto s_at = [&](int x, int y) -> double& {
        return sat[static_cast<std::size_t>(y) * (w + 1) + x];
    };
    auto c_at = [&](int x, int y) -> long& {
        return cnt[static_cast<std::size_t>(y) * (w + 1) + x];
    };
    for (int y = 1; y <= h; ++y)
        for (int x = 1; x <= w; ++x) {
            bool ok = valid(x - 1, y - 1) != 0;
            s_at(x, y) = (ok ? raw(x - 1, y - 1) : 0.0) + s_at(x - 1, y) +
                         s_at(x, y - 1) - s_at(x - 1, y - 1);
            c_at(x, y) = (ok ? 1 : 0) + c_at(x - 1, y) + c_at(x, y - 1) -
                         c_at(x - 1, y - 1);
        }

    Image<double> out(w, h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!valid(x, y)) continue;
            int x0 = std::max(0, x - r), x1 = std::min(w - 1, x + r);
            int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
            double sum = s_at(x1 + 1, y1 + 1) - s_at(x0, y1 + 1) -
                         s_at(x1 + 1, y0) + s_at(x0, y0);
            long n = c_at(x1 + 1, y1 + 1) - c_at(x0, y1 + 1) - c_at(x1 + 1, y0) +
                     c_at(x0, y0);
            out(x, y) = sum / static_cast<double>(n);
        }
    return out;
}

RelevancyMap relevancy_map(const Eigen::MatrixXd& f_clip, int width, int height,
                           const Image<std::uint8_t>& valid,
                           const Eigen::VectorXd& f_text,
                           const std::array<Eigen::VectorXd, 4>& canonical,
                           int smooth_kernel, bool smooth_features) {
    if (f_clip.cols() != static_cast<Eigen::Index>(width) * height)
        throw DataError("relevancy_map: feature map size mismatch");
    RelevancyMap map;
    map.valid = valid;
    map.raw = Image<double>(width, height, 0.0);

    const Eigen::MatrixXd* features = &f_clip;
    Eigen::MatrixXd smoothed_features;
    if (smooth_features) {
        smoothed_features.resize(f_clip.rows(), f_clip.cols());
        Image<double> channel(width, height, 0.0);
        for (Eigen::Index c = 0; c < f_clip.rows(); ++c) {
            for (Eigen::Index p = 0; p < f_clip.cols(); ++p)
                channel[static_cast<std::size_t>(p)] = f_clip(c, p);
            Image<double> filtered = mean_filter(channel, valid, smooth_kernel);
            for (Eigen::Index p = 0; p < f_clip.cols(); ++p)
                smoothed_features(c, p) = filtered[static_cast<std::size_t>(p)];
        }
        for (Eigen::Index p = 0; p < smoothed_features.cols(); ++p) {
            double n = smoothed_features.col(p).norm();
            if (n > 1e-12) smoothed_features.col(p) /= n;
        }
        features = &smoothed_features;
    }

    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            if (!valid(x, y)) continue;
            Eigen::Index p = static_cast<Eigen::Index>(y) * width + x;
            map.raw(x, y) = relevancy(features->col(p), f_text, canonical);
        }

    map.smoothed = smooth_features ? map.raw : mean_filter(map.raw, valid, smooth_kernel);

    double lo = std::numeric_limits<double>::max();
    double hi = std::numeric_limits<double>::lowest();
    bool any = false;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            if (!valid(x, y)) continue;
            lo = std::min(lo, map.smoothed(x, y));
            hi = std::max(hi, map.smoothed(x, y));
            any = true;
        }
    map.normalized = Image<double>(width, height, 0.0);
    if (!any) throw DataError("relevancy_map: no valid pixels");
    if (hi - lo < 1e-12) {
        map.degenerate = true;
        std::fprintf(stderr,
                     "[gags] warning: constant relevancy map, normalized set to 0\n");
    } else {
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                if (valid(x, y))
                    map.normalized(x, y) = (map.smoothed(x, y) - lo) / (hi - lo);
    }
    return map;
}

std::pair<int, int> localize(const RelevancyMap& map) {
    int best_x = -1, best_y = -1;
    double best = std::numeric_limits<double>::lowest();
    for (int y = 0; y < map.smoothed.height(); ++y)
        for (int x = 0; x < map.smoothed.width(); ++x) {
            if (!map.valid(x, y)) continue;
            if (map.smoothed(x, y) > best) {
                best = map.smoothed(x, y);
                best_x = x;
                best_y = y;
            }
        }
    if (best_x < 0) throw DataError("localize: all pixels invalid");
    return {best_x, best_y};
}

Image<std::uint8_t> segment(const RelevancyMap& map, double tau) {
    Image<std::uint8_t> mask(map.normalized.width(), map.normalized.height(), 0);
    if (map.degenerate) return mask;
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (map.valid(x, y) && map.normalized(x, y) >= tau) mask(x, y) = 1;
    return mask;
}

double mask_iou(const Image<std::uint8_t>& a, const Image<std::uint8_t>& b,
                bool& both_empty) {
    if (!a.same_shape(b)) throw DataError("IoU: mask shape mismatch");
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        bool pa = a[i] != 0, pb = b[i] != 0;
        inter += pa && pb;
        uni += pa || pb;
    }
    both_empty = uni == 0;
    if (both_empty) return 1.0;  // by convention, flagged by the caller
    return static_cast<double>(inter) / static_cast<double>(uni);
}

EvalRecord eval_metrics(const std::vector<EvalInput>& entries) {
    EvalRecord record;
    if (entries.empty()) throw DataError("eval_metrics: no entries");
    double iou_sum = 0.0;
    long hits = 0;
    for (const auto& e : entries) {
        EvalItem item;
        item.query = e.query;
        item.view = e.view;
        item.hit = e.box.contains(e.loc_x, e.loc_y);
        item.iou = mask_iou(e.pred_mask, e.gt_mask, item.both_empty);
        hits += item.hit ? 1 : 0;
        iou_sum += item.iou;
        record.items.push_back(std::move(item));
    }
    record.mAcc = static_cast<double>(hits) / static_cast<double>(entries.size());
    record.mIoU = iou_sum / static_cast<double>(entries.size());
    return record;
}

GtBox mask_bbox(const Image<std::uint8_t>& mask) {
    GtBox box;
    box.x0 = mask.width();
    box.y0 = mask.height();
    box.x1 = -1;
    box.y1 = -1;
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask(x, y)) {
                box.x0 = std::min(box.x0, x);
                box.y0 = std::min(box.y0, y);
                box.x1 = std::max(box.x1, x);
                box.y1 = std::max(box.y1, y);
            }
    return box;
}

}  // namespace gags
