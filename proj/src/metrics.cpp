#include "miiad/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace miiad::metrics {

RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument("roc: scores/labels size mismatch");
    long long pos = 0, neg = 0;
    for (int l : labels) (l ? pos : neg)++;
    if (pos == 0 || neg == 0) throw std::invalid_argument("roc: both classes must be present");

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    RocCurve rc;
    rc.thresholds.push_back(scores[order[0]] + 1.0);
    rc.fpr.push_back(0.0);
    rc.tpr.push_back(0.0);
    long long tp = 0, fp = 0;
    size_t i = 0;
    while (i < order.size()) {
        const double t = scores[order[i]];
        while (i < order.size() && scores[order[i]] == t) {
            (labels[order[i]] ? tp : fp)++;
            ++i;
        }
        rc.thresholds.push_back(t);
        rc.fpr.push_back(double(fp) / double(neg));
        rc.tpr.push_back(double(tp) / double(pos));
    }
    return rc;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    const RocCurve rc = roc_curve(scores, labels);
    double area = 0.0;
    for (size_t i = 1; i < rc.fpr.size(); ++i)
        area += 0.5 * (rc.tpr[i] + rc.tpr[i - 1]) * (rc.fpr[i] - rc.fpr[i - 1]);
    return area;
}

double pixel_auroc(const std::vector<Tensor>& maps, const std::vector<BinaryMap>& masks) {
    if (maps.size() != masks.size() || maps.empty())
        throw std::invalid_argument("pixel_auroc: maps/masks size mismatch");
    std::vector<double> scores;
    std::vector<int> labels;
    for (size_t s = 0; s < maps.size(); ++s) {
        if (maps[s].shape[0] != masks[s].h || maps[s].shape[1] != masks[s].w)
            throw std::invalid_argument("pixel_auroc: map/mask shape mismatch");
        for (size_t i = 0; i < maps[s].v.size(); ++i) {
            scores.push_back(maps[s].v[i]);
            labels.push_back(masks[s].v[i] ? 1 : 0);
        }
    }
    return auroc(scores, labels);
}

int label_regions(const BinaryMap& mask, std::vector<int>& labels, bool eight_connectivity) {
    labels.assign(mask.v.size(), -1);
    int next = 0;
    std::vector<int> stack;
    const int dr8[] = {-1, -1, -1, 0, 0, 1, 1, 1};
    const int dc8[] = {-1, 0, 1, -1, 1, -1, 0, 1};
    const int dr4[] = {-1, 0, 0, 1};
    const int dc4[] = {0, -1, 1, 0};
    const int nn = eight_connectivity ? 8 : 4;
    const int* dr = eight_connectivity ? dr8 : dr4;
    const int* dc = eight_connectivity ? dc8 : dc4;
    for (int r = 0; r < mask.h; ++r)
        for (int c = 0; c < mask.w; ++c) {
            const int idx = r * mask.w + c;
            if (!mask.v[size_t(idx)] || labels[size_t(idx)] >= 0) continue;
            labels[size_t(idx)] = next;
            stack.assign(1, idx);
            while (!stack.empty()) {
                const int cur = stack.back();
                stack.pop_back();
                const int cr = cur / mask.w, cc = cur % mask.w;
                for (int k = 0; k < nn; ++k) {
                    const int nr = cr + dr[k], nc = cc + dc[k];
                    if (nr < 0 || nr >= mask.h || nc < 0 || nc >= mask.w) continue;
                    const int ni = nr * mask.w + nc;
                    if (mask.v[size_t(ni)] && labels[size_t(ni)] < 0) {
                        labels[size_t(ni)] = next;
                        stack.push_back(ni);
                    }
                }
            }
            ++next;
        }
    return next;
}

ProCurve pro_curve(const std::vector<Tensor>& maps, const std::vector<BinaryMap>& masks,
                   bool eight_connectivity) {
    if (maps.size() != masks.size() || maps.empty())
        throw std::invalid_argument("pro: maps/masks size mismatch");

    // pixel -> global region id (or -1), region sizes pooled over all samples
    struct Pixel {
        double score;
        int region;  // -1 for anomaly-free
    };
    std::vector<Pixel> pixels;
    std::vector<long long> region_size;
    long long n_neg = 0;
    for (size_t s = 0; s < maps.size(); ++s) {
        if (maps[s].shape[0] != masks[s].h || maps[s].shape[1] != masks[s].w)
            throw std::invalid_argument("pro: map/mask shape mismatch");
        std::vector<int> labels;
        const int n = label_regions(masks[s], labels, eight_connectivity);
        const int base = int(region_size.size());
        region_size.resize(size_t(base + n), 0);
        for (size_t i = 0; i < labels.size(); ++i) {
            const int rid = labels[i] >= 0 ? base + labels[i] : -1;
            if (rid >= 0)
                region_size[size_t(rid)]++;
            else
                ++n_neg;
            pixels.push_back({maps[s].v[i], rid});
        }
    }
    if (region_size.empty()) throw std::invalid_argument("pro: no anomalous region in ground truth");
    if (n_neg == 0) throw std::invalid_argument("pro: no anomaly-free pixels");

    std::sort(pixels.begin(), pixels.end(), [](const Pixel& a, const Pixel& b) { return a.score > b.score; });

    // incremental sweep over distinct score values (prediction = score >= t)
    ProCurve pc;
    pc.fpr.push_back(0.0);
    pc.pro.push_back(0.0);
    std::vector<long long> hit(region_size.size(), 0);
    double overlap_sum = 0.0;  // sum over regions of hit/size
    long long fp = 0;
    size_t i = 0;
    while (i < pixels.size()) {
        const double t = pixels[i].score;
        while (i < pixels.size() && pixels[i].score == t) {
            if (pixels[i].region >= 0) {
                const size_t r = size_t(pixels[i].region);
                hit[r]++;
                overlap_sum += 1.0 / double(region_size[r]);
            } else {
                ++fp;
            }
            ++i;
        }
        pc.fpr.push_back(double(fp) / double(n_neg));
        pc.pro.push_back(overlap_sum / double(region_size.size()));
    }
    return pc;
}

double aupro(const std::vector<Tensor>& maps, const std::vector<BinaryMap>& masks, double fpr_limit,
             bool eight_connectivity) {
    if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw std::invalid_argument("aupro: fpr_limit outside (0,1]");
    const ProCurve pc = pro_curve(maps, masks, eight_connectivity);
    double area = 0.0;
    for (size_t i = 1; i < pc.fpr.size(); ++i) {
        const double f0 = pc.fpr[i - 1], f1 = pc.fpr[i];
        const double p0 = pc.pro[i - 1], p1 = pc.pro[i];
        if (f0 >= fpr_limit) break;
        if (f1 <= fpr_limit) {
            area += 0.5 * (p0 + p1) * (f1 - f0);
        } else {
            // segment crosses the limit: interpolate pro at fpr_limit
            const double w = (fpr_limit - f0) / (f1 - f0);
            const double pl = p0 + w * (p1 - p0);
            area += 0.5 * (p0 + pl) * (fpr_limit - f0);
            break;
        }
    }
    return area / fpr_limit;
}

}  // namespace miiad::metrics
