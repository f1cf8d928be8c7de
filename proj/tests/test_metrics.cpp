#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "miiad/metrics.hpp"
#include "miiad/rng.hpp"

using namespace miiad;
using data::BinaryMap;
using metrics::aupro;
using metrics::auroc;
using metrics::pixel_auroc;

namespace {

// pairwise win-rate oracle: ties count one half
double auroc_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0;
    long long pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i)
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[i] != 1 || labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    return wins / double(pairs);
}

// exhaustive threshold-sweep oracle for the per-region-overlap area
double aupro_oracle(const std::vector<Tensor>& maps, const std::vector<BinaryMap>& masks,
                    double fpr_limit) {
    struct Region {
        std::vector<int> pixels;  // flat indices offset per sample
    };
    std::vector<std::vector<int>> labels_per(maps.size());
    std::vector<long long> region_size;
    std::vector<std::pair<double, int>> pixels;  // (score, region or -1)
    long long n_neg = 0;
    for (size_t s = 0; s < maps.size(); ++s) {
        const int n = metrics::label_regions(masks[s], labels_per[s], true);
        const int base = int(region_size.size());
        std::vector<long long> sizes(size_t(n), 0);
        for (size_t i = 0; i < labels_per[s].size(); ++i) {
            if (labels_per[s][i] >= 0)
                sizes[size_t(labels_per[s][i])]++;
            else
                ++n_neg;
            pixels.push_back({maps[s].v[i], labels_per[s][i] >= 0 ? base + labels_per[s][i] : -1});
        }
        for (long long sz : sizes) region_size.push_back(sz);
    }
    std::set<double> tset;
    for (const auto& p : pixels) tset.insert(p.first);
    std::vector<double> thresholds(tset.rbegin(), tset.rend());

    std::vector<double> fprs{0.0}, pros{0.0};
    for (double t : thresholds) {
        std::vector<long long> hit(region_size.size(), 0);
        long long fp = 0;
        for (const auto& p : pixels) {
            if (p.first < t) continue;
            if (p.second >= 0)
                hit[size_t(p.second)]++;
            else
                ++fp;
        }
        double pro = 0;
        for (size_t r = 0; r < region_size.size(); ++r) pro += double(hit[r]) / double(region_size[r]);
        pros.push_back(pro / double(region_size.size()));
        fprs.push_back(double(fp) / double(n_neg));
    }
    double area = 0.0;
    for (size_t i = 1; i < fprs.size(); ++i) {
        const double f0 = fprs[i - 1], f1 = fprs[i], p0 = pros[i - 1], p1 = pros[i];
        if (f0 >= fpr_limit) break;
        if (f1 <= fpr_limit) {
            area += 0.5 * (p0 + p1) * (f1 - f0);
        } else {
            const double w = (fpr_limit - f0) / (f1 - f0);
            area += 0.5 * (p0 + (p0 + w * (p1 - p0))) * (fpr_limit - f0);
            break;
        }
    }
    return area / fpr_limit;
}

BinaryMap mask_of(int h, int w, std::initializer_list<int> ones) {
    BinaryMap m(h, w, 0);
    for (int i : ones) m.v[size_t(i)] = 1;
    return m;
}

}  // namespace

TEST_CASE("auroc matches the hand example and symmetry") {
    const std::vector<double> scores = {0.1, 0.4, 0.35, 0.8};
    const std::vector<int> labels = {0, 0, 1, 1};
    CHECK(auroc(scores, labels) == doctest::Approx(0.75).epsilon(1e-12));

    std::vector<int> inverted = {1, 1, 0, 0};
    CHECK(auroc(scores, labels) + auroc(scores, inverted) == doctest::Approx(1.0).epsilon(1e-12));

    const std::vector<double> sep = {0.1, 0.2, 0.8, 0.9};
    CHECK(auroc(sep, labels) == doctest::Approx(1.0));

    CHECK_THROWS_AS(auroc({0.1, 0.2}, {1, 1}), std::invalid_argument);
}

TEST_CASE("auroc is invariant under strictly monotone transforms") {
    Rng rng(31);
    for (int rep = 0; rep < 30; ++rep) {
        std::vector<double> scores;
        std::vector<int> labels;
        const int n = 10 + int(rng.below(40));
        for (int i = 0; i < n; ++i) {
            scores.push_back(std::round(rng.normal() * 8.0) / 8.0);  // force ties
            labels.push_back(rng.uniform01() < 0.4 ? 1 : 0);
        }
        labels[0] = 1;
        labels[1] = 0;
        const double base = auroc(scores, labels);
        std::vector<double> warped = scores;
        for (auto& s : warped) s = std::exp(2.0 * s) + 3.0;
        CHECK(auroc(warped, labels) == doctest::Approx(base).epsilon(1e-12));
        CHECK(base == doctest::Approx(auroc_oracle(scores, labels)).epsilon(1e-12));
    }
}

TEST_CASE("pixel auroc trivial cases") {
    Tensor map({2, 2});
    map.v = {1.0, 0.0, 0.0, 0.0};
    BinaryMap mask = mask_of(2, 2, {0});
    CHECK(pixel_auroc({map}, {mask}) == doctest::Approx(1.0));

    Tensor flat = Tensor::full({2, 2}, 0.7);
    CHECK(pixel_auroc({flat}, {mask}) == doctest::Approx(0.5));
}

TEST_CASE("pixel auroc matches the pairwise oracle on 2x2 maps") {
    Rng rng(32);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor m1({2, 2}), m2({2, 2});
        for (auto& v : m1.v) v = std::round(rng.uniform01() * 4) / 4;
        for (auto& v : m2.v) v = std::round(rng.uniform01() * 4) / 4;
        BinaryMap k1 = mask_of(2, 2, {int(rng.below(4))});
        BinaryMap k2(2, 2, 0);
        std::vector<double> scores;
        std::vector<int> labels;
        for (int i = 0; i < 4; ++i) {
            scores.push_back(m1.v[size_t(i)]);
            labels.push_back(k1.v[size_t(i)]);
        }
        for (int i = 0; i < 4; ++i) {
            scores.push_back(m2.v[size_t(i)]);
            labels.push_back(0);
        }
        CHECK(pixel_auroc({m1, m2}, {k1, k2}) ==
              doctest::Approx(auroc_oracle(scores, labels)).epsilon(1e-12));
    }
}

TEST_CASE("aupro trivial orderings") {
    // perfect: every anomalous pixel above every normal pixel
    Tensor map({3, 3});
    map.v = {0.9, 0.8, 0.1, 0.1, 0.2, 0.1, 0.0, 0.1, 0.2};
    BinaryMap mask = mask_of(3, 3, {0, 1});
    CHECK(aupro({map}, {mask}, 0.3) == doctest::Approx(1.0).epsilon(1e-9));

    // worst: negated mask
    Tensor neg({3, 3});
    for (size_t i = 0; i < neg.v.size(); ++i) neg.v[i] = mask.v[i] ? 0.0 : 1.0;
    CHECK(aupro({neg}, {mask}, 0.3) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(aupro({neg}, {mask}, 1.0) == doctest::Approx(0.0).epsilon(1e-9));

    CHECK_THROWS_AS(aupro({map}, {BinaryMap(3, 3, 0)}, 0.3), std::invalid_argument);
    CHECK_THROWS_AS(aupro({map}, {mask}, 0.0), std::invalid_argument);
}

TEST_CASE("aupro 4x4 two-region fixture equals the exhaustive oracle") {
    // two regions: one of size 2 (8-connected diagonal), one of size 4
    BinaryMap mask(4, 4, 0);
    mask.at(2, 0) = 1;
    mask.at(3, 1) = 1;  // region A (diagonal pair, 8-connectivity joins it)
    mask.at(0, 3) = 1;
    mask.at(1, 3) = 1;
    mask.at(2, 3) = 1;
    mask.at(3, 3) = 1;  // region B (right column)
    std::vector<int> labels;
    CHECK(metrics::label_regions(mask, labels, true) == 2);
    CHECK(metrics::label_regions(mask, labels, false) == 3);  // 4-connectivity splits the diagonal

    Tensor map({4, 4});
    map.v = {0.95, 0.10, 0.20, 0.30,
             0.15, 0.40, 0.70, 0.25,
             0.05, 0.35, 0.90, 0.55,
             0.45, 0.12, 0.60, 0.80};
    for (double limit : {0.1, 0.3, 1.0})
        CHECK(aupro({map}, {mask}, limit) == doctest::Approx(aupro_oracle({map}, {mask}, limit)).epsilon(1e-6));
}

TEST_CASE("aupro matches the oracle on random instances and grows with fpr_limit") {
    Rng rng(33);
    for (int rep = 0; rep < 25; ++rep) {
        const int h = 3 + int(rng.below(6)), w = 3 + int(rng.below(6));
        Tensor map({h, w});
        BinaryMap mask(h, w, 0);
        for (auto& v : map.v) v = std::round(rng.uniform01() * 16) / 16;
        int ones = 0;
        for (auto& b : mask.v)
            if (rng.uniform01() < 0.3) {
                b = 1;
                ++ones;
            }
        if (ones == 0) mask.v[0] = 1;
        if (ones == int(mask.v.size())) mask.v[0] = 0;
        const double a3 = aupro({map}, {mask}, 0.3);
        CHECK(a3 == doctest::Approx(aupro_oracle({map}, {mask}, 0.3)).epsilon(1e-6));
        // unnormalized area is nondecreasing in the limit
        const double a5 = aupro({map}, {mask}, 0.5);
        CHECK(a5 * 0.5 + 1e-12 >= a3 * 0.3);
    }
}
