#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "miiad/point_encoder.hpp"
#include "miiad/rng.hpp"

using namespace miiad;
using namespace miiad::enc;

namespace {

PointSet make_set(const std::vector<std::array<double, 3>>& pts) {
    PointSet ps;
    ps.pts = pts;
    for (size_t i = 0; i < pts.size(); ++i) ps.origin.emplace_back(int(i), 0);
    return ps;
}

double dist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                     (a[2] - b[2]) * (a[2] - b[2]));
}

// independent greedy max-min trace
std::vector<int> fps_oracle(const PointSet& ps, int M, int start) {
    std::vector<int> chosen{start};
    while (int(chosen.size()) < M) {
        int best = -1;
        double best_d = -1.0;
        for (int i = 0; i < int(ps.size()); ++i) {
            if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
            double dmin = std::numeric_limits<double>::infinity();
            for (int c : chosen) dmin = std::min(dmin, dist(ps.pts[size_t(i)], ps.pts[size_t(c)]));
            if (dmin > best_d) {
                best_d = dmin;
                best = i;
            }
        }
        chosen.push_back(best);
    }
    return chosen;
}

PointSet random_set(int n, Rng& rng) {
    std::vector<std::array<double, 3>> pts;
    for (int i = 0; i < n; ++i)
        pts.push_back({std::round(rng.uniform01() * 4) / 4, std::round(rng.uniform01() * 4) / 4,
                       std::round(rng.uniform01() * 4) / 4});
    return make_set(pts);
}

}  // namespace

TEST_CASE("fps selects the line endpoints and matches the greedy oracle") {
    const PointSet line = make_set({{0, 0, 0}, {1, 0, 0}, {10, 0, 0}});
    const auto sel = farthest_point_sample_from(line, 2, 0);
    CHECK(sel == std::vector<int>{0, 2});

    // exhaustive selection returns every point
    const auto all = farthest_point_sample_from(line, 3, 1);
    std::vector<int> sorted = all;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2});

    Rng rng(41);
    for (int rep = 0; rep < 40; ++rep) {
        const int n = 4 + int(rng.below(9));  // <= 12 points
        const PointSet ps = random_set(n, rng);
        const int M = 1 + int(rng.below(4));
        const int start = int(rng.below(uint64_t(n)));
        CHECK(farthest_point_sample_from(ps, M, start) == fps_oracle(ps, M, start));
    }

    CHECK_THROWS_AS(farthest_point_sample_from(line, 4, 0), std::invalid_argument);
    // seeded determinism
    const PointSet ps = random_set(10, rng);
    CHECK(farthest_point_sample(ps, 4, 99) == farthest_point_sample(ps, 4, 99));
}

TEST_CASE("fps ties break toward the lowest index") {
    // all-identical points: every distance ties at zero
    const PointSet same = make_set({{1, 1, 1}, {1, 1, 1}, {1, 1, 1}, {1, 1, 1}});
    const auto sel = farthest_point_sample_from(same, 3, 2);
    CHECK(sel == std::vector<int>{2, 0, 1});
}

TEST_CASE("group_knn matches the exhaustive distance oracle") {
    // unit square, two opposite-corner centers
    const PointSet sq = make_set({{0, 0, 0}, {0, 1, 0}, {1, 0, 0}, {1, 1, 0}});
    const GroupSet gs = group_knn(sq, {0, 3}, 2);
    REQUIRE(gs.members.size() == 2);
    // each group: the corner itself plus one adjacent corner (tie -> lowest index)
    CHECK(gs.members[0][0] == 0);
    CHECK((gs.members[0][1] == 1 || gs.members[0][1] == 2));
    CHECK(gs.members[1][0] == 3);
    CHECK((gs.members[1][1] == 1 || gs.members[1][1] == 2));
    // re-centered local frames subtract the center
    CHECK(gs.local[0][0] == std::array<double, 3>{0, 0, 0});

    Rng rng(42);
    for (int rep = 0; rep < 25; ++rep) {
        const PointSet ps = random_set(3 + int(rng.below(9)), rng);
        const int k = 1 + int(rng.below(4));
        const int center = int(rng.below(ps.size()));
        const GroupSet g = group_knn(ps, {center}, k);
        // oracle: sort all points by (distance, index)
        std::vector<int> order(ps.size());
        for (size_t i = 0; i < ps.size(); ++i) order[i] = int(i);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double da = dist(ps.pts[size_t(a)], ps.pts[size_t(center)]);
            const double db = dist(ps.pts[size_t(b)], ps.pts[size_t(center)]);
            return da != db ? da < db : a < b;
        });
        for (int i = 0; i < std::min(k, int(ps.size())); ++i) CHECK(g.members[0][size_t(i)] == order[size_t(i)]);
    }
}

TEST_CASE("group_knn degenerate cases") {
    // k = 1: the group is exactly its center, at the origin of the local frame
    const PointSet ps = make_set({{0.3, 0.4, 0.5}, {2, 2, 2}});
    const GroupSet g1 = group_knn(ps, {0, 1}, 1);
    CHECK(g1.members[0] == std::vector<int>{0});
    CHECK(g1.local[0][0] == std::array<double, 3>{0, 0, 0});

    // k > N pads by repeating the nearest point
    const GroupSet gpad = group_knn(ps, {0}, 4);
    CHECK(gpad.members[0].size() == 4);
    CHECK(gpad.members[0][2] == gpad.members[0][3]);

    // all-identical points: groups identical and re-centered to zeros
    const PointSet same = make_set({{1, 1, 1}, {1, 1, 1}, {1, 1, 1}});
    const GroupSet gs = group_knn(same, {0, 1}, 2);
    for (const auto& loc : gs.local)
        for (const auto& p : loc) CHECK(p == std::array<double, 3>{0, 0, 0});
}

TEST_CASE("interpolation weights: hand oracle and convexity properties") {
    // centers at x=0 and x=3, point at x=1, eps=1 -> alpha = (3/5, 2/5)
    const PointSet ps = make_set({{0, 0, 0}, {3, 0, 0}, {1, 0, 0}});
    Tensor T({2, 2});
    T.v = {1.0, 0.0, 0.0, 1.0};
    const Tensor out = interpolate_features(ps, {0, 1}, T, 1.0);
    CHECK(out.at(2, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(out.at(2, 1) == doctest::Approx(0.4).epsilon(1e-12));

    // single group: every point copies the group feature
    const Tensor one = interpolate_features(ps, {0}, Tensor({1, 2}, {0.7, -0.2}), 1e-8);
    for (int j = 0; j < 3; ++j) {
        CHECK(one.at(j, 0) == doctest::Approx(0.7));
        CHECK(one.at(j, 1) == doctest::Approx(-0.2));
    }

    // equidistant point splits the two features evenly
    const PointSet mid = make_set({{0, 0, 0}, {2, 0, 0}, {1, 0, 0}});
    Tensor T2({2, 1});
    T2.v = {1.0, 3.0};
    const Tensor m = interpolate_features(mid, {0, 1}, T2, 1e-6);
    CHECK(m.at(2, 0) == doctest::Approx(2.0).epsilon(1e-5));

    // random configurations: weights sum to one => outputs stay inside the
    // coordinate-wise hull of the group features
    Rng rng(43);
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 3 + int(rng.below(10));
        const PointSet rps = random_set(n, rng);
        const int M = 1 + int(rng.below(uint64_t(std::min(n, 4))));
        std::vector<int> centers;
        for (int i = 0; i < M; ++i) centers.push_back(i);
        Tensor feats({M, 3});
        for (auto& v : feats.v) v = rng.normal();
        const Tensor res = interpolate_features(rps, centers, feats, 1e-8);
        for (int j = 0; j < n; ++j)
            for (int c = 0; c < 3; ++c) {
                double lo = feats.at(0, c), hi = feats.at(0, c);
                for (int i = 1; i < M; ++i) {
                    lo = std::min(lo, feats.at(i, c));
                    hi = std::max(hi, feats.at(i, c));
                }
                CHECK(res.at(j, c) >= lo - 1e-9);
                CHECK(res.at(j, c) <= hi + 1e-9);
            }
    }

    // the literal-denominator variant is not per-point normalized
    const Tensor lit = interpolate_features(ps, {0, 1}, T, 1.0, true);
    CHECK(lit.at(2, 0) + lit.at(2, 1) < 1.0);

    CHECK_THROWS_AS(interpolate_features(ps, {0, 1}, T, 0.0), std::invalid_argument);
}

TEST_CASE("project_to_grid pooling rules") {
    // grid 4x4, patch 2 -> 2x2 cells
    Tensor feats({3, 2});
    feats.v = {1.0, 2.0, 3.0, 4.0, 10.0, 20.0};
    const std::vector<std::pair<int, int>> origins = {{0, 0}, {0, 1}, {3, 3}};
    const Tensor grid = project_to_grid(feats, origins, 4, 4, 2);
    REQUIRE(grid.shape == std::vector<int>{4, 2});
    // two points in cell 0 -> mean
    CHECK(grid.at(0, 0) == doctest::Approx(2.0));
    CHECK(grid.at(0, 1) == doctest::Approx(3.0));
    // empty cells stay zero
    CHECK(grid.at(1, 0) == 0.0);
    CHECK(grid.at(2, 1) == 0.0);
    // single point in the last cell
    CHECK(grid.at(3, 0) == doctest::Approx(10.0));
    CHECK(grid.at(3, 1) == doctest::Approx(20.0));

    CHECK_THROWS_AS(project_to_grid(feats, origins, 4, 4, 3), std::invalid_argument);
}

TEST_CASE("encode_groups shape, invariance, and seed sensitivity") {
    PointEncoderConfig cfg;
    cfg.dim = 16;
    cfg.enc_blocks = 1;
    cfg.dec_blocks = 1;
    cfg.heads = 2;
    cfg.mlp_hidden = 8;
    cfg.num_groups = 2;
    cfg.group_size = 3;

    Rng rng(44);
    nn::ParamStore store;
    PointEncoder enc(store, cfg, rng);

    Rng prng(45);
    const PointSet ps = random_set(8, prng);
    const auto centers = farthest_point_sample_from(ps, 2, 0);
    GroupSet gs = group_knn(ps, centers, 3);

    const Tensor T = enc.encode_groups(ps, gs);
    CHECK(T.shape == std::vector<int>{2, 16});

    // permuting members within a group leaves the token unchanged (max-pool)
    GroupSet shuffled = gs;
    std::swap(shuffled.members[0][0], shuffled.members[0][2]);
    std::swap(shuffled.local[0][0], shuffled.local[0][2]);
    const Tensor T2 = enc.encode_groups(ps, shuffled);
    for (size_t i = 0; i < T.v.size(); ++i) CHECK(T2.v[i] == doctest::Approx(T.v[i]).epsilon(1e-12));

    // group reordering permutes rows (no sequence position encoding)
    GroupSet swapped = gs;
    std::swap(swapped.centers[0], swapped.centers[1]);
    std::swap(swapped.members[0], swapped.members[1]);
    std::swap(swapped.local[0], swapped.local[1]);
    const Tensor T3 = enc.encode_groups(ps, swapped);
    for (int c = 0; c < 16; ++c) {
        CHECK(T3.at(0, c) == doctest::Approx(T.at(1, c)).epsilon(1e-9));
        CHECK(T3.at(1, c) == doctest::Approx(T.at(0, c)).epsilon(1e-9));
    }

    // a single group keeps the shape contract
    const GroupSet g1 = group_knn(ps, {0}, 3);
    CHECK(enc.encode_groups(ps, g1).shape == std::vector<int>{1, 16});

    // different parameter seeds give different features
    nn::ParamStore store2;
    Rng rng2(4444);
    PointEncoder enc2(store2, cfg, rng2);
    const Tensor U = enc2.encode_groups(ps, gs);
    bool differs = false;
    for (size_t i = 0; i < T.v.size(); ++i) differs = differs || T.v[i] != U.v[i];
    CHECK(differs);
}

TEST_CASE("tap list concatenates block outputs") {
    PointEncoderConfig cfg;
    cfg.dim = 8;
    cfg.enc_blocks = 2;
    cfg.dec_blocks = 1;
    cfg.heads = 2;
    cfg.mlp_hidden = 8;
    cfg.taps = {0, 2};
    Rng rng(46);
    nn::ParamStore store;
    PointEncoder enc(store, cfg, rng);
    CHECK(cfg.out_dim() == 16);

    Rng prng(47);
    const PointSet ps = random_set(6, prng);
    const GroupSet gs = group_knn(ps, {0, 3}, 2);
    CHECK(enc.encode_groups(ps, gs).shape == std::vector<int>{2, 16});
}

TEST_CASE("extract_points keeps only valid pixels with their origins") {
    data::PointGrid g(8, 8);
    g.validity = data::BinaryMap(8, 8, 0);
    g.validity.at(2, 3) = 1;
    g.validity.at(5, 7) = 1;
    g.coords.at(2, 3, 2) = 0.5;
    const PointSet ps = extract_points(g);
    REQUIRE(ps.size() == 2);
    CHECK(ps.origin[0] == std::pair<int, int>{2, 3});
    CHECK(ps.pts[0][2] == 0.5);

    g.validity = data::BinaryMap(8, 8, 0);
    CHECK_THROWS_AS(extract_points(g), std::invalid_argument);
}
