#include "miiad/point_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace miiad::enc {

PointSet extract_points(const data::PointGrid& grid) {
    PointSet ps;
    for (int r = 0; r < grid.h; ++r)
        for (int c = 0; c < grid.w; ++c)
            if (grid.validity.at(r, c)) {
                ps.pts.push_back({grid.coords.at(r, c, 0), grid.coords.at(r, c, 1), grid.coords.at(r, c, 2)});
                ps.origin.emplace_back(r, c);
            }
    if (ps.pts.empty()) throw std::invalid_argument("extract_points: no valid points");
    return ps;
}

namespace {

double sqdist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

}  // namespace

std::vector<int> farthest_point_sample_from(const PointSet& ps, int M, int start_index) {
    const int n = int(ps.size());
    if (M < 1 || M > n) throw std::invalid_argument("fps: M must be in [1, N]");
    if (start_index < 0 || start_index >= n) throw std::invalid_argument("fps: start index out of range");
    std::vector<int> chosen;
    chosen.reserve(size_t(M));
    chosen.push_back(start_index);

    std::vector<double> dist(size_t(n), std::numeric_limits<double>::infinity());
    dist[size_t(start_index)] = -1.0;  // chosen points never re-selected
    for (int step = 1; step < M; ++step) {
        const auto& last = ps.pts[size_t(chosen.back())];
        int best = -1;
        double best_d = -1.0;
        for (int i = 0; i < n; ++i) {
            if (dist[size_t(i)] < 0.0) continue;
            dist[size_t(i)] = std::min(dist[size_t(i)], sqdist(ps.pts[size_t(i)], last));
            if (dist[size_t(i)] > best_d) {  // strict: ties fall to the lowest index
                best_d = dist[size_t(i)];
                best = i;
            }
        }
        chosen.push_back(best);
        dist[size_t(best)] = -1.0;
    }
    return chosen;
}

std::vector<int> farthest_point_sample(const PointSet& ps, int M, uint64_t seed) {
    if (ps.size() == 0) throw std::invalid_argument("fps: empty point set");
    Rng rng(seed);
    return farthest_point_sample_from(ps, M, int(rng.below(ps.size())));
}

GroupSet group_knn(const PointSet& ps, const std::vector<int>& centers, int k) {
    if (k < 1) throw std::invalid_argument("group_knn: k must be >= 1");
    const int n = int(ps.size());
    GroupSet gs;
    gs.k = k;
    gs.centers = centers;
    gs.members.reserve(centers.size());
    gs.local.reserve(centers.size());
    std::vector<int> order(static_cast<size_t>(n));
    for (int ci : centers) {
        const auto& cp = ps.pts[size_t(ci)];
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double da = sqdist(ps.pts[size_t(a)], cp), db = sqdist(ps.pts[size_t(b)], cp);
            return da != db ? da < db : a < b;
        });
        std::vector<int> mem;
        mem.reserve(size_t(k));
        for (int i = 0; i < k; ++i) mem.push_back(order[size_t(std::min(i, n - 1))]);
        std::vector<std::array<double, 3>> loc(mem.size());
        for (size_t i = 0; i < mem.size(); ++i) {
            const auto& p = ps.pts[size_t(mem[i])];
            loc[i] = {p[0] - cp[0], p[1] - cp[1], p[2] - cp[2]};
        }
        gs.members.push_back(std::move(mem));
        gs.local.push_back(std::move(loc));
    }
    return gs;
}

Tensor interpolate_features(const PointSet& ps, const std::vector<int>& centers, const Tensor& group_features,
                            double epsilon, bool literal_denominator) {
    if (epsilon <= 0.0) throw std::invalid_argument("interpolate: epsilon must be > 0");
    const int M = int(centers.size());
    const int n = int(ps.size());
    const int d = group_features.cols();
    if (group_features.rows() != M) throw std::invalid_argument("interpolate: feature/center count mismatch");

    // literal variant: denominator is the grand sum over all centers and all
    // points, constant in j (kept for comparison; weights no longer sum to 1)
    double literal_denom = 0.0;
    if (literal_denominator) {
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < n; ++j)
                literal_denom +=
                    1.0 / (std::sqrt(sqdist(ps.pts[size_t(centers[size_t(i)])], ps.pts[size_t(j)])) + epsilon);
    }

    Tensor out({n, d});
    std::vector<double> w(static_cast<size_t>(M));
    for (int j = 0; j < n; ++j) {
        double z = 0.0;
        for (int i = 0; i < M; ++i) {
            w[size_t(i)] = 1.0 / (std::sqrt(sqdist(ps.pts[size_t(centers[size_t(i)])], ps.pts[size_t(j)])) + epsilon);
            z += w[size_t(i)];
        }
        const double denom = literal_denominator ? literal_denom : z;
        for (int i = 0; i < M; ++i) {
            const double a = w[size_t(i)] / denom;
            for (int c = 0; c < d; ++c) out.at(j, c) += a * group_features.at(i, c);
        }
    }
    return out;
}

Tensor project_to_grid(const Tensor& features, const std::vector<std::pair<int, int>>& origins, int grid_h,
                       int grid_w, int patch) {
    if (patch < 1 || grid_h % patch != 0 || grid_w % patch != 0)
        throw std::invalid_argument("project_to_grid: patch must divide the grid");
    if (features.rows() != int(origins.size()))
        throw std::invalid_argument("project_to_grid: feature/origin count mismatch");
    const int ph = grid_h / patch, pw = grid_w / patch;
    const int d = features.cols();
    Tensor out({ph * pw, d});
    std::vector<int> counts(size_t(ph) * pw, 0);
    for (size_t i = 0; i < origins.size(); ++i) {
        const int cell = (origins[i].first / patch) * pw + (origins[i].second / patch);
        counts[size_t(cell)]++;
        for (int c = 0; c < d; ++c) out.at(cell, c) += features.at(int(i), c);
    }
    for (int cell = 0; cell < ph * pw; ++cell)
        if (counts[size_t(cell)] > 0)
            for (int c = 0; c < d; ++c) out.at(cell, c) /= counts[size_t(cell)];
    return out;
}

namespace {
const char* kPrefix = "backbone.point";
}

PointEncoder::PointEncoder(nn::ParamStore& store, const PointEncoderConfig& cfg, Rng& rng)
    : store_(store), cfg_(cfg) {
    const std::string p = kPrefix;
    store_.create_normal(p + ".mlp1.w", {3, cfg.mlp_hidden}, false, rng, 0.5);
    store_.create(p + ".mlp1.b", {1, cfg.mlp_hidden}, false);
    store_.create_normal(p + ".mlp2.w", {cfg.mlp_hidden, cfg.dim}, false, rng,
                         1.0 / std::sqrt(double(cfg.mlp_hidden)));
    store_.create(p + ".mlp2.b", {1, cfg.dim}, false);
    store_.create_normal(p + ".pos.w", {3, cfg.dim}, false, rng, 0.5);
    store_.create(p + ".pos.b", {1, cfg.dim}, false);
    for (int b = 0; b < cfg.total_blocks(); ++b)
        blocks_.push_back(nn::make_block(store_, p + ".blk" + std::to_string(b), cfg.dim, cfg.mlp_ratio,
                                         false, rng));
}

PointEncoder::PointEncoder(nn::ParamStore& store, const PointEncoderConfig& cfg) : store_(store), cfg_(cfg) {
    const std::string p = kPrefix;
    for (int b = 0; b < cfg.total_blocks(); ++b)
        blocks_.push_back(nn::bind_block(store_, p + ".blk" + std::to_string(b)));
}

Tensor PointEncoder::encode_groups(const PointSet& ps, const GroupSet& gs) const {
    const int M = int(gs.centers.size());
    if (M == 0) throw std::invalid_argument("encode_groups: no groups");
    nn::ParamStore& store = store_;
    nn::Tape tape;

    // pointwise MLP + max-pool per group
    Tensor tokens({M, cfg_.dim});
    {
        const Tensor& w1 = store.at("backbone.point.mlp1.w").value;
        const Tensor& b1 = store.at("backbone.point.mlp1.b").value;
        const Tensor& w2 = store.at("backbone.point.mlp2.w").value;
        const Tensor& b2 = store.at("backbone.point.mlp2.b").value;
        for (int g = 0; g < M; ++g) {
            const auto& loc = gs.local[size_t(g)];
            Tensor coords({int(loc.size()), 3});
            for (size_t i = 0; i < loc.size(); ++i)
                for (int c = 0; c < 3; ++c) coords.at(int(i), c) = loc[i][size_t(c)];
            Tensor h = miiad::matmul(coords, w1);
            for (int i = 0; i < h.rows(); ++i)
                for (int j = 0; j < h.cols(); ++j) {
                    double x = h.at(i, j) + b1.v[size_t(j)];
                    h.at(i, j) = 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475));
                }
            Tensor f = miiad::matmul(h, w2);
            for (int j = 0; j < cfg_.dim; ++j) {
                double mx = -std::numeric_limits<double>::infinity();
                for (int i = 0; i < f.rows(); ++i) mx = std::max(mx, f.at(i, j) + b2.v[size_t(j)]);
                tokens.at(g, j) = mx;
            }
        }
    }

    // center coordinates as positional encoding
    {
        const Tensor& pw = store.at("backbone.point.pos.w").value;
        const Tensor& pb = store.at("backbone.point.pos.b").value;
        for (int g = 0; g < M; ++g) {
            const auto& cp = ps.pts[size_t(gs.centers[size_t(g)])];
            for (int j = 0; j < cfg_.dim; ++j) {
                double pe = pb.v[size_t(j)];
                for (int c = 0; c < 3; ++c) pe += cp[size_t(c)] * pw.at(c, j);
                tokens.at(g, j) += pe;
            }
        }
    }

    int x = tape.leaf(tokens);
    const auto taps = cfg_.effective_taps();
    std::vector<int> tapped;
    for (int b = 0; b < cfg_.total_blocks(); ++b) {
        x = nn::transformer_block(tape, x, blocks_[size_t(b)], cfg_.heads);
        if (std::find(taps.begin(), taps.end(), b) != taps.end()) tapped.push_back(x);
    }
    if (tapped.empty()) throw std::invalid_argument("encode_groups: tap list selects no block");
    const int out = tapped.size() == 1 ? tapped[0] : tape.concat_cols(tapped);
    return tape.val(out);
}

}  // namespace miiad::enc
