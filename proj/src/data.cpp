#include "miiad/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "miiad/miid_io.hpp"
#include "miiad/rng.hpp"

namespace miiad::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

double fract(double x) { return x - std::floor(x); }

struct Archetype {
    std::array<double, 3> base_color;
};

const std::vector<std::string> kCategories = {"dome", "disk", "slab"};

Archetype archetype_of(const std::string& category) {
    if (category == "dome") return {{0.72, 0.45, 0.30}};
    if (category == "disk") return {{0.35, 0.55, 0.75}};
    if (category == "slab") return {{0.45, 0.70, 0.40}};
    throw std::invalid_argument("synth: unknown category '" + category + "'");
}

// Symmetric 3x3 eigenvector for the smallest eigenvalue (cyclic Jacobi).
std::array<double, 3> smallest_eigvec3(double a[3][3]) {
    double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    double m[3][3];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m[i][j] = a[i][j];
    for (int sweep = 0; sweep < 32; ++sweep) {
        double off = std::abs(m[0][1]) + std::abs(m[0][2]) + std::abs(m[1][2]);
        if (off < 1e-15) break;
        for (int p = 0; p < 2; ++p)
            for (int q = p + 1; q < 3; ++q) {
                if (std::abs(m[p][q]) < 1e-18) continue;
                const double theta = 0.5 * std::atan2(2.0 * m[p][q], m[q][q] - m[p][p]);
                const double c = std::cos(theta), s = std::sin(theta);
                for (int k = 0; k < 3; ++k) {
                    const double mkp = m[k][p], mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for (int k = 0; k < 3; ++k) {
                    const double mpk = m[p][k], mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for (int k = 0; k < 3; ++k) {
                    const double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
    }
    int best = 0;
    for (int i = 1; i < 3; ++i)
        if (m[i][i] < m[best][best]) best = i;
    return {v[0][best], v[1][best], v[2][best]};
}

struct Plane {
    std::array<double, 3> n{0, 0, 1};
    double d = 0.0;  // points satisfy n.p = d
    double dist(double x, double y, double z) const { return std::abs(n[0] * x + n[1] * y + n[2] * z - d); }
};

}  // namespace

const std::vector<std::string>& known_categories() { return kCategories; }

Sample synth_normal(const std::string& category, int size, uint64_t seed) {
    if (size < 8) throw std::invalid_argument("synth: size must be >= 8");
    const Archetype arch = archetype_of(category);
    Rng rng(Rng::mix(Rng::hash(category), Rng::mix(uint64_t(size), seed)));

    Sample s;
    s.category = category;
    s.mask = {true, true};
    s.gt.anomalous = false;
    s.gt.anomaly_mask = BinaryMap(size, size, 0);
    s.rgb = RgbImage(size, size);
    s.pc = PointGrid(size, size);

    // category geometry; parts are fixtured, so the footprint is the category
    // prototype and per-sample variation is a gentle global scale plus noise
    const double cx = 0.5;
    const double cy = 0.5;
    const double radius = 0.33;
    const double height = 0.20 * rng.uniform(0.98, 1.02);
    const int ridges = 4;
    const double margin = 0.15;
    const double wave_a = 2.0;
    const double wave_b = 3.0;
    const double phase1 = 0.7;
    const double phase2 = 2.1;

    Tensor z({size, size});
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const double u = double(r) / (size - 1);
            const double v = double(c) / (size - 1);
            double h = 0.0;
            if (category == "dome") {
                const double d = std::sqrt((u - cx) * (u - cx) + (v - cy) * (v - cy));
                if (d < radius) {
                    const double t = std::cos(kPi * d / (2.0 * radius));
                    h = height * t * t;
                }
            } else if (category == "disk") {
                const double d = std::sqrt((u - cx) * (u - cx) + (v - cy) * (v - cy));
                if (d < radius)
                    h = 0.5 * height + 0.15 * height * (0.5 + 0.5 * std::cos(2.0 * kPi * ridges * d / radius));
            } else {  // slab
                if (u > margin && u < 1.0 - margin && v > margin && v < 1.0 - margin)
                    h = 0.5 * height + 0.2 * height * std::sin(2.0 * kPi * wave_a * u + phase1) *
                                           std::sin(2.0 * kPi * wave_b * v + phase2);
            }
            z.at(r, c) = h + rng.normal(0.0, 0.002);
        }
    }

    // texture correlated with surface slope
    const double tint = rng.uniform(-0.03, 0.03);
    const double stripe_freq = 8.0;
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const double u = double(r) / (size - 1);
            const double v = double(c) / (size - 1);
            const double zr = (r + 1 < size ? z.at(r + 1, c) : z.at(r, c)) - z.at(r, c);
            const double zc = (c + 1 < size ? z.at(r, c + 1) : z.at(r, c)) - z.at(r, c);
            const double slope = std::sqrt(zr * zr + zc * zc) * double(size - 1);
            const double shade = 0.25 * std::tanh(2.0 * slope);
            const double pattern = category == "slab" ? 0.08 * std::sin(2.0 * kPi * stripe_freq * (u + v))
                                                      : 0.08 * std::sin(2.0 * kPi * stripe_freq * u) *
                                                            std::cos(2.0 * kPi * stripe_freq * v);
            for (int ch = 0; ch < 3; ++ch) {
                const double base = arch.base_color[size_t(ch)] + tint;
                s.rgb->at(r, c, ch) = clamp01(base - shade + pattern + rng.normal(0.0, 0.01));
            }
            s.pc->coords.at(r, c, 0) = u;
            s.pc->coords.at(r, c, 1) = v;
            s.pc->coords.at(r, c, 2) = z.at(r, c);
        }
    }
    return s;
}

namespace {

// slope-derived shading term, the same model the normal texture uses
double shade_at(const Tensor& coords, int r, int c) {
    const int size = coords.shape[0];
    const double z = coords.at(r, c, 2);
    const double zr = (r + 1 < size ? coords.at(r + 1, c, 2) : z) - z;
    const double zc = (c + 1 < size ? coords.at(r, c + 1, 2) : z) - z;
    const double slope = std::sqrt(zr * zr + zc * zc) * double(size - 1);
    return 0.25 * std::tanh(2.0 * slope);
}

}  // namespace

Sample synth_anomaly(const Sample& base, DefectKind kind, uint64_t seed) {
    if (!base.complete()) throw std::invalid_argument("synth_anomaly: base must be complete");
    if (base.gt.anomalous) throw std::invalid_argument("synth_anomaly: base already anomalous");
    const int size = base.rgb->h;
    Rng rng(Rng::mix(seed, uint64_t(kind) + 101));

    Sample s = base;
    s.gt.anomalous = true;
    s.gt.anomaly_mask = BinaryMap(size, size, 0);

    // defect footprint: a disc inside the central half of the object
    const double lo = size / 4.0, hi = 3.0 * size / 4.0;
    const double ctr_r = rng.uniform(lo, hi);
    const double ctr_c = rng.uniform(lo, hi);
    const double rpx = rng.uniform(std::max(1.5, size / 12.0), std::max(2.0, size / 7.0));
    const double amp = rng.uniform(0.08, 0.14) * (kind == DefectKind::dent ? -1.0 : 1.0);
    std::array<double, 3> shift = {rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7)};
    auto inside = [&](int r, int c) {
        const double d = std::sqrt((r - ctr_r) * (r - ctr_r) + (c - ctr_c) * (c - ctr_c));
        return d < rpx;
    };

    bool touched = false;
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            if (!inside(r, c)) continue;
            touched = true;
            s.gt.anomaly_mask.at(r, c) = 1;
            const double d = std::sqrt((r - ctr_r) * (r - ctr_r) + (c - ctr_c) * (c - ctr_c));
            switch (kind) {
                case DefectKind::bump:
                case DefectKind::dent: {
                    const double t = std::cos(kPi * d / (2.0 * rpx));
                    s.pc->coords.at(r, c, 2) += amp * t * t;
                    break;
                }
                case DefectKind::hole:
                    s.pc->validity.at(r, c) = 0;
                    // a hole photographs as a dark spot
                    for (int ch = 0; ch < 3; ++ch) s.rgb->at(r, c, ch) = clamp01(s.rgb->at(r, c, ch) - 0.3);
                    break;
                case DefectKind::color_blotch:
                    for (int ch = 0; ch < 3; ++ch)
                        s.rgb->at(r, c, ch) = fract(s.rgb->at(r, c, ch) + shift[size_t(ch)]);
                    break;
            }
        }
    }
    if (!touched) {
        // radius below one pixel pitch can miss every grid point; pin the center
        const int r = std::clamp(int(std::lround(ctr_r)), 0, size - 1);
        const int c = std::clamp(int(std::lround(ctr_c)), 0, size - 1);
        s.gt.anomaly_mask.at(r, c) = 1;
        if (kind == DefectKind::hole) {
            s.pc->validity.at(r, c) = 0;
            for (int ch = 0; ch < 3; ++ch) s.rgb->at(r, c, ch) = clamp01(s.rgb->at(r, c, ch) - 0.3);
        } else if (kind == DefectKind::color_blotch) {
            for (int ch = 0; ch < 3; ++ch) s.rgb->at(r, c, ch) = fract(s.rgb->at(r, c, ch) + shift[size_t(ch)]);
        } else {
            s.pc->coords.at(r, c, 2) += amp;
        }
    }

    // bumps and dents change the photographed shading wherever the slope
    // changed; the mask widens to cover exactly the perturbed pixels
    if (kind == DefectKind::bump || kind == DefectKind::dent) {
        for (int r = 0; r < size; ++r)
            for (int c = 0; c < size; ++c) {
                const double ds = shade_at(s.pc->coords, r, c) - shade_at(base.pc->coords, r, c);
                if (ds == 0.0) continue;
                for (int ch = 0; ch < 3; ++ch) {
                    const double before = s.rgb->at(r, c, ch);
                    s.rgb->at(r, c, ch) = clamp01(before - ds);
                    if (s.rgb->at(r, c, ch) != before) s.gt.anomaly_mask.at(r, c) = 1;
                }
            }
    }
    return s;
}

namespace {

void strip_modality(std::vector<Sample>& split, const MissingSpec& spec, uint64_t stream) {
    const size_t n = split.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(Rng::mix(spec.seed, stream));
    rng.shuffle(order);

    auto drop_pc = [&](size_t idx) {
        split[idx].pc.reset();
        split[idx].mask.has_pc = false;
    };
    auto drop_rgb = [&](size_t idx) {
        split[idx].rgb.reset();
        split[idx].mask.has_rgb = false;
    };

    const long long k = std::llround(spec.rate * double(n));
    if (spec.mode == MissingMode::pc_missing) {
        for (long long i = 0; i < k; ++i) drop_pc(order[size_t(i)]);
    } else if (spec.mode == MissingMode::rgb_missing) {
        for (long long i = 0; i < k; ++i) drop_rgb(order[size_t(i)]);
    } else {
        const long long k_rgb_only = (k + 1) / 2;  // odd extra goes to the rgb-only group
        for (long long i = 0; i < k_rgb_only; ++i) drop_pc(order[size_t(i)]);
        for (long long i = k_rgb_only; i < k; ++i) drop_rgb(order[size_t(i)]);
    }
}

}  // namespace

MiiadDataset apply_missing(const MiiadDataset& ds, const MissingSpec& spec) {
    if (spec.rate < 0.0 || spec.rate > 1.0) throw std::invalid_argument("apply_missing: rate outside [0,1]");
    for (const auto* split : {&ds.train, &ds.test})
        for (const Sample& s : *split)
            if (!s.complete()) throw std::invalid_argument("apply_missing: dataset already incomplete");

    MiiadDataset out = ds;
    strip_modality(out.train, spec, Rng::hash("train"));
    strip_modality(out.test, spec, Rng::hash("test"));
    return out;
}

Sample fill_pseudo(const Sample& s) {
    Sample out = s;
    int h = 0, w = 0;
    if (s.rgb) {
        h = s.rgb->h;
        w = s.rgb->w;
    } else if (s.pc) {
        h = s.pc->h;
        w = s.pc->w;
    } else {
        throw std::invalid_argument("fill_pseudo: sample has no modality at all");
    }
    if (!out.rgb) {
        RgbImage ones(h, w);
        ones.pixels = Tensor::full({h, w, 3}, 1.0);
        out.rgb = std::move(ones);
    }
    if (!out.pc) {
        PointGrid ones(h, w);
        ones.coords = Tensor::full({h, w, 3}, 1.0);
        out.pc = std::move(ones);
    }
    return out;
}

PointGrid remove_background_plane(const PointGrid& pc, double threshold, int iterations, uint64_t seed) {
    if (threshold <= 0.0) throw std::invalid_argument("plane removal: threshold must be > 0");
    struct P {
        double x, y, z;
    };
    std::vector<P> pts;
    for (int r = 0; r < pc.h; ++r)
        for (int c = 0; c < pc.w; ++c)
            if (pc.validity.at(r, c))
                pts.push_back({pc.coords.at(r, c, 0), pc.coords.at(r, c, 1), pc.coords.at(r, c, 2)});
    if (pts.size() < 3) throw std::invalid_argument("plane removal: fewer than 3 valid points");

    Rng rng(seed);
    Plane best;
    long long best_inliers = -1;
    for (int it = 0; it < iterations; ++it) {
        const size_t i = size_t(rng.below(pts.size()));
        size_t j = size_t(rng.below(pts.size()));
        size_t k = size_t(rng.below(pts.size()));
        if (i == j || i == k || j == k) continue;
        const double ux = pts[j].x - pts[i].x, uy = pts[j].y - pts[i].y, uz = pts[j].z - pts[i].z;
        const double vx = pts[k].x - pts[i].x, vy = pts[k].y - pts[i].y, vz = pts[k].z - pts[i].z;
        double nx = uy * vz - uz * vy, ny = uz * vx - ux * vz, nz = ux * vy - uy * vx;
        const double nn = std::sqrt(nx * nx + ny * ny + nz * nz);
        if (nn < 1e-12) continue;
        nx /= nn;
        ny /= nn;
        nz /= nn;
        Plane pl{{nx, ny, nz}, nx * pts[i].x + ny * pts[i].y + nz * pts[i].z};
        long long inliers = 0;
        for (const P& p : pts)
            if (pl.dist(p.x, p.y, p.z) <= threshold) ++inliers;
        if (inliers > best_inliers) {
            best_inliers = inliers;
            best = pl;
        }
    }
    if (best_inliers < 3) throw std::invalid_argument("plane removal: RANSAC found no plane");

    // least-squares refit on the consensus set
    std::vector<P> in;
    for (const P& p : pts)
        if (best.dist(p.x, p.y, p.z) <= threshold) in.push_back(p);
    if (in.size() >= 3) {
        double mx = 0, my = 0, mz = 0;
        for (const P& p : in) {
            mx += p.x;
            my += p.y;
            mz += p.z;
        }
        mx /= double(in.size());
        my /= double(in.size());
        mz /= double(in.size());
        double cov[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
        for (const P& p : in) {
            const double d[3] = {p.x - mx, p.y - my, p.z - mz};
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) cov[a][b] += d[a] * d[b];
        }
        const auto nvec = smallest_eigvec3(cov);
        const double nn = std::sqrt(nvec[0] * nvec[0] + nvec[1] * nvec[1] + nvec[2] * nvec[2]);
        if (nn > 1e-12) {
            Plane refit{{nvec[0] / nn, nvec[1] / nn, nvec[2] / nn}, 0.0};
            refit.d = refit.n[0] * mx + refit.n[1] * my + refit.n[2] * mz;
            best = refit;
        }
    }

    PointGrid out = pc;
    for (int r = 0; r < pc.h; ++r)
        for (int c = 0; c < pc.w; ++c) {
            if (!out.validity.at(r, c)) continue;
            const double d =
                best.dist(pc.coords.at(r, c, 0), pc.coords.at(r, c, 1), pc.coords.at(r, c, 2));
            if (d <= threshold) out.validity.at(r, c) = 0;
        }
    return out;
}

namespace {

// align-corners bilinear sample of channel ch at fractional source coords
double bilinear(const Tensor& t, double sr, double sc, int ch) {
    const int h = t.shape[0], w = t.shape[1];
    const int r0 = std::clamp(int(std::floor(sr)), 0, h - 1);
    const int c0 = std::clamp(int(std::floor(sc)), 0, w - 1);
    const int r1 = std::min(r0 + 1, h - 1);
    const int c1 = std::min(c0 + 1, w - 1);
    const double fr = sr - r0, fc = sc - c0;
    return (1 - fr) * ((1 - fc) * t.at(r0, c0, ch) + fc * t.at(r0, c1, ch)) +
           fr * ((1 - fc) * t.at(r1, c0, ch) + fc * t.at(r1, c1, ch));
}

}  // namespace

Sample resize_to_grid(const Sample& s, int size) {
    if (size < 1) throw std::invalid_argument("resize: size must be >= 1");
    Sample out = s;
    const auto src_scale = [size](int src) {
        return size > 1 ? double(src - 1) / double(size - 1) : 0.0;
    };

    if (s.rgb) {
        RgbImage rs(size, size);
        const double kr = src_scale(s.rgb->h), kc = src_scale(s.rgb->w);
        for (int r = 0; r < size; ++r)
            for (int c = 0; c < size; ++c)
                for (int ch = 0; ch < 3; ++ch) rs.at(r, c, ch) = bilinear(s.rgb->pixels, r * kr, c * kc, ch);
        out.rgb = std::move(rs);
    }
    if (s.pc) {
        PointGrid ps(size, size);
        const double kr = src_scale(s.pc->h), kc = src_scale(s.pc->w);
        for (int r = 0; r < size; ++r)
            for (int c = 0; c < size; ++c) {
                for (int ch = 0; ch < 3; ++ch) ps.coords.at(r, c, ch) = bilinear(s.pc->coords, r * kr, c * kc, ch);
                const int nr = std::clamp(int(std::lround(r * kr)), 0, s.pc->h - 1);
                const int nc = std::clamp(int(std::lround(c * kc)), 0, s.pc->w - 1);
                ps.validity.at(r, c) = s.pc->validity.at(nr, nc);
            }
        out.pc = std::move(ps);
    }
    {
        const BinaryMap& gm = s.gt.anomaly_mask;
        if (gm.h > 0) {
            BinaryMap ms(size, size, 0);
            const double kr = src_scale(gm.h), kc = src_scale(gm.w);
            for (int r = 0; r < size; ++r)
                for (int c = 0; c < size; ++c) {
                    const int nr = std::clamp(int(std::lround(r * kr)), 0, gm.h - 1);
                    const int nc = std::clamp(int(std::lround(c * kc)), 0, gm.w - 1);
                    ms.at(r, c) = gm.at(nr, nc);
                }
            out.gt.anomaly_mask = std::move(ms);
        }
    }
    return out;
}

MiiadDataset make_dataset(const std::vector<std::string>& categories, int n_train, int n_test, int size,
                          uint64_t seed, const SynthOptions& opts) {
    if (categories.empty()) throw std::invalid_argument("make_dataset: no categories");
    MiiadDataset ds;
    ds.categories = categories;
    int next_id = 0;

    const DefectKind kinds[] = {DefectKind::bump, DefectKind::dent, DefectKind::color_blotch,
                                DefectKind::hole};

    auto preprocess = [&](Sample& s) {
        if (opts.plane_removal && s.pc) {
            const uint64_t pseed = Rng::mix(seed, Rng::mix(Rng::hash("ransac"), uint64_t(s.id)));
            s.pc = remove_background_plane(*s.pc, opts.plane_threshold, opts.ransac_iterations, pseed);
        }
    };

    for (const auto& cat : categories) {
        for (int i = 0; i < n_train; ++i) {
            Sample s = synth_normal(cat, size, Rng::mix(seed, Rng::mix(Rng::hash(cat + "/train"), uint64_t(i))));
            s.id = next_id++;
            preprocess(s);
            ds.train.push_back(std::move(s));
        }
        const int n_anom = int(std::llround(opts.anomaly_frac * n_test));
        for (int i = 0; i < n_test; ++i) {
            const uint64_t sseed = Rng::mix(seed, Rng::mix(Rng::hash(cat + "/test"), uint64_t(i)));
            Sample s = synth_normal(cat, size, sseed);
            if (i < n_anom) s = synth_anomaly(s, kinds[i % 4], Rng::mix(sseed, Rng::hash("defect")));
            s.id = next_id++;
            preprocess(s);
            ds.test.push_back(std::move(s));
        }
    }
    return ds;
}

namespace {

Tensor map_to_tensor(const BinaryMap& m) {
    Tensor t({m.h, m.w});
    for (size_t i = 0; i < m.v.size(); ++i) t.v[i] = m.v[i] ? 1.0 : 0.0;
    return t;
}

BinaryMap tensor_to_map(const Tensor& t) {
    BinaryMap m(t.shape[0], t.shape[1]);
    for (size_t i = 0; i < t.v.size(); ++i) m.v[i] = t.v[i] >= 0.5 ? 1 : 0;
    return m;
}

void save_split(const std::vector<Sample>& split, const fs::path& dir) {
    fs::create_directories(dir);
    for (const Sample& s : split) {
        const std::string stem = std::to_string(s.id);
        json j = {{"id", s.id},
                  {"category", s.category},
                  {"label", s.gt.anomalous ? "anomalous" : "normal"},
                  {"mask", {{"has_rgb", s.mask.has_rgb}, {"has_pc", s.mask.has_pc}}}};
        std::ofstream(dir / (stem + ".json")) << j.dump(2) << "\n";
        if (s.rgb) write_miid((dir / (stem + ".rgb.miid")).string(), s.rgb->pixels);
        if (s.pc) {
            write_miid((dir / (stem + ".pc.miid")).string(), s.pc->coords);
            write_miid((dir / (stem + ".validity.miid")).string(), map_to_tensor(s.pc->validity));
        }
        write_miid((dir / (stem + ".gtmask.miid")).string(), map_to_tensor(s.gt.anomaly_mask));
    }
}

std::vector<Sample> load_split(const fs::path& dir) {
    std::vector<Sample> out;
    if (!fs::exists(dir)) return out;
    std::vector<fs::path> metas;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".json") metas.push_back(e.path());
    std::sort(metas.begin(), metas.end());
    for (const auto& mp : metas) {
        json j;
        std::ifstream(mp) >> j;
        Sample s;
        s.id = j.at("id").get<int>();
        s.category = j.at("category").get<std::string>();
        s.gt.anomalous = j.at("label").get<std::string>() == "anomalous";
        s.mask.has_rgb = j.at("mask").at("has_rgb").get<bool>();
        s.mask.has_pc = j.at("mask").at("has_pc").get<bool>();
        const std::string stem = (dir / std::to_string(s.id)).string();
        if (s.mask.has_rgb) {
            Tensor px = read_miid(stem + ".rgb.miid");
            RgbImage img(px.shape[0], px.shape[1]);
            img.pixels = std::move(px);
            s.rgb = std::move(img);
        }
        if (s.mask.has_pc) {
            Tensor co = read_miid(stem + ".pc.miid");
            PointGrid pg(co.shape[0], co.shape[1]);
            pg.coords = std::move(co);
            pg.validity = tensor_to_map(read_miid(stem + ".validity.miid"));
            s.pc = std::move(pg);
        }
        s.gt.anomaly_mask = tensor_to_map(read_miid(stem + ".gtmask.miid"));
        out.push_back(std::move(s));
    }
    std::sort(out.begin(), out.end(), [](const Sample& a, const Sample& b) { return a.id < b.id; });
    return out;
}

}  // namespace

void save_dataset(const MiiadDataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    json j = {{"categories", ds.categories},
              {"n_train", ds.train.size()},
              {"n_test", ds.test.size()}};
    std::ofstream(fs::path(dir) / "dataset.json") << j.dump(2) << "\n";
    save_split(ds.train, fs::path(dir) / "train");
    save_split(ds.test, fs::path(dir) / "test");
}

MiiadDataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    if (!fs::exists(root / "dataset.json")) throw std::runtime_error("load_dataset: missing dataset.json in " + dir);
    json j;
    std::ifstream(root / "dataset.json") >> j;
    MiiadDataset ds;
    ds.categories = j.at("categories").get<std::vector<std::string>>();
    ds.train = load_split(root / "train");
    ds.test = load_split(root / "test");
    return ds;
}

}  // namespace miiad::data
