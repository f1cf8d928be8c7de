#include "miiad/detection.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "miiad/autodiff.hpp"
#include "miiad/rng.hpp"

namespace miiad::detect {

// ---------------------------------------------------------------------------
// Masked attention
// ---------------------------------------------------------------------------

Tensor masked_attention_weights(const Tensor& Q, const Tensor& K, const std::vector<uint8_t>& mask) {
    if (Q.cols() != K.cols()) throw std::invalid_argument("masked_attention: Q/K width mismatch");
    const double scl = 1.0 / std::sqrt(double(Q.cols()));
    Tensor logits = miiad::matmul(Q, [&] {
        Tensor kt({K.cols(), K.rows()});
        for (int i = 0; i < K.rows(); ++i)
            for (int j = 0; j < K.cols(); ++j) kt.at(j, i) = K.at(i, j);
        return kt;
    }());
    for (auto& x : logits.v) x *= scl;
    return nn::masked_softmax_kernel(logits, mask);
}

Tensor masked_attention(const Tensor& Q, const Tensor& K, const Tensor& V, const std::vector<uint8_t>& mask) {
    if (K.rows() != V.rows()) throw std::invalid_argument("masked_attention: K/V row mismatch");
    return miiad::matmul(masked_attention_weights(Q, K, mask), V);
}

GroupAssignment assign_groups(const std::vector<uint8_t>& token_is_pseudo) {
    const int L = int(token_is_pseudo.size());
    if (L == 0) throw std::invalid_argument("assign_groups: empty token list");
    GroupAssignment ga;
    ga.is_pseudo = token_is_pseudo;
    ga.mask.assign(size_t(L) * L, 0);
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < L; ++j)
            ga.mask[size_t(i) * L + j] = token_is_pseudo[size_t(i)] == token_is_pseudo[size_t(j)] ? 1 : 0;
    return ga;
}

GroupAssignment assign_groups(const data::ModalityMask& mask, int tokens_per_modality) {
    std::vector<uint8_t> flags(size_t(2 * tokens_per_modality), 0);
    for (int i = 0; i < tokens_per_modality; ++i) {
        flags[size_t(i)] = mask.has_pc ? 0 : 1;
        flags[size_t(tokens_per_modality + i)] = mask.has_rgb ? 0 : 1;
    }
    return assign_groups(flags);
}

int presence_class(const data::ModalityMask& mask) {
    if (mask.has_rgb && mask.has_pc) return 0;
    if (mask.has_rgb) return 1;  // pc missing
    return 2;                    // rgb missing
}

// ---------------------------------------------------------------------------
// Hybrid model
// ---------------------------------------------------------------------------

namespace {
const char* kPrefix = "hybrid";
}

HybridModel::HybridModel(nn::ParamStore& store, const HybridConfig& cfg, Rng& rng)
    : store_(store), cfg_(cfg) {
    const std::string p = kPrefix;
    const double s_in = 1.0 / std::sqrt(double(cfg.d_g));
    const double s_out = 1.0 / std::sqrt(double(cfg.attn_dim));
    store_.create_normal(p + ".wq", {cfg.d_g, cfg.attn_dim}, true, rng, s_in);
    store_.create(p + ".bq", {1, cfg.attn_dim}, true);
    store_.create_normal(p + ".wk", {cfg.d_g, cfg.attn_dim}, true, rng, s_in);
    store_.create(p + ".bk", {1, cfg.attn_dim}, true);
    store_.create_normal(p + ".wv", {cfg.d_g, cfg.attn_dim}, true, rng, s_in);
    store_.create(p + ".bv", {1, cfg.attn_dim}, true);
    // zero-init output projection: refinement starts at identity and moves
    // the repository features only as far as the hybrid supervision asks
    store_.create(p + ".wo", {cfg.attn_dim, cfg.d_g}, true);
    store_.create(p + ".bo", {1, cfg.d_g}, true);
    (void)s_out;
    store_.create_normal(p + ".cls.w", {cfg.d_g, cfg.n_classes}, true, rng, s_in);
    store_.create(p + ".cls.b", {1, cfg.n_classes}, true);
    store_.create_normal(p + ".reg.w", {cfg.d_g, cfg.reg_dim}, true, rng, s_in);
    store_.create(p + ".reg.b", {1, cfg.reg_dim}, true);
}

HybridModel::HybridModel(nn::ParamStore& store, const HybridConfig& cfg) : store_(store), cfg_(cfg) {
    store_.at(std::string(kPrefix) + ".wq");  // existence check
}

int HybridModel::refine(nn::Tape& tape, int tokens, const std::vector<uint8_t>& is_pseudo) const {
    const int L = tape.val(tokens).rows();
    if (int(is_pseudo.size()) != L) throw std::invalid_argument("refine: provenance length mismatch");
    const GroupAssignment ga = assign_groups(is_pseudo);
    const std::string p = kPrefix;
    const int q = tape.linear(tokens, tape.param(store_.at(p + ".wq")), tape.param(store_.at(p + ".bq")));
    const int k = tape.linear(tokens, tape.param(store_.at(p + ".wk")), tape.param(store_.at(p + ".bk")));
    const int v = tape.linear(tokens, tape.param(store_.at(p + ".wv")), tape.param(store_.at(p + ".bv")));
    const int logits = tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / std::sqrt(double(cfg_.attn_dim)));
    const int attn = tape.masked_softmax_rows(logits, ga.mask);
    const int mixed = tape.matmul(attn, v);
    const int proj = tape.linear(mixed, tape.param(store_.at(p + ".wo")), tape.param(store_.at(p + ".bo")));
    return tape.add(tokens, proj);
}

Tensor HybridModel::refine(const Tensor& tokens, const std::vector<uint8_t>& is_pseudo) const {
    nn::Tape tape;
    return tape.val(refine(tape, tape.leaf(tokens), is_pseudo));
}

int HybridModel::classify(nn::Tape& tape, int pooled) const {
    const std::string p = kPrefix;
    return tape.linear(pooled, tape.param(store_.at(p + ".cls.w")), tape.param(store_.at(p + ".cls.b")));
}

int HybridModel::regress(nn::Tape& tape, int pooled) const {
    const std::string p = kPrefix;
    return tape.linear(pooled, tape.param(store_.at(p + ".reg.w")), tape.param(store_.at(p + ".reg.b")));
}

// ---------------------------------------------------------------------------
// Pseudo-label store
// ---------------------------------------------------------------------------

void PseudoLabelStore::update(int sample_id, int modality, const Tensor& cls, const Tensor& reg) {
    Entry& e = entries_[{sample_id, modality}];
    if (e.epochs == 0) {
        e.cls = cls;
        e.reg = reg;
    } else {
        const double n = double(e.epochs);
        for (size_t i = 0; i < e.cls.v.size(); ++i) e.cls.v[i] = (e.cls.v[i] * n + cls.v[i]) / (n + 1.0);
        for (size_t i = 0; i < e.reg.v.size(); ++i) e.reg.v[i] = (e.reg.v[i] * n + reg.v[i]) / (n + 1.0);
    }
    ++e.epochs;
    double s = 0.0;
    for (double x : e.cls.v) s += x;
    if (s > 0.0)
        for (auto& x : e.cls.v) x /= s;
}

const PseudoLabelStore::Entry* PseudoLabelStore::find(int sample_id, int modality) const {
    auto it = entries_.find({sample_id, modality});
    return it == entries_.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------
// Loss helpers (tape-backed so tests hit the training code path)
// ---------------------------------------------------------------------------

double ce_loss(const Tensor& logits, int target) {
    nn::Tape tape;
    return tape.val(tape.cross_entropy_rows(tape.leaf(logits), {target})).v[0];
}

double kl_loss(const Tensor& p, const Tensor& q_logits) {
    nn::Tape tape;
    return tape.val(tape.kl_const_target(p, tape.leaf(q_logits))).v[0];
}

double l2_loss(const Tensor& a, const Tensor& b) {
    nn::Tape tape;
    return tape.val(tape.mse_to_const(tape.leaf(a), b)).v[0];
}

// ---------------------------------------------------------------------------
// Stage-2 training
// ---------------------------------------------------------------------------

namespace {

// mean over a row subset; composed from existing ops
int mean_row_subset(nn::Tape& tape, int x, const std::vector<int>& rows) {
    std::vector<int> parts;
    parts.reserve(rows.size());
    for (int r : rows) parts.push_back(tape.slice_rows(x, r, r + 1));
    const int cat = parts.size() == 1 ? parts[0] : tape.concat_rows(parts);
    return tape.mean_rows(cat);
}

Tensor softmax_flat(const Tensor& logits) {
    Tensor out = logits;
    double mx = out.v[0];
    for (double x : out.v) mx = std::max(mx, x);
    double z = 0.0;
    for (auto& x : out.v) {
        x = std::exp(x - mx);
        z += x;
    }
    for (auto& x : out.v) x /= z;
    return out;
}

}  // namespace

Stage2Result train_stage2(HybridModel& model, const std::vector<Stage2SampleInputs>& samples,
                          PseudoLabelStore& store, const Stage2Options& opts) {
    if (samples.empty()) throw std::invalid_argument("train_stage2: empty train split");
    nn::ParamStore& ps = model.store();
    nn::AdamW opt;
    std::vector<nn::AdamW::Group> groups(1);
    groups[0].params = ps.with_prefix("hybrid.");
    groups[0].lr = opts.lr;
    groups[0].weight_decay = opts.weight_decay;

    const int L2 = samples[0].tokens.rows();
    const int Lm = L2 / 2;

    Stage2Result res;
    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        Rng shuffler(Rng::mix(opts.seed, uint64_t(epoch)));
        shuffler.shuffle(order);
        double ep_loss = 0.0, ep_real = 0.0, ep_pseudo = 0.0;
        int steps = 0;

        for (size_t b0 = 0; b0 < order.size(); b0 += size_t(opts.batch)) {
            const size_t b1 = std::min(order.size(), b0 + size_t(opts.batch));
            nn::Tape tape;
            std::vector<int> real_losses, pseudo_losses;
            for (size_t oi = b0; oi < b1; ++oi) {
                const Stage2SampleInputs& s = samples[order[oi]];
                const int x = tape.leaf(s.tokens);
                const int refined = model.refine(tape, x, s.is_pseudo);

                std::vector<int> real_rows, pseudo_rows;
                for (int r = 0; r < L2; ++r)
                    (s.is_pseudo[size_t(r)] ? pseudo_rows : real_rows).push_back(r);

                if (!real_rows.empty()) {
                    const int pooled = mean_row_subset(tape, refined, real_rows);
                    const int ce = tape.cross_entropy_rows(model.classify(tape, pooled), {s.presence});
                    const int l2 = tape.mse_to_const(model.regress(tape, pooled), s.reg_target);
                    real_losses.push_back(tape.add(ce, l2));
                }
                if (!pseudo_rows.empty()) {
                    // pseudo stream supervision comes from the stored averages
                    const int modality = s.is_pseudo[0] ? 0 : 1;  // pc rows lead
                    const auto* entry = store.find(s.id, modality);
                    if (entry) {
                        const int pooled = mean_row_subset(tape, refined, pseudo_rows);
                        const int kl = tape.kl_const_target(entry->cls, model.classify(tape, pooled));
                        const int l2 = tape.mse_to_const(model.regress(tape, pooled), entry->reg);
                        pseudo_losses.push_back(tape.add(kl, l2));
                    }
                }
            }
            int loss = -1;
            double real_v = 0.0, pseudo_v = 0.0;
            if (!real_losses.empty()) {
                int sum = real_losses[0];
                for (size_t i = 1; i < real_losses.size(); ++i) sum = tape.add(sum, real_losses[i]);
                loss = tape.scale(sum, 1.0 / double(real_losses.size()));
                real_v = tape.val(loss).v[0];
            }
            if (!pseudo_losses.empty()) {
                int sum = pseudo_losses[0];
                for (size_t i = 1; i < pseudo_losses.size(); ++i) sum = tape.add(sum, pseudo_losses[i]);
                int pl = tape.scale(sum, opts.lambda_pseudo / double(pseudo_losses.size()));
                pseudo_v = tape.val(pl).v[0] / std::max(opts.lambda_pseudo, 1e-300);
                loss = loss < 0 ? pl : tape.add(loss, pl);
            }
            if (loss < 0) continue;
            ps.zero_grads();
            tape.backward(loss);
            opt.step(groups);
            ep_loss += tape.val(loss).v[0];
            ep_real += real_v;
            ep_pseudo += pseudo_v;
            ++steps;
        }

        // end of epoch: refresh the per-modality prediction averages
        for (const Stage2SampleInputs& s : samples) {
            nn::Tape tape;
            const int x = tape.leaf(s.tokens);
            const int refined = model.refine(tape, x, s.is_pseudo);
            for (int modality = 0; modality < 2; ++modality) {
                std::vector<int> rows;
                for (int r = modality * Lm; r < (modality + 1) * Lm; ++r) rows.push_back(r);
                const int pooled = mean_row_subset(tape, refined, rows);
                const Tensor cls = softmax_flat(tape.val(model.classify(tape, pooled)));
                const Tensor reg = tape.val(model.regress(tape, pooled));
                store.update(s.id, modality, cls, reg);
            }
        }

        res.epoch_loss.push_back(steps ? ep_loss / steps : 0.0);
        res.epoch_real.push_back(steps ? ep_real / steps : 0.0);
        res.epoch_pseudo.push_back(steps ? ep_pseudo / steps : 0.0);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Repositories and scoring
// ---------------------------------------------------------------------------

std::vector<int> greedy_coreset(const Tensor& rows, int keep, int start) {
    const int n = rows.rows();
    if (keep < 1 || keep > n) throw std::invalid_argument("coreset: keep out of range");
    if (start < 0 || start >= n) throw std::invalid_argument("coreset: start out of range");
    const int d = rows.cols();
    auto dist2 = [&](int a, int b) {
        double s = 0.0;
        for (int c = 0; c < d; ++c) {
            const double v = rows.at(a, c) - rows.at(b, c);
            s += v * v;
        }
        return s;
    };
    std::vector<int> chosen{start};
    std::vector<double> dist(size_t(n), std::numeric_limits<double>::infinity());
    dist[size_t(start)] = -1.0;
    while (int(chosen.size()) < keep) {
        const int last = chosen.back();
        int best = -1;
        double best_d = -1.0;
        for (int i = 0; i < n; ++i) {
            if (dist[size_t(i)] < 0.0) continue;
            dist[size_t(i)] = std::min(dist[size_t(i)], dist2(i, last));
            if (dist[size_t(i)] > best_d) {
                best_d = dist[size_t(i)];
                best = i;
            }
        }
        chosen.push_back(best);
        dist[size_t(best)] = -1.0;
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

MemoryRepository build_repository(const std::vector<Tensor>& sample_tokens, const std::vector<int>& sample_ids,
                                  const std::vector<uint8_t>& include, const std::string& modality,
                                  double coreset_fraction, uint64_t seed) {
    if (sample_tokens.size() != include.size() || sample_tokens.size() != sample_ids.size())
        throw std::invalid_argument("build_repository: input size mismatch");
    int rows = 0, d = 0;
    for (size_t i = 0; i < sample_tokens.size(); ++i)
        if (include[i]) {
            rows += sample_tokens[i].rows();
            d = sample_tokens[i].cols();
        }
    if (rows == 0)
        throw std::runtime_error("repository '" + modality + "' would be empty (no observed samples)");

    MemoryRepository repo;
    repo.modality = modality;
    repo.bank = Tensor({rows, d});
    repo.source_ids.reserve(size_t(rows));
    int r = 0;
    for (size_t i = 0; i < sample_tokens.size(); ++i) {
        if (!include[i]) continue;
        const Tensor& t = sample_tokens[i];
        for (int j = 0; j < t.rows(); ++j) {
            for (int c = 0; c < d; ++c) repo.bank.at(r, c) = t.at(j, c);
            repo.source_ids.push_back(sample_ids[i]);
            ++r;
        }
    }

    if (coreset_fraction < 1.0) {
        const int keep = std::max(1, int(std::llround(coreset_fraction * rows)));
        Rng rng(seed);
        const auto kept = greedy_coreset(repo.bank, keep, int(rng.below(uint64_t(rows))));
        Tensor nb({int(kept.size()), d});
        std::vector<int> nids;
        nids.reserve(kept.size());
        for (size_t i = 0; i < kept.size(); ++i) {
            for (int c = 0; c < d; ++c) nb.at(int(i), c) = repo.bank.at(kept[i], c);
            nids.push_back(repo.source_ids[size_t(kept[i])]);
        }
        repo.bank = std::move(nb);
        repo.source_ids = std::move(nids);
    }
    return repo;
}

namespace {

double row_dist(const Tensor& bank, int row, const Tensor& tokens, int tok) {
    double s = 0.0;
    for (int c = 0; c < bank.cols(); ++c) {
        const double v = bank.at(row, c) - tokens.at(tok, c);
        s += v * v;
    }
    return std::sqrt(s);
}

}  // namespace

namespace {

// row indices permitted after the leave-one-out exclusion; falls back to the
// whole bank when exclusion would empty it
std::vector<int> permitted_rows(const MemoryRepository& repo, int exclude_id) {
    std::vector<int> rows;
    if (exclude_id >= 0 && int(repo.source_ids.size()) == repo.bank.rows()) {
        for (int r = 0; r < repo.bank.rows(); ++r)
            if (repo.source_ids[size_t(r)] != exclude_id) rows.push_back(r);
    }
    if (rows.empty()) {
        rows.resize(size_t(repo.bank.rows()));
        std::iota(rows.begin(), rows.end(), 0);
    }
    return rows;
}

}  // namespace

std::vector<double> score_psi(const MemoryRepository& repo, const Tensor& tokens, int exclude_id) {
    if (repo.bank.rows() == 0) throw std::invalid_argument("score_psi: empty bank");
    if (repo.bank.cols() != tokens.cols()) throw std::invalid_argument("score_psi: width mismatch");
    const std::vector<int> rows = permitted_rows(repo, exclude_id);
    std::vector<double> map(size_t(tokens.rows()));
    for (int t = 0; t < tokens.rows(); ++t) {
        double best = std::numeric_limits<double>::infinity();
        for (int r : rows) best = std::min(best, row_dist(repo.bank, r, tokens, t));
        map[size_t(t)] = best;
    }
    return map;
}

double score_phi(const MemoryRepository& repo, const Tensor& tokens, const PhiOptions& opts,
                 int exclude_id) {
    if (repo.bank.rows() == 0) throw std::invalid_argument("score_phi: empty bank");
    const std::vector<double> map = score_psi(repo, tokens, exclude_id);
    int worst = 0;
    for (int t = 1; t < tokens.rows(); ++t)
        if (map[size_t(t)] > map[size_t(worst)]) worst = t;
    const double s_star = map[size_t(worst)];
    if (opts.eta_constant) return opts.eta_value * s_star;

    // PatchCore re-weight over the b nearest bank entries of the worst patch
    const std::vector<int> rows = permitted_rows(repo, exclude_id);
    std::vector<double> dists;
    dists.reserve(rows.size());
    for (int r : rows) dists.push_back(row_dist(repo.bank, r, tokens, worst));
    const int b = std::min(opts.neighbors, int(dists.size()));
    std::partial_sort(dists.begin(), dists.begin() + b, dists.end());
    double denom = 0.0;
    double mx = *std::max_element(dists.begin(), dists.begin() + b);
    for (int i = 0; i < b; ++i) denom += std::exp(dists[size_t(i)] - mx);
    const double eta = 1.0 - std::exp(s_star - mx) / denom;
    return eta * s_star;
}

// ---------------------------------------------------------------------------
// Decision models
// ---------------------------------------------------------------------------

namespace {

bool invert3(const std::array<std::array<double, 3>, 3>& a, std::array<std::array<double, 3>, 3>& out) {
    const double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
                       a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                       a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if (std::abs(det) < 1e-300) return false;
    const double inv = 1.0 / det;
    out[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) * inv;
    out[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) * inv;
    out[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) * inv;
    out[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) * inv;
    out[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) * inv;
    out[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) * inv;
    out[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) * inv;
    out[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) * inv;
    out[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) * inv;
    return true;
}

}  // namespace

double mdm_distance(const Mdm& m, const std::array<double, 3>& x) {
    const double d0 = x[0] - m.mean[0], d1 = x[1] - m.mean[1], d2 = x[2] - m.mean[2];
    double q = 0.0;
    const double d[3] = {d0, d1, d2};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) q += d[i] * m.cov_inv[size_t(i)][size_t(j)] * d[j];
    return std::sqrt(std::max(0.0, q));
}

void OneClassSvm::restore(std::vector<std::array<double, 3>> support, std::vector<double> alpha,
                          double gamma, double rho, const std::array<double, 3>& mean,
                          const std::array<double, 3>& scale) {
    support_ = std::move(support);
    alpha_ = std::move(alpha);
    gamma_ = gamma;
    rho_ = rho;
    mean_ = mean;
    scale_ = scale;
}

double OneClassSvm::anomaly_score(const std::array<double, 3>& x) const {
    if (support_.empty()) throw std::runtime_error("ocsvm: not fitted");
    const std::array<double, 3> z = standardize(x);
    double f = 0.0;
    for (size_t i = 0; i < support_.size(); ++i) {
        const double dx = support_[i][0] - z[0], dy = support_[i][1] - z[1], dz = support_[i][2] - z[2];
        f += alpha_[i] * std::exp(-gamma_ * (dx * dx + dy * dy + dz * dz));
    }
    return rho_ - f;
}

void OneClassSvm::fit(const std::vector<std::array<double, 3>>& points, const OcsvmOptions& opts) {
    if (points.empty()) throw std::invalid_argument("ocsvm: no training points");
    if (!(opts.nu > 0.0 && opts.nu <= 1.0)) throw std::invalid_argument("ocsvm: nu outside (0,1]");

    std::vector<std::array<double, 3>> pts = points;
    if (int(pts.size()) > opts.subsample_cap) {
        std::vector<size_t> order(pts.size());
        std::iota(order.begin(), order.end(), size_t{0});
        Rng rng(Rng::mix(opts.seed, Rng::hash("ocsvm-subsample")));
        rng.shuffle(order);
        std::vector<std::array<double, 3>> sub;
        sub.reserve(size_t(opts.subsample_cap));
        for (int i = 0; i < opts.subsample_cap; ++i) sub.push_back(pts[order[size_t(i)]]);
        pts = std::move(sub);
    }
    const int n = int(pts.size());

    // per-channel standardization so no repository dominates the kernel
    mean_ = {0, 0, 0};
    scale_ = {1, 1, 1};
    for (const auto& p : pts)
        for (int c = 0; c < 3; ++c) mean_[size_t(c)] += p[size_t(c)] / n;
    std::array<double, 3> var{0, 0, 0};
    for (const auto& p : pts)
        for (int c = 0; c < 3; ++c)
            var[size_t(c)] += (p[size_t(c)] - mean_[size_t(c)]) * (p[size_t(c)] - mean_[size_t(c)]) / n;
    for (int c = 0; c < 3; ++c) scale_[size_t(c)] = var[size_t(c)] > 1e-24 ? std::sqrt(var[size_t(c)]) : 1.0;
    for (auto& p : pts) p = standardize(p);

    double gamma = opts.gamma;
    if (gamma <= 0.0) {
        double tv = 0.0;
        for (const auto& p : pts)
            for (int c = 0; c < 3; ++c) tv += p[size_t(c)] * p[size_t(c)];
        tv /= double(3 * n);
        gamma = tv > 1e-12 ? 1.0 / (3.0 * tv) : 1.0;
    }
    auto kernel = [&](const std::array<double, 3>& a, const std::array<double, 3>& b) {
        const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
        return std::exp(-gamma * (dx * dx + dy * dy + dz * dz));
    };

    std::vector<double> alpha(size_t(n), 0.0);
    double rho = 0.0;

    if (opts.mode == "exact") {
        // SMO on the one-class dual: min 0.5 a^T Q a, 0 <= a_i <= C, sum a = 1
        const double C = 1.0 / (opts.nu * n);
        int full = int(std::floor(opts.nu * n));
        for (int i = 0; i < full && i < n; ++i) alpha[size_t(i)] = C;
        double assigned = C * full;
        if (full < n) alpha[size_t(full)] = 1.0 - assigned;

        std::vector<double> grad(size_t(n), 0.0);  // (Q alpha)_i
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < n; ++j)
                if (alpha[size_t(j)] > 0.0) s += alpha[size_t(j)] * kernel(pts[size_t(i)], pts[size_t(j)]);
            grad[size_t(i)] = s;
        }
        const int max_iter = 200 * n;
        const double tol = 1e-8;
        for (int it = 0; it < max_iter; ++it) {
            int up = -1, down = -1;
            for (int i = 0; i < n; ++i) {
                if (alpha[size_t(i)] < C - 1e-15 && (up < 0 || grad[size_t(i)] < grad[size_t(up)])) up = i;
                if (alpha[size_t(i)] > 1e-15 && (down < 0 || grad[size_t(i)] > grad[size_t(down)])) down = i;
            }
            if (up < 0 || down < 0 || grad[size_t(down)] - grad[size_t(up)] < tol) break;
            const double qud = kernel(pts[size_t(up)], pts[size_t(down)]);
            const double curv = std::max(1e-12, 2.0 - 2.0 * qud);  // k(x,x) = 1 for rbf
            double delta = (grad[size_t(down)] - grad[size_t(up)]) / curv;
            delta = std::min(delta, C - alpha[size_t(up)]);
            delta = std::min(delta, alpha[size_t(down)]);
            if (delta <= 0.0) break;
            alpha[size_t(up)] += delta;
            alpha[size_t(down)] -= delta;
            for (int i = 0; i < n; ++i)
                grad[size_t(i)] += delta * (kernel(pts[size_t(i)], pts[size_t(up)]) -
                                            kernel(pts[size_t(i)], pts[size_t(down)]));
        }
        // rho from the free support vectors (fallback: bound midpoint)
        double acc = 0.0;
        int free_count = 0;
        for (int i = 0; i < n; ++i)
            if (alpha[size_t(i)] > 1e-12 && alpha[size_t(i)] < C - 1e-12) {
                acc += grad[size_t(i)];
                ++free_count;
            }
        if (free_count > 0) {
            rho = acc / free_count;
        } else {
            double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
            for (int i = 0; i < n; ++i) {
                if (alpha[size_t(i)] > 1e-12) lo = std::max(lo, grad[size_t(i)]);
                if (alpha[size_t(i)] < C - 1e-12) hi = std::min(hi, grad[size_t(i)]);
            }
            rho = 0.5 * (lo + hi);
        }
    } else if (opts.mode == "sgd") {
        // kernelized primal descent; coefficients kept unscaled with a global
        // decay factor, Pegasos style
        std::vector<double> a(size_t(n), 0.0);
        double scale = 1.0;
        double rho_sgd = 0.0;
        std::vector<size_t> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), size_t{0});
        Rng rng(Rng::mix(opts.seed, Rng::hash("ocsvm-sgd")));
        for (int epoch = 0; epoch < opts.epochs; ++epoch) {
            rng.shuffle(order);
            for (size_t oi = 0; oi < order.size(); ++oi) {
                const size_t i = order[oi];
                double f = 0.0;
                for (int j = 0; j < n; ++j)
                    if (a[size_t(j)] != 0.0) f += a[size_t(j)] * kernel(pts[i], pts[size_t(j)]);
                f *= scale;
                const bool viol = f < rho_sgd;
                scale *= (1.0 - opts.lr);
                if (viol) a[i] += opts.lr / (opts.nu * scale);
                rho_sgd += opts.lr * (1.0 - (viol ? 1.0 / opts.nu : 0.0));
            }
        }
        for (int i = 0; i < n; ++i) alpha[size_t(i)] = a[size_t(i)] * scale;
        // calibrate the offset so a nu-fraction of training scores violate it
        std::vector<double> fvals(size_t(n), 0.0);
        for (int i = 0; i < n; ++i) {
            double f = 0.0;
            for (int j = 0; j < n; ++j)
                if (alpha[size_t(j)] != 0.0) f += alpha[size_t(j)] * kernel(pts[size_t(i)], pts[size_t(j)]);
            fvals[size_t(i)] = f;
        }
        std::vector<double> sorted = fvals;
        std::sort(sorted.begin(), sorted.end());
        const size_t q = std::min(size_t(n) - 1, size_t(std::floor(opts.nu * (n - 1))));
        rho = sorted[q];
    } else {
        throw std::invalid_argument("ocsvm: unknown mode '" + opts.mode + "'");
    }

    support_.clear();
    alpha_.clear();
    for (int i = 0; i < n; ++i)
        if (alpha[size_t(i)] > 1e-14) {
            support_.push_back(pts[size_t(i)]);
            alpha_.push_back(alpha[size_t(i)]);
        }
    if (support_.empty()) {  // degenerate fit: fall back to uniform weights
        support_ = pts;
        alpha_.assign(size_t(n), 1.0 / n);
    }
    gamma_ = gamma;
    rho_ = rho;
}

DecisionModels fit_decision(const std::vector<std::array<double, 3>>& image_scores,
                            const std::vector<std::array<double, 3>>& patch_vectors,
                            const DecisionOptions& opts) {
    if (image_scores.size() < 4) throw std::invalid_argument("fit_decision: need >= 4 training samples");
    DecisionModels dm;

    const size_t n = image_scores.size();
    for (const auto& v : image_scores)
        for (int c = 0; c < 3; ++c) dm.mdm.mean[size_t(c)] += v[size_t(c)] / double(n);
    std::array<std::array<double, 3>, 3> cov{};
    for (const auto& v : image_scores)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                cov[size_t(i)][size_t(j)] += (v[size_t(i)] - dm.mdm.mean[size_t(i)]) *
                                             (v[size_t(j)] - dm.mdm.mean[size_t(j)]) / double(n);
    const double trace = cov[0][0] + cov[1][1] + cov[2][2];
    double lambda = opts.mdm_reg_scale * trace / 3.0;
    const double mean_scale =
        1.0 + dm.mdm.mean[0] * dm.mdm.mean[0] + dm.mdm.mean[1] * dm.mdm.mean[1] + dm.mdm.mean[2] * dm.mdm.mean[2];
    if (trace <= 1e-12 * mean_scale) {
        // all-identical training vectors: drop the numerical dust, keep lambda*I
        lambda = std::max(lambda, 1e-12);
        dm.mdm.degenerate = true;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) cov[size_t(i)][size_t(j)] = 0.0;
        std::cerr << "[miiad] warning: degenerate training score vectors, MDM uses lambda*I only\n";
    }
    for (int i = 0; i < 3; ++i) cov[size_t(i)][size_t(i)] += lambda;
    dm.mdm.lambda = lambda;
    if (!invert3(cov, dm.mdm.cov_inv)) {
        for (int i = 0; i < 3; ++i) cov[size_t(i)][size_t(i)] += 1e-9 + 1e-6 * trace;
        if (!invert3(cov, dm.mdm.cov_inv)) throw std::runtime_error("fit_decision: covariance not invertible");
        dm.mdm.degenerate = true;
    }

    dm.ocsvm.fit(patch_vectors, opts.ocsvm);
    return dm;
}

AnomalyResult decide(const DecisionModels& models, const ScoreVector& sv, int pixel_h, int pixel_w) {
    AnomalyResult res;
    res.sco_a = mdm_distance(models.mdm, sv.image_scores);
    res.seg_patch = Tensor({sv.patch_rows, sv.patch_cols});
    for (int i = 0; i < sv.patch_rows * sv.patch_cols; ++i)
        res.seg_patch.v[size_t(i)] = models.ocsvm.anomaly_score(sv.patch_maps[size_t(i)]);
    res.seg_pixel = Tensor({pixel_h, pixel_w});
    for (int r = 0; r < pixel_h; ++r)
        for (int c = 0; c < pixel_w; ++c) {
            const int pr = std::min(sv.patch_rows - 1, r * sv.patch_rows / pixel_h);
            const int pc = std::min(sv.patch_cols - 1, c * sv.patch_cols / pixel_w);
            res.seg_pixel.at(r, c) = res.seg_patch.at(pr, pc);
        }
    return res;
}

}  // namespace miiad::detect
