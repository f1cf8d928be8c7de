#include "miiad/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace miiad::nn {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

int Tape::push(Tensor value, bool needs, std::function<void()> back) {
    Node n;
    n.val = std::move(value);
    n.back = std::move(back);
    n.needs = needs;
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
}

Tensor& Tape::g(int id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.empty() && !n.val.empty()) n.grad = Tensor::zeros(n.val.shape);
    return n.grad;
}

int Tape::leaf(Tensor t) { return push(std::move(t), false); }

int Tape::input(Tensor t) { return push(std::move(t), true); }

int Tape::param(Param& p) {
    const int id = push(p.value, p.trainable);
    nodes_[size_t(id)].bound = p.trainable ? &p : nullptr;
    return id;
}

int Tape::add(int a, int b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw std::invalid_argument("add: shape mismatch");
    Tensor out = ta;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += tb.v[i];
    const bool needs = nodes_[a].needs || nodes_[b].needs;
    const int id = push(std::move(out), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, a, b] {
            const Tensor& go = nodes_[id].grad;
            if (nodes_[a].needs) {
                Tensor& ga = g(a);
                for (size_t i = 0; i < go.v.size(); ++i) ga.v[i] += go.v[i];
            }
            if (nodes_[b].needs) {
                Tensor& gb = g(b);
                for (size_t i = 0; i < go.v.size(); ++i) gb.v[i] += go.v[i];
            }
        };
    return id;
}

int Tape::sub(int a, int b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw std::invalid_argument("sub: shape mismatch");
    Tensor out = ta;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= tb.v[i];
    const bool needs = nodes_[a].needs || nodes_[b].needs;
    const int id = push(std::move(out), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, a, b] {
            const Tensor& go = nodes_[id].grad;
            if (nodes_[a].needs) {
                Tensor& ga = g(a);
                for (size_t i = 0; i < go.v.size(); ++i) ga.v[i] += go.v[i];
            }
            if (nodes_[b].needs) {
                Tensor& gb = g(b);
                for (size_t i = 0; i < go.v.size(); ++i) gb.v[i] -= go.v[i];
            }
        };
    return id;
}

int Tape::mul(int a, int b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw std::invalid_argument("mul: shape mismatch");
    Tensor out = ta;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= tb.v[i];
    const bool needs = nodes_[a].needs || nodes_[b].needs;
    const int id = push(std::move(out), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, a, b] {
            const Tensor& go = nodes_[id].grad;
            const Tensor& ta2 = nodes_[a].val;
            const Tensor& tb2 = nodes_[b].val;
            if (nodes_[a].needs) {
                Tensor& ga = g(a);
                for (size_t i = 0; i < go.v.size(); ++i) ga.v[i] += go.v[i] * tb2.v[i];
            }
            if (nodes_[b].needs) {
                Tensor& gb = g(b);
                for (size_t i = 0; i < go.v.size(); ++i) gb.v[i] += go.v[i] * ta2.v[i];
            }
        };
    return id;
}

int Tape::scale(int a, double c) {
    Tensor out = val(a);
    for (auto& x : out.v) x *= c;
    const bool needs = nodes_[a].needs;
    const int id = push(std::move(out), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, a, c] {
            const Tensor& go = nodes_[id].grad;
            Tensor& ga = g(a);
            for (size_t i = 0; i < go.v.size(); ++i) ga.v[i] += c * go.v[i];
        };
    return id;
}

int Tape::add_rowvec(int a, int rowvec) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(rowvec);
    const int m = ta.rows(), n = ta.cols();
    if (int(tb.size()) != n) throw std::invalid_argument("add_rowvec: width mismatch");
    Tensor out = ta;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) += tb.v[size_t(j)];
    const bool needs = nodes_[a].needs || nodes_[rowvec].needs;
    const int id = push(std::move(out), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, a, rowvec, m, n] {
            const Tensor& go = nodes_[id].grad;
            if (nodes_[a].needs) {
                Tensor& ga = g(a);
                for (size_t i = 0; i < go.v.size(); ++i) ga.v[i] += go.v[i];
            }
            if (nodes_[rowvec].needs) {
                Tensor& gb = g(rowvec);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) gb.v[size_t(j)] += go.at(i, j);
            }
        };
    return id;
}

int Tape::matmul(int a, int b) {
    Tensor out = miiad::matmul(val(a), val(b));
    const bool needs = nodes_[a].needs || nodes_[b].needs;
    const int id = push(std::move(out), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, a, b] {
            const Tensor& go = nodes_[id].grad;
            const Tensor& ta = nodes_[a].val;
            const Tensor& tb = nodes_[b].val;
            const int m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
            if (nodes_[a].needs) {
                Tensor& ga = g(a);  // go (m x n) * tb^T (n x k)
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const double gv = go.at(i, j);
                        if (gv == 0.0) continue;
                        for (int p = 0; p < k; ++p) ga.at(i, p) += gv * tb.at(p, j);
                    }
            }
            if (nodes_[b].needs) {
                Tensor& gb = g(b);  // ta^T (k x m) * go (m x n)
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        const double av = ta.at(i, p);
                        if (av == 0.0) continue;
                        for (int j = 0; j < n; ++j) gb.at(p, j) += av * go.at(i, j);
                    }
            }
        };
    return id;
}

int Tape::transpose(int a) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw std::invalid_argument("transpose: rank != 2");
    const int m = ta.shape[0], n = ta.shape[1];
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = ta.at(i, j);
    const bool needs = nodes_[a].needs;
    const int id = push(std::move(out), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, a, m, n] {
            const Tensor& go = nodes_[id].grad;
            Tensor& ga = g(a);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga.at(i, j) += go.at(j, i);
        };
    return id;
}

int Tape::linear(int x, int w, int b) { return add_rowvec(matmul(x, w), b); }

int Tape::reshape(int a, std::vector<int> shape) {
    const Tensor& ta = val(a);
    if (Tensor::numel_of(shape) != (long long)ta.size()) throw std::invalid_argument("reshape: numel mismatch");
    Tensor out(shape, ta.v);
    const bool needs = nodes_[a].needs;
    const int id = push(std::move(out), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, a] {
            const Tensor& go = nodes_[id].grad;
            Tensor& ga = g(a);
            for (size_t i = 0; i < go.v.size(); ++i) ga.v[i] += go.v[i];
        };
    return id;
}

int Tape::concat_rows(const std::vector<int>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    const int n = val(parts[0]).cols();
    int m = 0;
    bool needs = false;
    for (int p : parts) {
        if (val(p).cols() != n) throw std::invalid_argument("concat_rows: width mismatch");
        m += val(p).rows();
        needs = needs || nodes_[p].needs;
    }
    Tensor out({m, n});
    int r = 0;
    for (int p : parts) {
        const Tensor& tp = val(p);
        std::copy(tp.v.begin(), tp.v.end(), out.v.begin() + size_t(r) * n);
        r += tp.rows();
    }
    const int id = push(std::move(out), needs, nullptr);
    if (needs) {
        std::vector<int> ps = parts;
        nodes_[id].back = [this, id, ps, n] {
            const Tensor& go = nodes_[id].grad;
            int r2 = 0;
            for (int p : ps) {
                const int rows = nodes_[p].val.rows();
                if (nodes_[p].needs) {
                    Tensor& gp = g(p);
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < n; ++j) gp.at(i, j) += go.at(r2 + i, j);
                }
                r2 += rows;
            }
        };
    }
    return id;
}

int Tape::slice_rows(int a, int r0, int r1) {
    const Tensor& ta = val(a);
    const int n = ta.cols();
    if (r0 < 0 || r1 > ta.rows() || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
    Tensor out({r1 - r0, n});
    std::copy(ta.v.begin() + size_t(r0) * n, ta.v.begin() + size_t(r1) * n, out.v.begin());
    const bool needs = nodes_[a].needs;
    const int id = push(std::move(out), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, a, r0, n] {
            const Tensor& go = nodes_[id].grad;
            Tensor& ga = g(a);
            for (int i = 0; i < go.rows(); ++i)
                for (int j = 0; j < n; ++j) ga.at(r0 + i, j) += go.at(i, j);
        };
    return id;
}

int Tape::concat_cols(const std::vector<int>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const int m = val(parts[0]).rows();
    int n = 0;
    bool needs = false;
    for (int p : parts) {
        if (val(p).rows() != m) throw std::invalid_argument("concat_cols: height mismatch");
        n += val(p).cols();
        needs = needs || nodes_[p].needs;
    }
    Tensor out({m, n});
    int c = 0;
    for (int p : parts) {
        const Tensor& tp = val(p);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < tp.cols(); ++j) out.at(i, c + j) = tp.at(i, j);
        c += tp.cols();
    }
    const int id = push(std::move(out), needs, nullptr);
    if (needs) {
        std::vector<int> ps = parts;
        nodes_[id].back = [this, id, ps, m] {
            const Tensor& go = nodes_[id].grad;
            int c2 = 0;
            for (int p : ps) {
                const int cols = nodes_[p].val.cols();
                if (nodes_[p].needs) {
                    Tensor& gp = g(p);
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < cols; ++j) gp.at(i, j) += go.at(i, c2 + j);
                }
                c2 += cols;
            }
        };
    }
    return id;
}

int Tape::slice_cols(int a, int c0, int c1) {
    const Tensor& ta = val(a);
    if (c0 < 0 || c1 > ta.cols() || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    const int m = ta.rows();
    Tensor out({m, c1 - c0});
    for (int i = 0; i < m; ++i)
        for (int j = c0; j < c1; ++j) out.at(i, j - c0) = ta.at(i, j);
    const bool needs = nodes_[a].needs;
    const int id = push(std::move(out), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, a, c0, m] {
            const Tensor& go = nodes_[id].grad;
            Tensor& ga = g(a);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < go.cols(); ++j) ga.at(i, c0 + j) += go.at(i, j);
        };
    return id;
}

int Tape::gelu(int a) {
    const Tensor& ta = val(a);
    Tensor out = ta;
    for (auto& x : out.v) x = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    const bool needs = nodes_[a].needs;
    const int id = push(std::move(out), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, a] {
            const Tensor& go = nodes_[id].grad;
            const Tensor& ta2 = nodes_[a].val;
            Tensor& ga = g(a);
            for (size_t i = 0; i < go.v.size(); ++i) {
                const double x = ta2.v[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                ga.v[i] += go.v[i] * (cdf + x * pdf);
            }
        };
    return id;
}

int Tape::layer_norm(int x, int gain, int bias, double eps) {
    const Tensor& tx = val(x);
    const Tensor& tg = val(gain);
    const Tensor& tb = val(bias);
    const int m = tx.rows(), n = tx.cols();
    if (int(tg.size()) != n || int(tb.size()) != n) throw std::invalid_argument("layer_norm: param width mismatch");
    Tensor out({m, n});
    std::vector<double> mean(m), istd(m);
    for (int i = 0; i < m; ++i) {
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += tx.at(i, j);
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = tx.at(i, j) - mu;
            var += d * d;
        }
        var /= n;
        mean[i] = mu;
        istd[i] = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < n; ++j) out.at(i, j) = tg.v[size_t(j)] * (tx.at(i, j) - mu) * istd[i] + tb.v[size_t(j)];
    }
    const bool needs = nodes_[x].needs || nodes_[gain].needs || nodes_[bias].needs;
    const int id = push(std::move(out), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, x, gain, bias, mean, istd, m, n] {
            const Tensor& go = nodes_[id].grad;
            const Tensor& tx2 = nodes_[x].val;
            const Tensor& tg2 = nodes_[gain].val;
            for (int i = 0; i < m; ++i) {
                // xhat = (x - mu) * istd
                double sum_gy = 0.0, sum_gy_xhat = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double xhat = (tx2.at(i, j) - mean[i]) * istd[i];
                    const double gy = go.at(i, j) * tg2.v[size_t(j)];
                    sum_gy += gy;
                    sum_gy_xhat += gy * xhat;
                }
                if (nodes_[x].needs) {
                    Tensor& gx = g(x);
                    for (int j = 0; j < n; ++j) {
                        const double xhat = (tx2.at(i, j) - mean[i]) * istd[i];
                        const double gy = go.at(i, j) * tg2.v[size_t(j)];
                        gx.at(i, j) += istd[i] * (gy - sum_gy / n - xhat * sum_gy_xhat / n);
                    }
                }
                if (nodes_[gain].needs) {
                    Tensor& gg = g(gain);
                    for (int j = 0; j < n; ++j) {
                        const double xhat = (tx2.at(i, j) - mean[i]) * istd[i];
                        gg.v[size_t(j)] += go.at(i, j) * xhat;
                    }
                }
                if (nodes_[bias].needs) {
                    Tensor& gb = g(bias);
                    for (int j = 0; j < n; ++j) gb.v[size_t(j)] += go.at(i, j);
                }
            }
        };
    return id;
}

Tensor masked_softmax_kernel(const Tensor& logits, const std::vector<uint8_t>& rowmask) {
    const int m = logits.rows(), n = logits.cols();
    if (int(rowmask.size()) != m * n) throw std::invalid_argument("masked softmax: mask size mismatch");
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (int j = 0; j < n; ++j)
            if (rowmask[size_t(i) * n + j]) {
                mx = std::max(mx, logits.at(i, j));
                any = true;
            }
        if (!any) throw std::invalid_argument("masked softmax: row with no permitted entries");
        double z = 0.0;
        for (int j = 0; j < n; ++j)
            if (rowmask[size_t(i) * n + j]) z += std::exp(logits.at(i, j) - mx);
        for (int j = 0; j < n; ++j)
            out.at(i, j) = rowmask[size_t(i) * n + j] ? std::exp(logits.at(i, j) - mx) / z : 0.0;
    }
    return out;
}

int Tape::softmax_rows(int a) {
    const Tensor& ta = val(a);
    std::vector<uint8_t> all(ta.size(), 1);
    Tensor out = masked_softmax_kernel(ta, all);
    const bool needs = nodes_[a].needs;
    const int id = push(std::move(out), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, a] {
            const Tensor& go = nodes_[id].grad;
            const Tensor& y = nodes_[id].val;
            Tensor& ga = g(a);
            const int m = y.rows(), n = y.cols();
            for (int i = 0; i < m; ++i) {
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += go.at(i, j) * y.at(i, j);
                for (int j = 0; j < n; ++j) ga.at(i, j) += y.at(i, j) * (go.at(i, j) - dot);
            }
        };
    return id;
}

int Tape::masked_softmax_rows(int a, const std::vector<uint8_t>& rowmask) {
    Tensor out = masked_softmax_kernel(val(a), rowmask);
    const bool needs = nodes_[a].needs;
    const int id = push(std::move(out), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, a] {
            // y is exactly zero at masked entries, so the plain softmax
            // jacobian collapses to the permitted block
            const Tensor& go = nodes_[id].grad;
            const Tensor& y = nodes_[id].val;
            Tensor& ga = g(a);
            const int m = y.rows(), n = y.cols();
            for (int i = 0; i < m; ++i) {
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += go.at(i, j) * y.at(i, j);
                for (int j = 0; j < n; ++j) ga.at(i, j) += y.at(i, j) * (go.at(i, j) - dot);
            }
        };
    return id;
}

int Tape::l2_normalize_rows(int a) {
    const Tensor& ta = val(a);
    const int m = ta.rows(), n = ta.cols();
    Tensor out({m, n});
    std::vector<double> norms(m);
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += ta.at(i, j) * ta.at(i, j);
        norms[i] = std::sqrt(s);
        const double d = norms[i] + 1e-12;
        for (int j = 0; j < n; ++j) out.at(i, j) = ta.at(i, j) / d;
    }
    const bool needs = nodes_[a].needs;
    const int id = push(std::move(out), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, a, norms, m, n] {
            const Tensor& go = nodes_[id].grad;
            const Tensor& ta2 = nodes_[a].val;
            Tensor& ga = g(a);
            for (int i = 0; i < m; ++i) {
                const double d = norms[i] + 1e-12;
                const double nn = std::max(norms[i], 1e-12);
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += go.at(i, j) * ta2.at(i, j);
                for (int j = 0; j < n; ++j)
                    ga.at(i, j) += go.at(i, j) / d - ta2.at(i, j) * dot / (d * d * nn);
            }
        };
    return id;
}

int Tape::mean_rows(int a) {
    const Tensor& ta = val(a);
    const int m = ta.rows(), n = ta.cols();
    Tensor out({1, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(0, j) += ta.at(i, j) / m;
    const bool needs = nodes_[a].needs;
    const int id = push(std::move(out), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, a, m, n] {
            const Tensor& go = nodes_[id].grad;
            Tensor& ga = g(a);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga.at(i, j) += go.at(0, j) / m;
        };
    return id;
}

int Tape::cross_entropy_rows(int logits, const std::vector<int>& targets) {
    const Tensor& tl = val(logits);
    const int m = tl.rows(), n = tl.cols();
    if (int(targets.size()) != m) throw std::invalid_argument("cross_entropy: target count mismatch");
    double loss = 0.0;
    for (int i = 0; i < m; ++i) {
        double mx = tl.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, tl.at(i, j));
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(tl.at(i, j) - mx);
        loss += std::log(z) + mx - tl.at(i, targets[size_t(i)]);
    }
    loss /= m;
    const bool needs = nodes_[logits].needs;
    const int id = push(Tensor({1, 1}, {loss}), needs, nullptr);
    if (needs) {
        std::vector<int> tg = targets;
        nodes_[id].back = [this, id, logits, tg, m, n] {
            const double gl = nodes_[id].grad.v[0];
            const Tensor& tl2 = nodes_[logits].val;
            Tensor& ga = g(logits);
            for (int i = 0; i < m; ++i) {
                double mx = tl2.at(i, 0);
                for (int j = 1; j < n; ++j) mx = std::max(mx, tl2.at(i, j));
                double z = 0.0;
                for (int j = 0; j < n; ++j) z += std::exp(tl2.at(i, j) - mx);
                for (int j = 0; j < n; ++j) {
                    const double p = std::exp(tl2.at(i, j) - mx) / z;
                    ga.at(i, j) += gl * (p - (j == tg[size_t(i)] ? 1.0 : 0.0)) / m;
                }
            }
        };
    }
    return id;
}

int Tape::kl_const_target(const Tensor& p, int logits) {
    const Tensor& tl = val(logits);
    const int m = tl.rows(), n = tl.cols();
    if (!p.same_shape(tl)) throw std::invalid_argument("kl: shape mismatch");
    double loss = 0.0;
    for (int i = 0; i < m; ++i) {
        double mx = tl.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, tl.at(i, j));
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(tl.at(i, j) - mx);
        const double logz = std::log(z) + mx;
        for (int j = 0; j < n; ++j) {
            const double pj = p.at(i, j);
            if (pj > 0.0) loss += pj * (std::log(pj) - (tl.at(i, j) - logz));
        }
    }
    loss /= m;
    const bool needs = nodes_[logits].needs;
    const int id = push(Tensor({1, 1}, {loss}), needs, nullptr);
    if (needs) {
        Tensor pc = p;
        nodes_[id].back = [this, id, logits, pc, m, n] {
            const double gl = nodes_[id].grad.v[0];
            const Tensor& tl2 = nodes_[logits].val;
            Tensor& ga = g(logits);
            for (int i = 0; i < m; ++i) {
                double mx = tl2.at(i, 0);
                for (int j = 1; j < n; ++j) mx = std::max(mx, tl2.at(i, j));
                double z = 0.0;
                for (int j = 0; j < n; ++j) z += std::exp(tl2.at(i, j) - mx);
                double psum = 0.0;
                for (int j = 0; j < n; ++j) psum += pc.at(i, j);
                for (int j = 0; j < n; ++j) {
                    const double q = std::exp(tl2.at(i, j) - mx) / z;
                    ga.at(i, j) += gl * (psum * q - pc.at(i, j)) / m;
                }
            }
        };
    }
    return id;
}

int Tape::mse_to_const(int a, const Tensor& target) {
    const Tensor& ta = val(a);
    if (!ta.same_shape(target)) throw std::invalid_argument("mse: shape mismatch");
    double loss = 0.0;
    for (size_t i = 0; i < ta.v.size(); ++i) {
        const double d = ta.v[i] - target.v[i];
        loss += d * d;
    }
    loss /= double(ta.v.size());
    const bool needs = nodes_[a].needs;
    const int id = push(Tensor({1, 1}, {loss}), needs, nullptr);
    if (needs) {
        Tensor tc = target;
        nodes_[id].back = [this, id, a, tc] {
            const double gl = nodes_[id].grad.v[0];
            const Tensor& ta2 = nodes_[a].val;
            Tensor& ga = g(a);
            const double inv = 2.0 / double(ta2.v.size());
            for (size_t i = 0; i < ta2.v.size(); ++i) ga.v[i] += gl * inv * (ta2.v[i] - tc.v[i]);
        };
    }
    return id;
}

int Tape::mean_all(int a) {
    const Tensor& ta = val(a);
    double s = 0.0;
    for (double x : ta.v) s += x;
    s /= double(ta.v.size());
    const bool needs = nodes_[a].needs;
    const int id = push(Tensor({1, 1}, {s}), needs, nullptr);
    if (needs)
        nodes_[id].back = [this, id, a] {
            const double gl = nodes_[id].grad.v[0];
            Tensor& ga = g(a);
            const double inv = 1.0 / double(ga.v.size());
            for (auto& x : ga.v) x += gl * inv;
        };
    return id;
}

void Tape::backward(int loss) {
    if (val(loss).size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    g(loss).v[0] = 1.0;
    for (int id = loss; id >= 0; --id) {
        Node& n = nodes_[size_t(id)];
        if (!n.needs || n.grad.empty()) continue;
        if (n.back) n.back();
        if (n.bound) {
            if (n.bound->grad.empty()) n.bound->zero_grad();
            for (size_t i = 0; i < n.grad.v.size(); ++i) n.bound->grad.v[i] += n.grad.v[i];
        }
    }
}

void AdamW::step(std::vector<Group>& groups) {
    ++step_count;
    const double t = double(step_count);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (auto& gr : groups) {
        for (Param* p : gr.params) {
            if (!p->trainable || p->grad.empty()) continue;
            if (p->m.empty()) {
                p->m = Tensor::zeros(p->value.shape);
                p->v = Tensor::zeros(p->value.shape);
            }
            for (size_t i = 0; i < p->value.v.size(); ++i) {
                const double gi = p->grad.v[i];
                p->m.v[i] = beta1 * p->m.v[i] + (1.0 - beta1) * gi;
                p->v.v[i] = beta2 * p->v.v[i] + (1.0 - beta2) * gi * gi;
                const double mhat = p->m.v[i] / bc1;
                const double vhat = p->v.v[i] / bc2;
                p->value.v[i] -= gr.lr * (mhat / (std::sqrt(vhat) + eps) + gr.weight_decay * p->value.v[i]);
            }
        }
    }
}

}  // namespace miiad::nn
