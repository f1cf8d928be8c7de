#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "miiad/autodiff.hpp"
#include "miiad/params.hpp"
#include "miiad/rng.hpp"

using namespace miiad;
using nn::Param;
using nn::Tape;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& x : t.v) x = rng.normal(0.0, scale);
    return t;
}

// central finite difference of a scalar-valued graph wrt one parameter entry
double fd_grad(Param& p, size_t idx, const std::function<double()>& eval, double h = 1e-6) {
    const double orig = p.value.v[idx];
    p.value.v[idx] = orig + h;
    const double fp = eval();
    p.value.v[idx] = orig - h;
    const double fm = eval();
    p.value.v[idx] = orig;
    return (fp - fm) / (2.0 * h);
}

void check_param_grads(Param& p, const std::function<double()>& eval,
                       const std::function<void(Param&)>& run_backward, double tol = 1e-6) {
    run_backward(p);
    REQUIRE(!p.grad.empty());
    for (size_t i = 0; i < p.value.v.size(); ++i) {
        const double fd = fd_grad(p, i, eval);
        const double an = p.grad.v[i];
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
        CHECK(std::abs(fd - an) / denom < tol);
    }
}

}  // namespace

TEST_CASE("elementwise and matmul gradients match finite differences") {
    Rng rng(11);
    Param a;
    a.name = "a";
    a.value = random_tensor({3, 4}, rng);
    Param b;
    b.name = "b";
    b.value = random_tensor({4, 2}, rng);

    auto eval = [&] {
        Tape t;
        const int x = t.param(a);
        const int y = t.param(b);
        return t.val(t.mean_all(t.gelu(t.matmul(x, y)))).v[0];
    };
    auto backward = [&](Param&) {
        a.zero_grad();
        b.zero_grad();
        Tape t;
        const int x = t.param(a);
        const int y = t.param(b);
        t.backward(t.mean_all(t.gelu(t.matmul(x, y))));
    };
    check_param_grads(a, eval, backward);
    check_param_grads(b, eval, backward);
}

TEST_CASE("layer norm gradients") {
    Rng rng(12);
    Param x, g, b;
    x.value = random_tensor({4, 6}, rng);
    g.value = random_tensor({1, 6}, rng, 0.5);
    b.value = random_tensor({1, 6}, rng, 0.5);
    for (auto& v : g.value.v) v += 1.0;

    auto eval = [&] {
        Tape t;
        return t.val(t.mean_all(t.layer_norm(t.param(x), t.param(g), t.param(b)))).v[0];
    };
    auto backward = [&](Param&) {
        x.zero_grad();
        g.zero_grad();
        b.zero_grad();
        Tape t;
        t.backward(t.mean_all(t.layer_norm(t.param(x), t.param(g), t.param(b))));
    };
    check_param_grads(x, eval, backward);
    check_param_grads(g, eval, backward);
    check_param_grads(b, eval, backward);
}

TEST_CASE("softmax, slicing, and concat gradients") {
    Rng rng(13);
    Param x;
    x.value = random_tensor({5, 7}, rng);
    Tensor target = random_tensor({2, 3}, rng);

    auto build = [&](Tape& t) {
        const int in = t.param(x);
        const int sm = t.softmax_rows(in);
        const int s1 = t.slice_rows(sm, 0, 2);
        const int s2 = t.slice_cols(s1, 1, 4);
        const int cat = t.concat_rows({t.slice_rows(s2, 0, 1), t.slice_rows(s2, 1, 2)});
        return t.mse_to_const(cat, target);
    };
    auto eval = [&] {
        Tape t;
        return t.val(build(t)).v[0];
    };
    auto backward = [&](Param&) {
        x.zero_grad();
        Tape t;
        t.backward(build(t));
    };
    check_param_grads(x, eval, backward);
}

TEST_CASE("masked softmax gradients ignore masked entries") {
    Rng rng(14);
    Param x;
    x.value = random_tensor({3, 3}, rng);
    std::vector<uint8_t> mask = {1, 1, 0, 0, 1, 1, 1, 0, 1};
    Tensor target = random_tensor({3, 3}, rng);

    auto eval = [&] {
        Tape t;
        return t.val(t.mse_to_const(t.masked_softmax_rows(t.param(x), mask), target)).v[0];
    };
    auto backward = [&](Param&) {
        x.zero_grad();
        Tape t;
        t.backward(t.mse_to_const(t.masked_softmax_rows(t.param(x), mask), target));
    };
    check_param_grads(x, eval, backward);
}

TEST_CASE("l2 normalize and cross entropy gradients") {
    Rng rng(15);
    Param x;
    x.value = random_tensor({4, 5}, rng);
    const std::vector<int> targets = {1, 0, 3, 2};

    auto eval = [&] {
        Tape t;
        return t.val(t.cross_entropy_rows(t.scale(t.l2_normalize_rows(t.param(x)), 3.0), targets)).v[0];
    };
    auto backward = [&](Param&) {
        x.zero_grad();
        Tape t;
        t.backward(t.cross_entropy_rows(t.scale(t.l2_normalize_rows(t.param(x)), 3.0), targets));
    };
    check_param_grads(x, eval, backward);
}

TEST_CASE("kl divergence gradient wrt logits") {
    Rng rng(16);
    Param q;
    q.value = random_tensor({2, 4}, rng);
    Tensor p({2, 4});
    double s0 = 0, s1 = 0;
    for (int j = 0; j < 4; ++j) {
        p.at(0, j) = std::abs(rng.normal()) + 0.1;
        p.at(1, j) = std::abs(rng.normal()) + 0.1;
        s0 += p.at(0, j);
        s1 += p.at(1, j);
    }
    for (int j = 0; j < 4; ++j) {
        p.at(0, j) /= s0;
        p.at(1, j) /= s1;
    }

    auto eval = [&] {
        Tape t;
        return t.val(t.kl_const_target(p, t.param(q))).v[0];
    };
    auto backward = [&](Param&) {
        q.zero_grad();
        Tape t;
        t.backward(t.kl_const_target(p, t.param(q)));
    };
    check_param_grads(q, eval, backward);

    // KL(p || p) = 0
    Tape t;
    Tensor logit_p = p;
    for (auto& v : logit_p.v) v = std::log(v);
    CHECK(t.val(t.kl_const_target(p, t.leaf(logit_p))).v[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("transformer block gradient flows to input") {
    Rng rng(17);
    nn::ParamStore store;
    const auto bp = nn::make_block(store, "blk", 8, 2, true, rng);
    Param x;
    x.value = random_tensor({5, 8}, rng);
    Tensor target = random_tensor({5, 8}, rng);

    auto eval = [&] {
        Tape t;
        return t.val(t.mse_to_const(nn::transformer_block(t, t.param(x), bp, 2), target)).v[0];
    };
    auto backward = [&](Param&) {
        x.zero_grad();
        store.zero_grads();
        Tape t;
        t.backward(t.mse_to_const(nn::transformer_block(t, t.param(x), bp, 2), target));
    };
    check_param_grads(x, eval, backward, 1e-5);
    check_param_grads(store.at("blk.wq"), eval, backward, 1e-5);
    check_param_grads(store.at("blk.mlp.w2"), eval, backward, 1e-5);
}

TEST_CASE("frozen params receive no gradient, inputs still do") {
    Rng rng(18);
    Param w;
    w.value = random_tensor({3, 3}, rng);
    w.trainable = false;
    Param x;
    x.value = random_tensor({2, 3}, rng);

    Tape t;
    const int loss = t.mean_all(t.matmul(t.param(x), t.param(w)));
    t.backward(loss);
    CHECK(w.grad.empty());
    REQUIRE(!x.grad.empty());
    double nonzero = 0;
    for (double g : x.grad.v) nonzero += std::abs(g);
    CHECK(nonzero > 0.0);
}

TEST_CASE("adamw updates trainable params only and decays weights") {
    Rng rng(19);
    Param w;
    w.value = random_tensor({2, 2}, rng);
    w.zero_grad();
    for (auto& g : w.grad.v) g = 1.0;
    Param frozen;
    frozen.value = random_tensor({2, 2}, rng);
    frozen.trainable = false;
    const Tensor before = frozen.value;

    nn::AdamW opt;
    std::vector<nn::AdamW::Group> groups(1);
    groups[0].params = {&w, &frozen};
    groups[0].lr = 0.1;
    groups[0].weight_decay = 0.0;
    const Tensor w_before = w.value;
    opt.step(groups);
    CHECK(frozen.value.v == before.v);
    for (size_t i = 0; i < w.value.v.size(); ++i)
        CHECK(w.value.v[i] == doctest::Approx(w_before.v[i] - 0.1).epsilon(1e-6));
}
