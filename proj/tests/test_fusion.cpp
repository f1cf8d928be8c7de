#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "miiad/fusion.hpp"
#include "miiad/rng.hpp"

using namespace miiad;
using namespace miiad::fusion;

namespace {

FusionConfig small_cfg() {
    FusionConfig cfg;
    cfg.d_f = 8;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.tokens = 4;
    cfg.d_pc_in = 5;
    cfg.d_rgb_in = 7;
    cfg.instr_len = 3;
    cfg.instr_start = 0;
    cfg.instr_end = 1;
    cfg.d_g = 8;
    cfg.target_hidden = 4;
    cfg.d_z = 4;
    cfg.xi_hidden = 3;
    cfg.d_e = 4;
    cfg.rank = 2;
    cfg.temperature = 1.0;
    return cfg;
}

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.v) v = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("select_instruction covers the three valid masks") {
    CHECK(select_instruction({true, false}) == 0);   // pc missing -> I_pc
    CHECK(select_instruction({false, true}) == 1);   // rgb missing -> I_rgb
    CHECK(select_instruction({true, true}) == 2);    // complete
    CHECK_THROWS_AS(select_instruction({false, false}), std::invalid_argument);
}

TEST_CASE("prepend_instruction concatenation semantics") {
    Rng rng(61);
    const Tensor h = random_tensor({32, 8}, rng);
    const Tensor instr = random_tensor({16, 8}, rng);

    const Tensor out = prepend_instruction(instr, h);
    CHECK(out.rows() == 48);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 8; ++j) CHECK(out.at(i, j) == instr.at(i, j));
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 8; ++j) CHECK(out.at(16 + i, j) == h.at(i, j));

    const Tensor empty({0, 8});
    const Tensor same = prepend_instruction(empty, h);
    CHECK(same.v == h.v);

    CHECK_THROWS_AS(prepend_instruction(random_tensor({4, 6}, rng), h), std::invalid_argument);
}

TEST_CASE("fuse bookkeeping, determinism, and live instructions") {
    Rng rng(62);
    nn::ParamStore store;
    const FusionConfig cfg = small_cfg();
    FusionModel model(store, cfg, rng);

    Rng irng(63);
    const Tensor f_pc = random_tensor({cfg.tokens, cfg.d_pc_in}, irng);
    const Tensor f_rgb = random_tensor({cfg.tokens, cfg.d_rgb_in}, irng);

    nn::Tape t1;
    const FusedStreams a = model.forward(t1, f_pc, f_rgb, {true, true});
    CHECK(t1.val(a.f_pc_hat).shape == std::vector<int>{cfg.tokens, cfg.d_f});
    CHECK(t1.val(a.f_rgb_hat).shape == std::vector<int>{cfg.tokens, cfg.d_f});
    CHECK(t1.val(a.g_pc).shape == std::vector<int>{cfg.tokens, cfg.d_g});
    CHECK(t1.val(a.g_fs).shape == std::vector<int>{cfg.tokens, cfg.d_g});

    nn::Tape t2;
    const FusedStreams b = model.forward(t2, f_pc, f_rgb, {true, true});
    CHECK(t1.val(a.g_pc).v == t2.val(b.g_pc).v);  // frozen forward is deterministic

    // feeding a different instruction block changes the outputs
    nn::Tape t3;
    const int apc = model.adapter_pc(t3, f_pc);
    const int argb = model.adapter_rgb(t3, f_rgb);
    const auto [pc0, rgb0] = model.fuse(t3, apc, argb, 0);
    nn::Tape t4;
    const int apc2 = model.adapter_pc(t4, f_pc);
    const int argb2 = model.adapter_rgb(t4, f_rgb);
    const auto [pc1, rgb1] = model.fuse(t4, apc2, argb2, 1);
    bool differs = false;
    for (size_t i = 0; i < t3.val(pc0).v.size(); ++i)
        differs = differs || t3.val(pc0).v[i] != t4.val(pc1).v[i];
    CHECK(differs);
    (void)rgb0;
    (void)rgb1;
}

TEST_CASE("keep-instructions variant accumulates then drops the prefix") {
    Rng rng(64);
    nn::ParamStore store;
    FusionConfig cfg = small_cfg();
    cfg.keep_instructions = true;
    FusionModel model(store, cfg, rng);

    Rng irng(65);
    const Tensor f_pc = random_tensor({cfg.tokens, cfg.d_pc_in}, irng);
    const Tensor f_rgb = random_tensor({cfg.tokens, cfg.d_rgb_in}, irng);
    nn::Tape t;
    const FusedStreams fs = model.forward(t, f_pc, f_rgb, {true, false});
    CHECK(t.val(fs.f_pc_hat).rows() == cfg.tokens);
    CHECK(t.val(fs.f_rgb_hat).rows() == cfg.tokens);
}

TEST_CASE("zero-depth fusion splits positionally without modification") {
    Rng rng(66);
    nn::ParamStore store;
    FusionConfig cfg = small_cfg();
    cfg.depth = 0;
    cfg.instr_start = 0;
    cfg.instr_end = 0;
    FusionModel model(store, cfg, rng);

    Rng irng(67);
    const Tensor a = random_tensor({cfg.tokens, cfg.d_f}, irng);
    const Tensor b = random_tensor({cfg.tokens, cfg.d_f}, irng);
    nn::Tape t;
    const auto [pc_hat, rgb_hat] = model.fuse(t, t.leaf(a), t.leaf(b), 2);
    CHECK(t.val(pc_hat).v == a.v);
    CHECK(t.val(rgb_hat).v == b.v);
}

TEST_CASE("hypernetwork: zero parameters generate zero weights") {
    Rng rng(68);
    nn::ParamStore store;
    const FusionConfig cfg = small_cfg();
    FusionModel model(store, cfg, rng);
    for (nn::Param* p : store.with_prefix("hyper."))
        for (auto& v : p->value.v) v = 0.0;

    nn::Tape t;
    const int summary = t.leaf(random_tensor({1, cfg.d_f}, rng));
    const auto gl = model.generate_layer(t, summary, "pc", 0);
    for (double v : t.val(gl.w).v) CHECK(v == 0.0);
    for (double v : t.val(gl.b).v) CHECK(v == 0.0);
}

TEST_CASE("hypernetwork: flat sizes and K/w decomposition") {
    Rng rng(69);
    nn::ParamStore store;
    FusionConfig cfg = small_cfg();
    cfg.d_f = 4;
    cfg.target_hidden = 3;
    cfg.d_g = 4;
    FusionModel model(store, cfg, rng);
    CHECK(model.target_flat(0) == 15);  // 4 -> 3 with bias
    CHECK(model.target_flat(1) == 16);  // 3 -> 4 with bias
    CHECK_THROWS_AS(model.target_flat(2), std::invalid_argument);

    // K depends only on z; w follows the stream summary (the delta head is
    // zero-initialized, so give it live weights first)
    for (const char* name : {"hyper.head.w2.n0", "hyper.head.b2.n0"})
        for (auto& v : store.at(name).value.v) v = rng.normal(0.0, 0.3);
    Rng irng(70);
    nn::Tape t;
    const int s1 = t.leaf(random_tensor({1, cfg.d_f}, irng));
    const int s2 = t.leaf(random_tensor({1, cfg.d_f}, irng));
    const auto g1 = model.generate_layer(t, s1, "pc", 0);
    const auto g2 = model.generate_layer(t, s2, "pc", 0);
    CHECK(t.val(g1.k_flat).v == t.val(g2.k_flat).v);
    bool w_differs = false;
    for (size_t i = 0; i < t.val(g1.w_flat).v.size(); ++i)
        w_differs = w_differs || t.val(g1.w_flat).v[i] != t.val(g2.w_flat).v[i];
    CHECK(w_differs);
}

TEST_CASE("generated MLP: zero weights give zero output, identity weights pass through") {
    Rng rng(71);
    nn::ParamStore store;
    FusionConfig cfg = small_cfg();
    cfg.d_f = 4;
    cfg.target_hidden = 4;
    cfg.d_g = 4;
    cfg.linear_target_mlp = true;
    FusionModel model(store, cfg, rng);

    for (nn::Param* p : store.with_prefix("hyper."))
        for (auto& v : p->value.v) v = 0.0;

    Rng irng(72);
    const Tensor x = random_tensor({3, 4}, irng);
    nn::Tape t;
    const int out_zero = model.project_stream(t, t.leaf(x), "pc");
    for (double v : t.val(out_zero).v) CHECK(v == 0.0);

    // encode identity matrices into the static generator bias: with every
    // other hyper parameter zero, K_flat equals xi.b2 exactly
    for (int n = 0; n < 2; ++n) {
        nn::Param& b2 = store.at("hyper.xi.b2.n" + std::to_string(n));
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) b2.value.at(0, i * 4 + j) = i == j ? 1.0 : 0.0;
    }
    nn::Tape t2;
    const int out_id = model.project_stream(t2, t2.leaf(x), "pc");
    for (size_t i = 0; i < x.v.size(); ++i) CHECK(t2.val(out_id).v[i] == doctest::Approx(x.v[i]).epsilon(1e-12));
}

TEST_CASE("generated-MLP gradients wrt every hypernetwork group match finite differences") {
    Rng rng(73);
    nn::ParamStore store;
    FusionConfig cfg = small_cfg();
    cfg.d_f = 6;
    cfg.target_hidden = 3;
    cfg.d_g = 4;
    FusionModel model(store, cfg, rng);
    // make the delta path live (it is zero-initialized)
    for (const char* name : {"hyper.head.w2.n0", "hyper.head.b2.n0", "hyper.head.w2.n1", "hyper.head.b2.n1"})
        for (auto& v : store.at(name).value.v) v = rng.normal(0.0, 0.3);

    Rng irng(74);
    const Tensor x = random_tensor({4, 6}, irng);
    const Tensor target = random_tensor({4, 4}, irng);

    auto loss_value = [&] {
        nn::Tape t;
        return t.val(t.mse_to_const(model.project_stream(t, t.leaf(x), "pc"), target)).v[0];
    };
    auto run_backward = [&] {
        store.zero_grads();
        nn::Tape t;
        t.backward(t.mse_to_const(model.project_stream(t, t.leaf(x), "pc"), target));
    };

    for (const char* name : {"hyper.z.pc0", "hyper.z.pc1", "hyper.xi.w1", "hyper.xi.b1", "hyper.xi.w2.n0",
                             "hyper.xi.b2.n1", "hyper.enc.w", "hyper.head.w1", "hyper.head.b1",
                             "hyper.head.w2.n0", "hyper.head.b2.n1"}) {
        nn::Param& p = store.at(name);
        run_backward();
        REQUIRE(!p.grad.empty());
        const double h = 1e-5;
        for (size_t i = 0; i < p.value.v.size(); i += std::max<size_t>(1, p.value.v.size() / 7)) {
            const double orig = p.value.v[i];
            p.value.v[i] = orig + h;
            const double fp = loss_value();
            p.value.v[i] = orig - h;
            const double fm = loss_value();
            p.value.v[i] = orig;
            const double fd = (fp - fm) / (2 * h);
            const double an = p.grad.v[i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
            CHECK(std::abs(fd - an) / denom < 1e-4);
        }
    }
}

TEST_CASE("infonce: hand values and invariances") {
    Rng rng(75);
    nn::ParamStore store;
    FusionConfig cfg = small_cfg();
    cfg.temperature = 1.0;
    FusionModel model(store, cfg, rng);

    // single candidate: softmax over one entry, loss 0
    nn::Tape t0;
    const int single = model.infonce(t0, t0.leaf(Tensor({1, 2}, {1.0, 0.0})),
                                     t0.leaf(Tensor({1, 2}, {1.0, 0.0})));
    CHECK(t0.val(single).v[0] == doctest::Approx(0.0).epsilon(1e-12));

    // two antipodal tokens: positive similarity +1, cross -1
    const Tensor g({2, 2}, {1.0, 0.0, -1.0, 0.0});
    nn::Tape t1;
    const int loss = model.infonce(t1, t1.leaf(g), t1.leaf(g));
    CHECK(t1.val(loss).v[0] == doctest::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-12));

    // invariance to a simultaneous rotation of both views
    const double th = 0.83;
    Tensor rot({2, 2}, {std::cos(th), std::sin(th), -std::sin(th), std::cos(th)});
    const Tensor gr = matmul(g, rot);
    nn::Tape t2;
    const int loss_r = model.infonce(t2, t2.leaf(gr), t2.leaf(gr));
    CHECK(t2.val(loss_r).v[0] == doctest::Approx(t1.val(loss).v[0]).epsilon(1e-9));

    // improving the diagonal with off-diagonals fixed lowers the loss
    Rng grng(76);
    Tensor a = Tensor({3, 4});
    Tensor b = Tensor({3, 4});
    for (auto& v : a.v) v = grng.normal();
    for (auto& v : b.v) v = grng.normal();
    nn::Tape t3;
    const double base = t3.val(model.infonce(t3, t3.leaf(a), t3.leaf(b))).v[0];
    CHECK(base >= 0.0);
    Tensor b_better = b;
    for (int i = 0; i < 3; ++i) {
        double na = 0;
        for (int j = 0; j < 4; ++j) na += a.at(i, j) * a.at(i, j);
        for (int j = 0; j < 4; ++j) b_better.at(i, j) = b.at(i, j) + 2.0 * a.at(i, j) / std::sqrt(na);
    }
    // (moving each b row toward its positive raises diagonal cosine)
    nn::Tape t4;
    const double better = t4.val(model.infonce(t4, t4.leaf(a), t4.leaf(b_better))).v[0];
    CHECK(better < base);
}

TEST_CASE("stage-1 training lowers the loss and leaves the backbone untouched") {
    Rng rng(77);
    nn::ParamStore store;
    FusionConfig cfg = small_cfg();
    FusionModel model(store, cfg, rng);

    // snapshot the frozen backbone
    std::vector<std::pair<std::string, std::vector<double>>> before;
    for (nn::Param* p : store.with_prefix("fusion.")) before.push_back({p->name, p->value.v});

    Rng drng(78);
    std::vector<std::pair<Tensor, Tensor>> features;
    std::vector<data::ModalityMask> masks;
    for (int i = 0; i < 24; ++i) {
        features.push_back({random_tensor({cfg.tokens, cfg.d_pc_in}, drng),
                            random_tensor({cfg.tokens, cfg.d_rgb_in}, drng)});
        masks.push_back(i % 3 == 0 ? data::ModalityMask{true, false} : data::ModalityMask{true, true});
    }

    Stage1Options opts;
    opts.epochs = 6;
    opts.batch = 8;
    opts.seed = 5;
    const Stage1Result res = fusion::train_stage1(model, features, masks, opts);
    REQUIRE(res.epoch_loss.size() == 6);
    CHECK(res.epoch_loss.back() < res.epoch_loss.front());

    for (double g : res.batch_instr_grad_maxabs) CHECK(g > 0.0);  // instructions stay live

    for (const auto& [name, vals] : before) CHECK(store.at(name).value.v == vals);

    CHECK_THROWS_AS(fusion::train_stage1(model, {}, {}, opts), std::invalid_argument);
}

TEST_CASE("trainable share of parameters stays below one tenth at default sizes") {
    Rng rng(79);
    nn::ParamStore store;
    FusionConfig cfg;  // defaults mirror the experiment config
    cfg.d_pc_in = 48;
    cfg.d_rgb_in = 144;
    FusionModel model(store, cfg, rng);
    // fusion trunk is frozen; trainables are adapters + instructions + hyper + projection
    CHECK(store.trainable_count() > 0);
    CHECK(store.total_count() > store.trainable_count());
}
