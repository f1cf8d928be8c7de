#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "miiad/tensor.hpp"

namespace miiad::nn {

using miiad::Tensor;

// A learnable (or frozen) tensor. Gradients accumulate into `grad`;
// `m`/`v` are AdamW moments, allocated on first optimizer step.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m, v;
    bool trainable = true;

    void zero_grad() { grad = Tensor::zeros(value.shape); }
};

// Reverse-mode tape. Nodes are created in topological order by construction,
// so backward() is a single reverse sweep. One tape per training step.
class Tape {
public:
    int leaf(Tensor t);              // constant, no gradient tracked
    int input(Tensor t);             // differentiable leaf (gradient readable)
    int param(Param& p);             // differentiable leaf, accumulates into p.grad

    // elementwise / broadcast
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int a, double c);
    int add_rowvec(int a, int rowvec);  // (m x n) + (1 x n)

    // linear algebra
    int matmul(int a, int b);
    int transpose(int a);
    int linear(int x, int w, int b);  // x*w + b, b broadcast over rows

    // shape surgery
    int reshape(int a, std::vector<int> shape);
    int concat_rows(const std::vector<int>& parts);
    int slice_rows(int a, int r0, int r1);
    int concat_cols(const std::vector<int>& parts);
    int slice_cols(int a, int c0, int c1);

    // nonlinearities and normalizations
    int gelu(int a);
    int layer_norm(int x, int gain, int bias, double eps = 1e-5);
    int softmax_rows(int a);
    int masked_softmax_rows(int a, const std::vector<uint8_t>& rowmask);
    int l2_normalize_rows(int a);
    int mean_rows(int a);

    // losses (scalar outputs, mean-reduced)
    int cross_entropy_rows(int logits, const std::vector<int>& targets);
    int kl_const_target(const Tensor& p, int logits);  // KL(p || softmax(logits))
    int mse_to_const(int a, const Tensor& target);
    int mean_all(int a);

    const Tensor& val(int id) const { return nodes_[size_t(id)].val; }
    const Tensor& grad(int id) const { return nodes_[size_t(id)].grad; }

    void backward(int loss);

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor val;
        Tensor grad;
        std::function<void()> back;
        bool needs = false;
        Param* bound = nullptr;
    };

    int push(Tensor value, bool needs, std::function<void()> back = nullptr);
    Tensor& g(int id);  // gradient buffer, allocated on demand

    std::vector<Node> nodes_;
};

// Shared softmax kernel with an attention-style permit mask; masked entries
// are exactly zero in the output. Used by the tape op and by the plain
// inference path so the two cannot drift apart.
Tensor masked_softmax_kernel(const Tensor& logits, const std::vector<uint8_t>& rowmask);

// AdamW with per-group learning rates (decoupled weight decay).
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step_count = 0;

    struct Group {
        std::vector<Param*> params;
        double lr = 1e-3;
        double weight_decay = 0.0;
    };

    void step(std::vector<Group>& groups);
};

}  // namespace miiad::nn
