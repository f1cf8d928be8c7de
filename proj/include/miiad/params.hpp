#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "miiad/autodiff.hpp"
#include "miiad/rng.hpp"

namespace miiad::nn {

// Owns every Param of a model, keyed by a dotted path name.
// Iteration order is creation order, which keeps checkpoints stable.
class ParamStore {
public:
    Param& create(const std::string& name, std::vector<int> shape, bool trainable) {
        if (index_.count(name)) throw std::invalid_argument("param exists: " + name);
        auto p = std::make_unique<Param>();
        p->name = name;
        p->value = Tensor::zeros(std::move(shape));
        p->trainable = trainable;
        items_.push_back(std::move(p));
        index_[name] = items_.size() - 1;
        return *items_.back();
    }

    Param& create_normal(const std::string& name, std::vector<int> shape, bool trainable, Rng& rng,
                         double stddev) {
        Param& p = create(name, std::move(shape), trainable);
        for (auto& x : p.value.v) x = rng.normal(0.0, stddev);
        return p;
    }

    Param& create_const(const std::string& name, std::vector<int> shape, bool trainable, double value) {
        Param& p = create(name, std::move(shape), trainable);
        for (auto& x : p.value.v) x = value;
        return p;
    }

    Param& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("param missing: " + name);
        return *items_[it->second];
    }
    const Param& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("param missing: " + name);
        return *items_[it->second];
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Param*> all() {
        std::vector<Param*> out;
        out.reserve(items_.size());
        for (auto& p : items_) out.push_back(p.get());
        return out;
    }
    std::vector<Param*> trainable() {
        std::vector<Param*> out;
        for (auto& p : items_)
            if (p->trainable) out.push_back(p.get());
        return out;
    }
    std::vector<Param*> with_prefix(const std::string& prefix) {
        std::vector<Param*> out;
        for (auto& p : items_)
            if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
        return out;
    }

    long long total_count() const {
        long long n = 0;
        for (auto& p : items_) n += (long long)p->value.size();
        return n;
    }
    long long trainable_count() const {
        long long n = 0;
        for (auto& p : items_)
            if (p->trainable) n += (long long)p->value.size();
        return n;
    }

    void zero_grads() {
        for (auto& p : items_)
            if (p->trainable) p->zero_grad();
    }

private:
    std::vector<std::unique_ptr<Param>> items_;
    std::map<std::string, size_t> index_;
};

// Pre-LN transformer block parameters plus the forward pass on a tape.
// Shared by the rgb/point encoders and the fusion backbone.
struct BlockParams {
    Param *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    Param *ln1_g, *ln1_b, *ln2_g, *ln2_b;
    Param *w1, *b1, *w2, *b2;
};

BlockParams make_block(ParamStore& store, const std::string& prefix, int dim, int mlp_ratio, bool trainable,
                       Rng& rng);
BlockParams bind_block(ParamStore& store, const std::string& prefix);

// x: (L x dim). Full self-attention with `heads` heads, then the MLP, both
// with residual connections.
int transformer_block(Tape& tape, int x, const BlockParams& bp, int heads);

}  // namespace miiad::nn
