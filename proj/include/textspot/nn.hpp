#pragma once
#include <map>
#include <string>
#include <vector>

#include "textspot/params.hpp"
#include "textspot/tensor.hpp"

// Small trainable building blocks. Modules own parameter names; a
// GraphContext materializes per-graph leaf tensors for them and routes leaf
// gradients back into the store after backward, in creation order, so
// gradient accumulation across batch items is deterministic.

namespace textspot {

class GraphContext {
 public:
  explicit GraphContext(ParamStore& store) : store_(&store) {}

  Tensor use(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    Param& p = store_->get(name);
    Tensor leaf = Tensor::from(p.shape, p.value, true);
    cache_.emplace(name, leaf);
    order_.push_back({&p, leaf});
    return leaf;
  }

  // p.grad += leaf.grad for every leaf this graph created.
  void accumulate_grads() {
    for (auto& [param, leaf] : order_) {
      const auto& g = leaf.grad();
      if (g.empty()) continue;
      for (size_t i = 0; i < g.size(); ++i) param->grad[i] += g[i];
    }
  }

  ParamStore& store() { return *store_; }

 private:
  ParamStore* store_;
  std::map<std::string, Tensor> cache_;
  std::vector<std::pair<Param*, Tensor>> order_;
};

struct Linear {
  std::string name;
  int in = 0, out = 0;

  void init(ParamStore& store, Rng& rng, bool zero_weight = false, double bias_value = 0.0) {
    Param& w = store.create(name + ".w", {in, out});
    if (!zero_weight) init_xavier(w, rng, in, out);
    Param& b = store.create(name + ".b", {out});
    init_const(b, bias_value);
  }

  // x: [..., in] -> [..., out]
  Tensor forward(GraphContext& g, const Tensor& x) const {
    Shape s = x.shape();
    int64_t rows = numel(s) / in;
    Tensor flat = reshape(x, {int(rows), in});
    Tensor y = add(matmul(flat, g.use(name + ".w")), g.use(name + ".b"));
    s.back() = out;
    return reshape(y, s);
  }
};

// n_layers linear maps with ReLU between (none after the last).
struct Mlp {
  std::string name;
  std::vector<Linear> layers;

  void configure(const std::string& n, const std::vector<int>& dims) {
    name = n;
    layers.clear();
    for (size_t i = 0; i + 1 < dims.size(); ++i)
      layers.push_back({name + ".l" + std::to_string(i), dims[i], dims[i + 1]});
  }

  void init(ParamStore& store, Rng& rng, bool zero_last = false) {
    for (size_t i = 0; i < layers.size(); ++i)
      layers[i].init(store, rng, zero_last && i + 1 == layers.size());
  }

  Tensor forward(GraphContext& g, const Tensor& x) const {
    Tensor h = x;
    for (size_t i = 0; i < layers.size(); ++i) {
      h = layers[i].forward(g, h);
      if (i + 1 < layers.size()) h = relu(h);
    }
    return h;
  }
};

struct LayerNorm {
  std::string name;
  int dim = 0;

  void init(ParamStore& store, Rng&) {
    init_const(store.create(name + ".g", {dim}), 1.0);
    store.create(name + ".b", {dim});
  }

  Tensor forward(GraphContext& g, const Tensor& x) const {
    return layer_norm(x, g.use(name + ".g"), g.use(name + ".b"));
  }
};

// Dense multi-head attention over [B, T, D] with separate key/value inputs
// and an optional additive mask [T_q, T_k] (broadcast over batch and heads;
// blocked entries hold a large negative value).
struct MultiHeadAttention {
  std::string name;
  int dim = 0, heads = 0;

  void init(ParamStore& store, Rng& rng) {
    for (const char* part : {".q", ".k", ".v", ".o"}) {
      Linear l{name + part, dim, dim};
      l.init(store, rng);
    }
  }

  Tensor forward(GraphContext& g, const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                 const Tensor* mask = nullptr) const {
    const Shape& qs = q_in.shape();
    if (qs.size() != 3) op_fail("mha", "queries must be [B,T,D], got " + shape_str(qs));
    const int B = qs[0], Tq = qs[1];
    const int Tk = k_in.shape()[1];
    const int hd = dim / heads;
    Linear lq{name + ".q", dim, dim}, lk{name + ".k", dim, dim}, lv{name + ".v", dim, dim},
        lo{name + ".o", dim, dim};
    // [B,T,D] -> [B*heads, T, hd]
    auto split_heads = [&](const Tensor& x, int T) {
      Tensor r = reshape(x, {B, T, heads, hd});
      return reshape(permute(r, {0, 2, 1, 3}), {B * heads, T, hd});
    };
    Tensor qh = split_heads(lq.forward(g, q_in), Tq);
    Tensor kh = split_heads(lk.forward(g, k_in), Tk);
    Tensor vh = split_heads(lv.forward(g, v_in), Tk);
    Tensor scores = mul_scalar(matmul(qh, permute(kh, {0, 2, 1})), 1.0 / std::sqrt(double(hd)));
    if (mask) {
      check_same_shape("mha.mask", mask->shape(), {Tq, Tk});
      scores = add(scores, *mask);  // mask broadcast over B*heads
    }
    Tensor attn = softmax(scores);
    Tensor ctx = matmul(attn, vh);  // [B*heads, Tq, hd]
    Tensor merged = reshape(permute(reshape(ctx, {B, heads, Tq, hd}), {0, 2, 1, 3}), {B, Tq, dim});
    return lo.forward(g, merged);
  }
};

// Additive attention mask: 0 where allowed, -1e9 where blocked.
inline Tensor additive_mask(const std::vector<std::vector<bool>>& blocked) {
  int tq = int(blocked.size());
  int tk = tq ? int(blocked[0].size()) : 0;
  std::vector<double> m(size_t(tq) * size_t(tk), 0.0);
  for (int i = 0; i < tq; ++i)
    for (int j = 0; j < tk; ++j)
      if (blocked[size_t(i)][size_t(j)]) m[size_t(i) * size_t(tk) + size_t(j)] = -1e9;
  return Tensor::from({tq, tk}, std::move(m));
}

}  // namespace textspot
