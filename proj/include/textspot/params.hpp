#pragma once
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "textspot/rng.hpp"
#include "textspot/tensor.hpp"

// Named trainable parameters plus the checkpoint format: a little-endian
// u64 header length, a JSON header listing (name, shape) in serialization
// order, then the flat f64 payload in that order.

namespace textspot {

struct Param {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  // AdamW state
  std::vector<double> m, v;

  int64_t size() const { return int64_t(value.size()); }
};

class ParamStore {
 public:
  Param& create(const std::string& name, Shape shape) {
    if (index_.count(name)) throw std::runtime_error("ParamStore: duplicate param " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->shape = shape;
    p->value.assign(size_t(numel(shape)), 0.0);
    p->grad.assign(p->value.size(), 0.0);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Param& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("ParamStore: unknown param " + name);
    return *params_[it->second];
  }

  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
  }

  // Leaf tensor viewing a parameter's current values; per-graph grad buffer.
  // Callers accumulate leaf grads back via accumulate_from.
  static Tensor leaf(const Param& p) { return Tensor::from(p.shape, p.value, true); }

  void save(const std::string& path, const nlohmann::json& meta = {},
            bool with_optimizer_state = false) const {
    nlohmann::json header;
    header["format"] = "textspot-checkpoint-v1";
    header["meta"] = meta;
    auto& list = header["params"] = nlohmann::json::array();
    for (const auto& p : params_) list.push_back({{"name", p->name}, {"shape", p->shape}});
    if (with_optimizer_state) {
      for (const auto& p : params_) list.push_back({{"name", "adam_m/" + p->name}, {"shape", p->shape}});
      for (const auto& p : params_) list.push_back({{"name", "adam_v/" + p->name}, {"shape", p->shape}});
    }
    std::string hs = header.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
    uint64_t hlen = hs.size();
    char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = char((hlen >> (8 * i)) & 0xff);
    f.write(lenbuf, 8);
    f.write(hs.data(), std::streamsize(hs.size()));
    auto write_vec = [&](const std::vector<double>& v) {
      f.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(double)));
    };
    for (const auto& p : params_) write_vec(p->value);
    if (with_optimizer_state) {
      for (const auto& p : params_) write_vec(p->m.empty() ? std::vector<double>(p->value.size(), 0.0) : p->m);
      for (const auto& p : params_) write_vec(p->v.empty() ? std::vector<double>(p->value.size(), 0.0) : p->v);
    }
  }

  // Loads values (and optimizer state when present) into matching params.
  // Returns the header meta.
  nlohmann::json load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot read " + path);
    char lenbuf[8];
    f.read(lenbuf, 8);
    if (!f) throw std::runtime_error("checkpoint: truncated header length");
    uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i) hlen |= uint64_t(uint8_t(lenbuf[i])) << (8 * i);
    std::string hs(hlen, '\0');
    f.read(hs.data(), std::streamsize(hlen));
    if (!f) throw std::runtime_error("checkpoint: truncated header");
    nlohmann::json header = nlohmann::json::parse(hs);
    for (const auto& entry : header.at("params")) {
      std::string name = entry.at("name");
      Shape shape = entry.at("shape").get<Shape>();
      std::vector<double> buf(size_t(numel(shape)));
      f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * sizeof(double)));
      if (!f) throw std::runtime_error("checkpoint: truncated payload at " + name);
      if (name.rfind("adam_m/", 0) == 0) {
        Param& p = get(name.substr(7));
        p.m = std::move(buf);
      } else if (name.rfind("adam_v/", 0) == 0) {
        Param& p = get(name.substr(7));
        p.v = std::move(buf);
      } else {
        Param& p = get(name);
        if (p.shape != shape)
          throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file " +
                                   shape_str(shape) + " vs model " + shape_str(p.shape));
        p.value = std::move(buf);
      }
    }
    return header.value("meta", nlohmann::json::object());
  }

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::map<std::string, size_t> index_;
};

// AdamW with decoupled weight decay.
struct AdamW {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  int64_t step_count = 0;

  void step(ParamStore& store) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, double(step_count));
    const double bc2 = 1.0 - std::pow(beta2, double(step_count));
    for (auto& pp : store.all()) {
      Param& p = *pp;
      if (p.m.empty()) p.m.assign(p.value.size(), 0.0);
      if (p.v.empty()) p.v.assign(p.value.size(), 0.0);
      for (size_t i = 0; i < p.value.size(); ++i) {
        double g = p.grad[i];
        p.m[i] = beta1 * p.m[i] + (1 - beta1) * g;
        p.v[i] = beta2 * p.v[i] + (1 - beta2) * g * g;
        double mhat = p.m[i] / bc1;
        double vhat = p.v[i] / bc2;
        p.value[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.value[i]);
      }
    }
  }
};

// Xavier-uniform init for weight matrices, zeros for biases.
inline void init_xavier(Param& p, Rng& rng, int fan_in, int fan_out) {
  double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  for (auto& v : p.value) v = rng.uniform(-limit, limit);
}

inline void init_normal(Param& p, Rng& rng, double stddev) {
  for (auto& v : p.value) v = rng.normal(0.0, stddev);
}

inline void init_const(Param& p, double c) {
  std::fill(p.value.begin(), p.value.end(), c);
}

}  // namespace textspot
