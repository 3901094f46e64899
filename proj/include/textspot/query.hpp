#pragma once
#include <cmath>
#include <vector>

#include "textspot/bezier.hpp"
#include "textspot/nn.hpp"
#include "textspot/tensor.hpp"

// Point query construction: sinusoidal encodings of sampled point
// coordinates, the 2-layer ReLU projection that turns them into positional
// queries, composite queries, and the script-token extension with its
// attention mask.

namespace textspot {

// Sinusoidal encoding of normalized 2-D points. For each coordinate, D/4
// (sin, cos) channel pairs; pair k uses frequency 10000^(2k/(D/2)) applied
// to the coordinate scaled by 2*pi. First D/2 channels encode x, rest y.
// Coordinates are plain values here: positional information is refreshed
// from detached point estimates, never a gradient path.
inline Tensor positional_encoding(const std::vector<Vec2>& coords, int d_model) {
  if (d_model % 4 != 0)
    op_fail("positional_encoding", "D=" + std::to_string(d_model) + " not divisible by 4");
  const int pairs = d_model / 4;
  const int half = d_model / 2;
  std::vector<double> out(coords.size() * size_t(d_model));
  const double two_pi = 6.283185307179586476925287;
  for (size_t i = 0; i < coords.size(); ++i) {
    double* row = out.data() + i * size_t(d_model);
    for (int k = 0; k < pairs; ++k) {
      double freq = std::pow(10000.0, 2.0 * k / double(half));
      double ax = two_pi * coords[i].x / freq;
      double ay = two_pi * coords[i].y / freq;
      row[2 * k] = std::sin(ax);
      row[2 * k + 1] = std::cos(ax);
      row[half + 2 * k] = std::sin(ay);
      row[half + 2 * k + 1] = std::cos(ay);
    }
  }
  return Tensor::from({int(coords.size()), d_model}, std::move(out));
}

// P_q = MLP(PE(coords)): the shared 2-layer ReLU projection. The same
// module also encodes the script-token center points.
struct PositionalQueryHead {
  Mlp mlp;

  void configure(const std::string& name, int d_model) {
    mlp.configure(name, {d_model, d_model, d_model});
  }
  void init(ParamStore& store, Rng& rng) { mlp.init(store, rng); }

  // coords flattened to one list; caller reshapes to [K,N,D] as needed.
  Tensor forward(GraphContext& g, const std::vector<Vec2>& coords, int d_model) const {
    return mlp.forward(g, positional_encoding(coords, d_model));
  }
};

// Composite queries Q = C + P (elementwise).
inline Tensor compose(const Tensor& positional, const Tensor& content) {
  check_same_shape("compose", positional.shape(), content.shape());
  return add(content, positional);
}

// Intra-group mask with a script token at index n: the token row attends to
// all n points; point rows never see the token; the token never sees itself.
inline std::vector<std::vector<bool>> script_attention_mask(int n) {
  if (n < 1) op_fail("script_attention_mask", "n must be >= 1");
  std::vector<std::vector<bool>> blocked(size_t(n + 1), std::vector<bool>(size_t(n + 1), false));
  for (int i = 0; i < n; ++i) blocked[size_t(i)][size_t(n)] = true;
  blocked[size_t(n)][size_t(n)] = true;
  return blocked;
}

}  // namespace textspot
