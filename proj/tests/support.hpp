#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <random>
#include <vector>

#include "dcn/tensor.hpp"

namespace dcn::testing {

inline std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, bool requires_grad = true, double lo = -1.0,
                            double hi = 1.0) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), random_values(rng, n, lo, hi), requires_grad);
}

struct GradCheck {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // probes that crossed an abs/PReLU kink
};

// Sign of every abs/PReLU input recorded in the graph behind `root`.
inline std::vector<bool> kink_signature(const Tensor& root) {
  std::vector<bool> sig;
  Graph graph(root);
  for (Node* n : graph.order()) {
    if (std::strcmp(n->op, "prelu") != 0 && std::strcmp(n->op, "abs") != 0) continue;
    for (double v : n->inputs[0]->data) sig.push_back(v >= 0.0);
  }
  return sig;
}

// Compares analytic gradients of scalar fn() with respect to `inputs` against
// central differences. Relative error uses max(|a|, |n|, floor) as scale.
// `max_entries` caps the number of probed entries per input (0: all).
inline GradCheck check_gradients(const std::function<Tensor()>& fn, const std::vector<Tensor>& inputs,
                                 double h = 1e-4, double floor = 1e-6, std::size_t max_entries = 0,
                                 std::uint64_t seed = 7, bool skip_kinks = false) {
  for (Tensor t : inputs) t.zero_grad();
  Tensor loss = fn();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const Tensor& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(t.numel(), 0.0);
  }
  GradCheck out;
  std::mt19937_64 rng(seed);
  const std::vector<bool> base_signature = skip_kinks ? kink_signature(loss) : std::vector<bool>{};
  // Probes run with recording on only when signatures are needed.
  auto probe = [&](double& slot, double value, bool& crossed) {
    slot = value;
    if (!skip_kinks) {
      NoGradGuard guard;
      return fn().item();
    }
    Tensor y = fn();
    crossed = crossed || kink_signature(y) != base_signature;
    return y.item();
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor t = inputs[i];
    std::vector<std::size_t> idx(t.numel());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    if (max_entries && idx.size() > max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_entries);
    }
    for (std::size_t k : idx) {
      auto data = t.mutable_data();
      const double saved = data[k];
      bool crossed = false;
      const double up = probe(data[k], saved + h, crossed);
      const double down = probe(data[k], saved - h, crossed);
      data[k] = saved;
      if (crossed) {
        ++out.skipped;
        continue;
      }
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i][k];
      const double err = std::abs(a - numeric);
      const double scale = std::max({std::abs(a), std::abs(numeric), floor});
      out.max_abs_error = std::max(out.max_abs_error, err);
      out.max_rel_error = std::max(out.max_rel_error, err / scale);
      ++out.checked;
    }
  }
  return out;
}

// Random weights that turn a tensor into a scalar with non-trivial gradients.
inline Tensor weighted_sum(const Tensor& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor w(x.shape(), random_values(rng, x.numel()));
  return sum(mul(x, w));
}

}  // namespace dcn::testing
