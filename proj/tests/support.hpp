#pragma once
// Test-side oracles and fixtures shared by the unit tests and the acceptance
// runner. Nothing here calls into library code paths being checked except
// through their public entry points.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "peftlab/encoder.hpp"
#include "peftlab/tensor.hpp"

namespace testsupport {

struct GradCheck {
  double max_rel = 0.0;
  std::string worst;  // "name[index]" of the worst element
  std::size_t checked = 0;
};

// Relative error with a floor so that two near-zero values compare absolutely.
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Compares backward() against central differences for every element of every
// trainable tensor in `params`. `loss_fn` must build a scalar loss from the
// current parameter values.
template <class LossFn>
GradCheck finite_difference_check(const peftlab::model::ParameterList& params, LossFn&& loss_fn,
                                  double eps = 1e-5, double floor = 1e-6) {
  for (const auto& p : params) p.tensor.storage()->grad.clear();
  {
    peftlab::ad::Tape tape;
    peftlab::ad::backward(loss_fn());
  }
  GradCheck out;
  for (const auto& p : params) {
    if (!p.tensor.requires_grad()) continue;
    auto tensor = p.tensor;
    const std::vector<double> analytic = p.tensor.has_grad()
                                             ? std::vector<double>(p.tensor.grad().begin(), p.tensor.grad().end())
                                             : std::vector<double>(p.tensor.numel(), 0.0);
    auto values = tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus, minus;
      {
        peftlab::ad::NoGradGuard ng;
        values[i] = saved + eps;
        plus = loss_fn().item();
        values[i] = saved - eps;
        minus = loss_fn().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double r = rel_error(analytic[i], numeric, floor);
      ++out.checked;
      if (r > out.max_rel) {
        out.max_rel = r;
        out.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

inline bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
           return std::memcmp(&x, &y, sizeof(double)) == 0;
         });
}

inline std::vector<double> copy_values(const peftlab::ad::Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("peftlab_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testsupport
