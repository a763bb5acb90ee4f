#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "vqa/errors.hpp"
#include "vqa/tensor.hpp"

namespace vqa {

using ParamSet = std::map<std::string, Tensor>;

// Adam with the standard constants. Moment tensors are allocated lazily per
// parameter name; parameters absent from `grads` in a step are left untouched,
// moments included, which is what keeps per-dataset heads frozen during other
// datasets' epochs.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::map<std::string, int64_t> step;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

inline void adam_step(AdamState& state, ParamSet& params,
                      const std::map<std::string, Tensor>& grads, double lr) {
  if (!(lr > 0.0)) throw DataError("adam_step: learning rate must be > 0");
  for (const auto& [name, grad] : grads) {
    auto pit = params.find(name);
    if (pit == params.end())
      throw StateError("adam_step: gradient for unknown parameter '" + name + "'");
    Tensor& p = pit->second;
    if (!grad.same_shape(p))
      throw DataError("adam_step: gradient shape " + shape_str(grad.shape()) +
                      " != parameter shape " + shape_str(p.shape()) + " for '" +
                      name + "'");
    int64_t bad = grad.first_nonfinite();
    if (bad >= 0)
      throw NumericError("adam_step: non-finite gradient for '" + name +
                         "' at flat index " + std::to_string(bad));
    const int64_t t = ++state.step[name];
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
    Tensor& m = state.m.try_emplace(name, Tensor::zeros(p.shape())).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor::zeros(p.shape())).first->second;
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double gi = grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace vqa
