#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "sea/tensor.hpp"

namespace sea::testutil {

// Central finite-difference gradient check. Runs the loss under a fresh tape
// to get analytic gradients, then perturbs every element of every parameter
// by +/-h and compares. Returns the worst relative error.
inline double gradcheck(const std::function<Tensor()>& loss_fn,
                        std::vector<Tensor> params, double h = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    for (auto& p : params) {
      p.set_requires_grad(true);
      p.zero_grad();
    }
    Tensor loss = loss_fn();
    tape.backward(loss);
    for (auto& p : params) analytic.push_back(p.grad());
  }
  for (auto& p : params) p.set_requires_grad(false);

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& data = params[pi].mutable_data();
    for (size_t i = 0; i < data.size(); ++i) {
      double keep = data[i];
      data[i] = keep + h;
      double f_plus = loss_fn().item();
      data[i] = keep - h;
      double f_minus = loss_fn().item();
      data[i] = keep;
      double numeric = (f_plus - f_minus) / (2.0 * h);
      double a = analytic[pi][i];
      double denom = std::max(std::abs(a) + std::abs(numeric), 1e-6);
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.data().size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace sea::testutil
