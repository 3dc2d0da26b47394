#pragma once

#include <functional>
#include <string>
#include <vector>

#include "adaperceiver/tensor.hpp"

namespace adaperceiver {

// Independent gradient oracle. `loss_fn` must rebuild the scalar loss from
// the current parameter values each call; it records onto the given tape
// when one is supplied and must be deterministic (checked, NonDeterministicF).
//
// Returns max over all parameter entries of
//   |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)
// with g_fd the central difference (f(x+eps) - f(x-eps)) / (2 eps).
template <typename S>
struct GradCheckReport {
  S max_rel_err = S(0);
  size_t worst_param = 0;   // index into params
  Index worst_entry = 0;    // flat entry within that parameter
  S analytic = S(0);
  S numeric = S(0);
};

template <typename S>
GradCheckReport<S> finite_diff_check(const std::function<TensorT<S>(TapeT<S>*)>& loss_fn,
                                     const std::vector<TensorT<S>>& params, S eps);

extern template GradCheckReport<float> finite_diff_check<float>(
    const std::function<TensorT<float>(TapeT<float>*)>&, const std::vector<TensorT<float>>&, float);
extern template GradCheckReport<double> finite_diff_check<double>(
    const std::function<TensorT<double>(TapeT<double>*)>&, const std::vector<TensorT<double>>&,
    double);

}  // namespace adaperceiver
