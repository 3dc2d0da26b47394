#include "adaperceiver/gradcheck.hpp"

#include <cmath>

namespace adaperceiver {

template <typename S>
GradCheckReport<S> finite_diff_check(const std::function<TensorT<S>(TapeT<S>*)>& loss_fn,
                                     const std::vector<TensorT<S>>& params, S eps) {
  {
    const S f1 = loss_fn(nullptr).item();
    const S f2 = loss_fn(nullptr).item();
    if (f1 != f2) {
      throw NonDeterministicF("loss_fn returned " + std::to_string(f1) + " then " +
                              std::to_string(f2) + " at identical parameters");
    }
  }

  // Analytic gradients.
  TapeT<S> tape;
  auto loss = loss_fn(&tape);
  tape.backward(loss);
  std::vector<std::vector<S>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  GradCheckReport<S> report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& value = const_cast<TensorT<S>&>(params[pi]).mutable_value();
    for (size_t e = 0; e < value.size(); ++e) {
      const S saved = value[e];
      value[e] = saved + eps;
      const S f_plus = loss_fn(nullptr).item();
      value[e] = saved - eps;
      const S f_minus = loss_fn(nullptr).item();
      value[e] = saved;
      const S g_fd = (f_plus - f_minus) / (S(2) * eps);
      const S g_ad = analytic[pi][e];
      const S denom = std::max(S(1e-8), std::abs(g_ad) + std::abs(g_fd));
      const S rel = std::abs(g_ad - g_fd) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = pi;
        report.worst_entry = static_cast<Index>(e);
        report.analytic = g_ad;
        report.numeric = g_fd;
      }
    }
  }
  return report;
}

template GradCheckReport<float> finite_diff_check<float>(
    const std::function<TensorT<float>(TapeT<float>*)>&, const std::vector<TensorT<float>>&, float);
template GradCheckReport<double> finite_diff_check<double>(
    const std::function<TensorT<double>(TapeT<double>*)>&, const std::vector<TensorT<double>>&,
    double);

}  // namespace adaperceiver
