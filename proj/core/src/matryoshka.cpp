#include "adaperceiver/matryoshka.hpp"

#include <cmath>

namespace adaperceiver {

int hidden_kept(int nominal_width, double ffn_ratio) {
  return static_cast<int>(std::llround(static_cast<double>(nominal_width) * ffn_ratio));
}

int WidthSpec::hidden_kept() const { return adaperceiver::hidden_kept(nominal, ffn_ratio); }

namespace {

// Constant per-sample step mask [B, 1, dim]: 1 below mat_dims[i], 0 at and
// above. Constants carry no grad, so masked entries stay exactly zero through
// backward as well.
template <typename S>
TensorT<S> step_mask(Index batch, Index dim, std::span<const int> mat_dims) {
  std::vector<S> m(static_cast<size_t>(batch * dim), S(0));
  for (Index i = 0; i < batch; ++i) {
    const int keep = mat_dims[static_cast<size_t>(i)];
    for (Index j = 0; j < keep; ++j) m[static_cast<size_t>(i * dim + j)] = S(1);
  }
  return TensorT<S>::from({batch, 1, dim}, std::move(m));
}

template <typename S>
void check_mat_dims(std::span<const int> mat_dims, Index batch, Index limit, const char* what) {
  if (static_cast<Index>(mat_dims.size()) != batch) {
    throw ShapeMismatch(std::string(what) + ": need one mat_dim per sample");
  }
  for (int d : mat_dims) {
    if (d < 1 || d > limit) {
      throw MatDimOutOfRange(std::string(what) + ": mat_dim " + std::to_string(d) +
                             " outside [1, " + std::to_string(limit) + "]");
    }
  }
}

}  // namespace

template <typename S>
TensorT<S> mat_linear(TapeT<S>* tape, const TensorT<S>& x, const MatLinearParamsT<S>& params,
                      std::span<const int> mat_dims, bool mat_input) {
  if (x.rank() != 3) throw ShapeMismatch("mat_linear: input must be [B, T, in]");
  const Index batch = x.dim(0);
  const Index in_dim = x.dim(2);
  const Index out_dim = params.weight.dim(0);
  if (params.weight.dim(1) != in_dim) {
    throw ShapeMismatch("mat_linear: weight in_dim " + std::to_string(params.weight.dim(1)) +
                        " vs input " + std::to_string(in_dim));
  }
  check_mat_dims<S>(mat_dims, batch, mat_input ? in_dim : out_dim, "mat_linear");

  if (mat_input) {
    auto mask = ops::broadcast_to(tape, step_mask<S>(batch, in_dim, mat_dims), x.shape());
    auto masked = ops::mul(tape, x, mask);
    return ops::linear(tape, masked, params.weight, params.bias);
  }
  auto y = ops::linear(tape, x, params.weight, params.bias);
  auto mask = ops::broadcast_to(tape, step_mask<S>(batch, out_dim, mat_dims), y.shape());
  return ops::mul(tape, y, mask);
}

template <typename S>
TensorT<S> mat_ffn(TapeT<S>* tape, const TensorT<S>& x, const MatLinearParamsT<S>& up,
                   const MatLinearParamsT<S>& down, std::span<const int> kept) {
  auto h = mat_linear(tape, x, up, kept, /*mat_input=*/false);
  h = ops::gelu(tape, h);
  return mat_linear(tape, h, down, kept, /*mat_input=*/true);
}

template <typename S>
MatLinearParamsT<S> slice_for_inference(const MatLinearParamsT<S>& params, int keep,
                                        bool input_side) {
  const Index out_dim = params.weight.dim(0);
  const Index in_dim = params.weight.dim(1);
  const Index limit = input_side ? in_dim : out_dim;
  if (keep < 1 || keep > limit) {
    throw MatDimOutOfRange("slice_for_inference: keep " + std::to_string(keep) + " outside [1, " +
                           std::to_string(limit) + "]");
  }
  MatLinearParamsT<S> sliced;
  if (input_side) {
    std::vector<S> w(static_cast<size_t>(out_dim * keep));
    for (Index r = 0; r < out_dim; ++r) {
      const S* src = params.weight.value().data() + r * in_dim;
      std::copy(src, src + keep, w.data() + r * keep);
    }
    sliced.weight = TensorT<S>::from({out_dim, keep}, std::move(w));
    sliced.bias = params.bias;
  } else {
    std::vector<S> w(params.weight.value().begin(), params.weight.value().begin() + keep * in_dim);
    sliced.weight = TensorT<S>::from({keep, in_dim}, std::move(w));
    if (params.bias.defined()) {
      std::vector<S> b(params.bias.value().begin(), params.bias.value().begin() + keep);
      sliced.bias = TensorT<S>::from({static_cast<Index>(keep)}, std::move(b));
    }
  }
  return sliced;
}

template TensorT<float> mat_linear<float>(TapeT<float>*, const TensorT<float>&,
                                          const MatLinearParamsT<float>&, std::span<const int>,
                                          bool);
template TensorT<double> mat_linear<double>(TapeT<double>*, const TensorT<double>&,
                                            const MatLinearParamsT<double>&, std::span<const int>,
                                            bool);
template TensorT<float> mat_ffn<float>(TapeT<float>*, const TensorT<float>&,
                                       const MatLinearParamsT<float>&,
                                       const MatLinearParamsT<float>&, std::span<const int>);
template TensorT<double> mat_ffn<double>(TapeT<double>*, const TensorT<double>&,
                                         const MatLinearParamsT<double>&,
                                         const MatLinearParamsT<double>&, std::span<const int>);
template MatLinearParamsT<float> slice_for_inference<float>(const MatLinearParamsT<float>&, int,
                                                            bool);
template MatLinearParamsT<double> slice_for_inference<double>(const MatLinearParamsT<double>&, int,
                                                              bool);

}  // namespace adaperceiver
