#pragma once

#include <span>
#include <vector>

#include "adaperceiver/tensor.hpp"

namespace adaperceiver {

template <typename S>
struct MatLinearParamsT {
  TensorT<S> weight;  // [out, in]
  TensorT<S> bias;    // [out], may be undefined
};

// Nominal width (in units of the embedding dimension) plus the mapping to
// retained FFN hidden units. Widths are nested: the computation at a smaller
// width is a prefix-submatrix restriction of any larger one.
struct WidthSpec {
  int nominal = 0;
  double ffn_ratio = 0.0;
  int hidden_kept() const;
};

int hidden_kept(int nominal_width, double ffn_ratio);

// Width-adaptive linear layer with per-sample masking (training path).
// mat_input=true zeroes input features at index >= mat_dims[i] before the
// projection; mat_input=false zeroes output features (bias included) after.
// x: [B, T, in]; mat_dims has one entry per batch element.
template <typename S>
TensorT<S> mat_linear(TapeT<S>* tape, const TensorT<S>& x, const MatLinearParamsT<S>& params,
                      std::span<const int> mat_dims, bool mat_input);

// Matryoshka FFN: up-projection masked on outputs to kept[i] units, GeLU,
// down-projection masked on inputs to kept[i]. Equivalent per sample to an
// FFN whose hidden layer has kept[i] units.
template <typename S>
TensorT<S> mat_ffn(TapeT<S>* tape, const TensorT<S>& x, const MatLinearParamsT<S>& up,
                   const MatLinearParamsT<S>& down, std::span<const int> kept);

// Prefix slice of the parameters for inference at a fixed width: the sliced
// forward pass equals the masked one at strictly fewer multiply-accumulates.
// input_side=false slices output rows (weight [keep, in], bias [keep]);
// input_side=true slices input columns (weight [out, keep], bias kept whole).
template <typename S>
MatLinearParamsT<S> slice_for_inference(const MatLinearParamsT<S>& params, int keep,
                                        bool input_side);

using MatLinearParams = MatLinearParamsT<float>;

extern template TensorT<float> mat_linear<float>(TapeT<float>*, const TensorT<float>&,
                                                 const MatLinearParamsT<float>&,
                                                 std::span<const int>, bool);
extern template TensorT<double> mat_linear<double>(TapeT<double>*, const TensorT<double>&,
                                                   const MatLinearParamsT<double>&,
                                                   std::span<const int>, bool);
extern template TensorT<float> mat_ffn<float>(TapeT<float>*, const TensorT<float>&,
                                              const MatLinearParamsT<float>&,
                                              const MatLinearParamsT<float>&, std::span<const int>);
extern template TensorT<double> mat_ffn<double>(TapeT<double>*, const TensorT<double>&,
                                                const MatLinearParamsT<double>&,
                                                const MatLinearParamsT<double>&,
                                                std::span<const int>);
extern template MatLinearParamsT<float> slice_for_inference<float>(const MatLinearParamsT<float>&,
                                                                   int, bool);
extern template MatLinearParamsT<double> slice_for_inference<double>(
    const MatLinearParamsT<double>&, int, bool);

}  // namespace adaperceiver
