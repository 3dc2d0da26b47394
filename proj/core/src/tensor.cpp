#include "adaperceiver/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace adaperceiver {

namespace {

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using EMap = Eigen::Map<EMat<S>>;
template <typename S>
using ECMap = Eigen::Map<const EMat<S>>;

Shape strides_of(const Shape& shape) {
  Shape strides(shape.size());
  Index s = 1;
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    strides[static_cast<size_t>(i)] = s;
    s *= shape[static_cast<size_t>(i)];
  }
  return strides;
}

int normalize_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeMismatch("axis " + std::to_string(axis) + " out of range for rank " +
                        std::to_string(rank));
  }
  return axis;
}

template <typename S>
void ensure_grad(const std::shared_ptr<TensorNodeT<S>>& n) {
  if (n->grad.empty()) n->grad.assign(n->value.size(), S(0));
}

}  // namespace

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// TensorT

template <typename S>
TensorT<S> TensorT<S>::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value.assign(static_cast<size_t>(shape_numel(shape)), S(0));
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return TensorT(std::move(node));
}

template <typename S>
TensorT<S> TensorT<S>::full(Shape shape, S fill, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  std::fill(t.node_->value.begin(), t.node_->value.end(), fill);
  return t;
}

template <typename S>
TensorT<S> TensorT<S>::from(Shape shape, std::vector<S> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<Index>(data.size())) {
    throw ShapeMismatch("from: data size " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return TensorT(std::move(node));
}

template <typename S>
TensorT<S> TensorT<S>::scalar(S v) {
  return from({1}, {v});
}

template <typename S>
std::vector<S>& TensorT<S>::grad() {
  ensure_grad(node_);
  return node_->grad;
}

template <typename S>
const std::vector<S>& TensorT<S>::grad() const {
  ensure_grad(node_);
  return node_->grad;
}

template <typename S>
void TensorT<S>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
}

template <typename S>
S TensorT<S>::item() const {
  if (numel() != 1) throw ShapeMismatch("item: tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

template <typename S>
S TensorT<S>::at(std::initializer_list<Index> idx) const {
  const Shape& sh = node_->shape;
  if (idx.size() != sh.size()) throw ShapeMismatch("at: rank mismatch");
  Index off = 0;
  size_t k = 0;
  const Shape st = strides_of(sh);
  for (Index i : idx) off += i * st[k++];
  return node_->value[static_cast<size_t>(off)];
}

// ---------------------------------------------------------------------------
// TapeT

template <typename S>
void TapeT<S>::record(std::vector<NodePtr> inputs, NodePtr output, std::function<void()> backward) {
  for (const auto& in : inputs) {
    if (in.get() == output.get()) throw GraphCycle("op output aliases one of its inputs");
  }
  records_.push_back(Record{std::move(inputs), std::move(output), std::move(backward)});
  creation_order_.push_back(records_.back().output);
}

template <typename S>
void TapeT<S>::backward(const TensorT<S>& loss) {
  if (loss.numel() != 1) throw ShapeMismatch("backward: loss must be scalar");
  // Topological sanity: every record's inputs must precede its output. Records
  // are appended in execution order, so it suffices to check that no output
  // appears twice (a repeat would mean the "later" op wrote an earlier node).
  {
    std::unordered_set<const void*> seen;
    for (const auto& r : records_) {
      if (!seen.insert(r.output.get()).second) {
        throw GraphCycle("tape contains a node produced twice");
      }
    }
  }
  for (auto& r : records_) {
    r.output->grad.assign(r.output->value.size(), S(0));
    for (auto& in : r.inputs) {
      if (!in->grad.empty()) std::fill(in->grad.begin(), in->grad.end(), S(0));
    }
  }
  ensure_grad(loss.node());
  std::fill(loss.node()->grad.begin(), loss.node()->grad.end(), S(0));
  loss.node()->grad[0] = S(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    it->backward();
  }
}

template <typename S>
void TapeT<S>::clear() {
  records_.clear();
  creation_order_.clear();
}

// ---------------------------------------------------------------------------
// MaskMatrix

MaskMatrix MaskMatrix::all_true(Index rows, Index cols) {
  MaskMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.allow.assign(static_cast<size_t>(rows * cols), 1);
  return m;
}

// ---------------------------------------------------------------------------
// ops

namespace ops {

namespace {

template <typename S>
TensorT<S> make_output(Shape shape, bool requires_grad) {
  return TensorT<S>::zeros(std::move(shape), requires_grad);
}

template <typename S>
bool any_requires_grad(std::initializer_list<const TensorT<S>*> ts) {
  for (const auto* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace

template <typename S>
TensorT<S> matmul(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeMismatch("matmul: inputs must have rank >= 2");
  const Index m = a.dim(a.rank() - 2);
  const Index k = a.dim(a.rank() - 1);
  const Index kb = b.dim(b.rank() - 2);
  const Index n = b.dim(b.rank() - 1);
  if (k != kb) {
    throw ShapeMismatch("matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const bool shared_b = b.rank() == 2;
  Shape lead(a.shape().begin(), a.shape().end() - 2);
  if (!shared_b) {
    Shape lead_b(b.shape().begin(), b.shape().end() - 2);
    if (lead != lead_b) throw ShapeMismatch("matmul: batch dims differ");
  }
  const Index batch = shape_numel(lead);

  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);
  auto out = make_output<S>(std::move(out_shape), any_requires_grad<S>({&a, &b}));

  const S* pa = a.value().data();
  const S* pb = b.value().data();
  S* pc = out.mutable_value().data();
  for (Index i = 0; i < batch; ++i) {
    ECMap<S> ma(pa + i * m * k, m, k);
    ECMap<S> mb(pb + (shared_b ? 0 : i * k * n), k, n);
    EMap<S> mc(pc + i * m * n, m, n);
    mc.noalias() = ma * mb;
  }

  if (tape && out.requires_grad()) {
    auto na = a.node(), nb = b.node(), nc = out.node();
    tape->record({na, nb}, nc, [na, nb, nc, m, k, n, batch, shared_b]() {
      const S* gc = nc->grad.data();
      if (na->requires_grad) {
        ensure_grad(na);
        for (Index i = 0; i < batch; ++i) {
          EMap<S> ga(na->grad.data() + i * m * k, m, k);
          ECMap<S> mgc(gc + i * m * n, m, n);
          ECMap<S> mb(nb->value.data() + (shared_b ? 0 : i * k * n), k, n);
          ga.noalias() += mgc * mb.transpose();
        }
      }
      if (nb->requires_grad) {
        ensure_grad(nb);
        for (Index i = 0; i < batch; ++i) {
          EMap<S> gb(nb->grad.data() + (shared_b ? 0 : i * k * n), k, n);
          ECMap<S> ma(na->value.data() + i * m * k, m, k);
          ECMap<S> mgc(gc + i * m * n, m, n);
          gb.noalias() += ma.transpose() * mgc;
        }
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> add(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto out = make_output<S>(a.shape(), any_requires_grad<S>({&a, &b}));
  const size_t n = a.value().size();
  const S* pa = a.value().data();
  const S* pb = b.value().data();
  S* pc = out.mutable_value().data();
  for (size_t i = 0; i < n; ++i) pc[i] = pa[i] + pb[i];

  if (tape && out.requires_grad()) {
    auto na = a.node(), nb = b.node(), nc = out.node();
    tape->record({na, nb}, nc, [na, nb, nc]() {
      const auto& g = nc->grad;
      if (na->requires_grad) {
        ensure_grad(na);
        for (size_t i = 0; i < g.size(); ++i) na->grad[i] += g[i];
      }
      if (nb->requires_grad) {
        ensure_grad(nb);
        for (size_t i = 0; i < g.size(); ++i) nb->grad[i] += g[i];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> mul(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto out = make_output<S>(a.shape(), any_requires_grad<S>({&a, &b}));
  const size_t n = a.value().size();
  const S* pa = a.value().data();
  const S* pb = b.value().data();
  S* pc = out.mutable_value().data();
  for (size_t i = 0; i < n; ++i) pc[i] = pa[i] * pb[i];

  if (tape && out.requires_grad()) {
    auto na = a.node(), nb = b.node(), nc = out.node();
    tape->record({na, nb}, nc, [na, nb, nc]() {
      const auto& g = nc->grad;
      if (na->requires_grad) {
        ensure_grad(na);
        for (size_t i = 0; i < g.size(); ++i) na->grad[i] += g[i] * nb->value[i];
      }
      if (nb->requires_grad) {
        ensure_grad(nb);
        for (size_t i = 0; i < g.size(); ++i) nb->grad[i] += g[i] * na->value[i];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> gelu(TapeT<S>* tape, const TensorT<S>& x) {
  static const S kSqrt2OverPi = static_cast<S>(0.7978845608028653558798921198687637);
  static const S kCubic = static_cast<S>(0.044715);
  auto out = make_output<S>(x.shape(), x.requires_grad());
  const size_t n = x.value().size();
  const S* px = x.value().data();
  S* py = out.mutable_value().data();
  for (size_t i = 0; i < n; ++i) {
    const S v = px[i];
    const S u = kSqrt2OverPi * (v + kCubic * v * v * v);
    py[i] = S(0.5) * v * (S(1) + std::tanh(u));
  }
  if (tape && out.requires_grad()) {
    auto nx = x.node(), ny = out.node();
    tape->record({nx}, ny, [nx, ny]() {
      if (!nx->requires_grad) return;
      ensure_grad(nx);
      const auto& g = ny->grad;
      for (size_t i = 0; i < g.size(); ++i) {
        const S v = nx->value[i];
        const S u = kSqrt2OverPi * (v + kCubic * v * v * v);
        const S t = std::tanh(u);
        const S du = kSqrt2OverPi * (S(1) + S(3) * kCubic * v * v);
        nx->grad[i] += g[i] * (S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * du);
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> masked_softmax(TapeT<S>* tape, const TensorT<S>& scores, const MaskMatrix& mask) {
  if (scores.rank() < 2) throw ShapeMismatch("masked_softmax: rank must be >= 2");
  const Index rows = scores.dim(scores.rank() - 2);
  const Index cols = scores.dim(scores.rank() - 1);
  if (rows != mask.rows || cols != mask.cols) {
    throw ShapeMismatch("masked_softmax: mask " + std::to_string(mask.rows) + "x" +
                        std::to_string(mask.cols) + " vs scores " + shape_str(scores.shape()));
  }
  for (Index r = 0; r < rows; ++r) {
    bool any = false;
    for (Index c = 0; c < cols && !any; ++c) any = mask.at(r, c);
    if (!any) throw AllMaskedRow("mask row " + std::to_string(r) + " permits no entry");
  }
  const Index lead = scores.numel() / (rows * cols);
  auto out = make_output<S>(scores.shape(), scores.requires_grad());
  const S* ps = scores.value().data();
  S* pp = out.mutable_value().data();
  const uint8_t* pm = mask.allow.data();
  for (Index b = 0; b < lead; ++b) {
    for (Index r = 0; r < rows; ++r) {
      const S* srow = ps + (b * rows + r) * cols;
      S* prow = pp + (b * rows + r) * cols;
      const uint8_t* mrow = pm + r * cols;
      S mx = -std::numeric_limits<S>::infinity();
      for (Index c = 0; c < cols; ++c)
        if (mrow[c] && srow[c] > mx) mx = srow[c];
      S sum = S(0);
      for (Index c = 0; c < cols; ++c) {
        if (mrow[c]) {
          prow[c] = std::exp(srow[c] - mx);
          sum += prow[c];
        } else {
          prow[c] = S(0);
        }
      }
      const S inv = S(1) / sum;
      for (Index c = 0; c < cols; ++c) prow[c] *= inv;
    }
  }
  if (tape && out.requires_grad()) {
    auto ns = scores.node(), np = out.node();
    tape->record({ns}, np, [ns, np, lead, rows, cols]() {
      if (!ns->requires_grad) return;
      ensure_grad(ns);
      for (Index b = 0; b < lead; ++b) {
        for (Index r = 0; r < rows; ++r) {
          const Index off = (b * rows + r) * cols;
          const S* p = np->value.data() + off;
          const S* g = np->grad.data() + off;
          S* gs = ns->grad.data() + off;
          S dot = S(0);
          for (Index c = 0; c < cols; ++c) dot += g[c] * p[c];
          for (Index c = 0; c < cols; ++c) gs[c] += p[c] * (g[c] - dot);
        }
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> layer_norm(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& gain,
                      const TensorT<S>& bias, S eps) {
  const Index d = x.dim(x.rank() - 1);
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeMismatch("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
  }
  if (eps <= S(0)) throw ShapeMismatch("layer_norm: eps must be positive");
  const Index rows = x.numel() / d;
  auto out = make_output<S>(x.shape(), any_requires_grad<S>({&x, &gain, &bias}));
  const S* px = x.value().data();
  const S* pg = gain.value().data();
  const S* pb = bias.value().data();
  S* py = out.mutable_value().data();
  for (Index r = 0; r < rows; ++r) {
    const S* xr = px + r * d;
    S* yr = py + r * d;
    S mean = S(0);
    for (Index j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<S>(d);
    S var = S(0);
    for (Index j = 0; j < d; ++j) {
      const S c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<S>(d);
    const S inv_std = S(1) / std::sqrt(var + eps);
    for (Index j = 0; j < d; ++j) yr[j] = pg[j] * (xr[j] - mean) * inv_std + pb[j];
  }
  if (tape && out.requires_grad()) {
    auto nx = x.node(), ng = gain.node(), nb = bias.node(), ny = out.node();
    tape->record({nx, ng, nb}, ny, [nx, ng, nb, ny, rows, d, eps]() {
      if (nx->requires_grad) ensure_grad(nx);
      if (ng->requires_grad) ensure_grad(ng);
      if (nb->requires_grad) ensure_grad(nb);
      for (Index r = 0; r < rows; ++r) {
        const S* xr = nx->value.data() + r * d;
        const S* g = ny->grad.data() + r * d;
        S mean = S(0);
        for (Index j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<S>(d);
        S var = S(0);
        for (Index j = 0; j < d; ++j) {
          const S c = xr[j] - mean;
          var += c * c;
        }
        var /= static_cast<S>(d);
        const S inv_std = S(1) / std::sqrt(var + eps);
        S sum_dxhat = S(0), sum_dxhat_xhat = S(0);
        for (Index j = 0; j < d; ++j) {
          const S xhat = (xr[j] - mean) * inv_std;
          const S dxhat = g[j] * ng->value[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          if (ng->requires_grad) ng->grad[j] += g[j] * xhat;
          if (nb->requires_grad) nb->grad[j] += g[j];
        }
        if (nx->requires_grad) {
          S* gx = nx->grad.data() + r * d;
          const S inv_d = S(1) / static_cast<S>(d);
          for (Index j = 0; j < d; ++j) {
            const S xhat = (xr[j] - mean) * inv_std;
            const S dxhat = g[j] * ng->value[j];
            gx[j] += inv_std * (dxhat - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
          }
        }
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> slice(TapeT<S>* tape, const TensorT<S>& x, int axis, Index start, Index len) {
  const int ax = normalize_axis(axis, x.rank());
  const Index n = x.dim(ax);
  if (start < 0 || len < 1 || start + len > n) {
    throw ShapeMismatch("slice: [" + std::to_string(start) + "," + std::to_string(start + len) +
                        ") out of bounds for axis size " + std::to_string(n));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(ax)] = len;
  auto out = make_output<S>(out_shape, x.requires_grad());

  Index outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.dim(i);
  for (int i = ax + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const S* px = x.value().data();
  S* py = out.mutable_value().data();
  for (Index o = 0; o < outer; ++o) {
    const S* src = px + (o * n + start) * inner;
    S* dst = py + o * len * inner;
    std::copy(src, src + len * inner, dst);
  }
  if (tape && out.requires_grad()) {
    auto nx = x.node(), ny = out.node();
    tape->record({nx}, ny, [nx, ny, outer, inner, n, len, start]() {
      if (!nx->requires_grad) return;
      ensure_grad(nx);
      for (Index o = 0; o < outer; ++o) {
        const S* g = ny->grad.data() + o * len * inner;
        S* gx = nx->grad.data() + (o * n + start) * inner;
        for (Index i = 0; i < len * inner; ++i) gx[i] += g[i];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> concat(TapeT<S>* tape, const std::vector<TensorT<S>>& xs, int axis) {
  if (xs.empty()) throw ShapeMismatch("concat: empty input list");
  const int ax = normalize_axis(axis, xs[0].rank());
  Shape out_shape = xs[0].shape();
  Index total = 0;
  bool rg = false;
  for (const auto& x : xs) {
    if (x.rank() != xs[0].rank()) throw ShapeMismatch("concat: rank mismatch");
    for (int i = 0; i < x.rank(); ++i) {
      if (i != ax && x.dim(i) != xs[0].dim(i)) throw ShapeMismatch("concat: shape mismatch");
    }
    total += x.dim(ax);
    rg = rg || x.requires_grad();
  }
  out_shape[static_cast<size_t>(ax)] = total;
  auto out = make_output<S>(out_shape, rg);

  Index outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= xs[0].dim(i);
  for (int i = ax + 1; i < xs[0].rank(); ++i) inner *= xs[0].dim(i);
  S* py = out.mutable_value().data();
  Index col_off = 0;
  for (const auto& x : xs) {
    const Index len = x.dim(ax);
    const S* px = x.value().data();
    for (Index o = 0; o < outer; ++o) {
      std::copy(px + o * len * inner, px + (o + 1) * len * inner,
                py + (o * total + col_off) * inner);
    }
    col_off += len;
  }
  if (tape && rg) {
    std::vector<typename TapeT<S>::NodePtr> in_nodes;
    for (const auto& x : xs) in_nodes.push_back(x.node());
    auto ny = out.node();
    tape->record(in_nodes, ny, [in_nodes, ny, outer, inner, total]() {
      Index off = 0;
      for (const auto& nx : in_nodes) {
        const Index len = static_cast<Index>(nx->value.size()) / (outer * inner);
        if (nx->requires_grad) {
          ensure_grad(nx);
          for (Index o = 0; o < outer; ++o) {
            const S* g = ny->grad.data() + (o * total + off) * inner;
            S* gx = nx->grad.data() + o * len * inner;
            for (Index i = 0; i < len * inner; ++i) gx[i] += g[i];
          }
        }
        off += len;
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> broadcast_to(TapeT<S>* tape, const TensorT<S>& x, const Shape& target) {
  const int rt = static_cast<int>(target.size());
  const int rx = x.rank();
  if (rx > rt) throw ShapeMismatch("broadcast_to: source rank exceeds target rank");
  // Right-aligned stride map; broadcast axes get stride 0.
  Shape src_strides(rt, 0);
  {
    const Shape xs = strides_of(x.shape());
    for (int i = 0; i < rx; ++i) {
      const Index sdim = x.dim(rx - 1 - i);
      const Index tdim = target[static_cast<size_t>(rt - 1 - i)];
      if (sdim == tdim) {
        src_strides[static_cast<size_t>(rt - 1 - i)] = xs[static_cast<size_t>(rx - 1 - i)];
      } else if (sdim == 1) {
        src_strides[static_cast<size_t>(rt - 1 - i)] = 0;
      } else {
        throw ShapeMismatch("broadcast_to: cannot expand " + shape_str(x.shape()) + " to " +
                            shape_str(target));
      }
    }
  }
  if (x.shape() == target) {
    // Still copies: outputs are distinct nodes.
    auto out = TensorT<S>::from(target, x.value(), x.requires_grad());
    if (tape && out.requires_grad()) {
      auto nx = x.node(), ny = out.node();
      tape->record({nx}, ny, [nx, ny]() {
        if (!nx->requires_grad) return;
        ensure_grad(nx);
        for (size_t i = 0; i < ny->grad.size(); ++i) nx->grad[i] += ny->grad[i];
      });
    }
    return out;
  }
  auto out = make_output<S>(target, x.requires_grad());
  const Index numel = out.numel();
  const S* px = x.value().data();
  S* py = out.mutable_value().data();
  Shape idx(static_cast<size_t>(rt), 0);
  Index src_off = 0;
  for (Index flat = 0; flat < numel; ++flat) {
    py[flat] = px[src_off];
    // odometer increment
    for (int a = rt - 1; a >= 0; --a) {
      idx[static_cast<size_t>(a)]++;
      src_off += src_strides[static_cast<size_t>(a)];
      if (idx[static_cast<size_t>(a)] < target[static_cast<size_t>(a)]) break;
      src_off -= src_strides[static_cast<size_t>(a)] * target[static_cast<size_t>(a)];
      idx[static_cast<size_t>(a)] = 0;
    }
  }
  if (tape && out.requires_grad()) {
    auto nx = x.node(), ny = out.node();
    const Shape tgt = target;
    tape->record({nx}, ny, [nx, ny, src_strides, tgt, rt]() {
      if (!nx->requires_grad) return;
      ensure_grad(nx);
      Shape idx(static_cast<size_t>(rt), 0);
      Index src_off = 0;
      const Index numel = static_cast<Index>(ny->grad.size());
      for (Index flat = 0; flat < numel; ++flat) {
        nx->grad[static_cast<size_t>(src_off)] += ny->grad[static_cast<size_t>(flat)];
        for (int a = rt - 1; a >= 0; --a) {
          idx[static_cast<size_t>(a)]++;
          src_off += src_strides[static_cast<size_t>(a)];
          if (idx[static_cast<size_t>(a)] < tgt[static_cast<size_t>(a)]) break;
          src_off -= src_strides[static_cast<size_t>(a)] * tgt[static_cast<size_t>(a)];
          idx[static_cast<size_t>(a)] = 0;
        }
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> reduce_sum(TapeT<S>* tape, const TensorT<S>& x, int axis, bool keepdim) {
  if (axis < 0) {
    // full reduction, deterministic left-to-right
    auto out = make_output<S>({1}, x.requires_grad());
    S acc = S(0);
    for (S v : x.value()) acc += v;
    out.mutable_value()[0] = acc;
    if (tape && out.requires_grad()) {
      auto nx = x.node(), ny = out.node();
      tape->record({nx}, ny, [nx, ny]() {
        if (!nx->requires_grad) return;
        ensure_grad(nx);
        const S g = ny->grad[0];
        for (auto& v : nx->grad) v += g;
      });
    }
    return out;
  }
  const int ax = normalize_axis(axis, x.rank());
  const Index n = x.dim(ax);
  Index outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.dim(i);
  for (int i = ax + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape out_shape;
  for (int i = 0; i < x.rank(); ++i) {
    if (i == ax) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(x.dim(i));
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);
  auto out = make_output<S>(out_shape, x.requires_grad());
  const S* px = x.value().data();
  S* py = out.mutable_value().data();
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      S acc = S(0);
      for (Index k = 0; k < n; ++k) acc += px[(o * n + k) * inner + i];
      py[o * inner + i] = acc;
    }
  }
  if (tape && out.requires_grad()) {
    auto nx = x.node(), ny = out.node();
    tape->record({nx}, ny, [nx, ny, outer, inner, n]() {
      if (!nx->requires_grad) return;
      ensure_grad(nx);
      for (Index o = 0; o < outer; ++o) {
        for (Index i = 0; i < inner; ++i) {
          const S g = ny->grad[static_cast<size_t>(o * inner + i)];
          for (Index k = 0; k < n; ++k) nx->grad[static_cast<size_t>((o * n + k) * inner + i)] += g;
        }
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> reduce_mean(TapeT<S>* tape, const TensorT<S>& x, int axis, bool keepdim) {
  const Index n = axis < 0 ? x.numel() : x.dim(normalize_axis(axis, x.rank()));
  auto s = reduce_sum(tape, x, axis, keepdim);
  return scale(tape, s, S(1) / static_cast<S>(n));
}

template <typename S>
TensorT<S> transpose(TapeT<S>* tape, const TensorT<S>& x, int axis0, int axis1) {
  const int a0 = normalize_axis(axis0, x.rank());
  const int a1 = normalize_axis(axis1, x.rank());
  if (a0 == a1) return reshape(tape, x, x.shape());
  Shape out_shape = x.shape();
  std::swap(out_shape[static_cast<size_t>(a0)], out_shape[static_cast<size_t>(a1)]);
  auto out = make_output<S>(out_shape, x.requires_grad());

  const Shape in_strides = strides_of(x.shape());
  Shape perm_strides = in_strides;
  std::swap(perm_strides[static_cast<size_t>(a0)], perm_strides[static_cast<size_t>(a1)]);
  const int rt = x.rank();
  const S* px = x.value().data();
  S* py = out.mutable_value().data();
  Shape idx(static_cast<size_t>(rt), 0);
  Index src_off = 0;
  const Index numel = x.numel();
  for (Index flat = 0; flat < numel; ++flat) {
    py[flat] = px[src_off];
    for (int a = rt - 1; a >= 0; --a) {
      idx[static_cast<size_t>(a)]++;
      src_off += perm_strides[static_cast<size_t>(a)];
      if (idx[static_cast<size_t>(a)] < out_shape[static_cast<size_t>(a)]) break;
      src_off -= perm_strides[static_cast<size_t>(a)] * out_shape[static_cast<size_t>(a)];
      idx[static_cast<size_t>(a)] = 0;
    }
  }
  if (tape && out.requires_grad()) {
    auto nx = x.node(), ny = out.node();
    tape->record({nx}, ny, [nx, ny, perm_strides, out_shape, rt]() {
      if (!nx->requires_grad) return;
      ensure_grad(nx);
      Shape idx(static_cast<size_t>(rt), 0);
      Index src_off = 0;
      const Index numel = static_cast<Index>(ny->grad.size());
      for (Index flat = 0; flat < numel; ++flat) {
        nx->grad[static_cast<size_t>(src_off)] += ny->grad[static_cast<size_t>(flat)];
        for (int a = rt - 1; a >= 0; --a) {
          idx[static_cast<size_t>(a)]++;
          src_off += perm_strides[static_cast<size_t>(a)];
          if (idx[static_cast<size_t>(a)] < out_shape[static_cast<size_t>(a)]) break;
          src_off -= perm_strides[static_cast<size_t>(a)] * out_shape[static_cast<size_t>(a)];
          idx[static_cast<size_t>(a)] = 0;
        }
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> reshape(TapeT<S>* tape, const TensorT<S>& x, Shape target) {
  if (shape_numel(target) != x.numel()) {
    throw ShapeMismatch("reshape: " + shape_str(x.shape()) + " to " + shape_str(target));
  }
  auto out = TensorT<S>::from(std::move(target), x.value(), x.requires_grad());
  if (tape && out.requires_grad()) {
    auto nx = x.node(), ny = out.node();
    tape->record({nx}, ny, [nx, ny]() {
      if (!nx->requires_grad) return;
      ensure_grad(nx);
      for (size_t i = 0; i < ny->grad.size(); ++i) nx->grad[i] += ny->grad[i];
    });
  }
  return out;
}

template <typename S>
TensorT<S> cross_entropy(TapeT<S>* tape, const TensorT<S>& logits, const std::vector<int>& labels,
                         S smoothing, const std::vector<S>* sample_weights) {
  if (logits.rank() != 2) throw ShapeMismatch("cross_entropy: logits must be [B, C]");
  const Index b = logits.dim(0);
  const Index c = logits.dim(1);
  if (static_cast<Index>(labels.size()) != b) throw ShapeMismatch("cross_entropy: label count");
  if (sample_weights && static_cast<Index>(sample_weights->size()) != b) {
    throw ShapeMismatch("cross_entropy: weight count");
  }
  for (int y : labels) {
    if (y < 0 || y >= c) throw LabelOutOfRange("label " + std::to_string(y));
  }
  auto out = make_output<S>({1}, logits.requires_grad());
  const S* pz = logits.value().data();
  S total = S(0);
  for (Index i = 0; i < b; ++i) {
    const S* z = pz + i * c;
    S mx = z[0];
    for (Index j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    S sum_exp = S(0), sum_z = S(0);
    for (Index j = 0; j < c; ++j) {
      sum_exp += std::exp(z[j] - mx);
      sum_z += z[j];
    }
    const S lse = mx + std::log(sum_exp);
    const S target_dot =
        (S(1) - smoothing) * z[labels[static_cast<size_t>(i)]] + smoothing / static_cast<S>(c) * sum_z;
    const S w = sample_weights ? (*sample_weights)[static_cast<size_t>(i)] : S(1);
    total += w * (lse - target_dot);
  }
  out.mutable_value()[0] = total / static_cast<S>(b);

  if (tape && out.requires_grad()) {
    auto nz = logits.node(), ny = out.node();
    std::vector<int> lab = labels;
    std::vector<S> wts;
    if (sample_weights) wts = *sample_weights;
    tape->record({nz}, ny, [nz, ny, lab, wts, b, c, smoothing]() {
      if (!nz->requires_grad) return;
      ensure_grad(nz);
      const S g = ny->grad[0] / static_cast<S>(b);
      for (Index i = 0; i < b; ++i) {
        const S* z = nz->value.data() + i * c;
        S* gz = nz->grad.data() + i * c;
        S mx = z[0];
        for (Index j = 1; j < c; ++j) mx = std::max(mx, z[j]);
        S sum_exp = S(0);
        for (Index j = 0; j < c; ++j) sum_exp += std::exp(z[j] - mx);
        const S w = wts.empty() ? S(1) : wts[static_cast<size_t>(i)];
        const S uniform = smoothing / static_cast<S>(c);
        for (Index j = 0; j < c; ++j) {
          const S p = std::exp(z[j] - mx) / sum_exp;
          S q = uniform;
          if (j == lab[static_cast<size_t>(i)]) q += S(1) - smoothing;
          gz[j] += g * w * (p - q);
        }
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> policy_gradient_loss(TapeT<S>* tape, const TensorT<S>& logits,
                                const std::vector<int>& actions, const std::vector<S>& advantages,
                                S ent_coef) {
  if (logits.rank() != 2) throw ShapeMismatch("policy_gradient_loss: logits must be [B, A]");
  const Index b = logits.dim(0);
  const Index a = logits.dim(1);
  if (static_cast<Index>(actions.size()) != b || static_cast<Index>(advantages.size()) != b) {
    throw ShapeMismatch("policy_gradient_loss: batch size mismatch");
  }
  for (int act : actions) {
    if (act < 0 || act >= a) throw LabelOutOfRange("action " + std::to_string(act));
  }
  auto out = make_output<S>({1}, logits.requires_grad());
  const S* pz = logits.value().data();
  S total = S(0);
  for (Index i = 0; i < b; ++i) {
    const S* z = pz + i * a;
    S mx = z[0];
    for (Index j = 1; j < a; ++j) mx = std::max(mx, z[j]);
    S sum_exp = S(0);
    for (Index j = 0; j < a; ++j) sum_exp += std::exp(z[j] - mx);
    const S lse = mx + std::log(sum_exp);
    S entropy = S(0);
    for (Index j = 0; j < a; ++j) {
      const S logp = z[j] - lse;
      entropy -= std::exp(logp) * logp;
    }
    const S logp_a = z[actions[static_cast<size_t>(i)]] - lse;
    total += -advantages[static_cast<size_t>(i)] * logp_a - ent_coef * entropy;
  }
  out.mutable_value()[0] = total / static_cast<S>(b);

  if (tape && out.requires_grad()) {
    auto nz = logits.node(), ny = out.node();
    std::vector<int> acts = actions;
    std::vector<S> advs = advantages;
    tape->record({nz}, ny, [nz, ny, acts, advs, b, a, ent_coef]() {
      if (!nz->requires_grad) return;
      ensure_grad(nz);
      const S g = ny->grad[0] / static_cast<S>(b);
      for (Index i = 0; i < b; ++i) {
        const S* z = nz->value.data() + i * a;
        S* gz = nz->grad.data() + i * a;
        S mx = z[0];
        for (Index j = 1; j < a; ++j) mx = std::max(mx, z[j]);
        S sum_exp = S(0);
        for (Index j = 0; j < a; ++j) sum_exp += std::exp(z[j] - mx);
        const S lse = mx + std::log(sum_exp);
        S entropy = S(0);
        for (Index j = 0; j < a; ++j) {
          const S logp = z[j] - lse;
          entropy -= std::exp(logp) * logp;
        }
        for (Index j = 0; j < a; ++j) {
          const S logp = z[j] - lse;
          const S p = std::exp(logp);
          const S onehot = (j == acts[static_cast<size_t>(i)]) ? S(1) : S(0);
          gz[j] += g * (advs[static_cast<size_t>(i)] * (p - onehot) +
                        ent_coef * p * (logp + entropy));
        }
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> linear(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& weight,
                  const TensorT<S>& bias) {
  auto y = matmul(tape, x, transpose(tape, weight));
  if (bias.defined()) {
    y = add(tape, y, broadcast_to(tape, bias, y.shape()));
  }
  return y;
}

template <typename S>
TensorT<S> scale(TapeT<S>* tape, const TensorT<S>& x, S c) {
  auto k = broadcast_to(tape, TensorT<S>::scalar(c), x.shape());
  return mul(tape, x, k);
}

template <typename S>
TensorT<S> sub(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  return add(tape, a, scale(tape, b, S(-1)));
}

template <typename S>
TensorT<S> softmax(TapeT<S>* tape, const TensorT<S>& x) {
  if (x.rank() < 2) throw ShapeMismatch("softmax: rank must be >= 2");
  const Index rows = x.dim(x.rank() - 2);
  const Index cols = x.dim(x.rank() - 1);
  return masked_softmax(tape, x, MaskMatrix::all_true(rows, cols));
}

}  // namespace ops

template <typename S>
std::vector<S> softmax_row(const std::vector<S>& logits) {
  std::vector<S> p(logits.size());
  S mx = logits[0];
  for (S v : logits) mx = std::max(mx, v);
  S sum = S(0);
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

template <typename S>
bool all_finite(const TensorT<S>& t) {
  for (S v : t.value())
    if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// explicit instantiation

template struct TensorNodeT<float>;
template struct TensorNodeT<double>;
template class TensorT<float>;
template class TensorT<double>;
template class TapeT<float>;
template class TapeT<double>;

#define ADAPERCEIVER_INSTANTIATE_OPS(S)                                                           \
  template TensorT<S> ops::matmul<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&);            \
  template TensorT<S> ops::add<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&);               \
  template TensorT<S> ops::mul<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&);               \
  template TensorT<S> ops::gelu<S>(TapeT<S>*, const TensorT<S>&);                                 \
  template TensorT<S> ops::masked_softmax<S>(TapeT<S>*, const TensorT<S>&, const MaskMatrix&);    \
  template TensorT<S> ops::layer_norm<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&,         \
                                         const TensorT<S>&, S);                                   \
  template TensorT<S> ops::slice<S>(TapeT<S>*, const TensorT<S>&, int, Index, Index);             \
  template TensorT<S> ops::concat<S>(TapeT<S>*, const std::vector<TensorT<S>>&, int);             \
  template TensorT<S> ops::broadcast_to<S>(TapeT<S>*, const TensorT<S>&, const Shape&);           \
  template TensorT<S> ops::reduce_sum<S>(TapeT<S>*, const TensorT<S>&, int, bool);                \
  template TensorT<S> ops::reduce_mean<S>(TapeT<S>*, const TensorT<S>&, int, bool);               \
  template TensorT<S> ops::transpose<S>(TapeT<S>*, const TensorT<S>&, int, int);                  \
  template TensorT<S> ops::reshape<S>(TapeT<S>*, const TensorT<S>&, Shape);                       \
  template TensorT<S> ops::cross_entropy<S>(TapeT<S>*, const TensorT<S>&, const std::vector<int>&, \
                                            S, const std::vector<S>*);                            \
  template TensorT<S> ops::policy_gradient_loss<S>(TapeT<S>*, const TensorT<S>&,                  \
                                                   const std::vector<int>&, const std::vector<S>&, \
                                                   S);                                            \
  template TensorT<S> ops::linear<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&,             \
                                     const TensorT<S>&);                                          \
  template TensorT<S> ops::scale<S>(TapeT<S>*, const TensorT<S>&, S);                             \
  template TensorT<S> ops::sub<S>(TapeT<S>*, const TensorT<S>&, const TensorT<S>&);               \
  template TensorT<S> ops::softmax<S>(TapeT<S>*, const TensorT<S>&);                              \
  template std::vector<S> softmax_row<S>(const std::vector<S>&);                                  \
  template bool all_finite<S>(const TensorT<S>&);

ADAPERCEIVER_INSTANTIATE_OPS(float)
ADAPERCEIVER_INSTANTIATE_OPS(double)

#undef ADAPERCEIVER_INSTANTIATE_OPS

}  // namespace adaperceiver
