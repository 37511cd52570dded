#include "zen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace zen {

namespace {

std::size_t product(const std::vector<std::size_t>& s) {
  std::size_t p = 1;
  for (auto d : s) p *= d;
  return p;
}

// 2-D view: rank-1 tensors act as a single row.
std::size_t view_rows(const detail::Node& n) {
  return n.shape.size() <= 1 ? 1 : n.shape[0];
}
std::size_t view_cols(const detail::Node& n) {
  if (n.shape.empty()) return 0;
  return n.shape.size() == 1 ? n.shape[0] : n.shape[1];
}

void require_2d_max(const detail::Node& n, const char* op) {
  if (n.shape.size() > 2)
    throw ShapeError(std::string(op) + ": rank > 2 unsupported, got shape " +
                     shape_str(n.shape));
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double norm_cdf(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }
double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

}  // namespace

std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

Array::Array(std::vector<std::size_t> s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)) {
  if (product(shape) != values.size())
    throw ShapeError("Array: shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
}

Array Array::zeros(std::vector<std::size_t> s) {
  std::size_t n = product(s);
  return Array(std::move(s), std::vector<double>(n, 0.0));
}

void detail::Node::ensure_grad() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

const std::vector<std::size_t>& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->values.size(); }
const std::vector<double>& Tensor::values() const { return node_->values; }
bool Tensor::tracked() const { return node_ && node_->tracked; }

const std::vector<double>& Tensor::grad() const {
  static const std::vector<double> empty;
  return node_->grad.empty() ? empty : node_->grad;
}

double Tensor::item() const {
  if (size() != 1)
    throw ShapeError("item(): tensor is not scalar, shape " + shape_str(shape()));
  return node_->values[0];
}

Tensor Tensor::constant(std::vector<std::size_t> shape, std::vector<double> values) {
  if (product(shape) != values.size())
    throw ShapeError("constant: shape " + shape_str(shape) + " does not match value count");
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  return Tensor(std::move(n));
}

detail::Node& node_of(const Tensor& t) { return *t.node_; }

Tensor Tape::leaf(std::vector<std::size_t> shape, std::vector<double> values) {
  if (product(shape) != values.size())
    throw ShapeError("leaf: shape " + shape_str(shape) + " does not match value count");
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->tracked = true;
  n->tape = this;
  record(n);
  return Tensor(std::move(n));
}

void Tape::record(std::shared_ptr<detail::Node> n) { nodes_.push_back(std::move(n)); }

void Tape::backward(const Tensor& loss) {
  detail::Node& ln = node_of(loss);
  if (ln.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, shape " +
                                shape_str(ln.shape));
  if (ln.tape != this)
    throw std::invalid_argument("backward: loss was not recorded on this tape");
  for (auto& n : nodes_) n->grad.clear();
  ln.ensure_grad();
  ln.grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& n = **it;
    if (n.grad.empty() || !n.backprop) continue;
    n.backprop(n);
  }
}

// Builds an op node. The result is tracked (and taped) iff some parent is;
// all-constant inputs fold to a constant.
Tensor make_op(std::vector<std::size_t> shape, std::vector<double> values,
               std::vector<Tensor> parents, std::function<void(detail::Node&)> backprop) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  Tape* tape = nullptr;
  bool tracked = false;
  for (const auto& p : parents) {
    detail::Node& pn = node_of(p);
    tracked = tracked || pn.tracked;
    if (pn.tape) {
      if (tape && tape != pn.tape)
        throw std::invalid_argument("op mixes tensors from two different tapes");
      tape = pn.tape;
    }
  }
  if (tracked && tape) {
    n->tracked = true;
    n->tape = tape;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_);
    n->backprop = std::move(backprop);
    tape->record(n);
  }
  return Tensor(std::move(n));
}

namespace {

detail::Node& parent(detail::Node& n, std::size_t i) { return *n.parents[i]; }

// Accumulate into a parent's grad if it participates in the tape.
bool wants_grad(detail::Node& p) {
  if (!p.tracked) return false;
  p.ensure_grad();
  return true;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    for (int k = 0; k < 2; ++k) {
      detail::Node& p = parent(n, k);
      if (!wants_grad(p)) continue;
      for (std::size_t i = 0; i < n.size(); ++i) p.grad[i] += n.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    detail::Node& pa = parent(n, 0);
    if (wants_grad(pa))
      for (std::size_t i = 0; i < n.size(); ++i) pa.grad[i] += n.grad[i];
    detail::Node& pb = parent(n, 1);
    if (wants_grad(pb))
      for (std::size_t i = 0; i < n.size(); ++i) pb.grad[i] -= n.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    detail::Node& pa = parent(n, 0);
    detail::Node& pb = parent(n, 1);
    if (wants_grad(pa))
      for (std::size_t i = 0; i < n.size(); ++i) pa.grad[i] += n.grad[i] * pb.values[i];
    if (wants_grad(pb))
      for (std::size_t i = 0; i < n.size(); ++i) pb.grad[i] += n.grad[i] * pa.values[i];
  });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "divide");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] / b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    detail::Node& pa = parent(n, 0);
    detail::Node& pb = parent(n, 1);
    if (wants_grad(pa))
      for (std::size_t i = 0; i < n.size(); ++i) pa.grad[i] += n.grad[i] / pb.values[i];
    if (wants_grad(pb))
      for (std::size_t i = 0; i < n.size(); ++i)
        pb.grad[i] -= n.grad[i] * pa.values[i] / (pb.values[i] * pb.values[i]);
  });
}

Tensor affine(const Tensor& t, double s, double shift) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * t.values()[i] + shift;
  return make_op(t.shape(), std::move(out), {t}, [s](detail::Node& n) {
    detail::Node& p = parent(n, 0);
    if (!wants_grad(p)) return;
    for (std::size_t i = 0; i < n.size(); ++i) p.grad[i] += s * n.grad[i];
  });
}

Tensor scale(const Tensor& t, double c) { return affine(t, c, 0.0); }

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  const detail::Node& mn = node_of(m);
  require_2d_max(mn, "add_rowvec");
  std::size_t rows = view_rows(mn), cols = view_cols(mn);
  if (v.rank() != 1 || v.size() != cols)
    throw ShapeError("add_rowvec: vector " + shape_str(v.shape()) +
                     " does not match columns of " + shape_str(m.shape()));
  std::vector<double> out(m.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = m.values()[r * cols + c] + v.values()[c];
  return make_op(m.shape(), std::move(out), {m, v}, [rows, cols](detail::Node& n) {
    detail::Node& pm = parent(n, 0);
    detail::Node& pv = parent(n, 1);
    if (wants_grad(pm))
      for (std::size_t i = 0; i < n.size(); ++i) pm.grad[i] += n.grad[i];
    if (wants_grad(pv))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) pv.grad[c] += n.grad[r * cols + c];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const detail::Node& an = node_of(a);
  const detail::Node& bn = node_of(b);
  require_2d_max(an, "matmul");
  require_2d_max(bn, "matmul");
  std::size_t m = view_rows(an), k = view_cols(an);
  std::size_t k2 = view_rows(bn), n2 = view_cols(bn);
  if (bn.shape.size() == 1) { k2 = bn.shape[0]; n2 = 1; }
  if (k != k2)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  std::vector<double> out(m * n2, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n2; ++j) out[i * n2 + j] += aip * bv[p * n2 + j];
    }
  std::vector<std::size_t> out_shape;
  if (an.shape.size() == 1 && bn.shape.size() == 1) out_shape = {1};
  else out_shape = {m, n2};
  return make_op(std::move(out_shape), std::move(out), {a, b},
                 [m, k, n2](detail::Node& n) {
    detail::Node& pa = parent(n, 0);
    detail::Node& pb = parent(n, 1);
    // dA = dC * B^T, dB = A^T * dC
    if (wants_grad(pa))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n2; ++j)
            s += n.grad[i * n2 + j] * pb.values[p * n2 + j];
          pa.grad[i * k + p] += s;
        }
    if (wants_grad(pb))
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n2; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < m; ++i)
            s += pa.values[i * k + p] * n.grad[i * n2 + j];
          pb.grad[p * n2 + j] += s;
        }
  });
}

Tensor transpose(const Tensor& m) {
  const detail::Node& mn = node_of(m);
  require_2d_max(mn, "transpose");
  std::size_t rows = view_rows(mn), cols = view_cols(mn);
  std::vector<double> out(m.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = m.values()[r * cols + c];
  return make_op({cols, rows}, std::move(out), {m}, [rows, cols](detail::Node& n) {
    detail::Node& p = parent(n, 0);
    if (!wants_grad(p)) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        p.grad[r * cols + c] += n.grad[c * rows + r];
  });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  const detail::Node& an = node_of(a);
  const detail::Node& bn = node_of(b);
  require_2d_max(an, "concat_rows");
  require_2d_max(bn, "concat_rows");
  std::size_t ca = view_cols(an), cb = view_cols(bn);
  if (ca != cb)
    throw ShapeError("concat_rows: column mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::size_t ra = view_rows(an), rb = view_rows(bn);
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  return make_op({ra + rb, ca}, std::move(out), {a, b}, [ra, ca](detail::Node& n) {
    detail::Node& pa = parent(n, 0);
    detail::Node& pb = parent(n, 1);
    std::size_t split = ra * ca;
    if (wants_grad(pa))
      for (std::size_t i = 0; i < split; ++i) pa.grad[i] += n.grad[i];
    if (wants_grad(pb))
      for (std::size_t i = split; i < n.size(); ++i) pb.grad[i - split] += n.grad[i];
  });
}

Tensor slice_rows(const Tensor& m, std::size_t start, std::size_t len) {
  const detail::Node& mn = node_of(m);
  require_2d_max(mn, "slice_rows");
  std::size_t rows = view_rows(mn), cols = view_cols(mn);
  if (start + len > rows)
    throw ShapeError("slice_rows: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") exceeds " + std::to_string(rows) +
                     " rows");
  std::vector<double> out(m.values().begin() + start * cols,
                          m.values().begin() + (start + len) * cols);
  return make_op({len, cols}, std::move(out), {m}, [start, cols](detail::Node& n) {
    detail::Node& p = parent(n, 0);
    if (!wants_grad(p)) return;
    for (std::size_t i = 0; i < n.size(); ++i) p.grad[start * cols + i] += n.grad[i];
  });
}

Tensor slice_cols(const Tensor& m, std::size_t start, std::size_t len) {
  const detail::Node& mn = node_of(m);
  require_2d_max(mn, "slice_cols");
  std::size_t rows = view_rows(mn), cols = view_cols(mn);
  if (start + len > cols)
    throw ShapeError("slice_cols: range exceeds " + std::to_string(cols) + " columns");
  std::vector<double> out(rows * len);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < len; ++c)
      out[r * len + c] = m.values()[r * cols + start + c];
  return make_op({rows, len}, std::move(out), {m},
                 [rows, cols, start, len](detail::Node& n) {
    detail::Node& p = parent(n, 0);
    if (!wants_grad(p)) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < len; ++c)
        p.grad[r * cols + start + c] += n.grad[r * len + c];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  std::size_t rows = view_rows(node_of(parts[0]));
  std::size_t total_cols = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const detail::Node& pn = node_of(p);
    require_2d_max(pn, "concat_cols");
    if (view_rows(pn) != rows)
      throw ShapeError("concat_cols: row mismatch");
    widths.push_back(view_cols(pn));
    total_cols += widths.back();
  }
  std::vector<double> out(rows * total_cols);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    std::size_t w = widths[k];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c)
        out[r * total_cols + off + c] = parts[k].values()[r * w + c];
    off += w;
  }
  return make_op({rows, total_cols}, std::move(out), parts,
                 [rows, total_cols, widths](detail::Node& n) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      std::size_t w = widths[k];
      detail::Node& p = parent(n, k);
      if (wants_grad(p))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c)
            p.grad[r * w + c] += n.grad[r * total_cols + off + c];
      off += w;
    }
  });
}

Tensor reshape(const Tensor& t, std::vector<std::size_t> shape) {
  if (product(shape) != t.size())
    throw ShapeError("reshape: " + shape_str(t.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  std::vector<double> out = t.values();
  return make_op(std::move(shape), std::move(out), {t}, [](detail::Node& n) {
    detail::Node& p = parent(n, 0);
    if (!wants_grad(p)) return;
    for (std::size_t i = 0; i < n.size(); ++i) p.grad[i] += n.grad[i];
  });
}

namespace {

Tensor reduce_impl(const Tensor& t, std::size_t axis, bool mean) {
  const detail::Node& tn = node_of(t);
  if (axis >= std::max<std::size_t>(tn.shape.size(), 1))
    throw std::out_of_range("reduce: axis " + std::to_string(axis) +
                            " out of range for shape " + shape_str(tn.shape));
  require_2d_max(tn, "reduce");
  std::size_t rows = view_rows(tn), cols = view_cols(tn);
  bool over_rows = (tn.shape.size() == 2 && axis == 0);
  if (tn.shape.size() <= 1) over_rows = false;  // rank-1: only axis 0, over cols
  std::size_t out_len = over_rows ? cols : rows;
  std::size_t n_red = over_rows ? rows : cols;
  double denom = mean ? double(n_red) : 1.0;
  std::vector<double> out(out_len, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[over_rows ? c : r] += t.values()[r * cols + c];
  for (auto& v : out) v /= denom;
  return make_op({out_len}, std::move(out), {t},
                 [rows, cols, over_rows, denom](detail::Node& n) {
    detail::Node& p = parent(n, 0);
    if (!wants_grad(p)) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        p.grad[r * cols + c] += n.grad[over_rows ? c : r] / denom;
  });
}

}  // namespace

Tensor reduce_mean(const Tensor& t, std::size_t axis) { return reduce_impl(t, axis, true); }
Tensor reduce_sum(const Tensor& t, std::size_t axis) { return reduce_impl(t, axis, false); }

Tensor sum_all(const Tensor& t) {
  double s = std::accumulate(t.values().begin(), t.values().end(), 0.0);
  return make_op({1}, {s}, {t}, [](detail::Node& n) {
    detail::Node& p = parent(n, 0);
    if (!wants_grad(p)) return;
    for (auto& g : p.grad) g += n.grad[0];
  });
}

Tensor mean_all(const Tensor& t) {
  double denom = double(t.size());
  double s = std::accumulate(t.values().begin(), t.values().end(), 0.0) / denom;
  return make_op({1}, {s}, {t}, [denom](detail::Node& n) {
    detail::Node& p = parent(n, 0);
    if (!wants_grad(p)) return;
    for (auto& g : p.grad) g += n.grad[0] / denom;
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const detail::Node& xn = node_of(x);
  require_2d_max(xn, "layer_norm");
  std::size_t rows = view_rows(xn), cols = view_cols(xn);
  if (cols == 0) throw ShapeError("layer_norm: empty last axis");
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  if (gain.size() != cols || bias.size() != cols)
    throw ShapeError("layer_norm: gain/bias size must equal last axis " +
                     std::to_string(cols));
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += x.values()[r * cols + c];
    mu /= double(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      double d = x.values()[r * cols + c] - mu;
      var += d * d;
    }
    var /= double(cols);
    double istd = 1.0 / std::sqrt(var + eps);
    inv_std[r] = istd;
    for (std::size_t c = 0; c < cols; ++c) {
      double h = (x.values()[r * cols + c] - mu) * istd;
      xhat[r * cols + c] = h;
      out[r * cols + c] = gain.values()[c] * h + bias.values()[c];
    }
  }
  return make_op(x.shape(), std::move(out), {x, gain, bias},
                 [rows, cols, xhat = std::move(xhat),
                  inv_std = std::move(inv_std)](detail::Node& n) {
    detail::Node& px = parent(n, 0);
    detail::Node& pg = parent(n, 1);
    detail::Node& pb = parent(n, 2);
    bool gx = wants_grad(px), gg = wants_grad(pg), gb = wants_grad(pb);
    for (std::size_t r = 0; r < rows; ++r) {
      double sum_gy = 0.0, sum_gyx = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        double gy = pg.values[c] * n.grad[r * cols + c];
        sum_gy += gy;
        sum_gyx += gy * xhat[r * cols + c];
      }
      for (std::size_t c = 0; c < cols; ++c) {
        std::size_t i = r * cols + c;
        if (gx) {
          double gy = pg.values[c] * n.grad[i];
          px.grad[i] += inv_std[r] *
                        (gy - sum_gy / double(cols) - xhat[i] * sum_gyx / double(cols));
        }
        if (gg) pg.grad[c] += n.grad[i] * xhat[i];
        if (gb) pb.grad[c] += n.grad[i];
      }
    }
  });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = x.values()[i];
    out[i] = v * norm_cdf(v);
  }
  return make_op(x.shape(), std::move(out), {x}, [](detail::Node& n) {
    detail::Node& p = parent(n, 0);
    if (!wants_grad(p)) return;
    for (std::size_t i = 0; i < n.size(); ++i) {
      double v = p.values[i];
      p.grad[i] += n.grad[i] * (norm_cdf(v) + v * norm_pdf(v));
    }
  });
}

Tensor softmax_rows(const Tensor& m) {
  const detail::Node& mn = node_of(m);
  require_2d_max(mn, "softmax_rows");
  std::size_t rows = view_rows(mn), cols = view_cols(mn);
  std::vector<double> out(m.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = m.values()[r * cols];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, m.values()[r * cols + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      double e = std::exp(m.values()[r * cols + c] - mx);
      out[r * cols + c] = e;
      z += e;
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
  }
  return make_op(m.shape(), std::move(out), {m}, [rows, cols](detail::Node& n) {
    detail::Node& p = parent(n, 0);
    if (!wants_grad(p)) return;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c)
        dot += n.grad[r * cols + c] * n.values[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        std::size_t i = r * cols + c;
        p.grad[i] += n.values[i] * (n.grad[i] - dot);
      }
    }
  });
}

Tensor sqrt_elem(const Tensor& t) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(t.values()[i]);
  return make_op(t.shape(), std::move(out), {t}, [](detail::Node& n) {
    detail::Node& p = parent(n, 0);
    if (!wants_grad(p)) return;
    for (std::size_t i = 0; i < n.size(); ++i)
      p.grad[i] += n.grad[i] * 0.5 / n.values[i];
  });
}

Tensor clamp_min(const Tensor& t, double floor) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(t.values()[i], floor);
  return make_op(t.shape(), std::move(out), {t}, [floor](detail::Node& n) {
    detail::Node& p = parent(n, 0);
    if (!wants_grad(p)) return;
    for (std::size_t i = 0; i < n.size(); ++i)
      if (p.values[i] > floor) p.grad[i] += n.grad[i];
  });
}

Tensor smooth_l1(const Tensor& t, double delta) {
  if (delta <= 0.0) throw std::invalid_argument("smooth_l1: delta must be positive");
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double a = std::abs(t.values()[i]);
    out[i] = a < delta ? 0.5 * a * a / delta : a - 0.5 * delta;
  }
  return make_op(t.shape(), std::move(out), {t}, [delta](detail::Node& n) {
    detail::Node& p = parent(n, 0);
    if (!wants_grad(p)) return;
    for (std::size_t i = 0; i < n.size(); ++i) {
      double v = p.values[i];
      double d = std::abs(v) < delta ? v / delta : (v > 0 ? 1.0 : -1.0);
      p.grad[i] += n.grad[i] * d;
    }
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const detail::Node& ln = node_of(logits);
  require_2d_max(ln, "softmax_cross_entropy");
  std::size_t rows = view_rows(ln), cols = view_cols(ln);
  if (labels.size() != rows)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(rows) + " rows");
  std::vector<double> probs(logits.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    int y = labels[r];
    if (y < 0 || std::size_t(y) >= cols)
      throw std::out_of_range("softmax_cross_entropy: label out of range");
    double mx = logits.values()[r * cols];
    for (std::size_t c = 1; c < cols; ++c)
      mx = std::max(mx, logits.values()[r * cols + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      double e = std::exp(logits.values()[r * cols + c] - mx);
      probs[r * cols + c] = e;
      z += e;
    }
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] /= z;
    loss -= std::log(std::max(probs[r * cols + y], 1e-300));
  }
  loss /= double(rows);
  return make_op({1}, {loss}, {logits},
                 [rows, cols, labels, probs = std::move(probs)](detail::Node& n) {
    detail::Node& p = parent(n, 0);
    if (!wants_grad(p)) return;
    double g = n.grad[0] / double(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        double d = probs[r * cols + c] - (std::size_t(labels[r]) == c ? 1.0 : 0.0);
        p.grad[r * cols + c] += g * d;
      }
  });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  require_same_shape(logits, targets, "bce_with_logits");
  std::size_t n_elem = logits.size();
  std::vector<double> sig(n_elem);
  double loss = 0.0;
  for (std::size_t i = 0; i < n_elem; ++i) {
    double x = logits.values()[i], y = targets.values()[i];
    double s = 1.0 / (1.0 + std::exp(-x));
    sig[i] = s;
    // numerically stable log-sum form
    loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  loss /= double(n_elem);
  return make_op({1}, {loss}, {logits, targets},
                 [n_elem, sig = std::move(sig)](detail::Node& n) {
    detail::Node& p = parent(n, 0);
    if (!wants_grad(p)) return;
    detail::Node& t = parent(n, 1);
    double g = n.grad[0] / double(n_elem);
    for (std::size_t i = 0; i < n_elem; ++i)
      p.grad[i] += g * (sig[i] - t.values[i]);
  });
}

GradCheckReport finite_diff_check(
    const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
    const std::vector<Array>& params, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be positive");

  auto eval = [&](const std::vector<Array>& p, bool tracked,
                  std::vector<std::vector<double>>* grads_out) {
    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(p.size());
    for (const auto& a : p)
      leaves.push_back(tracked ? tape.leaf(a) : Tensor::constant(a));
    // Constants still need a tape entry point if f records nothing; tracked
    // mode is the only one that runs backward.
    Tensor loss = f(tape, leaves);
    double v = loss.item();
    if (grads_out) {
      // a loss that never touched the leaves (constant f) has zero gradients
      if (loss.tracked()) tape.backward(loss);
      grads_out->clear();
      for (const auto& l : leaves) {
        std::vector<double> g = l.grad();
        if (g.empty()) g.assign(l.size(), 0.0);
        grads_out->push_back(std::move(g));
      }
    }
    return v;
  };

  std::vector<std::vector<double>> ad_grads;
  double base1 = eval(params, true, &ad_grads);
  double base2 = eval(params, true, nullptr);
  if (base1 != base2)
    throw std::runtime_error(
        "finite_diff_check: f is not deterministic (two base evaluations differ)");

  GradCheckReport rep;
  rep.per_param_err.assign(params.size(), 0.0);
  std::vector<Array> work = params;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t ci = 0; ci < params[pi].values.size(); ++ci) {
      double orig = work[pi].values[ci];
      work[pi].values[ci] = orig + h;
      double fp = eval(work, false, nullptr);
      work[pi].values[ci] = orig - h;
      double fm = eval(work, false, nullptr);
      work[pi].values[ci] = orig;
      double g_fd = (fp - fm) / (2.0 * h);
      double g_ad = ad_grads[pi][ci];
      double rel = std::abs(g_ad - g_fd) /
                   std::max({1.0, std::abs(g_ad), std::abs(g_fd)});
      rep.per_param_err[pi] = std::max(rep.per_param_err[pi], rel);
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = pi;
        rep.worst_coord = ci;
      }
    }
  }
  return rep;
}

}  // namespace zen
