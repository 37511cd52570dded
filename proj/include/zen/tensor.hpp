#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace zen {

// Plain value container for parameters, checkpoints and fixtures.
// Tensors are bound to a Tape per forward pass; Arrays live between passes.
struct Array {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Array() = default;
  Array(std::vector<std::size_t> s, std::vector<double> v);
  static Array zeros(std::vector<std::size_t> s);
  std::size_t size() const { return values.size(); }
};

class Tape;

namespace detail {

struct Node {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized lazily during backward
  bool tracked = false;
  Tape* tape = nullptr;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  std::size_t size() const { return values.size(); }
  void ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  const std::vector<double>& values() const;
  bool tracked() const;

  // Gradient accumulated by the last Tape::backward covering this tensor.
  // Empty for untracked tensors.
  const std::vector<double>& grad() const;

  double item() const;  // requires size() == 1

  // Untracked constant, attached to no tape.
  static Tensor constant(std::vector<std::size_t> shape, std::vector<double> values);
  static Tensor constant(const Array& a) { return constant(a.shape, a.values); }
  static Tensor scalar(double v) { return constant({1}, {v}); }

  Array to_array() const { return Array(shape(), values()); }

 private:
  std::shared_ptr<detail::Node> node_;
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  friend class Tape;
  friend Tensor make_op(std::vector<std::size_t>, std::vector<double>,
                        std::vector<Tensor>, std::function<void(detail::Node&)>);
  friend detail::Node& node_of(const Tensor&);
};

// Define-by-run gradient tape. Records every op whose result depends on a
// tracked leaf; backward() replays the record in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Tracked leaf; gradients accumulate into it during backward.
  Tensor leaf(std::vector<std::size_t> shape, std::vector<double> values);
  Tensor leaf(const Array& a) { return leaf(a.shape, a.values); }

  // Runs reverse-mode accumulation from a scalar loss recorded on this tape.
  void backward(const Tensor& loss);

  std::size_t num_recorded() const { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  void record(std::shared_ptr<detail::Node> n);
  friend Tensor make_op(std::vector<std::size_t>, std::vector<double>,
                        std::vector<Tensor>, std::function<void(detail::Node&)>);
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

std::string shape_str(const std::vector<std::size_t>& s);

// ---- primitive ops ------------------------------------------------------
// 1-D tensors are treated as a single row where a 2-D view is needed.

Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor sub(const Tensor& a, const Tensor& b);        // same shape
Tensor mul(const Tensor& a, const Tensor& b);        // elementwise
Tensor divide(const Tensor& a, const Tensor& b);     // elementwise
Tensor affine(const Tensor& t, double scale, double shift);  // scale*t + shift
Tensor scale(const Tensor& t, double c);
Tensor add_rowvec(const Tensor& m, const Tensor& v);  // broadcast v over rows

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);

Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& m, std::size_t start, std::size_t len);
Tensor slice_cols(const Tensor& m, std::size_t start, std::size_t len);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& t, std::vector<std::size_t> shape);

Tensor reduce_mean(const Tensor& t, std::size_t axis);
Tensor reduce_sum(const Tensor& t, std::size_t axis);
Tensor mean_all(const Tensor& t);  // scalar
Tensor sum_all(const Tensor& t);   // scalar

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor gelu(const Tensor& x);  // exact erf form
Tensor softmax_rows(const Tensor& m);
Tensor sqrt_elem(const Tensor& t);
Tensor clamp_min(const Tensor& t, double floor);
Tensor smooth_l1(const Tensor& t, double delta);  // elementwise Huber form

// Fused classification losses (mean over rows).
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

// ---- gradient verification ---------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_coord = 0;
  // worst relative error per parameter tensor
  std::vector<double> per_param_err;
};

// f builds a scalar loss from leaves bound to the given tape; the leaves are
// created from `params` in order. Central differences at step h are compared
// against one reverse-mode pass. Throws std::runtime_error if two forward
// evaluations at the base point differ (non-deterministic f).
GradCheckReport finite_diff_check(
    const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
    const std::vector<Array>& params, double h);

}  // namespace zen
