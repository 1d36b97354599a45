#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace eqsolve {

using Shape = std::vector<std::size_t>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class Dtype : std::uint8_t { f64, f32 };

// Raised when an op consumes a tensor holding NaN/Inf, or a solver sees a
// non-finite state. `last_finite` optionally carries the last good iterate.
class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
  NonFiniteError(const std::string& what, Eigen::VectorXd last)
      : std::runtime_error(what), last_finite(std::move(last)) {}
  Eigen::VectorXd last_finite;
};

class Tape;

// Dense row-major real tensor, optionally linked to a tape node.
// Data is shared between copies; mutation goes through mutable_data(),
// which clones when the buffer is shared (tape snapshots stay intact).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, Dtype dtype = Dtype::f64);

  static Tensor zeros(Shape shape, Dtype dtype = Dtype::f64);
  static Tensor full(Shape shape, double value, Dtype dtype = Dtype::f64);
  static Tensor scalar(double value, Dtype dtype = Dtype::f64);
  static Tensor from_vec(const Eigen::VectorXd& v, Shape shape = {});

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  std::size_t rows() const;
  std::size_t cols() const;
  bool is_scalar() const { return size() == 1; }
  Dtype dtype() const { return dtype_; }

  const std::vector<double>& data() const { return *data_; }
  double* mutable_data();
  double value() const;  // scalar tensors only
  double operator[](std::size_t i) const { return (*data_)[i]; }

  Eigen::Map<const Eigen::VectorXd> vec() const;
  Eigen::Map<const RowMat> mat() const;  // rank-2 view
  Eigen::VectorXd to_eigen() const { return vec(); }

  bool recorded() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  // Registers this tensor as a leaf on `tape`. Throws if already recorded.
  void attach_leaf(Tape& tape);
  void detach();
  Tensor detached() const;
  Tensor with_shape(Shape shape) const;  // same data, reinterpreted shape

  bool all_finite() const;

 private:
  friend class Tape;
  friend Tensor detail_relink(Tensor t, Tape* tape, int node);
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Dtype dtype_ = Dtype::f64;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  relu,
  tanh,
  sin,
  cos,
  sqrt,
  scale,
  clip_max,
  matmul,
  transpose,
  sum,
  row_sum,
  row_scale,
};

// Append-only op record of one forward computation. Nodes are stored in
// topological order (parents precede children) by construction, so a
// backward sweep is a single reverse pass. Gradient accumulators live in
// the sweep, not the tape: replaying the same tape is deterministic.
class Tape {
 public:
  struct Node {
    Op op = Op::leaf;
    std::array<int, 2> parent{-1, -1};
    std::array<Tensor, 2> operand;  // detached input snapshots
    Tensor value;                   // detached output snapshot
    double alpha = 0.0;             // scale factor / clip threshold
  };

  Tape() = default;
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int add_node(Node node);
  const Node& node(int i) const { return nodes_[i]; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Live-node instrumentation across all tapes (memory-contract checks).
  static std::size_t live_nodes();
  static std::size_t peak_live_nodes();
  static void reset_peak();

 private:
  std::vector<Node> nodes_;
};

// --- primitive ops (record onto the inputs' tape when any input is recorded)
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor scale(const Tensor& a, double alpha);
Tensor clip_max(const Tensor& a, double threshold);  // elementwise min(a, t)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor sum(const Tensor& a);                       // full reduction to scalar
Tensor row_sum(const Tensor& a);                   // [r,c] -> [r,1]
Tensor row_scale(const Tensor& a, const Tensor& s);  // a[i,:] * s[i]

enum class EwOp { add, sub, mul, relu, tanh, sin, scale };
Tensor elementwise(EwOp op, const Tensor& a, const Tensor* b = nullptr);

// Reverse sweep from `outs` seeded with `seeds`; returns one gradient per
// `wrt` entry (zeros when a wrt tensor does not reach any out). With
// `create_graph` the sweep records its own ops on the same tape, so the
// returned gradients are differentiable (the J^T J products jac_reg needs).
std::vector<Tensor> backward_from(std::span<const Tensor> outs,
                                  std::span<const Tensor> seeds,
                                  std::span<const Tensor> wrt,
                                  bool create_graph = false);

// v^T J_f(z) for f recorded on a fresh tape. Constant f yields zeros.
Tensor vjp(const std::function<Tensor(const Tensor&)>& f, const Tensor& z,
           const Tensor& v);

// d(loss)/d(param) for a scalar loss; params missing from the graph get zeros.
std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> params);

}  // namespace eqsolve
