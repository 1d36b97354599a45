#include "eqsolve/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

namespace eqsolve {

namespace {

std::atomic<std::size_t> g_live_nodes{0};
std::atomic<std::size_t> g_peak_nodes{0};

void bump_live(std::size_t n) {
  std::size_t live = g_live_nodes.fetch_add(n) + n;
  std::size_t peak = g_peak_nodes.load();
  while (live > peak && !g_peak_nodes.compare_exchange_weak(peak, live)) {
  }
}

void check_finite(const Tensor& t, const char* op_name) {
  if (!t.all_finite()) {
    throw NonFiniteError(std::string(op_name) + ": non-finite input tensor");
  }
}

void round_f32(std::vector<double>& data) {
  for (double& x : data) x = static_cast<double>(static_cast<float>(x));
}

Dtype promote(Dtype a, Dtype b) {
  return (a == Dtype::f64 || b == Dtype::f64) ? Dtype::f64 : Dtype::f32;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Shape shape, std::vector<double> data, Dtype dtype)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(std::move(data))),
      dtype_(dtype) {
  for (std::size_t e : shape_) {
    if (e == 0) throw std::invalid_argument("Tensor: zero extent in shape");
  }
  if (numel(shape_) != data_->size()) {
    throw std::invalid_argument("Tensor: shape " + shape_str(shape_) +
                                " does not match data length " +
                                std::to_string(data_->size()));
  }
  if (dtype_ == Dtype::f32) round_f32(*data_);
}

Tensor Tensor::zeros(Shape shape, Dtype dtype) {
  std::vector<double> data(numel(shape), 0.0);
  return Tensor(std::move(shape), std::move(data), dtype);
}

Tensor Tensor::full(Shape shape, double value, Dtype dtype) {
  std::vector<double> data(numel(shape), value);
  return Tensor(std::move(shape), std::move(data), dtype);
}

Tensor Tensor::scalar(double value, Dtype dtype) {
  return Tensor(Shape{}, std::vector<double>{value}, dtype);
}

Tensor Tensor::from_vec(const Eigen::VectorXd& v, Shape shape) {
  std::vector<double> data(v.data(), v.data() + v.size());
  if (shape.empty()) shape = Shape{static_cast<std::size_t>(v.size())};
  return Tensor(std::move(shape), std::move(data));
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw std::invalid_argument("Tensor: rank-2 expected");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw std::invalid_argument("Tensor: rank-2 expected");
  return shape_[1];
}

double* Tensor::mutable_data() {
  if (!data_) throw std::logic_error("Tensor: empty");
  if (data_.use_count() > 1) {
    data_ = std::make_shared<std::vector<double>>(*data_);
  }
  return data_->data();
}

double Tensor::value() const {
  if (size() != 1) {
    throw std::invalid_argument("Tensor: scalar expected, got " +
                                shape_str(shape_));
  }
  return (*data_)[0];
}

Eigen::Map<const Eigen::VectorXd> Tensor::vec() const {
  return {data_->data(), static_cast<Eigen::Index>(data_->size())};
}

Eigen::Map<const RowMat> Tensor::mat() const {
  return {data_->data(), static_cast<Eigen::Index>(rows()),
          static_cast<Eigen::Index>(cols())};
}

void Tensor::attach_leaf(Tape& tape) {
  if (recorded()) throw std::logic_error("Tensor: already recorded on a tape");
  if (!data_) throw std::logic_error("Tensor: cannot attach empty tensor");
  Tape::Node n;
  n.op = Op::leaf;
  n.value = detached();
  node_ = tape.add_node(std::move(n));
  tape_ = &tape;
}

void Tensor::detach() {
  tape_ = nullptr;
  node_ = -1;
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.detach();
  return t;
}

Tensor Tensor::with_shape(Shape shape) const {
  if (numel(shape) != size()) {
    throw std::invalid_argument("Tensor: reshape " + shape_str(shape_) +
                                " -> " + shape_str(shape) + " changes numel");
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

bool Tensor::all_finite() const {
  for (double x : *data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// ------------------------------------------------------------------ Tape

Tape::~Tape() { g_live_nodes.fetch_sub(nodes_.size()); }

int Tape::add_node(Node node) {
  nodes_.push_back(std::move(node));
  bump_live(1);
  return static_cast<int>(nodes_.size()) - 1;
}

std::size_t Tape::live_nodes() { return g_live_nodes.load(); }
std::size_t Tape::peak_live_nodes() { return g_peak_nodes.load(); }
void Tape::reset_peak() { g_peak_nodes.store(g_live_nodes.load()); }

// -------------------------------------------------------------- op plumbing

Tensor detail_relink(Tensor t, Tape* tape, int node);

namespace {

Tape* common_tape(const Tensor& a, const Tensor* b) {
  Tape* t = a.recorded() ? a.tape() : nullptr;
  if (b && b->recorded()) {
    if (t && t != b->tape()) {
      throw std::invalid_argument("op: operands recorded on different tapes");
    }
    t = b->tape();
  }
  return t;
}

// Finalizes an op result: rounds for f32 and records a node when requested.
Tensor make_result(Op op, Shape shape, std::vector<double> data, Dtype dtype,
                   const Tensor& a, const Tensor* b, double alpha = 0.0) {
  Tensor out(std::move(shape), std::move(data), dtype);
  Tape* tape = common_tape(a, b);
  if (!tape) return out;
  Tape::Node n;
  n.op = op;
  n.alpha = alpha;
  n.parent[0] = a.recorded() ? a.node() : -1;
  n.operand[0] = a.detached();
  if (b) {
    n.parent[1] = b->recorded() ? b->node() : -1;
    n.operand[1] = b->detached();
  }
  n.value = out;
  int id = tape->add_node(std::move(n));
  return detail_relink(std::move(out), tape, id);
}

void require_broadcastable(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape() || a.is_scalar() || b.is_scalar()) return;
  throw std::invalid_argument(std::string(op) + ": shapes " +
                              shape_str(a.shape()) + " and " +
                              shape_str(b.shape()) +
                              " (only scalar<->tensor or equal shapes)");
}

// Elementwise binary kernel with scalar<->tensor broadcasting.
template <class F>
Tensor binary_op(Op op, const Tensor& a, const Tensor& b, const char* name,
                 F&& f) {
  check_finite(a, name);
  check_finite(b, name);
  require_broadcastable(a, b, name);
  const bool a_scalar = a.is_scalar() && !b.is_scalar();
  const bool b_scalar = b.is_scalar() && !a.is_scalar();
  // two single-element operands of different shapes keep the higher rank
  const Shape& shape = a_scalar                             ? b.shape()
                       : b_scalar                           ? a.shape()
                       : a.shape().size() >= b.shape().size() ? a.shape()
                                                             : b.shape();
  const std::size_t n = numel(shape);
  std::vector<double> out(n);
  const auto& da = a.data();
  const auto& db = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(da[a_scalar ? 0 : i], db[b_scalar ? 0 : i]);
  }
  return make_result(op, shape, std::move(out), promote(a.dtype(), b.dtype()),
                     a, &b);
}

template <class F>
Tensor unary_op(Op op, const Tensor& a, const char* name, F&& f,
                double alpha = 0.0) {
  check_finite(a, name);
  std::vector<double> out(a.size());
  const auto& da = a.data();
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(da[i]);
  return make_result(op, a.shape(), std::move(out), a.dtype(), a, nullptr,
                     alpha);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(Op::add, a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(Op::sub, a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(Op::mul, a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(Op::div, a, b, "div", [](double x, double y) { return x / y; });
}

Tensor relu(const Tensor& a) {
  return unary_op(Op::relu, a, "relu", [](double x) { return x > 0.0 ? x : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(Op::tanh, a, "tanh", [](double x) { return std::tanh(x); });
}

Tensor sin(const Tensor& a) {
  return unary_op(Op::sin, a, "sin", [](double x) { return std::sin(x); });
}

Tensor cos(const Tensor& a) {
  return unary_op(Op::cos, a, "cos", [](double x) { return std::cos(x); });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(Op::sqrt, a, "sqrt", [](double x) { return std::sqrt(x); });
}

Tensor scale(const Tensor& a, double alpha) {
  return unary_op(
      Op::scale, a, "scale", [alpha](double x) { return alpha * x; }, alpha);
}

Tensor clip_max(const Tensor& a, double threshold) {
  return unary_op(
      Op::clip_max, a, "clip_max",
      [threshold](double x) { return x < threshold ? x : threshold; },
      threshold);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_finite(a, "matmul");
  check_finite(b, "matmul");
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), n = b.cols();
  std::vector<double> out(m * n);
  Eigen::Map<RowMat>(out.data(), m, n).noalias() = a.mat() * b.mat();
  Shape shape{m, n};
  Tensor out_t = make_result(Op::matmul, std::move(shape), std::move(out),
                             promote(a.dtype(), b.dtype()), a, &b);
  return out_t;
}

Tensor transpose(const Tensor& a) {
  check_finite(a, "transpose");
  if (a.shape().size() != 2) {
    throw std::invalid_argument("transpose: rank-2 expected");
  }
  std::vector<double> out(a.size());
  Eigen::Map<RowMat>(out.data(), a.cols(), a.rows()) = a.mat().transpose();
  return make_result(Op::transpose, Shape{a.cols(), a.rows()}, std::move(out),
                     a.dtype(), a, nullptr);
}

Tensor sum(const Tensor& a) {
  check_finite(a, "sum");
  double s = a.vec().sum();
  return make_result(Op::sum, Shape{}, std::vector<double>{s}, a.dtype(), a,
                     nullptr);
}

Tensor row_sum(const Tensor& a) {
  check_finite(a, "row_sum");
  if (a.shape().size() != 2) {
    throw std::invalid_argument("row_sum: rank-2 expected");
  }
  std::vector<double> out(a.rows());
  Eigen::Map<Eigen::VectorXd>(out.data(), a.rows()) = a.mat().rowwise().sum();
  return make_result(Op::row_sum, Shape{a.rows(), 1}, std::move(out), a.dtype(),
                     a, nullptr);
}

Tensor row_scale(const Tensor& a, const Tensor& s) {
  check_finite(a, "row_scale");
  check_finite(s, "row_scale");
  if (a.shape().size() != 2 || s.size() != a.rows()) {
    throw std::invalid_argument("row_scale: need [r,c] and r-length scales");
  }
  std::vector<double> out(a.size());
  const auto& da = a.data();
  const auto& ds = s.data();
  const std::size_t c = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = da[i * c + j] * ds[i];
  }
  return make_result(Op::row_scale, a.shape(), std::move(out),
                     promote(a.dtype(), s.dtype()), a, &s);
}

Tensor elementwise(EwOp op, const Tensor& a, const Tensor* b) {
  auto need_b = [&](const char* name) -> const Tensor& {
    if (!b) throw std::invalid_argument(std::string(name) + ": second operand required");
    return *b;
  };
  switch (op) {
    case EwOp::add: return add(a, need_b("add"));
    case EwOp::sub: return sub(a, need_b("sub"));
    case EwOp::mul: return mul(a, need_b("mul"));
    case EwOp::relu: return relu(a);
    case EwOp::tanh: return tanh(a);
    case EwOp::sin: return sin(a);
    case EwOp::scale: return scale(a, need_b("scale").value());
  }
  throw std::logic_error("elementwise: unknown op");
}

// ------------------------------------------------------------- backward

Tensor detail_relink(Tensor t, Tape* tape, int node) {
  t.tape_ = tape;
  t.node_ = node;
  return t;
}

namespace {

// Operand as seen by the backward sweep: re-linked to its producing node
// when create_graph needs second-order flow, a plain constant otherwise.
Tensor sweep_operand(Tape& tape, const Tape::Node& n, int slot,
                     bool create_graph) {
  Tensor t = n.operand[slot].detached();
  if (create_graph && n.parent[slot] >= 0) {
    t = detail_relink(std::move(t), &tape, n.parent[slot]);
  }
  return t;
}

Tensor node_value(Tape& tape, int id, bool create_graph) {
  Tensor t = tape.node(id).value.detached();
  if (create_graph) t = detail_relink(std::move(t), &tape, id);
  return t;
}

// Reduces a gradient contribution to the parent's shape (broadcast adjoint).
Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  if (numel(target) == 1) return sum(g).with_shape(target);
  if (g.is_scalar()) {
    // scalar grad flowing into a tensor slot: broadcast via mul with ones
    return mul(Tensor::full(target, 1.0), g);
  }
  throw std::logic_error("backward: unexpected gradient shape");
}

Tensor positive_mask(const Tensor& a) {
  std::vector<double> m(a.size());
  const auto& d = a.data();
  for (std::size_t i = 0; i < a.size(); ++i) m[i] = d[i] > 0.0 ? 1.0 : 0.0;
  return Tensor(a.shape(), std::move(m));
}

Tensor below_mask(const Tensor& a, double t) {
  std::vector<double> m(a.size());
  const auto& d = a.data();
  for (std::size_t i = 0; i < a.size(); ++i) m[i] = d[i] < t ? 1.0 : 0.0;
  return Tensor(a.shape(), std::move(m));
}

}  // namespace

std::vector<Tensor> backward_from(std::span<const Tensor> outs,
                                  std::span<const Tensor> seeds,
                                  std::span<const Tensor> wrt,
                                  bool create_graph) {
  if (outs.empty() || outs.size() != seeds.size()) {
    throw std::invalid_argument("backward_from: outs/seeds mismatch");
  }
  Tape* tape = nullptr;
  for (const Tensor& o : outs) {
    if (!o.recorded()) {
      throw std::invalid_argument("backward_from: output not recorded");
    }
    if (tape && o.tape() != tape) {
      throw std::invalid_argument("backward_from: outputs on different tapes");
    }
    tape = o.tape();
  }
  const int n_nodes = tape->size();
  std::vector<Tensor> grads(n_nodes);  // default-constructed == no gradient

  auto accumulate = [&](int id, const Tensor& contrib) {
    if (id < 0) return;
    const Shape& target = tape->node(id).value.shape();
    Tensor c = reduce_to(contrib, target);
    grads[id] = grads[id].size() == 0 ? c : add(grads[id], c);
  };

  for (std::size_t j = 0; j < outs.size(); ++j) {
    if (seeds[j].shape() != outs[j].shape()) {
      throw std::invalid_argument("backward_from: seed shape mismatch");
    }
    accumulate(outs[j].node(), seeds[j]);
  }

  for (int i = n_nodes - 1; i >= 0; --i) {
    if (grads[i].size() == 0) continue;
    // copy: create_graph appends nodes and may reallocate the tape storage
    const Tape::Node n = tape->node(i);
    const Tensor g = grads[i];
    auto opnd = [&](int slot) { return sweep_operand(*tape, n, slot, create_graph); };
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::add:
        accumulate(n.parent[0], g);
        accumulate(n.parent[1], g);
        break;
      case Op::sub:
        accumulate(n.parent[0], g);
        accumulate(n.parent[1], scale(g, -1.0));
        break;
      case Op::mul:
        accumulate(n.parent[0], mul(g, opnd(1)));
        accumulate(n.parent[1], mul(g, opnd(0)));
        break;
      case Op::div: {
        Tensor b = opnd(1);
        accumulate(n.parent[0], div(g, b));
        if (n.parent[1] >= 0) {
          accumulate(n.parent[1],
                     scale(mul(g, div(opnd(0), mul(b, b))), -1.0));
        }
        break;
      }
      case Op::relu:
        accumulate(n.parent[0], mul(g, positive_mask(n.operand[0])));
        break;
      case Op::tanh: {
        Tensor y = node_value(*tape, i, create_graph);
        accumulate(n.parent[0],
                   mul(g, sub(Tensor::full(y.shape(), 1.0), mul(y, y))));
        break;
      }
      case Op::sin:
        accumulate(n.parent[0], mul(g, cos(opnd(0))));
        break;
      case Op::cos:
        accumulate(n.parent[0], scale(mul(g, sin(opnd(0))), -1.0));
        break;
      case Op::sqrt: {
        Tensor y = node_value(*tape, i, create_graph);
        accumulate(n.parent[0], scale(div(g, y), 0.5));
        break;
      }
      case Op::scale:
        accumulate(n.parent[0], scale(g, n.alpha));
        break;
      case Op::clip_max:
        accumulate(n.parent[0], mul(g, below_mask(n.operand[0], n.alpha)));
        break;
      case Op::matmul:
        if (n.parent[0] >= 0) accumulate(n.parent[0], matmul(g, transpose(opnd(1))));
        if (n.parent[1] >= 0) accumulate(n.parent[1], matmul(transpose(opnd(0)), g));
        break;
      case Op::transpose:
        accumulate(n.parent[0], transpose(g));
        break;
      case Op::sum: {
        const Shape& in = n.operand[0].shape();
        accumulate(n.parent[0], mul(Tensor::full(in, 1.0), g));
        break;
      }
      case Op::row_sum: {
        const Shape& in = n.operand[0].shape();
        accumulate(n.parent[0],
                   row_scale(Tensor::full(in, 1.0), g));
        break;
      }
      case Op::row_scale:
        accumulate(n.parent[0], row_scale(g, opnd(1)));
        if (n.parent[1] >= 0) {
          Tensor ds = row_sum(mul(g, opnd(0)));
          accumulate(n.parent[1], ds);
        }
        break;
    }
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    Tensor gw;
    if (w.recorded() && w.tape() == tape && w.node() < n_nodes &&
        grads[w.node()].size() != 0) {
      gw = grads[w.node()];
      if (gw.shape() != w.shape()) gw = gw.with_shape(w.shape());
    } else {
      gw = Tensor::zeros(w.shape());
    }
    result.push_back(create_graph ? gw : gw.detached());
  }
  return result;
}

Tensor vjp(const std::function<Tensor(const Tensor&)>& f, const Tensor& z,
           const Tensor& v) {
  Tape tape;
  Tensor z_leaf = z.detached();
  z_leaf.attach_leaf(tape);
  Tensor out = f(z_leaf);
  if (v.shape() != out.shape()) {
    throw std::invalid_argument("vjp: v shape " + shape_str(v.shape()) +
                                " does not match f(z) shape " +
                                shape_str(out.shape()));
  }
  if (!out.recorded()) return Tensor::zeros(z.shape());
  const Tensor outs[] = {out};
  const Tensor seeds[] = {v.detached()};
  const Tensor wrt[] = {z_leaf};
  return backward_from(outs, seeds, wrt)[0];
}

std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> params) {
  if (loss.size() != 1) {
    throw std::invalid_argument("grad: loss must be scalar, got " +
                                shape_str(loss.shape()));
  }
  if (!loss.recorded()) {
    std::vector<Tensor> zeros;
    zeros.reserve(params.size());
    for (const Tensor& p : params) zeros.push_back(Tensor::zeros(p.shape()));
    return zeros;
  }
  const Tensor outs[] = {loss};
  const Tensor seeds[] = {Tensor::full(loss.shape(), 1.0)};
  return backward_from(outs, seeds, params);
}

}  // namespace eqsolve
