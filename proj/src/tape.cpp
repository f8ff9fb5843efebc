#include "gpldlab/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

#include "gpldlab/kernels.hpp"

namespace gpldlab::ad {

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape) {
  if (shape.numel() != static_cast<int>(values.size()))
    throw ShapeError("tensor: shape " + shape.str() + " does not match " +
                     std::to_string(values.size()) + " values");
  values_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::vector(std::vector<double> v) {
  Shape s = Shape::vec(static_cast<int>(v.size()));
  return Tensor(s, std::move(v));
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> v) {
  return Tensor(Shape::mat(rows, cols), std::move(v));
}

Tensor Tensor::zeros(Shape s) {
  return Tensor(s, std::vector<double>(static_cast<std::size_t>(s.numel()), 0.0));
}

Tensor Tensor::full(Shape s, double v) {
  return Tensor(s, std::vector<double>(static_cast<std::size_t>(s.numel()), v));
}

double Tensor::scalar_value() const {
  if (numel() != 1) throw ShapeError("scalar_value: tensor has shape " + shape_.str());
  return (*values_)[0];
}

const char* op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::kConst: return "const";
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMultiply: return "multiply";
    case OpKind::kConcatLast: return "concat-last-axis";
    case OpKind::kTanh: return "tanh";
    case OpKind::kExp: return "exponential";
    case OpKind::kLog: return "logarithm";
    case OpKind::kRowSoftmax: return "row_softmax";
    case OpKind::kSum: return "sum";
    case OpKind::kDot: return "dot";
    case OpKind::kSquare: return "elementwise-square";
    case OpKind::kScale: return "scalar-scale";
    case OpKind::kStopGradient: return "stop_gradient";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_fail(OpKind kind, const std::string& detail) {
  throw ShapeError(std::string(op_kind_name(kind)) + ": " + detail);
}

bool is_scalar(const Shape& s) { return s.numel() == 1; }

Shape validate(OpKind kind, MatmulVariant mm, std::span<const Tensor> in,
               double /*alpha*/) {
  auto need = [&](std::size_t n) {
    if (in.size() != n)
      shape_fail(kind, "expected " + std::to_string(n) + " inputs, got " +
                           std::to_string(in.size()));
  };
  switch (kind) {
    case OpKind::kMatmul: {
      need(2);
      const Shape& a = in[0].shape();
      const Shape& b = in[1].shape();
      if (a.rank != 2 || b.rank != 2)
        shape_fail(kind, "requires rank-2 operands, got " + a.str() + " and " + b.str());
      int m = 0, k = 0, n = 0;
      switch (mm) {
        case MatmulVariant::kNN:
          if (a.d1 != b.d0) shape_fail(kind, "inner dims differ: " + a.str() + " * " + b.str());
          m = a.d0; k = a.d1; n = b.d1;
          break;
        case MatmulVariant::kNT:
          if (a.d1 != b.d1) shape_fail(kind, "inner dims differ: " + a.str() + " * " + b.str() + "^T");
          m = a.d0; k = a.d1; n = b.d0;
          break;
        case MatmulVariant::kTN:
          if (a.d0 != b.d0) shape_fail(kind, "inner dims differ: " + a.str() + "^T * " + b.str());
          m = a.d1; k = a.d0; n = b.d1;
          break;
      }
      (void)k;
      return Shape::mat(m, n);
    }
    case OpKind::kAdd: {
      need(2);
      if (in[0].shape() != in[1].shape())
        shape_fail(kind, "shapes differ: " + in[0].shape().str() + " vs " + in[1].shape().str());
      return in[0].shape();
    }
    case OpKind::kMultiply: {
      need(2);
      if (in[0].shape() == in[1].shape()) return in[0].shape();
      if (is_scalar(in[0].shape())) return in[1].shape();
      if (is_scalar(in[1].shape())) return in[0].shape();
      shape_fail(kind, "shapes differ (only scalar broadcast is allowed): " +
                           in[0].shape().str() + " vs " + in[1].shape().str());
    }
    case OpKind::kConcatLast: {
      if (in.empty()) shape_fail(kind, "needs at least one input");
      int rows = in[0].shape().rows();
      int cols = 0;
      for (const Tensor& t : in) {
        if (t.shape().rank != 2)
          shape_fail(kind, "requires rank-2 operands, got " + t.shape().str());
        if (t.shape().d0 != rows)
          shape_fail(kind, "row counts differ: " + in[0].shape().str() + " vs " + t.shape().str());
        cols += t.shape().d1;
      }
      return Shape::mat(rows, cols);
    }
    case OpKind::kTanh:
    case OpKind::kExp:
    case OpKind::kLog:
    case OpKind::kSquare:
    case OpKind::kScale:
    case OpKind::kStopGradient:
      need(1);
      return in[0].shape();
    case OpKind::kRowSoftmax:
      need(1);
      if (in[0].shape().rank != 2)
        shape_fail(kind, "requires a rank-2 input, got " + in[0].shape().str());
      return in[0].shape();
    case OpKind::kSum:
      need(1);
      return Shape::vec(1);
    case OpKind::kDot:
      need(2);
      if (in[0].shape() != in[1].shape())
        shape_fail(kind, "shapes differ: " + in[0].shape().str() + " vs " + in[1].shape().str());
      return Shape::vec(1);
    case OpKind::kConst:
    case OpKind::kLeaf:
      shape_fail(kind, "not a forward operation");
  }
  shape_fail(kind, "unhandled kind");
}

std::vector<double> compute(OpKind kind, MatmulVariant mm, double alpha,
                            std::span<const Tensor> in, const Shape& out) {
  std::vector<double> y(static_cast<std::size_t>(out.numel()));
  switch (kind) {
    case OpKind::kMatmul: {
      const double* a = in[0].values().data();
      const double* b = in[1].values().data();
      const Shape& sa = in[0].shape();
      switch (mm) {
        case MatmulVariant::kNN:
          kern::matmul_nn(a, b, y.data(), out.d0, sa.d1, out.d1);
          break;
        case MatmulVariant::kNT:
          kern::matmul_nt(a, b, y.data(), out.d0, sa.d1, out.d1);
          break;
        case MatmulVariant::kTN:
          kern::matmul_tn(a, b, y.data(), out.d0, sa.d0, out.d1);
          break;
      }
      break;
    }
    case OpKind::kAdd:
      kern::add(in[0].values().data(), in[1].values().data(), y.data(), out.numel());
      break;
    case OpKind::kMultiply: {
      if (in[0].shape() == in[1].shape()) {
        kern::mul(in[0].values().data(), in[1].values().data(), y.data(), out.numel());
      } else if (is_scalar(in[0].shape())) {
        kern::scale(in[0].values()[0], in[1].values().data(), y.data(), out.numel());
      } else {
        kern::scale(in[1].values()[0], in[0].values().data(), y.data(), out.numel());
      }
      break;
    }
    case OpKind::kConcatLast: {
      const int rows = out.d0;
      int off = 0;
      for (const Tensor& t : in) {
        const int c = t.shape().d1;
        const double* src = t.values().data();
        for (int r = 0; r < rows; ++r)
          std::copy(src + static_cast<std::size_t>(r) * c,
                    src + static_cast<std::size_t>(r + 1) * c,
                    y.data() + static_cast<std::size_t>(r) * out.d1 + off);
        off += c;
      }
      break;
    }
    case OpKind::kTanh:
      kern::tanh(in[0].values().data(), y.data(), out.numel());
      break;
    case OpKind::kExp:
      kern::exp(in[0].values().data(), y.data(), out.numel());
      break;
    case OpKind::kLog: {
      const auto& x = in[0].values();
      for (std::size_t i = 0; i < x.size(); ++i)
        if (!(x[i] > 0.0))
          throw DomainError("logarithm: non-positive input " + std::to_string(x[i]) +
                            " at index " + std::to_string(i));
      kern::log(x.data(), y.data(), out.numel());
      break;
    }
    case OpKind::kRowSoftmax:
      kern::row_softmax(in[0].values().data(), y.data(), out.d0, out.d1);
      break;
    case OpKind::kSum:
      y[0] = kern::sum(in[0].values().data(), in[0].numel());
      break;
    case OpKind::kDot:
      y[0] = kern::dot(in[0].values().data(), in[1].values().data(), in[0].numel());
      break;
    case OpKind::kSquare:
      kern::square(in[0].values().data(), y.data(), out.numel());
      break;
    case OpKind::kScale:
      kern::scale(alpha, in[0].values().data(), y.data(), out.numel());
      break;
    case OpKind::kStopGradient:
      std::copy(in[0].values().begin(), in[0].values().end(), y.begin());
      break;
    case OpKind::kConst:
    case OpKind::kLeaf:
      break;
  }
  for (double v : y)
    if (!std::isfinite(v))
      throw NumericError(std::string(op_kind_name(kind)) + " produced a non-finite value");
  return y;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::leaf(const Tensor& value) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.shape = value.shape();
  n.values = value.values_;
  int id = append(std::move(n), {});
  return tensor_for(id);
}

Tensor Tape::leaf(Shape shape, std::vector<double> values) {
  return leaf(Tensor(shape, std::move(values)));
}

void Tape::truncate(std::size_t n) {
  if (n >= nodes_.size()) return;
  std::size_t pool = nodes_[n].parent_begin;
  // parent_begin of the first dropped node marks the pool extent.
  parent_pool_.resize(pool);
  nodes_.resize(n);
}

int Tape::append(Node node, std::span<const int> parents) {
  node.parent_begin = static_cast<std::uint32_t>(parent_pool_.size());
  node.parent_count = static_cast<std::uint16_t>(parents.size());
  parent_pool_.insert(parent_pool_.end(), parents.begin(), parents.end());
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::intern_input(const Tensor& t) {
  if (t.on_tape()) {
    if (t.tape_ != this) throw DomainError("operands belong to different tapes");
    return t.node_;
  }
  Node n;
  n.kind = OpKind::kConst;
  n.shape = t.shape_;
  n.values = t.values_;
  return append(std::move(n), {});
}

std::span<const int> Tape::parents_of(const Node& n) const {
  return {parent_pool_.data() + n.parent_begin, n.parent_count};
}

OpKind Tape::node_kind(int id) const { return nodes_[static_cast<std::size_t>(id)].kind; }

Tensor Tape::tensor_for(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  Tensor t;
  t.shape_ = n.shape;
  t.values_ = n.values;
  t.tape_ = const_cast<Tape*>(this);
  t.node_ = id;
  return t;
}

bool Tape::BackwardResult::any_unreachable() const {
  for (char c : unreachable)
    if (c) return true;
  return false;
}

// ---------------------------------------------------------------------------
// op_forward

Tensor op_forward_impl(OpKind kind, MatmulVariant mm, std::span<const Tensor> inputs,
                       double alpha) {
  Shape out = validate(kind, mm, inputs, alpha);
  std::vector<double> values = compute(kind, mm, alpha, inputs, out);

  Tape* tape = nullptr;
  for (const Tensor& t : inputs)
    if (t.on_tape()) {
      if (tape && t.tape() != tape) throw DomainError("operands belong to different tapes");
      tape = t.tape();
    }
  Tensor result(out, std::move(values));
  if (!tape) return result;

  std::vector<int> parent_ids;
  parent_ids.reserve(inputs.size());
  for (const Tensor& t : inputs) parent_ids.push_back(tape->intern_input(t));

  Tape::Node n;
  n.kind = kind;
  n.mm = mm;
  n.shape = out;
  n.alpha = alpha;
  n.values = result.values_;
  int id = tape->append(std::move(n), parent_ids);
  result.tape_ = tape;
  result.node_ = id;
  return result;
}

Tensor op_forward(OpKind kind, std::span<const Tensor> inputs, double alpha) {
  return op_forward_impl(kind, MatmulVariant::kNN, inputs, alpha);
}

Tensor matmul_variant(const Tensor& a, const Tensor& b, MatmulVariant v) {
  std::array<Tensor, 2> in{a, b};
  return op_forward_impl(OpKind::kMatmul, v, in, 0.0);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  return matmul_variant(a, b, MatmulVariant::kNN);
}
Tensor add(const Tensor& a, const Tensor& b) {
  std::array<Tensor, 2> in{a, b};
  return op_forward(OpKind::kAdd, in);
}
Tensor multiply(const Tensor& a, const Tensor& b) {
  std::array<Tensor, 2> in{a, b};
  return op_forward(OpKind::kMultiply, in);
}
Tensor concat_last(std::span<const Tensor> parts) {
  return op_forward(OpKind::kConcatLast, parts);
}
Tensor tanh(const Tensor& x) { return op_forward(OpKind::kTanh, {&x, 1}); }
Tensor exp(const Tensor& x) { return op_forward(OpKind::kExp, {&x, 1}); }
Tensor log(const Tensor& x) { return op_forward(OpKind::kLog, {&x, 1}); }
Tensor row_softmax(const Tensor& x) { return op_forward(OpKind::kRowSoftmax, {&x, 1}); }
Tensor sum(const Tensor& x) { return op_forward(OpKind::kSum, {&x, 1}); }
Tensor dot(const Tensor& a, const Tensor& b) {
  std::array<Tensor, 2> in{a, b};
  return op_forward(OpKind::kDot, in);
}
Tensor square(const Tensor& x) { return op_forward(OpKind::kSquare, {&x, 1}); }
Tensor scale(const Tensor& x, double alpha) {
  return op_forward(OpKind::kScale, {&x, 1}, alpha);
}
Tensor stop_gradient(const Tensor& x) { return op_forward(OpKind::kStopGradient, {&x, 1}); }
Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

// ---------------------------------------------------------------------------
// backward

Tape::BackwardResult Tape::backward(const Tensor& output, std::span<const Tensor> wrt,
                                    bool create_graph) {
  if (!output.on_tape() || output.tape() != this)
    throw DomainError("backward: output is not on this tape");
  if (output.numel() != 1)
    throw ShapeError("backward: output must be scalar, got " + output.shape().str());

  const int out = output.node_id();
  BackwardResult res;
  res.grads.resize(wrt.size());
  res.unreachable.assign(wrt.size(), 0);

  int lo = out;
  bool any_on_tape = false;
  for (const Tensor& w : wrt) {
    if (w.on_tape() && w.tape() == this && w.node_id() <= out) {
      lo = std::min(lo, w.node_id());
      any_on_tape = true;
    }
  }

  const int range = any_on_tape ? out - lo + 1 : 0;
  if (any_on_tape) {
    desc_.assign(static_cast<std::size_t>(range), 0);
    anc_.assign(static_cast<std::size_t>(range), 0);
    active_.assign(static_cast<std::size_t>(range), 0);
    for (const Tensor& w : wrt)
      if (w.on_tape() && w.tape() == this && w.node_id() <= out)
        desc_[static_cast<std::size_t>(w.node_id() - lo)] = 1;

    // Forward closure: nodes whose value depends (through gradient-carrying
    // edges) on some wrt node. stop_gradient cuts the edge.
    for (int i = lo; i <= out; ++i) {
      auto& d = desc_[static_cast<std::size_t>(i - lo)];
      if (d) continue;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.kind == OpKind::kStopGradient) continue;
      for (int p : parents_of(n))
        if (p >= lo && desc_[static_cast<std::size_t>(p - lo)]) {
          d = 1;
          break;
        }
    }
    // Ancestor walk from the output, again not crossing stop_gradient.
    anc_[static_cast<std::size_t>(out - lo)] = 1;
    for (int i = out; i >= lo; --i) {
      if (!anc_[static_cast<std::size_t>(i - lo)]) continue;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.kind == OpKind::kStopGradient) continue;
      for (int p : parents_of(n))
        if (p >= lo) anc_[static_cast<std::size_t>(p - lo)] = 1;
    }
    for (int i = 0; i < range; ++i) active_[static_cast<std::size_t>(i)] = desc_[static_cast<std::size_t>(i)] & anc_[static_cast<std::size_t>(i)];
  }

  std::vector<Tensor> adj_graph;
  if (any_on_tape && active_[static_cast<std::size_t>(out - lo)]) {
    if (create_graph) {
      adj_graph.assign(static_cast<std::size_t>(range), Tensor());
      backward_graph(out, lo, active_, adj_graph);
    } else {
      if (adj_buf_.size() < static_cast<std::size_t>(range))
        adj_buf_.resize(static_cast<std::size_t>(range));
      has_adj_.assign(static_cast<std::size_t>(range), 0);
      backward_buffers(out, lo, active_, adj_buf_, has_adj_);
    }
  }

  for (std::size_t j = 0; j < wrt.size(); ++j) {
    const Tensor& w = wrt[j];
    bool have = false;
    if (any_on_tape && w.on_tape() && w.tape() == this && w.node_id() <= out) {
      const int idx = w.node_id() - lo;
      if (create_graph) {
        if (idx >= 0 && adj_graph.size() == static_cast<std::size_t>(range) &&
            adj_graph[static_cast<std::size_t>(idx)].numel() > 0) {
          res.grads[j] = adj_graph[static_cast<std::size_t>(idx)];
          have = true;
        }
      } else {
        if (idx >= 0 && has_adj_.size() == static_cast<std::size_t>(range) &&
            has_adj_[static_cast<std::size_t>(idx)]) {
          res.grads[j] = Tensor(w.shape(), adj_buf_[static_cast<std::size_t>(idx)]);
          have = true;
        }
      }
    }
    if (!have) {
      res.grads[j] = Tensor::zeros(w.shape());
      res.unreachable[j] = 1;
    }
  }
  return res;
}

namespace {

// Local accumulation helpers for buffer-mode adjoints.
void acc_mul(double* dst, const double* g, const double* o, int n) {
  for (int i = 0; i < n; ++i) dst[i] += g[i] * o[i];
}
void acc_div(double* dst, const double* g, const double* x, int n) {
  for (int i = 0; i < n; ++i) dst[i] += g[i] / x[i];
}
void acc_tanh(double* dst, const double* g, const double* y, int n) {
  for (int i = 0; i < n; ++i) dst[i] += g[i] * (1.0 - y[i] * y[i]);
}
void acc_square(double* dst, const double* g, const double* x, int n) {
  for (int i = 0; i < n; ++i) dst[i] += 2.0 * g[i] * x[i];
}

}  // namespace

void Tape::backward_buffers(int out_id, int lo, const std::vector<char>& active,
                            std::vector<std::vector<double>>& adj,
                            std::vector<char>& has_adj) {
  auto buf = [&](int id, int numel) -> double* {
    auto& b = adj[static_cast<std::size_t>(id - lo)];
    if (!has_adj[static_cast<std::size_t>(id - lo)]) {
      b.assign(static_cast<std::size_t>(numel), 0.0);
      has_adj[static_cast<std::size_t>(id - lo)] = 1;
    }
    return b.data();
  };
  auto want = [&](int p) { return p >= lo && active[static_cast<std::size_t>(p - lo)]; };

  buf(out_id, 1)[0] = 1.0;

  std::vector<double> tmp;
  for (int i = out_id; i >= lo; --i) {
    if (!active[static_cast<std::size_t>(i - lo)] || !has_adj[static_cast<std::size_t>(i - lo)])
      continue;
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    const double* g = adj[static_cast<std::size_t>(i - lo)].data();
    auto ps = parents_of(n);
    switch (n.kind) {
      case OpKind::kMatmul: {
        const Node& na = nodes_[static_cast<std::size_t>(ps[0])];
        const Node& nb = nodes_[static_cast<std::size_t>(ps[1])];
        const double* a = na.values->data();
        const double* b = nb.values->data();
        const int m = n.shape.d0, nn = n.shape.d1;
        switch (n.mm) {
          case MatmulVariant::kNN: {
            const int k = na.shape.d1;
            if (want(ps[0])) {
              tmp.assign(static_cast<std::size_t>(m) * k, 0.0);
              kern::matmul_nt(g, b, tmp.data(), m, nn, k);
              kern::axpy(1.0, tmp.data(), buf(ps[0], m * k), m * k);
            }
            if (want(ps[1])) {
              tmp.assign(static_cast<std::size_t>(k) * nn, 0.0);
              kern::matmul_tn(a, g, tmp.data(), k, m, nn);
              kern::axpy(1.0, tmp.data(), buf(ps[1], k * nn), k * nn);
            }
            break;
          }
          case MatmulVariant::kNT: {
            const int k = na.shape.d1;
            if (want(ps[0])) {
              tmp.assign(static_cast<std::size_t>(m) * k, 0.0);
              kern::matmul_nn(g, b, tmp.data(), m, nn, k);
              kern::axpy(1.0, tmp.data(), buf(ps[0], m * k), m * k);
            }
            if (want(ps[1])) {
              tmp.assign(static_cast<std::size_t>(nn) * k, 0.0);
              kern::matmul_tn(g, a, tmp.data(), nn, m, k);
              kern::axpy(1.0, tmp.data(), buf(ps[1], nn * k), nn * k);
            }
            break;
          }
          case MatmulVariant::kTN: {
            const int k = na.shape.d0;
            if (want(ps[0])) {
              tmp.assign(static_cast<std::size_t>(k) * m, 0.0);
              kern::matmul_nt(b, g, tmp.data(), k, nn, m);
              kern::axpy(1.0, tmp.data(), buf(ps[0], k * m), k * m);
            }
            if (want(ps[1])) {
              tmp.assign(static_cast<std::size_t>(k) * nn, 0.0);
              kern::matmul_nn(a, g, tmp.data(), k, m, nn);
              kern::axpy(1.0, tmp.data(), buf(ps[1], k * nn), k * nn);
            }
            break;
          }
        }
        break;
      }
      case OpKind::kAdd:
        for (int s = 0; s < 2; ++s)
          if (want(ps[s])) kern::axpy(1.0, g, buf(ps[s], n.shape.numel()), n.shape.numel());
        break;
      case OpKind::kMultiply: {
        const Node& na = nodes_[static_cast<std::size_t>(ps[0])];
        const Node& nb = nodes_[static_cast<std::size_t>(ps[1])];
        const int ne = n.shape.numel();
        if (na.shape == nb.shape) {
          if (want(ps[0])) acc_mul(buf(ps[0], ne), g, nb.values->data(), ne);
          if (want(ps[1])) acc_mul(buf(ps[1], ne), g, na.values->data(), ne);
        } else if (na.shape.numel() == 1) {
          if (want(ps[0])) buf(ps[0], 1)[0] += kern::dot(g, nb.values->data(), ne);
          if (want(ps[1])) kern::axpy((*na.values)[0], g, buf(ps[1], ne), ne);
        } else {
          if (want(ps[1])) buf(ps[1], 1)[0] += kern::dot(g, na.values->data(), ne);
          if (want(ps[0])) kern::axpy((*nb.values)[0], g, buf(ps[0], ne), ne);
        }
        break;
      }
      case OpKind::kConcatLast: {
        const int rows = n.shape.d0, cols = n.shape.d1;
        int off = 0;
        for (int s = 0; s < static_cast<int>(ps.size()); ++s) {
          const Node& np = nodes_[static_cast<std::size_t>(ps[s])];
          const int c = np.shape.d1;
          if (want(ps[s])) {
            double* d = buf(ps[s], rows * c);
            for (int r = 0; r < rows; ++r)
              for (int j = 0; j < c; ++j)
                d[static_cast<std::size_t>(r) * c + j] +=
                    g[static_cast<std::size_t>(r) * cols + off + j];
          }
          off += c;
        }
        break;
      }
      case OpKind::kTanh:
        if (want(ps[0])) acc_tanh(buf(ps[0], n.shape.numel()), g, n.values->data(), n.shape.numel());
        break;
      case OpKind::kExp:
        if (want(ps[0])) acc_mul(buf(ps[0], n.shape.numel()), g, n.values->data(), n.shape.numel());
        break;
      case OpKind::kLog:
        if (want(ps[0]))
          acc_div(buf(ps[0], n.shape.numel()), g,
                  nodes_[static_cast<std::size_t>(ps[0])].values->data(), n.shape.numel());
        break;
      case OpKind::kRowSoftmax: {
        if (!want(ps[0])) break;
        const int rows = n.shape.d0, cols = n.shape.d1;
        const double* y = n.values->data();
        double* d = buf(ps[0], rows * cols);
        for (int r = 0; r < rows; ++r) {
          const double* yr = y + static_cast<std::size_t>(r) * cols;
          const double* gr = g + static_cast<std::size_t>(r) * cols;
          double s = 0.0;
          for (int j = 0; j < cols; ++j) s += gr[j] * yr[j];
          double* dr = d + static_cast<std::size_t>(r) * cols;
          for (int j = 0; j < cols; ++j) dr[j] += yr[j] * (gr[j] - s);
        }
        break;
      }
      case OpKind::kSum: {
        if (!want(ps[0])) break;
        const Node& np = nodes_[static_cast<std::size_t>(ps[0])];
        const int ne = np.shape.numel();
        double* d = buf(ps[0], ne);
        for (int j = 0; j < ne; ++j) d[j] += g[0];
        break;
      }
      case OpKind::kDot: {
        const Node& na = nodes_[static_cast<std::size_t>(ps[0])];
        const int ne = na.shape.numel();
        if (want(ps[0]))
          kern::axpy(g[0], nodes_[static_cast<std::size_t>(ps[1])].values->data(), buf(ps[0], ne), ne);
        if (want(ps[1])) kern::axpy(g[0], na.values->data(), buf(ps[1], ne), ne);
        break;
      }
      case OpKind::kSquare:
        if (want(ps[0]))
          acc_square(buf(ps[0], n.shape.numel()), g,
                     nodes_[static_cast<std::size_t>(ps[0])].values->data(), n.shape.numel());
        break;
      case OpKind::kScale:
        if (want(ps[0])) kern::axpy(n.alpha, g, buf(ps[0], n.shape.numel()), n.shape.numel());
        break;
      case OpKind::kStopGradient:
      case OpKind::kLeaf:
      case OpKind::kConst:
        break;
    }
  }
}

void Tape::backward_graph(int out_id, int lo, const std::vector<char>& active,
                          std::vector<Tensor>& adj) {
  auto want = [&](int p) { return p >= lo && active[static_cast<std::size_t>(p - lo)]; };
  auto push = [&](int p, const Tensor& contrib) {
    if (!want(p)) return;
    Tensor& slot = adj[static_cast<std::size_t>(p - lo)];
    slot = slot.numel() == 0 ? contrib : add(slot, contrib);
  };

  adj[static_cast<std::size_t>(out_id - lo)] = Tensor::scalar(1.0);

  for (int i = out_id; i >= lo; --i) {
    if (!active[static_cast<std::size_t>(i - lo)]) continue;
    Tensor& gt = adj[static_cast<std::size_t>(i - lo)];
    if (gt.numel() == 0) continue;
    const Node n = nodes_[static_cast<std::size_t>(i)];  // copy: tape grows below
    std::vector<int> ps(parents_of(n).begin(), parents_of(n).end());
    const Tensor g = gt;
    switch (n.kind) {
      case OpKind::kMatmul: {
        Tensor a = tensor_for(ps[0]);
        Tensor b = tensor_for(ps[1]);
        switch (n.mm) {
          case MatmulVariant::kNN:
            if (want(ps[0])) push(ps[0], matmul_variant(g, b, MatmulVariant::kNT));
            if (want(ps[1])) push(ps[1], matmul_variant(a, g, MatmulVariant::kTN));
            break;
          case MatmulVariant::kNT:
            if (want(ps[0])) push(ps[0], matmul_variant(g, b, MatmulVariant::kNN));
            if (want(ps[1])) push(ps[1], matmul_variant(g, a, MatmulVariant::kTN));
            break;
          case MatmulVariant::kTN:
            if (want(ps[0])) push(ps[0], matmul_variant(b, g, MatmulVariant::kNT));
            if (want(ps[1])) push(ps[1], matmul_variant(a, g, MatmulVariant::kNN));
            break;
        }
        break;
      }
      case OpKind::kAdd:
        push(ps[0], g);
        push(ps[1], g);
        break;
      case OpKind::kMultiply: {
        Tensor a = tensor_for(ps[0]);
        Tensor b = tensor_for(ps[1]);
        if (a.shape() == b.shape()) {
          if (want(ps[0])) push(ps[0], multiply(g, b));
          if (want(ps[1])) push(ps[1], multiply(g, a));
        } else if (a.numel() == 1) {
          if (want(ps[0])) push(ps[0], sum(multiply(g, b)));
          if (want(ps[1])) push(ps[1], multiply(g, a));
        } else {
          if (want(ps[1])) push(ps[1], sum(multiply(g, a)));
          if (want(ps[0])) push(ps[0], multiply(g, b));
        }
        break;
      }
      case OpKind::kConcatLast: {
        const int cols = n.shape.d1;
        int off = 0;
        for (std::size_t s = 0; s < ps.size(); ++s) {
          const int c = nodes_[static_cast<std::size_t>(ps[s])].shape.d1;
          if (want(ps[s])) {
            // Selector matrix extracting this block of columns.
            std::vector<double> sel(static_cast<std::size_t>(cols) * c, 0.0);
            for (int j = 0; j < c; ++j)
              sel[static_cast<std::size_t>(off + j) * c + j] = 1.0;
            push(ps[s], matmul(g, Tensor::matrix(cols, c, std::move(sel))));
          }
          off += c;
        }
        break;
      }
      case OpKind::kTanh: {
        if (!want(ps[0])) break;
        Tensor y = tensor_for(i);
        Tensor one = Tensor::full(n.shape, 1.0);
        push(ps[0], multiply(g, add(one, scale(square(y), -1.0))));
        break;
      }
      case OpKind::kExp:
        if (want(ps[0])) push(ps[0], multiply(g, tensor_for(i)));
        break;
      case OpKind::kLog:
        // 1/x as exp(-log x), reusing this node's value.
        if (want(ps[0])) push(ps[0], multiply(g, exp(scale(tensor_for(i), -1.0))));
        break;
      case OpKind::kRowSoftmax: {
        if (!want(ps[0])) break;
        Tensor y = tensor_for(i);
        const int rows = n.shape.d0, cols = n.shape.d1;
        Tensor colsum = matmul(multiply(g, y), Tensor::full(Shape::mat(cols, 1), 1.0));
        Tensor bcast = matmul(colsum, Tensor::full(Shape::mat(1, cols), 1.0));
        (void)rows;
        push(ps[0], multiply(y, sub(g, bcast)));
        break;
      }
      case OpKind::kSum: {
        if (!want(ps[0])) break;
        const Shape ps_shape = nodes_[static_cast<std::size_t>(ps[0])].shape;
        push(ps[0], multiply(g, Tensor::full(ps_shape, 1.0)));
        break;
      }
      case OpKind::kDot: {
        Tensor a = tensor_for(ps[0]);
        Tensor b = tensor_for(ps[1]);
        if (want(ps[0])) push(ps[0], multiply(g, b));
        if (want(ps[1])) push(ps[1], multiply(g, a));
        break;
      }
      case OpKind::kSquare:
        if (want(ps[0])) push(ps[0], multiply(g, scale(tensor_for(ps[0]), 2.0)));
        break;
      case OpKind::kScale:
        if (want(ps[0])) push(ps[0], scale(g, n.alpha));
        break;
      case OpKind::kStopGradient:
      case OpKind::kLeaf:
      case OpKind::kConst:
        break;
    }
  }
}

bool Tape::replay_matches() const {
  // Recomputed values per node; leaves/consts start from their caches.
  std::vector<std::vector<double>> vals(nodes_.size());
  std::vector<Tensor> as_tensor(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.kind == OpKind::kConst || n.kind == OpKind::kLeaf) {
      as_tensor[i] = Tensor(n.shape, *n.values);
      continue;
    }
    std::vector<Tensor> ins;
    for (int p : parents_of(n)) ins.push_back(as_tensor[static_cast<std::size_t>(p)]);
    Shape out = validate(n.kind, n.mm, ins, n.alpha);
    if (out != n.shape) return false;
    std::vector<double> y = compute(n.kind, n.mm, n.alpha, ins, out);
    if (y.size() != n.values->size()) return false;
    for (std::size_t j = 0; j < y.size(); ++j) {
      // bit-exact comparison
      if (std::memcmp(&y[j], &(*n.values)[j], sizeof(double)) != 0) return false;
    }
    as_tensor[i] = Tensor(n.shape, std::move(y));
  }
  return true;
}

}  // namespace gpldlab::ad
