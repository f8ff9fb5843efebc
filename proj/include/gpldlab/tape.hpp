#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gpldlab/tensor.hpp"

namespace gpldlab::ad {

// Closed set of differentiable operation kinds. Adding a kind means adding
// its forward kernel, both adjoint paths (buffer and graph mode), replay
// support, and grad_check coverage.
enum class OpKind : std::uint8_t {
  kConst,
  kLeaf,
  kMatmul,
  kAdd,
  kMultiply,
  kConcatLast,
  kTanh,
  kExp,
  kLog,
  kRowSoftmax,
  kSum,
  kDot,
  kSquare,
  kScale,
  kStopGradient,
};

const char* op_kind_name(OpKind k);

// Transpose layout of a matmul node. Public matmul records kNN; the other
// variants appear in gradient graphs (the adjoint of a matmul is a matmul).
enum class MatmulVariant : std::uint8_t { kNN, kNT, kTN };

// Reverse-mode tape. Nodes are appended in topological order (parents always
// precede children) and cache their forward values, so replaying the forward
// pass from leaves is exact. A tape belongs to one thread of execution;
// tensors read from it are value-semantic and may cross threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a differentiable input holding `value`.
  Tensor leaf(const Tensor& value);
  Tensor leaf(Shape shape, std::vector<double> values);

  std::size_t size() const { return nodes_.size(); }

  // Drops all nodes with id >= n. Tensors created after the mark become
  // invalid; used to keep probe loops from growing the tape.
  void truncate(std::size_t n);

  // Default create_graph flag for backward passes (higher-order mode).
  bool higher_order() const { return higher_order_; }
  void set_higher_order(bool on) { higher_order_ = on; }

  struct BackwardResult {
    std::vector<Tensor> grads;        // one per wrt, matching shapes
    std::vector<char> unreachable;    // 1 where wrt is off-tape or disconnected
    bool any_unreachable() const;
  };

  // Gradients of a scalar `output` with respect to `wrt`. With
  // create_graph the returned gradients are recorded on the tape and can be
  // differentiated again (double backprop); without it the pass runs on
  // plain buffers. Disconnected wrt tensors get a zero gradient and a
  // warning flag, not an error.
  BackwardResult backward(const Tensor& output, std::span<const Tensor> wrt,
                          bool create_graph);
  BackwardResult backward(const Tensor& output, std::span<const Tensor> wrt) {
    return backward(output, wrt, higher_order_);
  }

  // Recomputes every node from leaf/const values and compares bit-exactly
  // with the cached forward values.
  bool replay_matches() const;

  // Introspection used by tests.
  OpKind node_kind(int id) const;
  Tensor tensor_for(int id) const;

 private:
  friend Tensor op_forward_impl(OpKind, MatmulVariant, std::span<const Tensor>, double);

  struct Node {
    OpKind kind;
    MatmulVariant mm = MatmulVariant::kNN;
    Shape shape;
    double alpha = 0.0;  // kScale factor
    std::uint32_t parent_begin = 0;
    std::uint16_t parent_count = 0;
    std::shared_ptr<const std::vector<double>> values;
  };

  int append(Node node, std::span<const int> parents);
  int intern_input(const Tensor& t);  // const tensors become kConst nodes
  std::span<const int> parents_of(const Node& n) const;

  void backward_buffers(int out_id, int lo, const std::vector<char>& active,
                        std::vector<std::vector<double>>& adj,
                        std::vector<char>& has_adj);
  void backward_graph(int out_id, int lo, const std::vector<char>& active,
                      std::vector<Tensor>& adj);

  std::vector<Node> nodes_;
  std::vector<int> parent_pool_;
  bool higher_order_ = false;

  // grow-only scratch reused across backward calls
  std::vector<char> anc_, desc_, active_, has_adj_;
  std::vector<std::vector<double>> adj_buf_;
};

// Generic forward entry point: validates shapes for `kind`, computes the
// result, and records it on the tape of any tape-attached input. With only
// constant inputs the result is a constant. `alpha` is the kScale factor.
Tensor op_forward(OpKind kind, std::span<const Tensor> inputs, double alpha = 0.0);

// Convenience wrappers over op_forward.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);  // equal shapes or scalar*tensor
Tensor concat_last(std::span<const Tensor> parts);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor row_softmax(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor square(const Tensor& x);
Tensor scale(const Tensor& x, double alpha);
Tensor stop_gradient(const Tensor& x);

// a - b, as add(a, scale(b, -1)).
Tensor sub(const Tensor& a, const Tensor& b);

// Matmul with an explicit transpose layout; used by gradient graphs and
// covered by the same derivative tests as the public ops.
Tensor matmul_variant(const Tensor& a, const Tensor& b, MatmulVariant v);

}  // namespace gpldlab::ad
