#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gpldlab/error.hpp"

namespace gpldlab::ad {

class Tape;
class Tensor;
enum class OpKind : std::uint8_t;
enum class MatmulVariant : std::uint8_t;
Tensor op_forward_impl(OpKind, MatmulVariant, std::span<const Tensor>, double);

// Rank-1 or rank-2 shapes; nothing in the lab needs more.
struct Shape {
  int rank = 1;
  int d0 = 0;  // rank-1: length; rank-2: rows
  int d1 = 1;  // rank-2: cols

  static Shape vec(int n) { return Shape{1, n, 1}; }
  static Shape mat(int r, int c) { return Shape{2, r, c}; }

  int numel() const { return rank == 1 ? d0 : d0 * d1; }
  int rows() const { return rank == 1 ? 1 : d0; }
  int cols() const { return rank == 1 ? d0 : d1; }

  bool operator==(const Shape& o) const {
    return rank == o.rank && d0 == o.d0 && d1 == o.d1;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    if (rank == 1) return "[" + std::to_string(d0) + "]";
    return "[" + std::to_string(d0) + "x" + std::to_string(d1) + "]";
  }
};

// Immutable shaped array of doubles. Copies are cheap (shared buffer).
// A tensor is either a constant (node_id() == -1) or a handle to a node on
// a tape; constants participate in forward computation but carry no
// gradient.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape::vec(1), {v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(int rows, int cols, std::vector<double> v);
  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);

  const Shape& shape() const { return shape_; }
  int numel() const { return shape_.numel(); }
  const std::vector<double>& values() const { return *values_; }
  double scalar_value() const;

  bool on_tape() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node_id() const { return node_; }

 private:
  friend class Tape;
  friend Tensor op_forward_impl(OpKind, MatmulVariant, std::span<const Tensor>, double);
  Shape shape_{};
  std::shared_ptr<const std::vector<double>> values_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

}  // namespace gpldlab::ad
