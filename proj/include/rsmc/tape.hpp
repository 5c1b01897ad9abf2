#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "rsmc/types.hpp"

namespace rsmc::ad {

// Reverse-mode autodiff over a recorded graph of dense matrix operations.
// Nodes are appended in evaluation order; the backward pass walks them once
// in reverse insertion order, so gradients are bit-reproducible for a given
// tape. A tape is single-writer; independent batches use independent tapes.

enum class Op : std::uint8_t {
  Leaf,
  Constant,
  MatMul,
  AddRow,       // matrix + row-vector broadcast
  Add,
  Sub,
  Mul,          // elementwise
  Affine,       // s*a + t
  AddConst,     // a + const matrix
  Gelu,
  Softplus,
  Square,
  RowSumSq,     // per-row squared norm -> column
  Sum,          // sum of all entries -> 1x1
  AddScalar,    // a + broadcast(1x1 node)
  SubScalar,
  MulScalar,
  DivScalar,
  ScalarTimesConst,  // (1x1 node) * const matrix
  ColScaleConst,     // column node (Kx1) .* const matrix (Kxd)
  Cumsum,            // column vector cumulative sum
  Entry,             // select single element -> 1x1
  RowLogSumExp,      // per-row logsumexp -> column
  SelLogSumExp,      // per-row logsumexp over 1 or 2 given columns
  DotConst,          // sum(a .* const) -> 1x1
  Clamp,             // elementwise clamp to [s, t]; zero gradient outside
};

struct Node {
  Op op;
  int a = -1;
  int b = -1;
  double s = 0.0;
  double t = 0.0;
  Mat value;
  Mat aux;                               // saved intermediates (Gelu sigmoid)
  Mat cpayload;                          // constant operand, where applicable
  std::vector<std::array<int, 2>> sel;   // SelLogSumExp column pairs (-1 = unused)
  int row = 0, col = 0;                  // Entry coordinates
  bool needs_grad = false;
};

class Tape {
 public:
  int leaf(const Mat& v);
  int constant(const Mat& v);
  int constant(double v);

  int matmul(int a, int b);
  int add_row(int a, int row_vec);
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int affine(int a, double s, double t);
  int add_const(int a, const Mat& c);
  int gelu(int a);
  int softplus(int a);
  int square(int a);
  int row_sum_sq(int a);
  int sum(int a);
  int add_scalar(int a, int s);
  int sub_scalar(int a, int s);
  int mul_scalar(int a, int s);
  int div_scalar(int a, int s);
  int scalar_times_const(int s, const Mat& c);
  int col_scale_const(int col, const Mat& c);
  int cumsum(int a);
  int entry(int a, int row, int col);
  int row_log_sum_exp(int a);
  int sel_log_sum_exp(int a, std::vector<std::array<int, 2>> sel);
  int dot_const(int a, const Mat& c);
  int clamp(int a, double lo, double hi);

  // Gradient of a scalar (1x1) output w.r.t. every recorded leaf.
  // Visits each node exactly once, in reverse insertion order.
  void backward(int output);

  const Mat& value(int id) const { return nodes_[id].value; }
  double scalar(int id) const { return nodes_[id].value(0, 0); }
  const Mat& grad(int id) const;
  bool has_grad(int id) const { return id >= 0 && nodes_[id].needs_grad && grads_ready_; }

  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  int push(Node n);
  Mat& grad_buf(int id);

  std::vector<Node> nodes_;
  std::vector<Mat> grads_;
  bool grads_ready_ = false;
};

}  // namespace rsmc::ad
