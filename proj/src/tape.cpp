#include "rsmc/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "rsmc/math.hpp"

namespace rsmc::ad {

namespace {

void check(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Mat& Tape::grad_buf(int id) {
  if (grads_[id].size() == 0) grads_[id] = Mat::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
  return grads_[id];
}

int Tape::leaf(const Mat& v) {
  Node n{Op::Leaf};
  n.value = v;
  n.needs_grad = true;
  return push(std::move(n));
}

int Tape::constant(const Mat& v) {
  Node n{Op::Constant};
  n.value = v;
  return push(std::move(n));
}

int Tape::constant(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return constant(m);
}

int Tape::matmul(int a, int b) {
  check(nodes_[a].value.cols() == nodes_[b].value.rows(), "matmul: inner dims");
  Node n{Op::MatMul, a, b};
  n.value = nodes_[a].value * nodes_[b].value;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

int Tape::add_row(int a, int row_vec) {
  check(nodes_[row_vec].value.rows() == 1 && nodes_[a].value.cols() == nodes_[row_vec].value.cols(),
        "add_row: shape");
  Node n{Op::AddRow, a, row_vec};
  n.value = nodes_[a].value.rowwise() + nodes_[row_vec].value.row(0);
  n.needs_grad = nodes_[a].needs_grad || nodes_[row_vec].needs_grad;
  return push(std::move(n));
}

int Tape::add(int a, int b) {
  check(nodes_[a].value.rows() == nodes_[b].value.rows() &&
            nodes_[a].value.cols() == nodes_[b].value.cols(),
        "add: shape");
  Node n{Op::Add, a, b};
  n.value = nodes_[a].value + nodes_[b].value;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

int Tape::sub(int a, int b) {
  check(nodes_[a].value.rows() == nodes_[b].value.rows() &&
            nodes_[a].value.cols() == nodes_[b].value.cols(),
        "sub: shape");
  Node n{Op::Sub, a, b};
  n.value = nodes_[a].value - nodes_[b].value;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

int Tape::mul(int a, int b) {
  check(nodes_[a].value.rows() == nodes_[b].value.rows() &&
            nodes_[a].value.cols() == nodes_[b].value.cols(),
        "mul: shape");
  Node n{Op::Mul, a, b};
  n.value = nodes_[a].value.cwiseProduct(nodes_[b].value);
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

int Tape::affine(int a, double s, double t) {
  Node n{Op::Affine, a};
  n.s = s;
  n.t = t;
  n.value = (s * nodes_[a].value.array() + t).matrix();
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::add_const(int a, const Mat& c) {
  check(nodes_[a].value.rows() == c.rows() && nodes_[a].value.cols() == c.cols(),
        "add_const: shape");
  Node n{Op::AddConst, a};
  n.value = nodes_[a].value + c;
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::gelu(int a) {
  Node n{Op::Gelu, a};
  n.aux = gelu_sigmoid(nodes_[a].value);
  n.value = nodes_[a].value.cwiseProduct(n.aux);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::softplus(int a) {
  Node n{Op::Softplus, a};
  n.value = nodes_[a].value.unaryExpr([](double x) { return rsmc::softplus(x); });
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::square(int a) {
  Node n{Op::Square, a};
  n.value = nodes_[a].value.array().square().matrix();
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::row_sum_sq(int a) {
  Node n{Op::RowSumSq, a};
  n.value = nodes_[a].value.array().square().rowwise().sum().matrix();
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::sum(int a) {
  Node n{Op::Sum, a};
  Mat m(1, 1);
  m(0, 0) = nodes_[a].value.sum();
  n.value = std::move(m);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::add_scalar(int a, int s) {
  check(nodes_[s].value.size() == 1, "add_scalar: rhs must be 1x1");
  Node n{Op::AddScalar, a, s};
  n.value = (nodes_[a].value.array() + nodes_[s].value(0, 0)).matrix();
  n.needs_grad = nodes_[a].needs_grad || nodes_[s].needs_grad;
  return push(std::move(n));
}

int Tape::sub_scalar(int a, int s) {
  check(nodes_[s].value.size() == 1, "sub_scalar: rhs must be 1x1");
  Node n{Op::SubScalar, a, s};
  n.value = (nodes_[a].value.array() - nodes_[s].value(0, 0)).matrix();
  n.needs_grad = nodes_[a].needs_grad || nodes_[s].needs_grad;
  return push(std::move(n));
}

int Tape::mul_scalar(int a, int s) {
  check(nodes_[s].value.size() == 1, "mul_scalar: rhs must be 1x1");
  Node n{Op::MulScalar, a, s};
  n.value = nodes_[a].value * nodes_[s].value(0, 0);
  n.needs_grad = nodes_[a].needs_grad || nodes_[s].needs_grad;
  return push(std::move(n));
}

int Tape::div_scalar(int a, int s) {
  check(nodes_[s].value.size() == 1, "div_scalar: rhs must be 1x1");
  Node n{Op::DivScalar, a, s};
  n.value = nodes_[a].value / nodes_[s].value(0, 0);
  n.needs_grad = nodes_[a].needs_grad || nodes_[s].needs_grad;
  return push(std::move(n));
}

int Tape::scalar_times_const(int s, const Mat& c) {
  check(nodes_[s].value.size() == 1, "scalar_times_const: lhs must be 1x1");
  Node n{Op::ScalarTimesConst, s};
  n.cpayload = c;
  n.value = c * nodes_[s].value(0, 0);
  n.needs_grad = nodes_[s].needs_grad;
  return push(std::move(n));
}

int Tape::col_scale_const(int col, const Mat& c) {
  check(nodes_[col].value.cols() == 1 && nodes_[col].value.rows() == c.rows(),
        "col_scale_const: shape");
  Node n{Op::ColScaleConst, col};
  n.cpayload = c;
  n.value = c.array().colwise() * nodes_[col].value.col(0).array();
  n.needs_grad = nodes_[col].needs_grad;
  return push(std::move(n));
}

int Tape::cumsum(int a) {
  check(nodes_[a].value.cols() == 1, "cumsum: column vector expected");
  Node n{Op::Cumsum, a};
  Mat v = nodes_[a].value;
  for (Eigen::Index i = 1; i < v.rows(); ++i) v(i, 0) += v(i - 1, 0);
  n.value = std::move(v);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::entry(int a, int row, int col) {
  Node n{Op::Entry, a};
  n.row = row;
  n.col = col;
  Mat m(1, 1);
  m(0, 0) = nodes_[a].value(row, col);
  n.value = std::move(m);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::row_log_sum_exp(int a) {
  Node n{Op::RowLogSumExp, a};
  const Mat& x = nodes_[a].value;
  Mat out(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double m = x.row(r).maxCoeff();
    out(r, 0) = m + std::log((x.row(r).array() - m).exp().sum());
  }
  n.value = std::move(out);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::sel_log_sum_exp(int a, std::vector<std::array<int, 2>> sel) {
  check(static_cast<Eigen::Index>(sel.size()) == nodes_[a].value.rows(), "sel_log_sum_exp: rows");
  Node n{Op::SelLogSumExp, a};
  const Mat& x = nodes_[a].value;
  Mat out(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double v0 = x(r, sel[r][0]);
    if (sel[r][1] >= 0) {
      double v1 = x(r, sel[r][1]);
      double m = std::max(v0, v1);
      out(r, 0) = m + std::log(std::exp(v0 - m) + std::exp(v1 - m));
    } else {
      out(r, 0) = v0;
    }
  }
  n.sel = std::move(sel);
  n.value = std::move(out);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::dot_const(int a, const Mat& c) {
  check(nodes_[a].value.rows() == c.rows() && nodes_[a].value.cols() == c.cols(),
        "dot_const: shape");
  Node n{Op::DotConst, a};
  n.cpayload = c;
  Mat m(1, 1);
  m(0, 0) = nodes_[a].value.cwiseProduct(c).sum();
  n.value = std::move(m);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

int Tape::clamp(int a, double lo, double hi) {
  Node n{Op::Clamp, a};
  n.s = lo;
  n.t = hi;
  n.value = nodes_[a].value.unaryExpr([lo, hi](double x) { return std::clamp(x, lo, hi); });
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

const Mat& Tape::grad(int id) const {
  if (!grads_ready_) throw std::logic_error("tape: backward() has not run");
  return grads_[id];
}

void Tape::backward(int output) {
  if (nodes_[output].value.size() != 1)
    throw std::invalid_argument("backward: output must be scalar");
  grads_.assign(nodes_.size(), Mat());
  grad_buf(output)(0, 0) = 1.0;

  for (int i = output; i >= 0; --i) {
    const Node& n = nodes_[i];
    if (!n.needs_grad || grads_[i].size() == 0) continue;
    const Mat& g = grads_[i];
    switch (n.op) {
      case Op::Leaf:
      case Op::Constant:
        break;
      case Op::MatMul:
        if (nodes_[n.a].needs_grad) grad_buf(n.a) += g * nodes_[n.b].value.transpose();
        if (nodes_[n.b].needs_grad) grad_buf(n.b) += nodes_[n.a].value.transpose() * g;
        break;
      case Op::AddRow:
        if (nodes_[n.a].needs_grad) grad_buf(n.a) += g;
        if (nodes_[n.b].needs_grad) grad_buf(n.b) += g.colwise().sum();
        break;
      case Op::Add:
        if (nodes_[n.a].needs_grad) grad_buf(n.a) += g;
        if (nodes_[n.b].needs_grad) grad_buf(n.b) += g;
        break;
      case Op::Sub:
        if (nodes_[n.a].needs_grad) grad_buf(n.a) += g;
        if (nodes_[n.b].needs_grad) grad_buf(n.b) -= g;
        break;
      case Op::Mul:
        if (nodes_[n.a].needs_grad) grad_buf(n.a) += g.cwiseProduct(nodes_[n.b].value);
        if (nodes_[n.b].needs_grad) grad_buf(n.b) += g.cwiseProduct(nodes_[n.a].value);
        break;
      case Op::Affine:
        grad_buf(n.a) += n.s * g;
        break;
      case Op::AddConst:
        grad_buf(n.a) += g;
        break;
      case Op::Gelu: {
        const Mat& x = nodes_[n.a].value;
        grad_buf(n.a) += g.cwiseProduct(
            (n.aux.array() + kGeluSlope * x.array() * n.aux.array() * (1.0 - n.aux.array()))
                .matrix());
        break;
      }
      case Op::Softplus:
        grad_buf(n.a) +=
            g.cwiseProduct(nodes_[n.a].value.unaryExpr([](double x) { return sigmoid(x); }));
        break;
      case Op::Square:
        grad_buf(n.a) += 2.0 * g.cwiseProduct(nodes_[n.a].value);
        break;
      case Op::RowSumSq:
        grad_buf(n.a) +=
            (nodes_[n.a].value.array().colwise() * (2.0 * g.col(0).array())).matrix();
        break;
      case Op::Sum:
        grad_buf(n.a).array() += g(0, 0);
        break;
      case Op::AddScalar:
        if (nodes_[n.a].needs_grad) grad_buf(n.a) += g;
        if (nodes_[n.b].needs_grad) grad_buf(n.b)(0, 0) += g.sum();
        break;
      case Op::SubScalar:
        if (nodes_[n.a].needs_grad) grad_buf(n.a) += g;
        if (nodes_[n.b].needs_grad) grad_buf(n.b)(0, 0) -= g.sum();
        break;
      case Op::MulScalar:
        if (nodes_[n.a].needs_grad) grad_buf(n.a) += g * nodes_[n.b].value(0, 0);
        if (nodes_[n.b].needs_grad)
          grad_buf(n.b)(0, 0) += g.cwiseProduct(nodes_[n.a].value).sum();
        break;
      case Op::DivScalar: {
        double s = nodes_[n.b].value(0, 0);
        if (nodes_[n.a].needs_grad) grad_buf(n.a) += g / s;
        if (nodes_[n.b].needs_grad)
          grad_buf(n.b)(0, 0) -= g.cwiseProduct(nodes_[n.a].value).sum() / (s * s);
        break;
      }
      case Op::ScalarTimesConst:
        grad_buf(n.a)(0, 0) += g.cwiseProduct(n.cpayload).sum();
        break;
      case Op::ColScaleConst:
        grad_buf(n.a) += g.cwiseProduct(n.cpayload).rowwise().sum();
        break;
      case Op::Cumsum: {
        Mat& ga = grad_buf(n.a);
        double acc = 0.0;
        for (Eigen::Index r = g.rows() - 1; r >= 0; --r) {
          acc += g(r, 0);
          ga(r, 0) += acc;
        }
        break;
      }
      case Op::Entry:
        grad_buf(n.a)(n.row, n.col) += g(0, 0);
        break;
      case Op::RowLogSumExp: {
        Mat& ga = grad_buf(n.a);
        const Mat& x = nodes_[n.a].value;
        for (Eigen::Index r = 0; r < x.rows(); ++r)
          ga.row(r) += g(r, 0) * (x.row(r).array() - n.value(r, 0)).exp().matrix();
        break;
      }
      case Op::SelLogSumExp: {
        Mat& ga = grad_buf(n.a);
        const Mat& x = nodes_[n.a].value;
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
          int c0 = n.sel[r][0], c1 = n.sel[r][1];
          if (c1 >= 0) {
            ga(r, c0) += g(r, 0) * std::exp(x(r, c0) - n.value(r, 0));
            ga(r, c1) += g(r, 0) * std::exp(x(r, c1) - n.value(r, 0));
          } else {
            ga(r, c0) += g(r, 0);
          }
        }
        break;
      }
      case Op::DotConst:
        grad_buf(n.a) += g(0, 0) * n.cpayload;
        break;
      case Op::Clamp: {
        Mat& ga = grad_buf(n.a);
        const Mat& x = nodes_[n.a].value;
        for (Eigen::Index r = 0; r < x.rows(); ++r)
          for (Eigen::Index c = 0; c < x.cols(); ++c)
            if (x(r, c) > n.s && x(r, c) < n.t) ga(r, c) += g(r, c);
        break;
      }
    }
  }
  grads_ready_ = true;
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
  grads_ready_ = false;
}

}  // namespace rsmc::ad
