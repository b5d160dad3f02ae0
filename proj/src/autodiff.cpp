#include "gazesteer/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace gazesteer::ag {

namespace {

constexpr double kLnEps = 1e-5;           // layernorm variance floor
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

void require(bool ok, const char* msg) {
  if (!ok) throw std::logic_error(msg);
}

double gelu_fwd(double x) {
  double u = kGeluC * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_bwd(double x) {
  double x2 = x * x;
  double u = kGeluC * (x + 0.044715 * x2 * x);
  double t = std::tanh(u);
  double du = kGeluC * (1.0 + 3.0 * 0.044715 * x2);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::input(Mat v) {
  Node n;
  n.op = Op::kInput;
  n.val = std::move(v);
  return push(std::move(n));
}

int Tape::input_ref(const Mat* v) {
  Node n;
  n.op = Op::kInput;
  n.ref = v;
  return push(std::move(n));
}

int Tape::input_cb(Mat v, std::function<void(const Mat&)> pullback) {
  Node n;
  n.op = Op::kInputCb;
  n.val = std::move(v);
  n.cb = std::move(pullback);
  return push(std::move(n));
}

int Tape::param(int slot, const Mat* v) {
  Node n;
  n.op = Op::kParam;
  n.ref = v;
  n.slot = slot;
  return push(std::move(n));
}

int Tape::matmul(int a, int b) {
  require(v(a).cols() == v(b).rows(), "matmul: inner dims");
  Node n;
  n.op = Op::kMatmul;
  n.a = a;
  n.b = b;
  n.val.noalias() = v(a) * v(b);
  return push(std::move(n));
}

int Tape::add(int a, int b) {
  require(v(a).rows() == v(b).rows() && v(a).cols() == v(b).cols(), "add: shape");
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.val = v(a) + v(b);
  return push(std::move(n));
}

int Tape::sub(int a, int b) {
  require(v(a).rows() == v(b).rows() && v(a).cols() == v(b).cols(), "sub: shape");
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  n.val = v(a) - v(b);
  return push(std::move(n));
}

int Tape::scale(int a, double c) {
  Node n;
  n.op = Op::kScale;
  n.a = a;
  n.x = c;
  n.val = v(a) * c;
  return push(std::move(n));
}

int Tape::mul_scalar(int a, int s) {
  require(v(s).rows() == 1 && v(s).cols() == 1, "mul_scalar: s must be 1x1");
  Node n;
  n.op = Op::kMulScalar;
  n.a = a;
  n.b = s;
  n.val = v(a) * v(s)(0, 0);
  return push(std::move(n));
}

int Tape::transpose(int a) {
  Node n;
  n.op = Op::kTranspose;
  n.a = a;
  n.val = v(a).transpose();
  return push(std::move(n));
}

int Tape::concat_rows(int a, int b) {
  require(v(a).cols() == v(b).cols(), "concat_rows: cols");
  Node n;
  n.op = Op::kConcatRows;
  n.a = a;
  n.b = b;
  n.val.resize(v(a).rows() + v(b).rows(), v(a).cols());
  n.val.topRows(v(a).rows()) = v(a);
  n.val.bottomRows(v(b).rows()) = v(b);
  return push(std::move(n));
}

int Tape::slice_rows(int a, Index r0, Index nr) {
  require(r0 >= 0 && r0 + nr <= v(a).rows(), "slice_rows: range");
  Node n;
  n.op = Op::kSliceRows;
  n.a = a;
  n.i0 = r0;
  n.i1 = nr;
  n.val = v(a).middleRows(r0, nr);
  return push(std::move(n));
}

int Tape::slice_cols(int a, Index c0, Index nc) {
  require(c0 >= 0 && c0 + nc <= v(a).cols(), "slice_cols: range");
  Node n;
  n.op = Op::kSliceCols;
  n.a = a;
  n.i0 = c0;
  n.i1 = nc;
  n.val = v(a).middleCols(c0, nc);
  return push(std::move(n));
}

int Tape::add_rows_at(int a, int b, Index r0) {
  require(v(a).cols() == v(b).cols(), "add_rows_at: cols");
  require(r0 >= 0 && r0 + v(b).rows() <= v(a).rows(), "add_rows_at: range");
  Node n;
  n.op = Op::kAddRowsAt;
  n.a = a;
  n.b = b;
  n.i0 = r0;
  n.val = v(a);
  n.val.middleRows(r0, v(b).rows()) += v(b);
  return push(std::move(n));
}

int Tape::add_bias_row(int a, int bias) {
  require(v(bias).rows() == 1 && v(bias).cols() == v(a).cols(), "add_bias_row: bias shape");
  Node n;
  n.op = Op::kAddBiasRow;
  n.a = a;
  n.b = bias;
  n.val = v(a).rowwise() + v(bias).row(0);
  return push(std::move(n));
}

int Tape::softmax_rows(int a) {
  Node n;
  n.op = Op::kSoftmaxRows;
  n.a = a;
  const Mat& x = v(a);
  n.val.resize(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double m = x.row(r).maxCoeff();
    Eigen::RowVectorXd e = (x.row(r).array() - m).exp();
    n.val.row(r) = e / e.sum();
  }
  return push(std::move(n));
}

int Tape::causal_softmax_rows(int a) {
  require(v(a).rows() == v(a).cols(), "causal_softmax_rows: square");
  Node n;
  n.op = Op::kCausalSoftmaxRows;
  n.a = a;
  const Mat& x = v(a);
  n.val.setZero(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    Index w = r + 1;
    double m = x.row(r).head(w).maxCoeff();
    Eigen::RowVectorXd e = (x.row(r).head(w).array() - m).exp();
    n.val.row(r).head(w) = e / e.sum();
  }
  return push(std::move(n));
}

int Tape::layernorm_rows(int x, int gn, int bn) {
  const Mat& xm = v(x);
  require(v(gn).rows() == 1 && v(gn).cols() == xm.cols(), "layernorm: gain shape");
  require(v(bn).rows() == 1 && v(bn).cols() == xm.cols(), "layernorm: bias shape");
  Node n;
  n.op = Op::kLayerNormRows;
  n.a = x;
  n.b = gn;
  n.c = bn;
  Index R = xm.rows(), C = xm.cols();
  n.aux.resize(R, C);   // normalized rows
  n.aux2.resize(R, 1);  // 1/sigma per row
  for (Index r = 0; r < R; ++r) {
    double mu = xm.row(r).mean();
    double var = (xm.row(r).array() - mu).square().mean();
    double inv = 1.0 / std::sqrt(var + kLnEps);
    n.aux.row(r) = (xm.row(r).array() - mu) * inv;
    n.aux2(r, 0) = inv;
  }
  n.val = (n.aux.array().rowwise() * v(gn).row(0).array()).matrix().rowwise() + v(bn).row(0);
  return push(std::move(n));
}

int Tape::gelu(int x) {
  Node n;
  n.op = Op::kGelu;
  n.a = x;
  n.val = v(x).unaryExpr([](double t) { return gelu_fwd(t); });
  return push(std::move(n));
}

int Tape::logsumexp(int a) {
  require(v(a).rows() == 1, "logsumexp: row vector");
  Node n;
  n.op = Op::kLogSumExp;
  n.a = a;
  double m = v(a).maxCoeff();
  Eigen::RowVectorXd e = (v(a).array() - m).exp();
  double s = e.sum();
  n.aux = (e / s);  // softmax, cached for backward
  n.val.resize(1, 1);
  n.val(0, 0) = m + std::log(s);
  return push(std::move(n));
}

int Tape::pick(int a, Index r, Index c) {
  require(r < v(a).rows() && c < v(a).cols(), "pick: range");
  Node n;
  n.op = Op::kPick;
  n.a = a;
  n.i0 = r;
  n.i1 = c;
  n.val.resize(1, 1);
  n.val(0, 0) = v(a)(r, c);
  return push(std::move(n));
}

int Tape::sum_sq(int a) {
  Node n;
  n.op = Op::kSumSq;
  n.a = a;
  n.val.resize(1, 1);
  n.val(0, 0) = v(a).squaredNorm();
  return push(std::move(n));
}

const Mat& Tape::val(int node) const { return v(node); }

Mat& Tape::g(int i) {
  if (!touched_[i]) {
    grads_[i].setZero(v(i).rows(), v(i).cols());
    touched_[i] = 1;
  }
  return grads_[i];
}

bool Tape::has_grad(int node) const {
  return !touched_.empty() && touched_[node];
}

const Mat& Tape::grad(int node) const {
  if (!has_grad(node)) throw std::logic_error("grad: node not reached");
  return grads_[node];
}

void Tape::backward(int loss) {
  require(v(loss).rows() == 1 && v(loss).cols() == 1, "backward: loss must be 1x1");
  grads_.assign(nodes_.size(), Mat());
  touched_.assign(nodes_.size(), 0);
  slot_grads_.clear();
  g(loss).setOnes(1, 1);

  for (int i = loss; i >= 0; --i) {
    if (!touched_[i]) continue;
    const Node& n = nodes_[i];
    const Mat& dy = grads_[i];
    switch (n.op) {
      case Op::kInput:
        break;
      case Op::kInputCb:
        n.cb(dy);
        break;
      case Op::kParam: {
        auto it = slot_grads_.find(n.slot);
        if (it == slot_grads_.end())
          slot_grads_.emplace(n.slot, dy);
        else
          it->second += dy;
        break;
      }
      case Op::kMatmul:
        g(n.a).noalias() += dy * v(n.b).transpose();
        g(n.b).noalias() += v(n.a).transpose() * dy;
        break;
      case Op::kAdd:
        g(n.a) += dy;
        g(n.b) += dy;
        break;
      case Op::kSub:
        g(n.a) += dy;
        g(n.b) -= dy;
        break;
      case Op::kScale:
        g(n.a) += n.x * dy;
        break;
      case Op::kMulScalar:
        g(n.a) += v(n.b)(0, 0) * dy;
        g(n.b)(0, 0) += (v(n.a).array() * dy.array()).sum();
        break;
      case Op::kTranspose:
        g(n.a) += dy.transpose();
        break;
      case Op::kConcatRows:
        g(n.a) += dy.topRows(v(n.a).rows());
        g(n.b) += dy.bottomRows(v(n.b).rows());
        break;
      case Op::kSliceRows:
        g(n.a).middleRows(n.i0, n.i1) += dy;
        break;
      case Op::kSliceCols:
        g(n.a).middleCols(n.i0, n.i1) += dy;
        break;
      case Op::kAddRowsAt:
        g(n.a) += dy;
        g(n.b) += dy.middleRows(n.i0, v(n.b).rows());
        break;
      case Op::kAddBiasRow:
        g(n.a) += dy;
        g(n.b) += dy.colwise().sum();
        break;
      case Op::kSoftmaxRows:
      case Op::kCausalSoftmaxRows: {
        const Mat& y = n.val;
        Mat& da = g(n.a);
        for (Index r = 0; r < y.rows(); ++r) {
          double s = y.row(r).dot(dy.row(r));
          da.row(r).array() += y.row(r).array() * (dy.row(r).array() - s);
        }
        break;
      }
      case Op::kLayerNormRows: {
        const Mat& gain = v(n.b);
        Mat dxhat = dy.array().rowwise() * gain.row(0).array();
        Mat& dx = g(n.a);
        for (Index r = 0; r < dy.rows(); ++r) {
          double m1 = dxhat.row(r).mean();
          double m2 = (dxhat.row(r).array() * n.aux.row(r).array()).mean();
          dx.row(r).array() +=
              n.aux2(r, 0) * (dxhat.row(r).array() - m1 - n.aux.row(r).array() * m2);
        }
        g(n.b) += (dy.array() * n.aux.array()).colwise().sum().matrix();
        g(n.c) += dy.colwise().sum();
        break;
      }
      case Op::kGelu: {
        const Mat& x = v(n.a);
        g(n.a).array() += dy.array() * x.unaryExpr([](double t) { return gelu_bwd(t); }).array();
        break;
      }
      case Op::kLogSumExp:
        g(n.a) += dy(0, 0) * n.aux;
        break;
      case Op::kPick:
        g(n.a)(n.i0, n.i1) += dy(0, 0);
        break;
      case Op::kSumSq:
        g(n.a) += 2.0 * dy(0, 0) * v(n.a);
        break;
    }
  }
}

std::vector<std::pair<Index, Index>> Tape::shapes() const {
  std::vector<std::pair<Index, Index>> out;
  out.reserve(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    out.emplace_back(v(static_cast<int>(i)).rows(), v(static_cast<int>(i)).cols());
  return out;
}

}  // namespace gazesteer::ag
