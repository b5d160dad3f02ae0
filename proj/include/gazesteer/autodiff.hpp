#pragma once

#include <functional>
#include <map>
#include <vector>

#include "gazesteer/types.hpp"

namespace gazesteer::ag {

// Reverse-mode tape over dense double matrices. One tape per training item;
// build the forward graph, call backward(loss), read slot_grads(). Frozen
// weights enter as input_ref leaves (no copy, no gradient); trainable weights
// enter as param leaves keyed by their TensorStore slot.
class Tape {
 public:
  // -- leaves ---------------------------------------------------------------
  int input(Mat v);
  int input_ref(const Mat* v);
  // Constant with a gradient side channel: pullback receives d(loss)/d(value).
  // Used where a quantity is computed off-tape but depends on a scalar we
  // still want to train (e.g. a heatmap's decay constant).
  int input_cb(Mat v, std::function<void(const Mat&)> pullback);
  int param(int slot, const Mat* v);

  // -- ops ------------------------------------------------------------------
  int matmul(int a, int b);
  int add(int a, int b);
  int sub(int a, int b);
  int scale(int a, double c);
  int mul_scalar(int a, int s);  // s is a 1x1 node
  int transpose(int a);
  int concat_rows(int a, int b);
  int slice_rows(int a, Index r0, Index n);
  int slice_cols(int a, Index c0, Index n);
  int add_rows_at(int a, int b, Index r0);  // a with b added into rows [r0, r0+b.rows)
  int add_bias_row(int a, int bias);        // bias 1xN broadcast over rows
  int softmax_rows(int a);
  int causal_softmax_rows(int a);  // square scores; row i attends to cols <= i
  int layernorm_rows(int x, int g, int b);  // g, b are 1xN nodes
  int gelu(int x);
  int logsumexp(int a);            // 1xN -> 1x1
  int pick(int a, Index r, Index c);  // -> 1x1
  int sum_sq(int a);               // -> 1x1

  // -- evaluation -----------------------------------------------------------
  const Mat& val(int node) const;
  void backward(int loss);
  bool has_grad(int node) const;
  const Mat& grad(int node) const;
  const std::map<int, Mat>& slot_grads() const { return slot_grads_; }

  Index size() const { return static_cast<Index>(nodes_.size()); }
  // Shape of every node ever materialized; lets tests assert that no
  // intermediate of a given size exists anywhere in the graph.
  std::vector<std::pair<Index, Index>> shapes() const;

 private:
  enum class Op {
    kInput, kInputCb, kParam,
    kMatmul, kAdd, kSub, kScale, kMulScalar, kTranspose,
    kConcatRows, kSliceRows, kSliceCols, kAddRowsAt, kAddBiasRow,
    kSoftmaxRows, kCausalSoftmaxRows, kLayerNormRows, kGelu,
    kLogSumExp, kPick, kSumSq,
  };

  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    Index i0 = 0, i1 = 0;
    double x = 0.0;
    Mat val;                   // owned value (unused when ref set)
    const Mat* ref = nullptr;  // external value (input_ref / param)
    Mat aux, aux2;             // op caches (softmax output, layernorm xhat, ...)
    std::function<void(const Mat&)> cb;
    int slot = -1;
  };

  int push(Node n);
  const Mat& v(int i) const { return nodes_[i].ref ? *nodes_[i].ref : nodes_[i].val; }
  Mat& g(int i);  // gradient accumulator, zero-initialized on first touch

  std::vector<Node> nodes_;
  std::vector<Mat> grads_;
  std::vector<char> touched_;
  std::map<int, Mat> slot_grads_;
};

}  // namespace gazesteer::ag
