#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace gazesteer {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Mat = MatrixX<double>;
using Vec = VectorX<double>;
using Index = Eigen::Index;

// Named parameter slot. Frozen slots still live here so checkpoints and
// checksums see one flat, ordered view of the model.
struct Tensor {
  std::string name;
  Mat value;
  bool trainable = false;  // eligible for gradient updates at some stage
  bool decay = false;      // weight decay applies (matrices only)
};

class TensorStore {
 public:
  int add(std::string name, Mat value, bool trainable, bool decay);
  int find(const std::string& name) const;           // -1 if absent
  Tensor& at(int idx) { return tensors_[idx]; }
  const Tensor& at(int idx) const { return tensors_[idx]; }
  Tensor& by_name(const std::string& name);
  const Tensor& by_name(const std::string& name) const;
  Index size() const { return static_cast<Index>(tensors_.size()); }
  const std::vector<Tensor>& all() const { return tensors_; }
  std::vector<Tensor>& all() { return tensors_; }

 private:
  std::vector<Tensor> tensors_;
};

}  // namespace gazesteer
