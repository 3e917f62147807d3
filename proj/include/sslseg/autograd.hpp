#pragma once

// Minimal tape-free reverse-mode autodiff over dense double tensors. Each
// forward call builds a fresh graph of shared nodes; backward() walks it in
// reverse topological order. Only the operators the UNet family needs are
// provided.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace sslseg::ag {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double v);
  // Same data, new shape of equal element count.
  Tensor reshaped(std::vector<int> shape) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily by grad_buffer()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents that require it.
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer();
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
// Leaf whose gradient is accumulated by backward().
Var leaf(Tensor value, bool requires_grad = true);
// Generic operator node; requires_grad when any parent does.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// Seeds d(root)/d(root) = 1 (root must hold one element) and propagates.
void backward(const Var& root);

// x [B, Ci, H, W], w [Co, Ci, k, k], optional bias [Co]; stride 1, zero
// padding `pad` on each side.
Var conv2d(const Var& x, const Var& w, const Var& bias, int pad);

// Running statistics of a batch-normalization layer.
struct BatchNormStats {
  Tensor mean;
  Tensor var;
};

enum class BnMode {
  train,  // batch statistics; running statistics updated
  infer   // running statistics
};

// Per-channel normalization of x [B, C] or [B, C, H, W].
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, BnMode mode,
               double momentum = 0.1, double eps = 1e-5);

Var relu(const Var& x);
// 2x2 max pool, stride 2; H and W must be even.
Var max_pool2(const Var& x);
// Nearest-neighbour x2 upsampling.
Var upsample2(const Var& x);
// Concatenation along the channel axis of [B, C, H, W] tensors.
Var concat_channels(const Var& a, const Var& b);
// [B, ...] -> [B, prod(...)]
Var flatten(const Var& x);
// x [B, I], w [O, I], optional bias [O] -> [B, O]
Var linear(const Var& x, const Var& w, const Var& bias);

}  // namespace sslseg::ag
