#ifndef PATCHRL_NN_HPP
#define PATCHRL_NN_HPP

#include <Eigen/Core>
#include <functional>
#include <stdexcept>
#include <vector>

namespace patchrl::nn {

using Arr = Eigen::ArrayXd;

/// Tensor shape in CHW order. Flat vectors use {n, 1, 1}.
struct Shape {
  int c = 1;
  int h = 1;
  int w = 1;
  int size() const { return c * h * w; }
  int spatial() const { return h * w; }
  bool operator==(const Shape& o) const { return c == o.c && h == o.h && w == o.w; }
};

/// Small reverse-mode autodiff tape over flat double tensors.
///
/// A Tape is built per forward pass: leaves enter via input()/constant(),
/// ops append nodes in SSA order, and backward() runs the recorded closures
/// in reverse. Parameters live outside the tape (plain Arr vectors owned by
/// the models) and are bound as inputs each pass, so the tape itself is
/// cheap to discard.
class Tape {
 public:
  struct Node {
    Arr value;
    Arr grad;
    Shape shape;
    bool needs_grad = false;
    std::function<void(Tape&, const Node&)> backward;
  };

  int input(Arr value, Shape shape, bool needs_grad);
  int constant(Arr value, Shape shape) { return input(std::move(value), shape, false); }
  int scalar_constant(double v);

  const Arr& value(int id) const { return nodes_[id].value; }
  const Arr& grad(int id) const { return nodes_[id].grad; }
  Shape shape(int id) const { return nodes_[id].shape; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  // --- layers ---
  /// weight shape {out, in, 1}, bias shape {out, 1, 1}; x flat {in,1,1}.
  int dense(int x, int weight, int bias);
  /// 3x3 convolution, stride 1, zero padding 1. weight {cout, cin, 9},
  /// bias {cout,1,1}.
  int conv3x3(int x, int weight, int bias);
  int relu(int x);
  int tanh_act(int x);
  /// 2x2 average pooling, stride 2, floor dims.
  int avgpool2(int x);
  /// x2 bilinear upsampling (align-corners-false).
  int upsample2(int x);
  int concat_channels(int a, int b);
  int reshape(int x, Shape shape);

  // --- reductions / distributions ---
  /// softmax over the h*w positions of each channel independently.
  int softmax_spatial(int x);
  /// softmax over the whole (flat) tensor.
  int softmax_flat(int x);
  /// per-channel mean -> {c,1,1}.
  int channel_means(int x);
  /// mean across channels -> {1,h,w}.
  int mean_channels(int x);
  int sum(int x);
  int sum_squares(int x);
  int mean_all(int x);

  // --- elementwise / scalar algebra ---
  int add(int a, int b);
  int mul(int a, int b);
  int scale(int x, double k);
  int add_scalar(int x, double k);
  int mul_const(int x, const Arr& k);
  int log_elem(int x);
  /// y = x / s where s is a scalar node.
  int div_by_scalar(int x, int s);
  /// scalar pick: y = x[index].
  int gather(int x, int index);
  /// y = bias + sum_i coeffs[i] * xs[i]   (xs are scalar nodes)
  int affine_combine(const std::vector<int>& xs, const std::vector<double>& coeffs,
                     double bias);

  // --- fused heads ---
  /// Sum over i of log N(a[i]; mu[i], sigma^2), constants included.
  int gaussian_logpdf_sum(int mu, const Arr& a, double sigma);
  /// Cosine similarity of x against a constant unit vector.
  int cosine_vs_unit(int x, const Arr& unit);
  /// Cosine of x against every row of a {k, d, 1} parameter matrix.
  int cosine_rows(int x, int rows);
  /// Softmax cross-entropy of a flat logits vector against a class index.
  int cross_entropy_logits(int logits, int target);

  /// Runs reverse-mode accumulation from a scalar root node.
  void backward(int root);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  friend struct TapeOps;
  int emit(Arr value, Shape shape, bool needs_grad,
           std::function<void(Tape&, const Node&)> bw);
  Arr& grad_buf(int id);

  std::vector<Node> nodes_;
};

}  // namespace patchrl::nn

#endif  // PATCHRL_NN_HPP
