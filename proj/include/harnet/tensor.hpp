#pragma once

// Minimal reverse-mode automatic differentiation over dense NCHW tensors.
//
// The engine is templated on the scalar so that training runs in float while
// gradient checks re-run the same graph in double. Only the operators the
// reconstruction network and its losses need are provided.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace harnet::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// When enabled, every op verifies its output is finite and throws a
/// numerical error otherwise. Off by default.
void set_checked_mode(bool enabled);
bool checked_mode();

/// True unless a NoGradGuard is alive on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
class BasicTensor;

namespace detail {

template <class T>
struct TensorImpl;

template <class T>
struct Node {
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  // Receives the output gradient; accumulates into the inputs' gradients.
  std::function<void(std::span<const T>)> backward;
};

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;
};

}  // namespace detail

template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using BackwardFn = std::function<void(std::span<const T>)>;

  BasicTensor() = default;

  static BasicTensor zeros(const Shape& shape, bool requires_grad = false);
  static BasicTensor full(const Shape& shape, T value, bool requires_grad = false);
  static BasicTensor from_data(const Shape& shape, std::vector<T> data, bool requires_grad = false);

  /// Result of a differentiable op. `backward` is recorded only when grad
  /// mode is on and at least one input requires a gradient.
  static BasicTensor from_op(const Shape& shape, std::vector<T> data,
                             const std::vector<BasicTensor>& inputs, BackwardFn backward,
                             const char* op_name);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int dim(int axis) const;
  std::size_t numel() const;

  std::span<const T> data() const;
  /// Direct write access, for optimizers and weight loading. Not recorded.
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const T> grad() const;
  /// Gradient buffer, allocated as zeros on first use.
  std::span<T> grad_accumulator();
  void zero_grad();

  /// Copy of the data with no history.
  BasicTensor detach() const;

  bool same_object(const BasicTensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }

 private:
  explicit BasicTensor(std::shared_ptr<detail::TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Cast data between precisions; the result is a fresh leaf.
template <class To, class From>
BasicTensor<To> cast(const BasicTensor<From>& t, bool requires_grad = false) {
  std::vector<To> data(t.data().begin(), t.data().end());
  return BasicTensor<To>::from_data(t.shape(), std::move(data), requires_grad);
}

// -- operators ------------------------------------------------------------------

/// 3x3 convolution, stride 1, zero padding 1.
/// x: (N, Cin, H, W); weights: (Cout, Cin, 3, 3); bias: (Cout).
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weights, const BasicTensor<T>& bias);

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x);

/// Channel concatenation of (N, Ca, H, W) and (N, Cb, H, W); a's channels first.
template <class T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Channels [start, start + count) of an NCHW tensor.
template <class T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, int start, int count);

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Elementwise product.
template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Sum of all elements, shape {1}.
template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x);

/// Mean of all elements, shape {1}.
template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x);

/// Reverse-mode sweep from a single-element tensor. Leaf gradients accumulate
/// across calls; intermediate gradients are recomputed each call.
template <class T>
void backward(const BasicTensor<T>& loss);

// -- optimization -----------------------------------------------------------------

template <class T>
struct AdamState {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long long step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient (a missing gradient counts as zero).
template <class T>
void adam_step(std::span<BasicTensor<T>> params, AdamState<T>& state);

struct ScheduleDecision {
  double lr = 0.0;
  bool stop = false;
  bool reduced = false;
};

/**
 * Plateau learning-rate schedule with loss-stagnation stopping.
 *
 * After `patience_epochs` consecutive epochs without a strict improvement on
 * the best loss, lr becomes max(lr * factor, min_lr), provided lr > min_lr.
 * Training stops once the last `stop_patience` epoch-to-epoch changes all stay
 * within `stop_delta` (max - min over the last stop_patience + 1 losses).
 */
struct PlateauSchedule {
  double lr = 0.01;
  double factor = 0.1;
  int patience_epochs = 2;
  double min_lr = 1e-6;
  double stop_delta = 1e-5;
  int stop_patience = 3;

  double best_loss;
  int epochs_since_improvement = 0;
  bool stopped = false;
  std::vector<double> history;

  PlateauSchedule();
  explicit PlateauSchedule(double initial_lr);

  ScheduleDecision on_epoch_end(double epoch_loss);
};

}  // namespace harnet::nn
