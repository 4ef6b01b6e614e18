#include "harnet/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "harnet/error.hpp"

namespace harnet::nn {

namespace {

std::atomic<bool> g_checked{false};
thread_local bool t_grad_enabled = true;

template <class T>
void check_finite(std::span<const T> data, const char* op) {
  if (!g_checked.load(std::memory_order_relaxed)) return;
  for (T v : data) {
    if (!std::isfinite(v)) throw numerical_error(std::string("non-finite value produced by ") + op);
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

void set_checked_mode(bool enabled) { g_checked.store(enabled); }
bool checked_mode() { return g_checked.load(); }
bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

// -- BasicTensor -------------------------------------------------------------------

template <class T>
BasicTensor<T> BasicTensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  return from_data(shape, std::vector<T>(nn::numel(shape), value), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::from_data(const Shape& shape, std::vector<T> data, bool requires_grad) {
  for (int d : shape) {
    if (d < 1) throw data_error("tensor dimensions must be positive: " + shape_string(shape));
  }
  if (data.size() != nn::numel(shape)) {
    throw data_error("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_string(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl<T>>();
  impl->shape = shape;
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return BasicTensor(std::move(impl));
}

template <class T>
BasicTensor<T> BasicTensor<T>::from_op(const Shape& shape, std::vector<T> data,
                                       const std::vector<BasicTensor>& inputs, BackwardFn backward,
                                       const char* op_name) {
  check_finite<T>(data, op_name);
  auto out = from_data(shape, std::move(data), false);
  if (!t_grad_enabled) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const BasicTensor& t) { return t.requires_grad(); });
  if (!needs) return out;
  auto node = std::make_shared<detail::Node<T>>();
  for (const auto& in : inputs) node->inputs.push_back(in.impl_);
  node->backward = std::move(backward);
  out.impl_->requires_grad = true;
  out.impl_->node = std::move(node);
  return out;
}

template <class T>
const Shape& BasicTensor<T>::shape() const {
  return impl_->shape;
}

template <class T>
int BasicTensor<T>::dim(int axis) const {
  return impl_->shape.at(static_cast<std::size_t>(axis));
}

template <class T>
std::size_t BasicTensor<T>::numel() const {
  return impl_->data.size();
}

template <class T>
std::span<const T> BasicTensor<T>::data() const {
  return impl_->data;
}

template <class T>
std::span<T> BasicTensor<T>::mutable_data() {
  return impl_->data;
}

template <class T>
T BasicTensor<T>::item() const {
  if (impl_->data.size() != 1) throw data_error("item() on tensor of shape " + shape_string(impl_->shape));
  return impl_->data[0];
}

template <class T>
bool BasicTensor<T>::requires_grad() const {
  return impl_ && impl_->requires_grad;
}

template <class T>
bool BasicTensor<T>::has_grad() const {
  return impl_ && !impl_->grad.empty();
}

template <class T>
std::span<const T> BasicTensor<T>::grad() const {
  return impl_->grad;
}

template <class T>
std::span<T> BasicTensor<T>::grad_accumulator() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <class T>
void BasicTensor<T>::zero_grad() {
  if (impl_) impl_->grad.clear();
}

template <class T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return from_data(impl_->shape, impl_->data, false);
}

namespace {

template <class T>
std::span<T> grad_of(const std::shared_ptr<detail::TensorImpl<T>>& impl) {
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), T(0));
  return impl->grad;
}

template <class T>
void require_rank4(const BasicTensor<T>& t, const char* op, const char* what) {
  if (t.shape().size() != 4) {
    throw data_error(std::string(op) + ": " + what + " must be NCHW, got " + shape_string(t.shape()));
  }
}

// out[x] += w0 * in[x - 1] + w1 * in[x] + w2 * in[x + 1] with zero padding.
template <class T>
inline void row_taps(T* out, const T* in, int width, T w0, T w1, T w2) {
  if (width == 1) {
    out[0] += w1 * in[0];
    return;
  }
  out[0] += w1 * in[0] + w2 * in[1];
  for (int x = 1; x < width - 1; ++x) out[x] += w0 * in[x - 1] + w1 * in[x] + w2 * in[x + 1];
  out[width - 1] += w0 * in[width - 2] + w1 * in[width - 1];
}

// Sum over x of g[x] * in[x + dx] for dx in {-1, 0, 1}, with zero padding.
template <class T>
inline void row_correlate(const T* g, const T* in, int width, T& s0, T& s1, T& s2) {
  T a0 = 0, a1 = 0, a2 = 0;
  for (int x = 0; x < width; ++x) a1 += g[x] * in[x];
  for (int x = 1; x < width; ++x) a0 += g[x] * in[x - 1];
  for (int x = 0; x < width - 1; ++x) a2 += g[x] * in[x + 1];
  s0 += a0;
  s1 += a1;
  s2 += a2;
}

}  // namespace

// -- operators ----------------------------------------------------------------------

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weights, const BasicTensor<T>& bias) {
  require_rank4(x, "conv2d", "input");
  require_rank4(weights, "conv2d", "weights");
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = weights.dim(0);
  if (weights.dim(1) != cin || weights.dim(2) != 3 || weights.dim(3) != 3) {
    throw data_error("conv2d: input " + shape_string(x.shape()) + " incompatible with weights " +
                     shape_string(weights.shape()));
  }
  if (bias.numel() != static_cast<std::size_t>(cout)) {
    throw data_error("conv2d: bias " + shape_string(bias.shape()) + " does not match " + std::to_string(cout) +
                     " output channels");
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<T> out(static_cast<std::size_t>(n) * cout * plane);
  const T* xd = x.data().data();
  const T* wd = weights.data().data();
  const T* bd = bias.data().data();

  for (int b = 0; b < n; ++b) {
    for (int oc = 0; oc < cout; ++oc) {
      T* op = out.data() + (static_cast<std::size_t>(b) * cout + oc) * plane;
      std::fill(op, op + plane, bd[oc]);
      for (int ic = 0; ic < cin; ++ic) {
        const T* ip = xd + (static_cast<std::size_t>(b) * cin + ic) * plane;
        const T* k = wd + (static_cast<std::size_t>(oc) * cin + ic) * 9;
        for (int y = 0; y < h; ++y) {
          T* orow = op + static_cast<std::size_t>(y) * w;
          if (y > 0) row_taps(orow, ip + static_cast<std::size_t>(y - 1) * w, w, k[0], k[1], k[2]);
          row_taps(orow, ip + static_cast<std::size_t>(y) * w, w, k[3], k[4], k[5]);
          if (y + 1 < h) row_taps(orow, ip + static_cast<std::size_t>(y + 1) * w, w, k[6], k[7], k[8]);
        }
      }
    }
  }

  auto xi = x.impl();
  auto wi = weights.impl();
  auto bi = bias.impl();
  auto backward = [xi, wi, bi, n, cin, cout, h, w, plane](std::span<const T> gout) {
    const T* g = gout.data();
    if (bi->requires_grad) {
      auto gb = grad_of(bi);
      for (int b = 0; b < n; ++b) {
        for (int oc = 0; oc < cout; ++oc) {
          const T* gp = g + (static_cast<std::size_t>(b) * cout + oc) * plane;
          T s = 0;
          for (std::size_t i = 0; i < plane; ++i) s += gp[i];
          gb[oc] += s;
        }
      }
    }
    const bool need_x = xi->requires_grad;
    const bool need_w = wi->requires_grad;
    T* gx = need_x ? grad_of(xi).data() : nullptr;
    T* gw = need_w ? grad_of(wi).data() : nullptr;
    const T* xd = xi->data.data();
    const T* wd = wi->data.data();
    for (int b = 0; b < n; ++b) {
      for (int oc = 0; oc < cout; ++oc) {
        const T* gp = g + (static_cast<std::size_t>(b) * cout + oc) * plane;
        for (int ic = 0; ic < cin; ++ic) {
          const std::size_t in_off = (static_cast<std::size_t>(b) * cin + ic) * plane;
          const std::size_t k_off = (static_cast<std::size_t>(oc) * cin + ic) * 9;
          if (need_x) {
            // dX[y + dy][x + dx] += w[dy][dx] * dOut[y][x]; the row taps are mirrored.
            const T* k = wd + k_off;
            T* gi = gx + in_off;
            for (int y = 0; y < h; ++y) {
              const T* grow = gp + static_cast<std::size_t>(y) * w;
              if (y > 0) row_taps(gi + static_cast<std::size_t>(y - 1) * w, grow, w, k[2], k[1], k[0]);
              row_taps(gi + static_cast<std::size_t>(y) * w, grow, w, k[5], k[4], k[3]);
              if (y + 1 < h) row_taps(gi + static_cast<std::size_t>(y + 1) * w, grow, w, k[8], k[7], k[6]);
            }
          }
          if (need_w) {
            const T* ip = xd + in_off;
            T* kg = gw + k_off;
            for (int y = 0; y < h; ++y) {
              const T* grow = gp + static_cast<std::size_t>(y) * w;
              if (y > 0) row_correlate(grow, ip + static_cast<std::size_t>(y - 1) * w, w, kg[0], kg[1], kg[2]);
              row_correlate(grow, ip + static_cast<std::size_t>(y) * w, w, kg[3], kg[4], kg[5]);
              if (y + 1 < h) row_correlate(grow, ip + static_cast<std::size_t>(y + 1) * w, w, kg[6], kg[7], kg[8]);
            }
          }
        }
      }
    }
  };
  return BasicTensor<T>::from_op({n, cout, h, w}, std::move(out), {x, weights, bias}, std::move(backward), "conv2d");
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v = v > T(0) ? v : T(0);
  auto xi = x.impl();
  auto backward = [xi](std::span<const T> g) {
    auto gx = grad_of(xi);
    const auto& xd = xi->data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xd[i] > T(0)) gx[i] += g[i];
    }
  };
  return BasicTensor<T>::from_op(x.shape(), std::move(out), {x}, std::move(backward), "relu");
}

template <class T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank4(a, "concat_channels", "first operand");
  require_rank4(b, "concat_channels", "second operand");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw data_error("concat_channels: " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                     " differ outside the channel axis");
  }
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  const std::size_t sa = ca * plane, sb = cb * plane;
  std::vector<T> out(static_cast<std::size_t>(n) * (sa + sb));
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * sa, sa, out.data() + i * (sa + sb));
    std::copy_n(b.data().data() + i * sb, sb, out.data() + i * (sa + sb) + sa);
  }
  auto ai = a.impl();
  auto bi = b.impl();
  auto backward = [ai, bi, n, sa, sb](std::span<const T> g) {
    if (ai->requires_grad) {
      auto ga = grad_of(ai);
      for (int i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < sa; ++k) ga[i * sa + k] += g[i * (sa + sb) + k];
      }
    }
    if (bi->requires_grad) {
      auto gb = grad_of(bi);
      for (int i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < sb; ++k) gb[i * sb + k] += g[i * (sa + sb) + sa + k];
      }
    }
  };
  return BasicTensor<T>::from_op({n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b}, std::move(backward),
                                 "concat_channels");
}

template <class T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, int start, int count) {
  require_rank4(x, "slice_channels", "input");
  const int n = x.dim(0), c = x.dim(1);
  if (start < 0 || count < 1 || start + count > c) {
    throw data_error("slice_channels: range [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") outside " + std::to_string(c) + " channels");
  }
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<T> out(static_cast<std::size_t>(n) * count * plane);
  for (int i = 0; i < n; ++i) {
    std::copy_n(x.data().data() + (static_cast<std::size_t>(i) * c + start) * plane, count * plane,
                out.data() + static_cast<std::size_t>(i) * count * plane);
  }
  auto xi = x.impl();
  auto backward = [xi, n, c, start, count, plane](std::span<const T> g) {
    auto gx = grad_of(xi);
    for (int i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < count * plane; ++k) {
        gx[(static_cast<std::size_t>(i) * c + start) * plane + k] += g[static_cast<std::size_t>(i) * count * plane + k];
      }
    }
  };
  return BasicTensor<T>::from_op({n, count, x.dim(2), x.dim(3)}, std::move(out), {x}, std::move(backward),
                                 "slice_channels");
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw data_error("add: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
  }
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto ai = a.impl();
  auto bi = b.impl();
  auto backward = [ai, bi](std::span<const T> g) {
    if (ai->requires_grad) {
      auto ga = grad_of(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bi->requires_grad) {
      auto gb = grad_of(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  };
  return BasicTensor<T>::from_op(a.shape(), std::move(out), {a, b}, std::move(backward), "add");
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw data_error("mul: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
  }
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl();
  auto bi = b.impl();
  auto backward = [ai, bi](std::span<const T> g) {
    if (ai->requires_grad) {
      auto ga = grad_of(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      auto gb = grad_of(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
    }
  };
  return BasicTensor<T>::from_op(a.shape(), std::move(out), {a, b}, std::move(backward), "mul");
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  auto xi = x.impl();
  auto backward = [xi](std::span<const T> g) {
    auto gx = grad_of(xi);
    for (T& v : gx) v += g[0];
  };
  return BasicTensor<T>::from_op({1}, {s}, {x}, std::move(backward), "sum");
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  auto xi = x.impl();
  auto backward = [xi, inv](std::span<const T> g) {
    auto gx = grad_of(xi);
    for (T& v : gx) v += g[0] * inv;
  };
  return BasicTensor<T>::from_op({1}, {s * inv}, {x}, std::move(backward), "mean");
}

template <class T>
void backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw data_error("backward requires a single-element loss, got " +
                     (loss.defined() ? shape_string(loss.shape()) : std::string("undefined tensor")));
  }
  using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;
  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<ImplPtr> order;
  std::unordered_set<const detail::TensorImpl<T>*> seen;
  std::vector<std::pair<ImplPtr, std::size_t>> stack;
  stack.emplace_back(loss.impl(), 0);
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* inputs = node->node ? &node->node->inputs : nullptr;
    if (inputs != nullptr && next < inputs->size()) {
      ImplPtr child = (*inputs)[next++];
      if (child->requires_grad && seen.insert(child.get()).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  for (const auto& impl : order) {
    if (impl->node) impl->grad.assign(impl->data.size(), T(0));
  }
  grad_of(loss.impl())[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto& impl = *it;
    if (impl->node) impl->node->backward(impl->grad);
  }
}

// -- optimization --------------------------------------------------------------------

template <class T>
void adam_step(std::span<BasicTensor<T>> params, AdamState<T>& state) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), T(0));
      state.second_moment.emplace_back(p.numel(), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) throw data_error("adam_step: parameter count changed");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != p.numel()) throw data_error("adam_step: moment shape mismatch");
    auto data = p.mutable_data();
    const bool has = p.has_grad();
    const auto g = p.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double gi = has ? static_cast<double>(g[i]) : 0.0;
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      data[i] = static_cast<T>(data[i] - state.lr * mhat / (std::sqrt(vhat) + state.epsilon));
    }
  }
}

PlateauSchedule::PlateauSchedule() : best_loss(std::numeric_limits<double>::infinity()) {}

PlateauSchedule::PlateauSchedule(double initial_lr) : PlateauSchedule() { lr = initial_lr; }

ScheduleDecision PlateauSchedule::on_epoch_end(double epoch_loss) {
  if (!std::isfinite(epoch_loss)) throw numerical_error("non-finite epoch loss");
  ScheduleDecision d;
  history.push_back(epoch_loss);
  if (epoch_loss < best_loss) {
    best_loss = epoch_loss;
    epochs_since_improvement = 0;
  } else {
    ++epochs_since_improvement;
  }
  if (epochs_since_improvement >= patience_epochs) {
    if (lr > min_lr) {
      lr = std::max(lr * factor, min_lr);
      d.reduced = true;
    }
    epochs_since_improvement = 0;
  }
  const std::size_t window = static_cast<std::size_t>(stop_patience) + 1;
  if (!stopped && history.size() >= window) {
    const auto first = history.end() - static_cast<std::ptrdiff_t>(window);
    const auto [lo, hi] = std::minmax_element(first, history.end());
    if (*hi - *lo <= stop_delta) stopped = true;
  }
  d.lr = lr;
  d.stop = stopped;
  return d;
}

// -- instantiations ----------------------------------------------------------------------

#define HARNET_INSTANTIATE(T)                                                                       \
  template class BasicTensor<T>;                                                                    \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                              \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, int, int);                          \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                        \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                        \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                               \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                              \
  template void backward(const BasicTensor<T>&);                                                    \
  template void adam_step(std::span<BasicTensor<T>>, AdamState<T>&);

HARNET_INSTANTIATE(float)
HARNET_INSTANTIATE(double)

#undef HARNET_INSTANTIATE

}  // namespace harnet::nn
