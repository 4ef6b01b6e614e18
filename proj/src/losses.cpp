#include "harnet/losses.hpp"

#include "harnet/error.hpp"

namespace harnet {

using nn::BasicTensor;

namespace {

template <class T>
void require_same_shape(const BasicTensor<T>& x, const BasicTensor<T>& y, const char* op) {
  if (x.shape() != y.shape()) {
    throw data_error(std::string(op) + ": shapes " + nn::shape_string(x.shape()) + " and " +
                     nn::shape_string(y.shape()) + " differ");
  }
}

struct SampleStats {
  double mx, my, vx, vy, cxy;
};

}  // namespace

template <class T>
BasicTensor<T> mse_loss(const BasicTensor<T>& x, const BasicTensor<T>& y) {
  require_same_shape(x, y, "mse");
  const auto xd = x.data();
  const auto yd = y.data();
  const double n = static_cast<double>(xd.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const double d = static_cast<double>(xd[i]) - static_cast<double>(yd[i]);
    acc += d * d;
  }
  auto xi = x.impl();
  auto yi = y.impl();
  auto backward = [xi, yi, n](std::span<const T> g) {
    const double scale = 2.0 * static_cast<double>(g[0]) / n;
    if (xi->requires_grad) {
      if (xi->grad.empty()) xi->grad.assign(xi->data.size(), T(0));
      for (std::size_t i = 0; i < xi->data.size(); ++i) {
        xi->grad[i] += static_cast<T>(scale * (static_cast<double>(xi->data[i]) - yi->data[i]));
      }
    }
    if (yi->requires_grad) {
      if (yi->grad.empty()) yi->grad.assign(yi->data.size(), T(0));
      for (std::size_t i = 0; i < yi->data.size(); ++i) {
        yi->grad[i] -= static_cast<T>(scale * (static_cast<double>(xi->data[i]) - yi->data[i]));
      }
    }
  };
  return BasicTensor<T>::from_op({1}, {static_cast<T>(acc / n)}, {x, y}, std::move(backward), "mse");
}

template <class T>
BasicTensor<T> ssim(const BasicTensor<T>& x, const BasicTensor<T>& y, const SsimConstants& constants) {
  require_same_shape(x, y, "ssim");
  const bool batched = x.shape().size() == 4;
  const std::size_t samples = batched ? static_cast<std::size_t>(x.dim(0)) : 1;
  const std::size_t len = x.numel() / samples;
  const double c1 = constants.c1;
  const double c2 = constants.c2;

  std::vector<SampleStats> stats(samples);
  double total = 0.0;
  const auto xd = x.data();
  const auto yd = y.data();
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t off = s * len;
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < len; ++i) {
      sx += xd[off + i];
      sy += yd[off + i];
    }
    const double mx = sx / len, my = sy / len;
    double vx = 0, vy = 0, cxy = 0;
    for (std::size_t i = 0; i < len; ++i) {
      const double dx = xd[off + i] - mx;
      const double dy = yd[off + i] - my;
      vx += dx * dx;
      vy += dy * dy;
      cxy += dx * dy;
    }
    stats[s] = {mx, my, vx / len, vy / len, cxy / len};
    const auto& st = stats[s];
    const double lum = (2 * st.mx * st.my + c1) / (st.mx * st.mx + st.my * st.my + c1);
    const double con = (2 * st.cxy + c2) / (st.vx + st.vy + c2);
    total += lum * con;
  }
  const double value = total / samples;

  auto xi = x.impl();
  auto yi = y.impl();
  auto backward = [xi, yi, stats, samples, len, c1, c2](std::span<const T> g) {
    const double upstream = static_cast<double>(g[0]) / samples;
    // d/dx_i for one sample; the y-derivative follows by swapping roles.
    auto accumulate = [&](const std::shared_ptr<nn::detail::TensorImpl<T>>& self,
                          const std::shared_ptr<nn::detail::TensorImpl<T>>& other, bool self_is_x) {
      if (!self->requires_grad) return;
      if (self->grad.empty()) self->grad.assign(self->data.size(), T(0));
      for (std::size_t s = 0; s < samples; ++s) {
        const auto& st = stats[s];
        const double ms = self_is_x ? st.mx : st.my;
        const double mo = self_is_x ? st.my : st.mx;
        const double a = 2 * st.mx * st.my + c1;
        const double b = st.mx * st.mx + st.my * st.my + c1;
        const double c = 2 * st.cxy + c2;
        const double d = st.vx + st.vy + c2;
        const double lum = a / b;
        const double con = c / d;
        // Luminance term depends on x_i only through the mean.
        const double dlum = (2 * mo * b - a * 2 * ms) / (b * b) / static_cast<double>(len);
        const std::size_t off = s * len;
        for (std::size_t i = 0; i < len; ++i) {
          const double ds = static_cast<double>(self->data[off + i]) - ms;
          const double dov = static_cast<double>(other->data[off + i]) - mo;
          const double dcon = (2 * dov * d - c * 2 * ds) / (d * d) / static_cast<double>(len);
          self->grad[off + i] += static_cast<T>(upstream * (dlum * con + lum * dcon));
        }
      }
    };
    accumulate(xi, yi, true);
    accumulate(yi, xi, false);
  };
  return BasicTensor<T>::from_op({1}, {static_cast<T>(value)}, {x, y}, std::move(backward), "ssim");
}

template <class T>
CombinedLoss<T> combined_loss(const BasicTensor<T>& x, const BasicTensor<T>& y, const SsimConstants& constants) {
  auto m = mse_loss(x, y);
  auto s = ssim(x, y, constants);
  const double mv = static_cast<double>(m.item());
  const double sv = static_cast<double>(s.item());
  auto mi = m.impl();
  auto si = s.impl();
  auto backward = [mi, si](std::span<const T> g) {
    if (mi->requires_grad) {
      if (mi->grad.empty()) mi->grad.assign(1, T(0));
      mi->grad[0] += g[0];
    }
    if (si->requires_grad) {
      if (si->grad.empty()) si->grad.assign(1, T(0));
      si->grad[0] -= g[0];
    }
  };
  const double total = mv + (1.0 - sv);
  auto t = BasicTensor<T>::from_op({1}, {static_cast<T>(total)}, {m, s}, std::move(backward), "combined_loss");
  return {t, {mv, sv, total}};
}

template BasicTensor<float> mse_loss(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> mse_loss(const BasicTensor<double>&, const BasicTensor<double>&);
template BasicTensor<float> ssim(const BasicTensor<float>&, const BasicTensor<float>&, const SsimConstants&);
template BasicTensor<double> ssim(const BasicTensor<double>&, const BasicTensor<double>&, const SsimConstants&);
template CombinedLoss<float> combined_loss(const BasicTensor<float>&, const BasicTensor<float>&,
                                           const SsimConstants&);
template CombinedLoss<double> combined_loss(const BasicTensor<double>&, const BasicTensor<double>&,
                                            const SsimConstants&);

}  // namespace harnet
