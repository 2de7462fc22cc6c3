#include "ynet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <memory>
#include <string>

namespace ynet {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require_rank4(const Shape& s, const char* op) {
  if (s.size() != 4) throw ShapeError(std::string(op) + ": expected NCHW tensor, got " + to_string(s));
}

// Unfolds one [C,H,W] image into a [C*k*k, H*W] patch matrix (zero padding k/2).
template <typename T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto h = static_cast<std::ptrdiff_t>(H);
  const auto w = static_cast<std::ptrdiff_t>(W);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * H * W;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(w, w - dx);
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          T* out = row + y * w;
          const std::ptrdiff_t sy = y + static_cast<std::ptrdiff_t>(ky) - pad;
          if (sy < 0 || sy >= h) {
            std::fill(out, out + w, T{0});
            continue;
          }
          const T* src = x + (c * H + static_cast<std::size_t>(sy)) * W;
          std::fill(out, out + x0, T{0});
          std::memcpy(out + x0, src + x0 + dx, static_cast<std::size_t>(x1 - x0) * sizeof(T));
          std::fill(out + x1, out + w, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t C, std::size_t H, std::size_t W, std::size_t k, T* x) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto h = static_cast<std::ptrdiff_t>(H);
  const auto w = static_cast<std::ptrdiff_t>(W);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * H * W;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(w, w - dx);
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = y + static_cast<std::ptrdiff_t>(ky) - pad;
          if (sy < 0 || sy >= h) continue;
          const T* in = row + y * w;
          T* dst = x + (c * H + static_cast<std::size_t>(sy)) * W;
          for (std::ptrdiff_t xx = x0; xx < x1; ++xx) dst[xx + dx] += in[xx];
        }
      }
    }
  }
}

template <typename T>
void accumulate(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  T* d = dst.ptr();
  const T* s = src.ptr();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

template <typename T>
Var conv2d(BasicTape<T>& tape, Var input, Var kernel, Var bias) {
  const auto& x = tape.value(input);
  const auto& w = tape.value(kernel);
  const auto& b = tape.value(bias);
  require_rank4(x.shape(), "conv2d input");
  require_rank4(w.shape(), "conv2d kernel");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = w.dim(0), k = w.dim(2);
  if (w.dim(1) != C || w.dim(2) != w.dim(3) || (k != 1 && k != 3)) {
    throw ShapeError("conv2d: kernel " + to_string(w.shape()) + " incompatible with input " + to_string(x.shape()) +
                     " (need [F," + std::to_string(C) + ",3,3] or [F," + std::to_string(C) + ",1,1])");
  }
  if (b.rank() != 1 || b.dim(0) != F) {
    throw ShapeError("conv2d: bias " + to_string(b.shape()) + " does not match kernel " + to_string(w.shape()));
  }
  const std::size_t HW = H * W, CKK = C * k * k;

  BasicTensor<T> out({N, F, H, W});
  std::vector<T> col(k == 1 ? 0 : CKK * HW);
  ConstMatMap<T> K(w.ptr(), static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(CKK));
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bvec(b.ptr(), static_cast<Eigen::Index>(F));
  for (std::size_t n = 0; n < N; ++n) {
    const T* xn = x.ptr() + n * C * HW;
    const T* colp = xn;
    if (k != 1) {
      im2col(xn, C, H, W, k, col.data());
      colp = col.data();
    }
    ConstMatMap<T> cm(colp, static_cast<Eigen::Index>(CKK), static_cast<Eigen::Index>(HW));
    MatMap<T> om(out.ptr() + n * F * HW, static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(HW));
    om.noalias() = K * cm;
    om.colwise() += bvec;
  }

  const std::size_t xi = input.id, wi = kernel.id, bi = bias.id;
  return tape.record(std::move(out), {xi, wi, bi}, [=](BasicTape<T>& t, std::size_t self) {
    const auto& gout = t.grad_ref(self);
    const auto& xv = t.value(xi);
    const auto& wv = t.value(wi);
    const bool need_x = t.requires_grad(xi), need_w = t.requires_grad(wi), need_b = t.requires_grad(bi);
    std::vector<T> colbuf(k == 1 ? 0 : CKK * HW);
    std::vector<T> dcol(k == 1 ? 0 : CKK * HW);
    ConstMatMap<T> Kv(wv.ptr(), static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(CKK));
    for (std::size_t n = 0; n < N; ++n) {
      ConstMatMap<T> go(gout.ptr() + n * F * HW, static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(HW));
      if (need_w) {
        const T* xn = xv.ptr() + n * C * HW;
        const T* colp = xn;
        if (k != 1) {
          im2col(xn, C, H, W, k, colbuf.data());
          colp = colbuf.data();
        }
        ConstMatMap<T> cm(colp, static_cast<Eigen::Index>(CKK), static_cast<Eigen::Index>(HW));
        MatMap<T> gw(t.grad_buffer(wi).ptr(), static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(CKK));
        gw.noalias() += go * cm.transpose();
      }
      if (need_b) {
        // Plain loop: Eigen's vectorized sum peels by address, which would make
        // the result depend on where the buffer happens to be allocated.
        T* gb = t.grad_buffer(bi).ptr();
        const T* g = gout.ptr() + n * F * HW;
        for (std::size_t f = 0; f < F; ++f) {
          T acc{0};
          for (std::size_t i = 0; i < HW; ++i) acc += g[f * HW + i];
          gb[f] += acc;
        }
      }
      if (need_x) {
        T* gx = t.grad_buffer(xi).ptr() + n * C * HW;
        if (k == 1) {
          MatMap<T> gxm(gx, static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(HW));
          gxm.noalias() += Kv.transpose() * go;
        } else {
          MatMap<T> dc(dcol.data(), static_cast<Eigen::Index>(CKK), static_cast<Eigen::Index>(HW));
          dc.noalias() = Kv.transpose() * go;
          col2im_add(dcol.data(), C, H, W, k, gx);
        }
      }
    }
  });
}

template <typename T>
Var maxpool2d(BasicTape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  require_rank4(x.shape(), "maxpool2d");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw ShapeError("maxpool2d: spatial size must be even, got " + to_string(x.shape()));
  }
  const std::size_t Ho = H / 2, Wo = W / 2;
  BasicTensor<T> out({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = x.ptr() + nc * H * W;
    for (std::size_t y = 0; y < Ho; ++y) {
      for (std::size_t xx = 0; xx < Wo; ++xx, ++o) {
        std::size_t best = (2 * y) * W + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * y + dy) * W + 2 * xx + dx;
            if (plane[idx] > plane[best]) best = idx;
          }
        }
        out[o] = plane[best];
        (*argmax)[o] = static_cast<std::uint32_t>(nc * H * W + best);
      }
    }
  }
  const std::size_t xi = input.id;
  return tape.record(std::move(out), {xi}, [=](BasicTape<T>& t, std::size_t self) {
    const auto& g = t.grad_ref(self);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

template <typename T>
Var upsample2d(BasicTape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  require_rank4(x.shape(), "upsample2d");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  BasicTensor<T> out({N, C, 2 * H, 2 * W});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* src = x.ptr() + nc * H * W;
    T* dst = out.ptr() + nc * 4 * H * W;
    for (std::size_t y = 0; y < 2 * H; ++y) {
      for (std::size_t xx = 0; xx < 2 * W; ++xx) dst[y * 2 * W + xx] = src[(y / 2) * W + xx / 2];
    }
  }
  const std::size_t xi = input.id;
  return tape.record(std::move(out), {xi}, [=](BasicTape<T>& t, std::size_t self) {
    const auto& g = t.grad_ref(self);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const T* src = g.ptr() + nc * 4 * H * W;
      T* dst = gx.ptr() + nc * H * W;
      for (std::size_t y = 0; y < 2 * H; ++y) {
        for (std::size_t xx = 0; xx < 2 * W; ++xx) dst[(y / 2) * W + xx / 2] += src[y * 2 * W + xx];
      }
    }
  });
}

template <typename T>
Var selu(BasicTape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  const T scale = static_cast<T>(kSeluScale);
  const T sa = static_cast<T>(kSeluScale * kSeluAlpha);
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    out[i] = v > T{0} ? scale * v : sa * std::expm1(v);
  }
  const std::size_t xi = input.id;
  return tape.record(std::move(out), {xi}, [=](BasicTape<T>& t, std::size_t self) {
    const auto& g = t.grad_ref(self);
    const auto& xv = t.value(xi);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i] * (xv[i] > T{0} ? scale : sa * std::exp(xv[i]));
    }
  });
}

template <typename T>
Var relu(BasicTape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  const std::size_t xi = input.id;
  return tape.record(std::move(out), {xi}, [=](BasicTape<T>& t, std::size_t self) {
    const auto& g = t.grad_ref(self);
    const auto& xv = t.value(xi);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T{0}) gx[i] += g[i];
    }
  });
}

template <typename T>
Var sigmoid(BasicTape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  const T lo = std::numeric_limits<T>::min();
  const T hi = T{1} - std::numeric_limits<T>::epsilon() / 2;
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    T y;
    if (v >= T{0}) {
      y = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y = e / (T{1} + e);
    }
    out[i] = std::clamp(y, lo, hi);
  }
  return tape.record(std::move(out), {input.id}, [xi = input.id](BasicTape<T>& t, std::size_t self) {
    const auto& g = t.grad_ref(self);
    const auto& y = t.value(self);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T{1} - y[i]);
  });
}

template <typename T>
Var batchnorm(BasicTape<T>& tape, Var input, Var gamma, Var beta, BatchNormMode mode, const Tensor& running_mean,
              const Tensor& running_var, BatchStats<T>* stats) {
  const auto& x = tape.value(input);
  require_rank4(x.shape(), "batchnorm");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const auto& gm = tape.value(gamma);
  const auto& bt = tape.value(beta);
  require_same_shape(gm.shape(), Shape{C}, "batchnorm gamma");
  require_same_shape(bt.shape(), Shape{C}, "batchnorm beta");
  const std::size_t M = N * HW;

  BasicTensor<T> mean({C}), var({C});
  if (mode == BatchNormMode::Train) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.ptr() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(M);
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.ptr() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      mean[c] = static_cast<T>(mu);
      var[c] = static_cast<T>(ss / static_cast<double>(M));
    }
    if (stats) *stats = BatchStats<T>{mean, var};
  } else {
    require_same_shape(running_mean.shape(), Shape{C}, "batchnorm running_mean");
    require_same_shape(running_var.shape(), Shape{C}, "batchnorm running_var");
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = static_cast<T>(running_mean[c]);
      var[c] = static_cast<T>(running_var[c]);
    }
  }

  auto invstd = std::make_shared<BasicTensor<T>>(Shape{C});
  for (std::size_t c = 0; c < C; ++c) {
    (*invstd)[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[c]) + kBatchNormEpsilon));
  }
  // xhat is kept for the backward rule.
  auto xhat = std::make_shared<BasicTensor<T>>(x.shape());
  BasicTensor<T> out(x.shape());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (n * C + c) * HW;
      const T mu = mean[c], is = (*invstd)[c], g = gm[c], b = bt[c];
      for (std::size_t i = 0; i < HW; ++i) {
        const T xh = (x[off + i] - mu) * is;
        (*xhat)[off + i] = xh;
        out[off + i] = g * xh + b;
      }
    }
  }

  const std::size_t xi = input.id, gi = gamma.id, bi = beta.id;
  const bool train = mode == BatchNormMode::Train;
  return tape.record(std::move(out), {xi, gi, bi}, [=](BasicTape<T>& t, std::size_t self) {
    const auto& gy = t.grad_ref(self);
    const auto& gmv = t.value(gi);
    const bool need_x = t.requires_grad(xi);
    std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t off = (n * C + c) * HW;
        double s = 0.0, sx = 0.0;
        for (std::size_t i = 0; i < HW; ++i) {
          s += gy[off + i];
          sx += static_cast<double>(gy[off + i]) * (*xhat)[off + i];
        }
        sum_dy[c] += s;
        sum_dy_xhat[c] += sx;
      }
    }
    if (t.requires_grad(gi)) {
      auto& gg = t.grad_buffer(gi);
      for (std::size_t c = 0; c < C; ++c) gg[c] += static_cast<T>(sum_dy_xhat[c]);
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad_buffer(bi);
      for (std::size_t c = 0; c < C; ++c) gb[c] += static_cast<T>(sum_dy[c]);
    }
    if (!need_x) return;
    auto& gx = t.grad_buffer(xi);
    const double m = static_cast<double>(M);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t off = (n * C + c) * HW;
        const double g = gmv[c], is = (*invstd)[c];
        if (train) {
          const double mean_dy = sum_dy[c] / m, mean_dy_xhat = sum_dy_xhat[c] / m;
          for (std::size_t i = 0; i < HW; ++i) {
            gx[off + i] += static_cast<T>(g * is * (gy[off + i] - mean_dy - (*xhat)[off + i] * mean_dy_xhat));
          }
        } else {
          for (std::size_t i = 0; i < HW; ++i) gx[off + i] += static_cast<T>(g * is * gy[off + i]);
        }
      }
    }
  });
}

template <typename T>
Var concat(BasicTape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require_rank4(av.shape(), "concat");
  require_rank4(bv.shape(), "concat");
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3)) {
    throw ShapeError("concat: batch/spatial mismatch " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
  }
  const std::size_t N = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1), HW = av.dim(2) * av.dim(3);
  BasicTensor<T> out({N, Ca + Cb, av.dim(2), av.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(av.ptr() + n * Ca * HW, Ca * HW, out.ptr() + n * (Ca + Cb) * HW);
    std::copy_n(bv.ptr() + n * Cb * HW, Cb * HW, out.ptr() + n * (Ca + Cb) * HW + Ca * HW);
  }
  const std::size_t ai = a.id, bi = b.id;
  return tape.record(std::move(out), {ai, bi}, [=](BasicTape<T>& t, std::size_t self) {
    const auto& g = t.grad_ref(self);
    if (t.requires_grad(ai)) {
      auto& ga = t.grad_buffer(ai);
      for (std::size_t n = 0; n < N; ++n) {
        const T* src = g.ptr() + n * (Ca + Cb) * HW;
        T* dst = ga.ptr() + n * Ca * HW;
        for (std::size_t i = 0; i < Ca * HW; ++i) dst[i] += src[i];
      }
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad_buffer(bi);
      for (std::size_t n = 0; n < N; ++n) {
        const T* src = g.ptr() + n * (Ca + Cb) * HW + Ca * HW;
        T* dst = gb.ptr() + n * Cb * HW;
        for (std::size_t i = 0; i < Cb * HW; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var add(BasicTape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require_same_shape(av.shape(), bv.shape(), "add");
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return tape.record(std::move(out), {ai, bi}, [=](BasicTape<T>& t, std::size_t self) {
    const auto& g = t.grad_ref(self);
    // Two separate accumulations: add(x, x) must see 2 * upstream.
    if (t.requires_grad(ai)) accumulate(t.grad_buffer(ai), g);
    if (t.requires_grad(bi)) accumulate(t.grad_buffer(bi), g);
  });
}

template <typename T>
Var global_avg_pool(BasicTape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  require_rank4(x.shape(), "global_avg_pool");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  BasicTensor<T> out({N, C, 1, 1});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double s = 0.0;
    for (std::size_t i = 0; i < HW; ++i) s += x[nc * HW + i];
    out[nc] = static_cast<T>(s / static_cast<double>(HW));
  }
  const std::size_t xi = input.id;
  return tape.record(std::move(out), {xi}, [=](BasicTape<T>& t, std::size_t self) {
    const auto& g = t.grad_ref(self);
    auto& gx = t.grad_buffer(xi);
    const T inv = static_cast<T>(1.0 / static_cast<double>(HW));
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      for (std::size_t i = 0; i < HW; ++i) gx[nc * HW + i] += g[nc] * inv;
    }
  });
}

template <typename T>
Var weighted_sum(BasicTape<T>& tape, Var input, const BasicTensor<T>& weights) {
  const auto& x = tape.value(input);
  require_same_shape(x.shape(), weights.shape(), "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += static_cast<double>(x[i]) * weights[i];
  BasicTensor<T> out({1}, static_cast<T>(s));
  const std::size_t xi = input.id;
  return tape.record(std::move(out), {xi}, [xi, weights](BasicTape<T>& t, std::size_t self) {
    const T g = t.grad_ref(self)[0];
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * weights[i];
  });
}

template <typename T>
Var binary_cross_entropy(BasicTape<T>& tape, Var probs, const BasicTensor<T>& labels, double clamp) {
  const auto& p = tape.value(probs);
  require_same_shape(p.shape(), labels.shape(), "binary_cross_entropy");
  const double lo = clamp, hi = 1.0 - clamp;
  const double n = static_cast<double>(p.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = std::clamp(static_cast<double>(p[i]), lo, hi);
    s -= labels[i] * std::log(pi) + (1.0 - labels[i]) * std::log(1.0 - pi);
  }
  BasicTensor<T> out({1}, static_cast<T>(s / n));
  const std::size_t pid = probs.id;
  return tape.record(std::move(out), {pid}, [=](BasicTape<T>& t, std::size_t self) {
    const double g = t.grad_ref(self)[0];
    const auto& pv = t.value(pid);
    auto& gp = t.grad_buffer(pid);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double pi = pv[i];
      if (pi < lo || pi > hi) continue;
      gp[i] += static_cast<T>(g * (-labels[i] / pi + (1.0 - labels[i]) / (1.0 - pi)) / n);
    }
  });
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank4(x.shape(), "slice_channels");
  if (begin >= end || end > x.dim(1)) throw ShapeError("slice_channels: bad range for " + to_string(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3), Cs = end - begin;
  BasicTensor<T> out({N, Cs, x.dim(2), x.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(x.ptr() + (n * C + begin) * HW, Cs * HW, out.ptr() + n * Cs * HW);
  }
  return out;
}

#define YNET_INSTANTIATE_OPS(T)                                                                                   \
  template Var conv2d<T>(BasicTape<T>&, Var, Var, Var);                                                           \
  template Var maxpool2d<T>(BasicTape<T>&, Var);                                                                  \
  template Var upsample2d<T>(BasicTape<T>&, Var);                                                                 \
  template Var selu<T>(BasicTape<T>&, Var);                                                                       \
  template Var relu<T>(BasicTape<T>&, Var);                                                                       \
  template Var sigmoid<T>(BasicTape<T>&, Var);                                                                    \
  template Var batchnorm<T>(BasicTape<T>&, Var, Var, Var, BatchNormMode, const Tensor&, const Tensor&,            \
                            BatchStats<T>*);                                                                      \
  template Var concat<T>(BasicTape<T>&, Var, Var);                                                                \
  template Var add<T>(BasicTape<T>&, Var, Var);                                                                   \
  template Var global_avg_pool<T>(BasicTape<T>&, Var);                                                            \
  template Var weighted_sum<T>(BasicTape<T>&, Var, const BasicTensor<T>&);                                        \
  template Var binary_cross_entropy<T>(BasicTape<T>&, Var, const BasicTensor<T>&, double);                        \
  template BasicTensor<T> slice_channels<T>(const BasicTensor<T>&, std::size_t, std::size_t);

YNET_INSTANTIATE_OPS(float)
YNET_INSTANTIATE_OPS(double)

}  // namespace ynet
