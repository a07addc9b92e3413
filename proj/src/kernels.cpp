#include "relight/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "relight/error.hpp"

namespace relight::kernels {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void im2col(const float* x, int cin, int h, int w, int k, float* col) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < cin; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * hw;
        const float* src = x + ci * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          float* dst = row + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, 0.0f);
            continue;
          }
          const float* s = src + static_cast<std::size_t>(sy) * w;
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          std::fill(dst, dst + x0, 0.0f);
          std::copy(s + x0 + dx, s + x1 + dx, dst + x0);
          std::fill(dst + x1, dst + w, 0.0f);
        }
      }
    }
  }
}

void col2im(const float* col, int cin, int h, int w, int k, float* x) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::fill(x, x + cin * hw, 0.0f);
  for (int ci = 0; ci < cin; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * hw;
        float* dst = x + ci * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const float* s = row + static_cast<std::size_t>(y) * w;
          float* d = dst + static_cast<std::size_t>(sy) * w;
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          for (int xx = x0; xx < x1; ++xx) d[xx + dx] += s[xx];
        }
      }
    }
  }
}

void check_conv(const Tensor& x, std::span<const float> weight, const ConvShape& s) {
  if (x.c != s.cin || weight.size() != static_cast<std::size_t>(s.cout) * s.cin * s.kernel * s.kernel) {
    fail(ErrorCode::ShapeMismatch, "conv2d input/weight shape mismatch");
  }
}

}  // namespace

void conv2d_forward(const Tensor& x, std::span<const float> weight, std::span<const float> bias, const ConvShape& s,
                    Tensor& y) {
  check_conv(x, weight, s);
  y = Tensor(x.n, s.cout, x.h, x.w);
  const int kk = s.cin * s.kernel * s.kernel;
  const int hw = x.h * x.w;
  ConstMapMat wm(weight.data(), s.cout, kk);
#pragma omp parallel
  {
    std::vector<float> col;
    if (s.kernel != 1) col.resize(static_cast<std::size_t>(kk) * hw);
#pragma omp for schedule(static)
    for (int n = 0; n < x.n; ++n) {
      const float* src = x.sample(n);
      if (s.kernel != 1) {
        im2col(src, s.cin, x.h, x.w, s.kernel, col.data());
        src = col.data();
      }
      MapMat out(y.sample(n), s.cout, hw);
      out.noalias() = wm * ConstMapMat(src, kk, hw);
      if (!bias.empty()) {
        for (int co = 0; co < s.cout; ++co) out.row(co).array() += bias[co];
      }
    }
  }
}

void conv2d_backward(const Tensor& x, std::span<const float> weight, const ConvShape& s, const Tensor& dy, Tensor* dx,
                     std::span<float> dweight, std::span<float> dbias) {
  check_conv(x, weight, s);
  const int kk = s.cin * s.kernel * s.kernel;
  const int hw = x.h * x.w;
  ConstMapMat wm(weight.data(), s.cout, kk);
  if (dx) *dx = Tensor(x.n, x.c, x.h, x.w);
  // Per-sample weight gradients, reduced in sample order so the result does
  // not depend on the thread count.
  std::vector<float> partial(static_cast<std::size_t>(x.n) * s.cout * kk);
#pragma omp parallel
  {
    std::vector<float> col;
    std::vector<float> dcol;
    if (s.kernel != 1) {
      col.resize(static_cast<std::size_t>(kk) * hw);
      if (dx) dcol.resize(col.size());
    }
#pragma omp for schedule(static)
    for (int n = 0; n < x.n; ++n) {
      const float* src = x.sample(n);
      if (s.kernel != 1) {
        im2col(src, s.cin, x.h, x.w, s.kernel, col.data());
        src = col.data();
      }
      ConstMapMat g(dy.sample(n), s.cout, hw);
      MapMat pw(partial.data() + static_cast<std::size_t>(n) * s.cout * kk, s.cout, kk);
      pw.noalias() = g * ConstMapMat(src, kk, hw).transpose();
      if (dx) {
        if (s.kernel == 1) {
          MapMat(dx->sample(n), kk, hw).noalias() = wm.transpose() * g;
        } else {
          MapMat(dcol.data(), kk, hw).noalias() = wm.transpose() * g;
          col2im(dcol.data(), s.cin, x.h, x.w, s.kernel, dx->sample(n));
        }
      }
    }
  }
  const std::size_t wsize = static_cast<std::size_t>(s.cout) * kk;
  for (int n = 0; n < x.n; ++n) {
    const float* p = partial.data() + n * wsize;
    for (std::size_t i = 0; i < wsize; ++i) dweight[i] += p[i];
  }
  if (!dbias.empty()) {
    for (int n = 0; n < x.n; ++n) {
      const float* g = dy.sample(n);
      for (int co = 0; co < s.cout; ++co) {
        double acc = 0.0;
        for (int i = 0; i < hw; ++i) acc += g[static_cast<std::size_t>(co) * hw + i];
        dbias[co] += static_cast<float>(acc);
      }
    }
  }
}

void group_norm_forward(const Tensor& x, std::span<const float> gamma, std::span<const float> beta, int groups,
                        float eps, Tensor& y, std::vector<float>& mean, std::vector<float>& rstd) {
  if (x.c % groups != 0) fail(ErrorCode::ShapeMismatch, "channels not divisible by groups");
  y = Tensor(x.n, x.c, x.h, x.w);
  mean.assign(static_cast<std::size_t>(x.n) * groups, 0.0f);
  rstd.assign(mean.size(), 0.0f);
  const int cpg = x.c / groups;
  const std::size_t hw = x.plane();
  const std::size_t count = cpg * hw;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < x.n; ++n) {
    for (int g = 0; g < groups; ++g) {
      const float* src = x.sample(n) + g * count;
      double sum = 0.0;
      double sq = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        sum += src[i];
        sq += static_cast<double>(src[i]) * src[i];
      }
      const double m = sum / count;
      const double var = std::max(0.0, sq / count - m * m);
      const double r = 1.0 / std::sqrt(var + eps);
      mean[n * groups + g] = static_cast<float>(m);
      rstd[n * groups + g] = static_cast<float>(r);
      float* dst = y.sample(n) + g * count;
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = g * cpg + cc;
        const float scale = static_cast<float>(r) * gamma[ch];
        const float shift = beta[ch] - static_cast<float>(m) * scale;
        for (std::size_t i = 0; i < hw; ++i) dst[cc * hw + i] = src[cc * hw + i] * scale + shift;
      }
    }
  }
}

void group_norm_backward(const Tensor& x, std::span<const float> gamma, int groups, const std::vector<float>& mean,
                         const std::vector<float>& rstd, const Tensor& dy, Tensor& dx, std::span<float> dgamma,
                         std::span<float> dbeta) {
  dx = Tensor(x.n, x.c, x.h, x.w);
  const int cpg = x.c / groups;
  const std::size_t hw = x.plane();
  const std::size_t count = cpg * hw;
  // Per-sample channel partials for gamma/beta, reduced in order afterwards.
  std::vector<double> pg(static_cast<std::size_t>(x.n) * x.c, 0.0);
  std::vector<double> pb(pg.size(), 0.0);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < x.n; ++n) {
    for (int g = 0; g < groups; ++g) {
      const float m = mean[n * groups + g];
      const float r = rstd[n * groups + g];
      const float* xs = x.sample(n) + g * count;
      const float* gs = dy.sample(n) + g * count;
      float* out = dx.sample(n) + g * count;
      double sum_dxhat = 0.0;
      double sum_dxhat_xhat = 0.0;
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = g * cpg + cc;
        double sg = 0.0;
        double sb = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
          const double xhat = (xs[cc * hw + i] - m) * r;
          const double gv = gs[cc * hw + i];
          sg += gv * xhat;
          sb += gv;
          const double dxhat = gv * gamma[ch];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        pg[static_cast<std::size_t>(n) * x.c + ch] = sg;
        pb[static_cast<std::size_t>(n) * x.c + ch] = sb;
      }
      const double a = sum_dxhat / count;
      const double b = sum_dxhat_xhat / count;
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = g * cpg + cc;
        for (std::size_t i = 0; i < hw; ++i) {
          const double xhat = (xs[cc * hw + i] - m) * r;
          const double dxhat = gs[cc * hw + i] * gamma[ch];
          out[cc * hw + i] = static_cast<float>(r * (dxhat - a - xhat * b));
        }
      }
    }
  }
  for (int n = 0; n < x.n; ++n) {
    for (int ch = 0; ch < x.c; ++ch) {
      dgamma[ch] += static_cast<float>(pg[static_cast<std::size_t>(n) * x.c + ch]);
      dbeta[ch] += static_cast<float>(pb[static_cast<std::size_t>(n) * x.c + ch]);
    }
  }
}

void attention_forward(const Tensor& qkv, Tensor& out, std::vector<float>& probs) {
  if (qkv.c % 3 != 0) fail(ErrorCode::ShapeMismatch, "qkv channels must be a multiple of 3");
  const int c = qkv.c / 3;
  const int l = qkv.h * qkv.w;
  const float scale = 1.0f / std::sqrt(static_cast<float>(c));
  out = Tensor(qkv.n, c, qkv.h, qkv.w);
  probs.assign(static_cast<std::size_t>(qkv.n) * l * l, 0.0f);
#pragma omp parallel for schedule(static)
  for (int n = 0; n < qkv.n; ++n) {
    const float* base = qkv.sample(n);
    ConstMapMat q(base, c, l);
    ConstMapMat k(base + static_cast<std::size_t>(c) * l, c, l);
    ConstMapMat v(base + static_cast<std::size_t>(2) * c * l, c, l);
    MapMat p(probs.data() + static_cast<std::size_t>(n) * l * l, l, l);
    p.noalias() = (q.transpose() * k) * scale;
    // Plain loops: Eigen reductions peel by runtime alignment, which would
    // make the summation order depend on where the buffer was allocated.
    for (int i = 0; i < l; ++i) {
      float* row = &p(i, 0);
      float mx = row[0];
      for (int j = 1; j < l; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (int j = 0; j < l; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      const float inv = static_cast<float>(1.0 / sum);
      for (int j = 0; j < l; ++j) row[j] *= inv;
    }
    MapMat(out.sample(n), c, l).noalias() = v * p.transpose();
  }
}

void attention_backward(const Tensor& qkv, const std::vector<float>& probs, const Tensor& dout, Tensor& dqkv) {
  const int c = qkv.c / 3;
  const int l = qkv.h * qkv.w;
  const float scale = 1.0f / std::sqrt(static_cast<float>(c));
  dqkv = Tensor(qkv.n, qkv.c, qkv.h, qkv.w);
#pragma omp parallel for schedule(static)
  for (int n = 0; n < qkv.n; ++n) {
    const float* base = qkv.sample(n);
    ConstMapMat q(base, c, l);
    ConstMapMat k(base + static_cast<std::size_t>(c) * l, c, l);
    ConstMapMat v(base + static_cast<std::size_t>(2) * c * l, c, l);
    ConstMapMat p(probs.data() + static_cast<std::size_t>(n) * l * l, l, l);
    ConstMapMat dout_m(dout.sample(n), c, l);
    float* dbase = dqkv.sample(n);
    MapMat dq(dbase, c, l);
    MapMat dk(dbase + static_cast<std::size_t>(c) * l, c, l);
    MapMat dv(dbase + static_cast<std::size_t>(2) * c * l, c, l);
    dv.noalias() = dout_m * p;
    RowMat dp = dout_m.transpose() * v;
    RowMat ds(l, l);
    for (int i = 0; i < l; ++i) {
      const float* pr = p.data() + static_cast<std::size_t>(i) * l;
      const float* dpr = &dp(i, 0);
      double dot = 0.0;
      for (int j = 0; j < l; ++j) dot += static_cast<double>(pr[j]) * dpr[j];
      float* dsr = &ds(i, 0);
      for (int j = 0; j < l; ++j) dsr[j] = pr[j] * (dpr[j] - static_cast<float>(dot));
    }
    dq.noalias() = (k * ds.transpose()) * scale;
    dk.noalias() = (q * ds) * scale;
  }
}

void linear_forward(const Tensor& x, std::span<const float> weight, std::span<const float> bias, int out_features,
                    Tensor& y) {
  const int in = static_cast<int>(x.sample_size());
  if (weight.size() != static_cast<std::size_t>(in) * out_features) {
    fail(ErrorCode::ShapeMismatch, "linear weight shape mismatch");
  }
  y = Tensor(x.n, out_features, 1, 1);
  MapMat ym(y.data.data(), x.n, out_features);
  ym.noalias() = ConstMapMat(x.data.data(), x.n, in) * ConstMapMat(weight.data(), out_features, in).transpose();
  for (int n = 0; n < x.n; ++n) ym.row(n) += Eigen::Map<const Eigen::RowVectorXf>(bias.data(), out_features);
}

void linear_backward(const Tensor& x, std::span<const float> weight, int out_features, const Tensor& dy, Tensor* dx,
                     std::span<float> dweight, std::span<float> dbias) {
  const int in = static_cast<int>(x.sample_size());
  ConstMapMat g(dy.data.data(), x.n, out_features);
  MapMat(dweight.data(), out_features, in) += g.transpose() * ConstMapMat(x.data.data(), x.n, in);
  for (int n = 0; n < x.n; ++n) {
    for (int o = 0; o < out_features; ++o) dbias[o] += g(n, o);
  }
  if (dx) {
    *dx = Tensor(x.n, x.c, x.h, x.w);
    MapMat(dx->data.data(), x.n, in).noalias() = g * ConstMapMat(weight.data(), out_features, in);
  }
}

void silu_forward(const Tensor& x, Tensor& y) {
  y = Tensor(x.n, x.c, x.h, x.w);
  const std::size_t n = x.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const float v = x.data[i];
    y.data[i] = v / (1.0f + std::exp(-v));
  }
}

void silu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
  dx = Tensor(x.n, x.c, x.h, x.w);
  const std::size_t n = x.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const float v = x.data[i];
    const float s = 1.0f / (1.0f + std::exp(-v));
    dx.data[i] = dy.data[i] * s * (1.0f + v * (1.0f - s));
  }
}

void avg_pool2_forward(const Tensor& x, Tensor& y) {
  if (x.h % 2 || x.w % 2) fail(ErrorCode::ShapeMismatch, "avg_pool2 needs even spatial size");
  y = Tensor(x.n, x.c, x.h / 2, x.w / 2);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < x.n; ++n) {
    for (int c = 0; c < x.c; ++c) {
      for (int yy = 0; yy < y.h; ++yy) {
        for (int xx = 0; xx < y.w; ++xx) {
          y.at(n, c, yy, xx) = 0.25f * (x.at(n, c, 2 * yy, 2 * xx) + x.at(n, c, 2 * yy, 2 * xx + 1) +
                                        x.at(n, c, 2 * yy + 1, 2 * xx) + x.at(n, c, 2 * yy + 1, 2 * xx + 1));
        }
      }
    }
  }
}

void avg_pool2_backward(const Tensor& dy, Tensor& dx) {
  dx = Tensor(dy.n, dy.c, dy.h * 2, dy.w * 2);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < dx.n; ++n) {
    for (int c = 0; c < dx.c; ++c) {
      for (int yy = 0; yy < dx.h; ++yy) {
        for (int xx = 0; xx < dx.w; ++xx) dx.at(n, c, yy, xx) = 0.25f * dy.at(n, c, yy / 2, xx / 2);
      }
    }
  }
}

void upsample2_forward(const Tensor& x, Tensor& y) {
  y = Tensor(x.n, x.c, x.h * 2, x.w * 2);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < y.n; ++n) {
    for (int c = 0; c < y.c; ++c) {
      for (int yy = 0; yy < y.h; ++yy) {
        for (int xx = 0; xx < y.w; ++xx) y.at(n, c, yy, xx) = x.at(n, c, yy / 2, xx / 2);
      }
    }
  }
}

void upsample2_backward(const Tensor& dy, Tensor& dx) {
  dx = Tensor(dy.n, dy.c, dy.h / 2, dy.w / 2);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < dx.n; ++n) {
    for (int c = 0; c < dx.c; ++c) {
      for (int yy = 0; yy < dx.h; ++yy) {
        for (int xx = 0; xx < dx.w; ++xx) {
          dx.at(n, c, yy, xx) = dy.at(n, c, 2 * yy, 2 * xx) + dy.at(n, c, 2 * yy, 2 * xx + 1) +
                                dy.at(n, c, 2 * yy + 1, 2 * xx) + dy.at(n, c, 2 * yy + 1, 2 * xx + 1);
        }
      }
    }
  }
}

}  // namespace relight::kernels
