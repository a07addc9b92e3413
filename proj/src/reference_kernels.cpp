#include <algorithm>
#include <cmath>
#include <vector>

#include "relight/error.hpp"
#include "relight/kernels.hpp"

// Serial, loop-for-loop definitions of the layer math. Kept deliberately
// naive; the tests compare the parallel kernels against these.

namespace relight::reference {

void conv2d_forward(const Tensor& x, std::span<const float> weight, std::span<const float> bias, const ConvShape& s,
                    Tensor& y) {
  if (x.c != s.cin) fail(ErrorCode::ShapeMismatch, "conv2d input channels");
  const int k = s.kernel;
  const int pad = k / 2;
  y = Tensor(x.n, s.cout, x.h, x.w);
  for (int n = 0; n < x.n; ++n) {
    for (int co = 0; co < s.cout; ++co) {
      for (int oy = 0; oy < x.h; ++oy) {
        for (int ox = 0; ox < x.w; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (int ci = 0; ci < s.cin; ++ci) {
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy + ky - pad;
                const int ix = ox + kx - pad;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                acc += static_cast<double>(weight[((co * s.cin + ci) * k + ky) * k + kx]) * x.at(n, ci, iy, ix);
              }
            }
          }
          y.at(n, co, oy, ox) = static_cast<float>(acc);
        }
      }
    }
  }
}

void conv2d_backward(const Tensor& x, std::span<const float> weight, const ConvShape& s, const Tensor& dy, Tensor* dx,
                     std::span<float> dweight, std::span<float> dbias) {
  const int k = s.kernel;
  const int pad = k / 2;
  if (dx) *dx = Tensor(x.n, x.c, x.h, x.w);
  for (int n = 0; n < x.n; ++n) {
    for (int co = 0; co < s.cout; ++co) {
      for (int oy = 0; oy < x.h; ++oy) {
        for (int ox = 0; ox < x.w; ++ox) {
          const float g = dy.at(n, co, oy, ox);
          if (!dbias.empty()) dbias[co] += g;
          for (int ci = 0; ci < s.cin; ++ci) {
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy + ky - pad;
                const int ix = ox + kx - pad;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                const std::size_t wi = ((static_cast<std::size_t>(co) * s.cin + ci) * k + ky) * k + kx;
                dweight[wi] += g * x.at(n, ci, iy, ix);
                if (dx) dx->at(n, ci, iy, ix) += g * weight[wi];
              }
            }
          }
        }
      }
    }
  }
}

void group_norm_forward(const Tensor& x, std::span<const float> gamma, std::span<const float> beta, int groups,
                        float eps, Tensor& y) {
  const int cpg = x.c / groups;
  y = Tensor(x.n, x.c, x.h, x.w);
  for (int n = 0; n < x.n; ++n) {
    for (int g = 0; g < groups; ++g) {
      double sum = 0.0;
      int count = 0;
      for (int c = g * cpg; c < (g + 1) * cpg; ++c)
        for (int i = 0; i < x.h; ++i)
          for (int j = 0; j < x.w; ++j) {
            sum += x.at(n, c, i, j);
            ++count;
          }
      const double mean = sum / count;
      double var = 0.0;
      for (int c = g * cpg; c < (g + 1) * cpg; ++c)
        for (int i = 0; i < x.h; ++i)
          for (int j = 0; j < x.w; ++j) var += (x.at(n, c, i, j) - mean) * (x.at(n, c, i, j) - mean);
      var /= count;
      for (int c = g * cpg; c < (g + 1) * cpg; ++c)
        for (int i = 0; i < x.h; ++i)
          for (int j = 0; j < x.w; ++j) {
            y.at(n, c, i, j) = static_cast<float>((x.at(n, c, i, j) - mean) / std::sqrt(var + eps) * gamma[c] + beta[c]);
          }
    }
  }
}

void attention_forward(const Tensor& qkv, Tensor& out) {
  const int c = qkv.c / 3;
  const int l = qkv.h * qkv.w;
  out = Tensor(qkv.n, c, qkv.h, qkv.w);
  const double scale = 1.0 / std::sqrt(static_cast<double>(c));
  std::vector<double> logits(l);
  for (int n = 0; n < qkv.n; ++n) {
    const float* base = qkv.sample(n);
    auto q = [&](int ch, int pos) { return base[static_cast<std::size_t>(ch) * l + pos]; };
    auto key = [&](int ch, int pos) { return base[static_cast<std::size_t>(c + ch) * l + pos]; };
    auto val = [&](int ch, int pos) { return base[static_cast<std::size_t>(2 * c + ch) * l + pos]; };
    for (int i = 0; i < l; ++i) {
      double mx = -1e300;
      for (int j = 0; j < l; ++j) {
        double s = 0.0;
        for (int ch = 0; ch < c; ++ch) s += static_cast<double>(q(ch, i)) * key(ch, j);
        logits[j] = s * scale;
        mx = std::max(mx, logits[j]);
      }
      double z = 0.0;
      for (int j = 0; j < l; ++j) {
        logits[j] = std::exp(logits[j] - mx);
        z += logits[j];
      }
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int j = 0; j < l; ++j) acc += logits[j] / z * val(ch, j);
        out.sample(n)[static_cast<std::size_t>(ch) * l + i] = static_cast<float>(acc);
      }
    }
  }
}

}  // namespace relight::reference
