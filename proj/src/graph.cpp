#include "relight/graph.hpp"

#include <algorithm>

#include "relight/error.hpp"
#include "relight/network.hpp"

namespace relight {

Gradients Gradients::zeros_like(const ModelParams& params) {
  Gradients g;
  g.values.reserve(params.tensors.size());
  for (const ParamTensor& t : params.tensors) g.values.emplace_back(t.values.size(), 0.0f);
  return g;
}

void Gradients::zero() {
  for (auto& v : values) std::fill(v.begin(), v.end(), 0.0f);
}

double Gradients::squared_norm() const {
  double acc = 0.0;
  for (const auto& v : values)
    for (float x : v) acc += static_cast<double>(x) * x;
  return acc;
}

Graph::Graph(const ModelParams& params, bool record) : params_(params), record_(record) {}

int Graph::push(Tensor value, BackwardFn fn) {
  nodes_.push_back({std::move(value), record_ ? std::move(fn) : BackwardFn{}});
  return static_cast<int>(nodes_.size()) - 1;
}

int Graph::constant(Tensor value) { return push(std::move(value), {}); }

std::span<const float> Graph::param(int index) const {
  return params_.tensors[static_cast<std::size_t>(index)].values;
}

std::span<float> Graph::param_grad(int index) { return param_grads_->values[static_cast<std::size_t>(index)]; }

void Graph::accumulate(int id, const Tensor& grad) {
  Tensor& slot = grads_[static_cast<std::size_t>(id)];
  if (slot.data.empty()) {
    slot = grad;
    return;
  }
  for (std::size_t i = 0; i < slot.size(); ++i) slot.data[i] += grad.data[i];
}

void Graph::accumulate(int id, Tensor&& grad) {
  Tensor& slot = grads_[static_cast<std::size_t>(id)];
  if (slot.data.empty()) {
    slot = std::move(grad);
    return;
  }
  for (std::size_t i = 0; i < slot.size(); ++i) slot.data[i] += grad.data[i];
}

int Graph::conv(int x, int weight, int bias, const ConvShape& shape) {
  Tensor y;
  kernels::conv2d_forward(value(x), param(weight), param(bias), shape, y);
  return push(std::move(y), [x, weight, bias, shape](Graph& g, const Tensor& grad) {
    Tensor dx;
    kernels::conv2d_backward(g.value(x), g.param(weight), shape, grad, &dx, g.param_grad(weight), g.param_grad(bias));
    g.accumulate(x, std::move(dx));
  });
}

int Graph::group_norm(int x, int gamma, int beta, int groups) {
  Tensor y;
  std::vector<float> mean;
  std::vector<float> rstd;
  kernels::group_norm_forward(value(x), param(gamma), param(beta), groups, 1e-5f, y, mean, rstd);
  return push(std::move(y), [x, gamma, beta, groups, mean = std::move(mean), rstd = std::move(rstd)](
                                Graph& g, const Tensor& grad) {
    Tensor dx;
    kernels::group_norm_backward(g.value(x), g.param(gamma), groups, mean, rstd, grad, dx, g.param_grad(gamma),
                                 g.param_grad(beta));
    g.accumulate(x, std::move(dx));
  });
}

int Graph::silu(int x) {
  Tensor y;
  kernels::silu_forward(value(x), y);
  return push(std::move(y), [x](Graph& g, const Tensor& grad) {
    Tensor dx;
    kernels::silu_backward(g.value(x), grad, dx);
    g.accumulate(x, std::move(dx));
  });
}

int Graph::add(int a, int b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb)) fail(ErrorCode::ShapeMismatch, "add: shapes differ");
  Tensor y = va;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += vb.data[i];
  return push(std::move(y), [a, b](Graph& g, const Tensor& grad) {
    g.accumulate(a, grad);
    g.accumulate(b, grad);
  });
}

int Graph::add_channel_bias(int x, int v) {
  const Tensor& vx = value(x);
  const Tensor& vv = value(v);
  if (vv.n != vx.n || vv.c != vx.c || vv.h != 1 || vv.w != 1) fail(ErrorCode::ShapeMismatch, "channel bias shape");
  Tensor y = vx;
  const std::size_t plane = y.plane();
  for (int n = 0; n < y.n; ++n) {
    for (int c = 0; c < y.c; ++c) {
      const float b = vv.data[static_cast<std::size_t>(n) * vv.c + c];
      float* p = y.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += b;
    }
  }
  return push(std::move(y), [x, v](Graph& g, const Tensor& grad) {
    Tensor dv(grad.n, grad.c, 1, 1);
    const std::size_t plane = grad.plane();
    for (int n = 0; n < grad.n; ++n) {
      for (int c = 0; c < grad.c; ++c) {
        const float* p = grad.sample(n) + c * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        dv.data[static_cast<std::size_t>(n) * grad.c + c] = static_cast<float>(acc);
      }
    }
    g.accumulate(x, grad);
    g.accumulate(v, std::move(dv));
  });
}

int Graph::concat(int a, int b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (va.n != vb.n || va.h != vb.h || va.w != vb.w) fail(ErrorCode::ShapeMismatch, "concat: spatial shapes differ");
  Tensor y(va.n, va.c + vb.c, va.h, va.w);
  for (int n = 0; n < va.n; ++n) {
    std::copy(va.sample(n), va.sample(n) + va.sample_size(), y.sample(n));
    std::copy(vb.sample(n), vb.sample(n) + vb.sample_size(), y.sample(n) + va.sample_size());
  }
  const int ca = va.c;
  const int cb = vb.c;
  return push(std::move(y), [a, b, ca, cb](Graph& g, const Tensor& grad) {
    Tensor da(grad.n, ca, grad.h, grad.w);
    Tensor db(grad.n, cb, grad.h, grad.w);
    for (int n = 0; n < grad.n; ++n) {
      const float* src = grad.sample(n);
      std::copy(src, src + da.sample_size(), da.sample(n));
      std::copy(src + da.sample_size(), src + grad.sample_size(), db.sample(n));
    }
    g.accumulate(a, std::move(da));
    g.accumulate(b, std::move(db));
  });
}

int Graph::avg_pool2(int x) {
  Tensor y;
  kernels::avg_pool2_forward(value(x), y);
  return push(std::move(y), [x](Graph& g, const Tensor& grad) {
    Tensor dx;
    kernels::avg_pool2_backward(grad, dx);
    g.accumulate(x, std::move(dx));
  });
}

int Graph::upsample2(int x) {
  Tensor y;
  kernels::upsample2_forward(value(x), y);
  return push(std::move(y), [x](Graph& g, const Tensor& grad) {
    Tensor dx;
    kernels::upsample2_backward(grad, dx);
    g.accumulate(x, std::move(dx));
  });
}

int Graph::linear(int x, int weight, int bias, int out_features) {
  Tensor y;
  kernels::linear_forward(value(x), param(weight), param(bias), out_features, y);
  return push(std::move(y), [x, weight, bias, out_features](Graph& g, const Tensor& grad) {
    Tensor dx;
    kernels::linear_backward(g.value(x), g.param(weight), out_features, grad, &dx, g.param_grad(weight),
                             g.param_grad(bias));
    g.accumulate(x, std::move(dx));
  });
}

int Graph::attention(int qkv) {
  Tensor y;
  std::vector<float> probs;
  kernels::attention_forward(value(qkv), y, probs);
  return push(std::move(y), [qkv, probs = std::move(probs)](Graph& g, const Tensor& grad) {
    Tensor dqkv;
    kernels::attention_backward(g.value(qkv), probs, grad, dqkv);
    g.accumulate(qkv, std::move(dqkv));
  });
}

int Graph::embedding_sum(std::span<const int> tables, const std::vector<std::vector<int>>& rows, int dim) {
  const int n = rows.empty() ? 0 : static_cast<int>(rows.front().size());
  Tensor y(n, dim, 1, 1);
  for (std::size_t slot = 0; slot < tables.size(); ++slot) {
    const auto table = param(tables[slot]);
    for (int i = 0; i < n; ++i) {
      const float* row = table.data() + static_cast<std::size_t>(rows[slot][i]) * dim;
      for (int d = 0; d < dim; ++d) y.data[static_cast<std::size_t>(i) * dim + d] += row[d];
    }
  }
  std::vector<int> table_ids(tables.begin(), tables.end());
  return push(std::move(y), [table_ids, rows, dim, n](Graph& g, const Tensor& grad) {
    for (std::size_t slot = 0; slot < table_ids.size(); ++slot) {
      auto dtable = g.param_grad(table_ids[slot]);
      for (int i = 0; i < n; ++i) {
        float* row = dtable.data() + static_cast<std::size_t>(rows[slot][i]) * dim;
        for (int d = 0; d < dim; ++d) row[d] += grad.data[static_cast<std::size_t>(i) * dim + d];
      }
    }
  });
}

void Graph::backward(int out, Tensor dout, Gradients& grads) {
  if (!record_) fail(ErrorCode::InvalidConfig, "backward on a graph built without recording");
  if (!dout.same_shape(value(out))) fail(ErrorCode::ShapeMismatch, "backward seed shape");
  param_grads_ = &grads;
  grads_.assign(nodes_.size(), Tensor{});
  grads_[static_cast<std::size_t>(out)] = std::move(dout);
  for (int id = out; id >= 0; --id) {
    Tensor& grad = grads_[static_cast<std::size_t>(id)];
    if (grad.data.empty()) continue;
    if (nodes_[static_cast<std::size_t>(id)].backward) {
      nodes_[static_cast<std::size_t>(id)].backward(*this, grad);
    }
    grad = Tensor{};
  }
  param_grads_ = nullptr;
}

}  // namespace relight
