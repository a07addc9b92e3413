#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "relight/kernels.hpp"
#include "relight/tensor.hpp"

namespace relight {

struct ModelParams;

/// Gradient buffers laid out parallel to ModelParams::tensors.
struct Gradients {
  std::vector<std::vector<float>> values;

  static Gradients zeros_like(const ModelParams& params);
  void zero();
  double squared_norm() const;
};

/// Reverse-mode tape over whole-tensor ops. Node ids index into the tape in
/// creation order, so replaying it backwards is a valid topological order.
class Graph {
 public:
  /// With `record` false no backward closures are kept (inference).
  Graph(const ModelParams& params, bool record);

  int constant(Tensor value);
  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor take(int id) { return std::move(nodes_[static_cast<std::size_t>(id)].value); }

  int conv(int x, int weight, int bias, const ConvShape& shape);
  int group_norm(int x, int gamma, int beta, int groups);
  int silu(int x);
  int add(int a, int b);
  /// x (n,c,h,w) plus a per-sample channel vector v (n,c,1,1).
  int add_channel_bias(int x, int v);
  int concat(int a, int b);
  int avg_pool2(int x);
  int upsample2(int x);
  int linear(int x, int weight, int bias, int out_features);
  int attention(int qkv);
  /// Sum over label slots of table rows; `rows[slot][sample]` are row indices.
  int embedding_sum(std::span<const int> tables, const std::vector<std::vector<int>>& rows, int dim);

  /// Seeds d(out) and accumulates parameter gradients into `grads`.
  void backward(int out, Tensor dout, Gradients& grads);

 private:
  using BackwardFn = std::function<void(Graph&, const Tensor& grad)>;
  struct Node {
    Tensor value;
    BackwardFn backward;
  };

  int push(Tensor value, BackwardFn fn);
  std::span<const float> param(int index) const;
  std::span<float> param_grad(int index);
  void accumulate(int id, const Tensor& grad);
  void accumulate(int id, Tensor&& grad);

  const ModelParams& params_;
  bool record_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  Gradients* param_grads_ = nullptr;
};

}  // namespace relight
