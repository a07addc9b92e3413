#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "relight/graph.hpp"
#include "relight/renderer.hpp"
#include "relight/tensor.hpp"

namespace relight {

/// Channel layout of the network input: noised target, input portrait,
/// tonemapped environment.
inline constexpr int kPackedChannels = 9;
inline constexpr int kImageChannelOffset = 3;
inline constexpr int kEnvChannelOffset = 6;

struct UNetConfig {
  int in_channels = kPackedChannels;
  int base_channels = 32;
  std::vector<int> channel_mults{1, 2, 4};
  bool attention_at_lowest = true;
  std::vector<int> label_vocab_sizes{kLabelVocab[0], kLabelVocab[1]};
  int embed_dim = 128;
  int resolution = 64;

  bool operator==(const UNetConfig&) const = default;
};

void validate(const UNetConfig& config);

struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
  bool operator==(const ParamTensor&) const = default;
};

struct ModelParams {
  UNetConfig config;
  std::uint64_t init_seed = 0;
  std::vector<ParamTensor> tensors;

  std::size_t count() const;
  int index_of(const std::string& name) const;
  const ParamTensor& get(const std::string& name) const { return tensors[static_cast<std::size_t>(index_of(name))]; }
  ParamTensor& get(const std::string& name) { return tensors[static_cast<std::size_t>(index_of(name))]; }
  void reindex();
  bool operator==(const ModelParams& o) const {
    return config == o.config && init_seed == o.init_seed && tensors == o.tensors;
  }

 private:
  std::unordered_map<std::string, int> index_;
};

/// Deterministic per seed. The first convolution's weights over the six
/// condition channels start at exactly zero.
ModelParams init_model(const UNetConfig& config, std::uint64_t seed);

/// Closed-form parameter count:
///   conv(i,o,k) = o*i*k*k + o, norm(c) = 2c, lin(i,o) = i*o + o
///   res(i,o)    = norm(i) + conv(i,o,3) + lin(E,o) + norm(o) + conv(o,o,3) + [i!=o] conv(i,o,1)
///   total = conv(9,c0,3) + lin(c0,E) + lin(E,E) + sum_k (V_k+1)*E
///         + sum_l res(c_{l-1}, c_l)                      (encoder, c_{-1} = c0)
///         + res(cL,cL) + [attn] (norm(cL) + conv(cL,3cL,1) + conv(cL,cL,1))
///         + sum_l res(in_l, c_l) + sum_{l>0} conv(c_l,c_l,3)  (decoder)
///         + norm(c0) + conv(c0,3,3)
/// where in_l = (channels coming up) + c_l from the skip.
std::size_t closed_form_param_count(const UNetConfig& config);

/// Per-sample conditioning beyond the packed planes.
struct StepConditioning {
  std::vector<int> timesteps;
  std::vector<Label> labels;
  std::vector<std::uint8_t> label_dropped;
};

/// Builds the forward pass on `graph` and returns the output node id
/// (an (n,3,h,w) epsilon prediction).
int build_forward(Graph& graph, const ModelParams& params, const Tensor& packed, const StepConditioning& cond);

/// Inference convenience wrapper.
Tensor forward(const ModelParams& params, const Tensor& packed, const StepConditioning& cond);

/// Sinusoidal timestep features, (n, dim, 1, 1).
Tensor timestep_features(std::span<const int> timesteps, int dim);

}  // namespace relight
