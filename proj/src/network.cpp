#include "relight/network.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "relight/error.hpp"
#include "relight/random.hpp"

namespace relight {

namespace {

int norm_groups(int channels) { return std::gcd(channels, 8); }

std::vector<int> level_channels(const UNetConfig& c) {
  std::vector<int> out;
  for (int m : c.channel_mults) out.push_back(c.base_channels * m);
  return out;
}

// Enumerates every parameter tensor of the architecture in a fixed order.
class Layout {
 public:
  explicit Layout(const UNetConfig& c) : c_(c) {
    const std::vector<int> ch = level_channels(c);
    const int c0 = c.base_channels;
    const int e = c.embed_dim;
    conv("conv_in", c.in_channels, c0, 3);
    lin("time.fc1", c0, e);
    lin("time.fc2", e, e);
    for (std::size_t k = 0; k < c.label_vocab_sizes.size(); ++k) {
      add("label" + std::to_string(k) + ".table", {c.label_vocab_sizes[k] + 1, e}, Init::Embedding, 0);
    }
    int prev = c0;
    for (std::size_t l = 0; l < ch.size(); ++l) {
      res("down" + std::to_string(l), prev, ch[l]);
      prev = ch[l];
    }
    res("mid.res", prev, prev);
    if (c.attention_at_lowest) {
      norm("mid.attn.norm", prev);
      conv("mid.attn.qkv", prev, 3 * prev, 1);
      conv("mid.attn.proj", prev, prev, 1);
    }
    for (int l = static_cast<int>(ch.size()) - 1; l >= 0; --l) {
      res("up" + std::to_string(l), prev + ch[static_cast<std::size_t>(l)], ch[static_cast<std::size_t>(l)]);
      prev = ch[static_cast<std::size_t>(l)];
      if (l > 0) conv("up" + std::to_string(l) + ".upconv", prev, prev, 3);
    }
    norm("out.norm", prev);
    conv("out.conv", prev, 3, 3);
  }

  enum class Init { FanIn, Zero, One, Embedding };
  struct Entry {
    std::string name;
    std::vector<int> shape;
    Init init;
    int fan_in;
  };
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  void add(std::string name, std::vector<int> shape, Init init, int fan_in) {
    entries_.push_back({std::move(name), std::move(shape), init, fan_in});
  }
  void conv(const std::string& p, int cin, int cout, int k) {
    add(p + ".weight", {cout, cin, k, k}, Init::FanIn, cin * k * k);
    add(p + ".bias", {cout}, Init::Zero, 0);
  }
  void lin(const std::string& p, int in, int out) {
    add(p + ".weight", {out, in}, Init::FanIn, in);
    add(p + ".bias", {out}, Init::Zero, 0);
  }
  void norm(const std::string& p, int ch) {
    add(p + ".gamma", {ch}, Init::One, 0);
    add(p + ".beta", {ch}, Init::Zero, 0);
  }
  void res(const std::string& p, int cin, int cout) {
    norm(p + ".norm1", cin);
    conv(p + ".conv1", cin, cout, 3);
    lin(p + ".emb", c_.embed_dim, cout);
    norm(p + ".norm2", cout);
    conv(p + ".conv2", cout, cout, 3);
    if (cin != cout) conv(p + ".skip", cin, cout, 1);
  }

  const UNetConfig& c_;
  std::vector<Entry> entries_;
};

std::size_t product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

}  // namespace

void validate(const UNetConfig& c) {
  if (c.in_channels != kPackedChannels) fail(ErrorCode::InvalidConfig, "in_channels must be 9");
  if (c.base_channels < 1 || c.embed_dim < 2 || c.embed_dim % 2 != 0 || c.channel_mults.empty()) {
    fail(ErrorCode::InvalidConfig, "base_channels, embed_dim or channel_mults out of range");
  }
  if (c.base_channels % 2 != 0) fail(ErrorCode::InvalidConfig, "base_channels must be even");
  for (int m : c.channel_mults) {
    if (m < 1) fail(ErrorCode::InvalidConfig, "channel multipliers must be >= 1");
  }
  for (int v : c.label_vocab_sizes) {
    if (v < 1) fail(ErrorCode::InvalidConfig, "label vocabularies must be nonempty");
  }
  const int factor = 1 << (c.channel_mults.size() - 1);
  if (c.resolution < 1 || c.resolution % factor != 0) {
    fail(ErrorCode::InvalidConfig, "resolution " + std::to_string(c.resolution) + " not divisible by " +
                                       std::to_string(factor));
  }
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const ParamTensor& t : tensors) n += t.values.size();
  return n;
}

int ModelParams::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorCode::InvalidConfig, "no parameter named " + name);
  return it->second;
}

void ModelParams::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < tensors.size(); ++i) index_[tensors[i].name] = static_cast<int>(i);
}

ModelParams init_model(const UNetConfig& config, std::uint64_t seed) {
  validate(config);
  ModelParams params;
  params.config = config;
  params.init_seed = seed;
  Rng rng(derive_seed(seed, 0x1417));
  std::normal_distribution<float> normal(0.0f, 1.0f);
  const Layout layout(config);
  for (const Layout::Entry& e : layout.entries()) {
    ParamTensor t{e.name, e.shape, std::vector<float>(product(e.shape), 0.0f)};
    switch (e.init) {
      case Layout::Init::FanIn: {
        const float std = 1.0f / std::sqrt(static_cast<float>(e.fan_in));
        for (float& v : t.values) v = normal(rng) * std;
        break;
      }
      case Layout::Init::One:
        std::fill(t.values.begin(), t.values.end(), 1.0f);
        break;
      case Layout::Init::Embedding:
        for (float& v : t.values) v = normal(rng) * 0.5f;
        break;
      case Layout::Init::Zero:
        break;
    }
    params.tensors.push_back(std::move(t));
  }
  // Condition channels of the first convolution start at zero.
  ParamTensor& w = params.tensors.front();
  const int cout = w.shape[0];
  const int cin = w.shape[1];
  for (int o = 0; o < cout; ++o) {
    for (int i = kImageChannelOffset; i < cin; ++i) {
      for (int k = 0; k < 9; ++k) w.values[(static_cast<std::size_t>(o) * cin + i) * 9 + k] = 0.0f;
    }
  }
  params.reindex();
  return params;
}

std::size_t closed_form_param_count(const UNetConfig& c) {
  const auto conv = [](std::size_t i, std::size_t o, std::size_t k) { return o * i * k * k + o; };
  const auto norm = [](std::size_t ch) { return 2 * ch; };
  const auto lin = [](std::size_t i, std::size_t o) { return i * o + o; };
  const std::size_t e = static_cast<std::size_t>(c.embed_dim);
  const auto res = [&](std::size_t i, std::size_t o) {
    return norm(i) + conv(i, o, 3) + lin(e, o) + norm(o) + conv(o, o, 3) + (i != o ? conv(i, o, 1) : 0);
  };
  const std::vector<int> ch = level_channels(c);
  const std::size_t c0 = static_cast<std::size_t>(c.base_channels);
  std::size_t total = conv(static_cast<std::size_t>(c.in_channels), c0, 3) + lin(c0, e) + lin(e, e);
  for (int v : c.label_vocab_sizes) total += static_cast<std::size_t>(v + 1) * e;
  std::size_t prev = c0;
  for (int cl : ch) {
    total += res(prev, static_cast<std::size_t>(cl));
    prev = static_cast<std::size_t>(cl);
  }
  total += res(prev, prev);
  if (c.attention_at_lowest) total += norm(prev) + conv(prev, 3 * prev, 1) + conv(prev, prev, 1);
  for (int l = static_cast<int>(ch.size()) - 1; l >= 0; --l) {
    const std::size_t cl = static_cast<std::size_t>(ch[static_cast<std::size_t>(l)]);
    total += res(prev + cl, cl);
    prev = cl;
    if (l > 0) total += conv(cl, cl, 3);
  }
  total += norm(prev) + conv(prev, 3, 3);
  return total;
}

Tensor timestep_features(std::span<const int> timesteps, int dim) {
  Tensor out(static_cast<int>(timesteps.size()), dim, 1, 1);
  const int half = dim / 2;
  for (std::size_t n = 0; n < timesteps.size(); ++n) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double arg = timesteps[n] * freq;
      out.data[n * dim + i] = static_cast<float>(std::sin(arg));
      out.data[n * dim + half + i] = static_cast<float>(std::cos(arg));
    }
  }
  return out;
}

namespace {

struct Builder {
  Graph& g;
  const ModelParams& p;
  int emb_act = -1;

  int idx(const std::string& name) const { return p.index_of(name); }

  int conv(int x, const std::string& prefix, int cin, int cout, int k) {
    return g.conv(x, idx(prefix + ".weight"), idx(prefix + ".bias"), {cin, cout, k});
  }
  int norm(int x, const std::string& prefix, int ch) {
    return g.group_norm(x, idx(prefix + ".gamma"), idx(prefix + ".beta"), norm_groups(ch));
  }
  int res(int x, const std::string& prefix, int cin, int cout) {
    int h = g.silu(norm(x, prefix + ".norm1", cin));
    h = conv(h, prefix + ".conv1", cin, cout, 3);
    const int e = g.linear(emb_act, idx(prefix + ".emb.weight"), idx(prefix + ".emb.bias"), cout);
    h = g.add_channel_bias(h, e);
    h = g.silu(norm(h, prefix + ".norm2", cout));
    h = conv(h, prefix + ".conv2", cout, cout, 3);
    const int skip = cin == cout ? x : conv(x, prefix + ".skip", cin, cout, 1);
    return g.add(h, skip);
  }
  int attention(int x, const std::string& prefix, int ch) {
    const int h = norm(x, prefix + ".norm", ch);
    const int qkv = conv(h, prefix + ".qkv", ch, 3 * ch, 1);
    const int a = g.attention(qkv);
    return g.add(x, conv(a, prefix + ".proj", ch, ch, 1));
  }
};

}  // namespace

int build_forward(Graph& graph, const ModelParams& params, const Tensor& packed, const StepConditioning& cond) {
  const UNetConfig& c = params.config;
  if (packed.c != c.in_channels || packed.h != c.resolution || packed.w != c.resolution) {
    fail(ErrorCode::ShapeMismatch, "packed input is (" + std::to_string(packed.c) + "," + std::to_string(packed.h) +
                                       "," + std::to_string(packed.w) + "), model expects (" +
                                       std::to_string(c.in_channels) + "," + std::to_string(c.resolution) + "," +
                                       std::to_string(c.resolution) + ")");
  }
  const std::size_t n = static_cast<std::size_t>(packed.n);
  if (cond.timesteps.size() != n || cond.labels.size() != n || cond.label_dropped.size() != n) {
    fail(ErrorCode::ShapeMismatch, "conditioning batch size does not match input");
  }

  std::vector<std::vector<int>> rows(c.label_vocab_sizes.size(), std::vector<int>(n));
  std::vector<int> tables;
  for (std::size_t k = 0; k < c.label_vocab_sizes.size(); ++k) {
    tables.push_back(params.index_of("label" + std::to_string(k) + ".table"));
    for (std::size_t i = 0; i < n; ++i) {
      const int v = k < cond.labels[i].size() ? cond.labels[i][k] : 0;
      if (cond.label_dropped[i]) {
        rows[k][i] = c.label_vocab_sizes[k];  // learned null row
      } else {
        if (v < 0 || v >= c.label_vocab_sizes[k]) {
          fail(ErrorCode::LabelOutOfRange, "label slot " + std::to_string(k) + " value " + std::to_string(v));
        }
        rows[k][i] = v;
      }
    }
  }

  Builder b{graph, params};
  const int tfeat = graph.constant(timestep_features(cond.timesteps, c.base_channels));
  int temb = graph.linear(tfeat, b.idx("time.fc1.weight"), b.idx("time.fc1.bias"), c.embed_dim);
  temb = graph.linear(graph.silu(temb), b.idx("time.fc2.weight"), b.idx("time.fc2.bias"), c.embed_dim);
  temb = graph.add(temb, graph.embedding_sum(tables, rows, c.embed_dim));
  b.emb_act = graph.silu(temb);

  const std::vector<int> ch = level_channels(c);
  int h = b.conv(graph.constant(packed), "conv_in", c.in_channels, c.base_channels, 3);
  std::vector<int> skips;
  int prev = c.base_channels;
  for (std::size_t l = 0; l < ch.size(); ++l) {
    h = b.res(h, "down" + std::to_string(l), prev, ch[l]);
    prev = ch[l];
    skips.push_back(h);
    if (l + 1 < ch.size()) h = graph.avg_pool2(h);
  }
  h = b.res(h, "mid.res", prev, prev);
  if (c.attention_at_lowest) h = b.attention(h, "mid.attn", prev);
  for (int l = static_cast<int>(ch.size()) - 1; l >= 0; --l) {
    const int cl = ch[static_cast<std::size_t>(l)];
    h = graph.concat(h, skips[static_cast<std::size_t>(l)]);
    h = b.res(h, "up" + std::to_string(l), prev + cl, cl);
    prev = cl;
    if (l > 0) {
      h = graph.upsample2(h);
      h = b.conv(h, "up" + std::to_string(l) + ".upconv", cl, cl, 3);
    }
  }
  h = graph.silu(b.norm(h, "out.norm", prev));
  return b.conv(h, "out.conv", prev, 3, 3);
}

Tensor forward(const ModelParams& params, const Tensor& packed, const StepConditioning& cond) {
  Graph graph(params, false);
  const int out = build_forward(graph, params, packed, cond);
  return graph.take(out);
}

}  // namespace relight
