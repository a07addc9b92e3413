#include "relight/trainer.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "relight/error.hpp"

namespace relight {

namespace fs = std::filesystem;
using nlohmann::json;

void validate(const TrainConfig& c) {
  if (c.steps < 0) fail(ErrorCode::InvalidConfig, "train.steps must be >= 0");
  if (c.batch_size < 1) fail(ErrorCode::InvalidConfig, "train.batch_size must be >= 1");
  if (!(c.learning_rate > 0.0)) fail(ErrorCode::InvalidConfig, "train.learning_rate must be > 0");
  if (!(c.relight_ratio >= 0.0 && c.relight_ratio <= 1.0)) fail(ErrorCode::InvalidConfig, "train.relight_ratio must be in [0,1]");
  if (!(c.dropout_p >= 0.0 && c.dropout_p <= 1.0)) fail(ErrorCode::InvalidConfig, "train.dropout_p must be in [0,1]");
  if (c.ema_decay && !(*c.ema_decay >= 0.0 && *c.ema_decay < 1.0)) fail(ErrorCode::InvalidConfig, "train.ema_decay must be in [0,1)");
  if (c.checkpoint_every < 0) fail(ErrorCode::InvalidConfig, "train.checkpoint_every must be >= 0");
  if (!(c.clip_norm > 0.0)) fail(ErrorCode::InvalidConfig, "train.clip_norm must be > 0");
  if (c.time_budget_s < 0.0) fail(ErrorCode::InvalidConfig, "train.time_budget_s must be >= 0");
  make_schedule(c.schedule_steps, c.beta_start, c.beta_end);
}

AdamState AdamState::zeros_like(const ModelParams& params) {
  AdamState s;
  for (const ParamTensor& t : params.tensors) {
    s.m.emplace_back(t.values.size(), 0.0f);
    s.v.emplace_back(t.values.size(), 0.0f);
  }
  return s;
}

Checkpoint initial_checkpoint(const UNetConfig& model, const TrainConfig& config, std::uint64_t manifest_hash) {
  validate(config);
  Checkpoint c;
  c.params = init_model(model, config.seed);
  c.adam = AdamState::zeros_like(c.params);
  if (config.ema_decay) c.ema = c.params;
  c.config = config;
  c.manifest_hash = manifest_hash;
  return c;
}

StepLosses compute_gradients(const ModelParams& params, const TrainingBatch& batch, Gradients& grads) {
  Graph graph(params, true);
  const int out = build_forward(graph, params, batch.packed.channels,
                                make_conditioning(batch.packed, batch.timesteps, batch.labels));
  const Tensor& pred = graph.value(out);
  if (!pred.same_shape(batch.eps)) fail(ErrorCode::ShapeMismatch, "prediction and noise shapes differ");

  StepLosses losses;
  Tensor dout(pred.n, pred.c, pred.h, pred.w);
  const double scale = 2.0 / static_cast<double>(pred.size());
  const std::size_t per = pred.sample_size();
  double total = 0.0;
  double relight = 0.0;
  double t2i = 0.0;
  for (int i = 0; i < pred.n; ++i) {
    double sum = 0.0;
    const float* p = pred.sample(i);
    const float* e = batch.eps.sample(i);
    float* d = dout.sample(i);
    for (std::size_t k = 0; k < per; ++k) {
      const double diff = static_cast<double>(p[k]) - e[k];
      sum += diff * diff;
      d[k] = static_cast<float>(scale * diff);
    }
    total += sum;
    if (batch.tasks[static_cast<std::size_t>(i)] == Task::Relight) {
      relight += sum / per;
      ++losses.relight_count;
    } else {
      t2i += sum / per;
      ++losses.t2i_count;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  losses.total = total / static_cast<double>(pred.size());
  losses.relight = losses.relight_count ? relight / losses.relight_count : nan;
  losses.t2i = losses.t2i_count ? t2i / losses.t2i_count : nan;

  grads.zero();
  graph.backward(out, std::move(dout), grads);
  return losses;
}

void apply_update(Checkpoint& ckpt, Gradients& grads, double lr) {
  constexpr double b1 = 0.9;
  constexpr double b2 = 0.999;
  constexpr double eps = 1e-8;
  if (ckpt.config.clip_grad) {
    const double norm = std::sqrt(grads.squared_norm());
    if (norm > ckpt.config.clip_norm) {
      const float s = static_cast<float>(ckpt.config.clip_norm / norm);
      for (auto& g : grads.values)
        for (float& v : g) v *= s;
    }
  }
  ++ckpt.step;
  const double c1 = 1.0 - std::pow(b1, ckpt.step);
  const double c2 = 1.0 - std::pow(b2, ckpt.step);
  for (std::size_t t = 0; t < ckpt.params.tensors.size(); ++t) {
    std::vector<float>& w = ckpt.params.tensors[t].values;
    std::vector<float>& m = ckpt.adam.m[t];
    std::vector<float>& v = ckpt.adam.v[t];
    const std::vector<float>& g = grads.values[t];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double mk = b1 * m[k] + (1.0 - b1) * g[k];
      const double vk = b2 * v[k] + (1.0 - b2) * static_cast<double>(g[k]) * g[k];
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      w[k] = static_cast<float>(w[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + eps));
    }
  }
  if (ckpt.ema && ckpt.config.ema_decay) {
    const double d = *ckpt.config.ema_decay;
    for (std::size_t t = 0; t < ckpt.params.tensors.size(); ++t) {
      std::vector<float>& e = ckpt.ema->tensors[t].values;
      const std::vector<float>& w = ckpt.params.tensors[t].values;
      for (std::size_t k = 0; k < e.size(); ++k) e[k] = static_cast<float>(d * e[k] + (1.0 - d) * w[k]);
    }
  }
}

StepLosses train_step(Checkpoint& ckpt, const TrainingBatch& batch) {
  Gradients grads = Gradients::zeros_like(ckpt.params);
  const StepLosses losses = compute_gradients(ckpt.params, batch, grads);
  if (!std::isfinite(losses.total)) {
    char msg[160];
    std::snprintf(msg, sizeof msg, "loss %g at step %d (relight %g, t2i %g)", losses.total, ckpt.step + 1,
                  losses.relight, losses.t2i);
    fail(ErrorCode::NonFiniteLoss, msg);
  }
  apply_update(ckpt, grads, ckpt.config.learning_rate);
  return losses;
}

Checkpoint train(const LoadedDataset& data, const RealDomainSet& real, Checkpoint ckpt, const fs::path& out_dir,
                 const TrainCallbacks& callbacks) {
  const TrainConfig& config = ckpt.config;
  validate(config);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create " + out_dir.string());

  const fs::path log_path = out_dir / "train_log.csv";
  const bool fresh = !fs::exists(log_path);
  std::ofstream log(log_path, std::ios::app);
  if (!log) fail(ErrorCode::IoFailure, "cannot open " + log_path.string());
  if (fresh) log << "step,total_loss,relight_loss,t2i_loss,lr\n";

  const NoiseSchedule schedule = make_schedule(config.schedule_steps, config.beta_start, config.beta_end);
  const DropoutProbs probs = DropoutProbs::uniform(config.dropout_p);
  const auto start = std::chrono::steady_clock::now();
  while (ckpt.step < config.steps) {
    if (config.time_budget_s > 0.0) {
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
      if (elapsed.count() >= config.time_budget_s) break;
    }
    // Each step owns its stream so a resumed run draws the same batches.
    Rng rng(derive_seed(config.seed, 0x51E9000000ull + static_cast<std::uint64_t>(ckpt.step)));
    const std::vector<RelightTuple> tuples = mix_batch(data, real, config.batch_size, config.relight_ratio, rng);
    const TrainingBatch batch = make_training_batch(tuples, schedule, rng, probs);
    const StepLosses losses = train_step(ckpt, batch);

    char line[160];
    std::snprintf(line, sizeof line, "%d,%.8g,%.8g,%.8g,%.8g\n", ckpt.step, losses.total, losses.relight, losses.t2i,
                  config.learning_rate);
    log << line;
    if (callbacks.on_step) callbacks.on_step(ckpt.step, losses);
    if (config.checkpoint_every > 0 && ckpt.step % config.checkpoint_every == 0) {
      log.flush();
      save_checkpoint(ckpt, out_dir / "checkpoint.rlck");
    }
  }
  log.flush();
  save_checkpoint(ckpt, out_dir / "final.rlck");
  return ckpt;
}

// ---------------------------------------------------------------------------
// Checkpoint file: "RLCK <version> <header bytes>\n", a JSON header, then the
// float32 little-endian payload.

namespace {

constexpr char kMagic[] = "RLCK";

void append_floats(std::vector<std::uint8_t>& out, const std::vector<float>& values) {
  const std::size_t at = out.size();
  out.resize(at + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    std::memcpy(out.data() + at + 4 * i, &bits, 4);
  }
}

void read_floats(const std::uint8_t* src, std::vector<float>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, src + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    values[i] = std::bit_cast<float>(bits);
  }
}

struct Group {
  const char* name;
  std::vector<const std::vector<float>*> data;
};

[[noreturn]] void corrupt(const std::string& msg) { fail(ErrorCode::CorruptCheckpoint, msg); }

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<Group> groups{{"param", {}}, {"adam_m", {}}, {"adam_v", {}}};
  for (std::size_t t = 0; t < ckpt.params.tensors.size(); ++t) {
    groups[0].data.push_back(&ckpt.params.tensors[t].values);
    groups[1].data.push_back(&ckpt.adam.m[t]);
    groups[2].data.push_back(&ckpt.adam.v[t]);
  }
  if (ckpt.ema) {
    groups.push_back({"ema", {}});
    for (const ParamTensor& t : ckpt.ema->tensors) groups.back().data.push_back(&t.values);
  }

  std::vector<std::uint8_t> payload;
  json tensors = json::array();
  for (const Group& g : groups) {
    for (std::size_t t = 0; t < g.data.size(); ++t) {
      const ParamTensor& p = ckpt.params.tensors[t];
      tensors.push_back({{"group", g.name}, {"name", p.name}, {"shape", p.shape}, {"offset", payload.size()},
                         {"count", g.data[t]->size()}});
      append_floats(payload, *g.data[t]);
    }
  }
  json header{{"model", to_json(ckpt.params.config)},
              {"init_seed", hex64(ckpt.params.init_seed)},
              {"train", to_json(ckpt.config)},
              {"step", ckpt.step},
              {"manifest_hash", hex64(ckpt.manifest_hash)},
              {"has_ema", ckpt.ema.has_value()},
              {"dtype", "float32-le"},
              {"tensors", tensors},
              {"payload_bytes", payload.size()},
              {"payload_hash", hex64(fnv1a64(payload.data(), payload.size()))}};
  const std::string head = header.dump();
  const std::string first = std::string(kMagic) + " " + std::to_string(kCheckpointVersion) + " " +
                            std::to_string(head.size()) + "\n";
  std::vector<std::uint8_t> out(first.begin(), first.end());
  out.insert(out.end(), head.begin(), head.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  const auto nl = std::find(bytes.begin(), bytes.end(), std::uint8_t{'\n'});
  if (nl == bytes.end() || nl - bytes.begin() > 64) corrupt("missing checkpoint preamble");
  const std::string first(bytes.begin(), nl);
  char magic[8] = {};
  int version = 0;
  unsigned long long head_len = 0;
  if (std::sscanf(first.c_str(), "%7s %d %llu", magic, &version, &head_len) != 3 || std::string(magic) != kMagic) {
    corrupt("bad checkpoint preamble '" + first + "'");
  }
  if (version != kCheckpointVersion) {
    fail(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                         std::to_string(kCheckpointVersion));
  }
  const std::size_t head_at = static_cast<std::size_t>(nl - bytes.begin()) + 1;
  if (bytes.size() < head_at + head_len) corrupt("checkpoint header truncated");
  json header;
  try {
    header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(head_at),
                         bytes.begin() + static_cast<std::ptrdiff_t>(head_at + head_len));
  } catch (const json::exception& e) {
    corrupt(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  try {
    const std::size_t payload_at = head_at + head_len;
    const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
    if (bytes.size() != payload_at + payload_bytes) {
      corrupt("payload is " + std::to_string(bytes.size() - payload_at) + " bytes, header says " +
              std::to_string(payload_bytes));
    }
    const std::uint8_t* payload = bytes.data() + payload_at;
    if (hex64(fnv1a64(payload, payload_bytes)) != header.at("payload_hash").get<std::string>()) {
      corrupt("payload hash mismatch");
    }

    Checkpoint c;
    const UNetConfig model = unet_config_from_json(header.at("model"), "checkpoint.model");
    const std::uint64_t seed = std::stoull(header.at("init_seed").get<std::string>(), nullptr, 16);
    c.config = train_config_from_json(header.at("train"), "checkpoint.train");
    c.step = header.at("step").get<int>();
    c.manifest_hash = std::stoull(header.at("manifest_hash").get<std::string>(), nullptr, 16);
    // Shapes and names come from the architecture; the header must agree.
    c.params = init_model(model, seed);
    c.adam = AdamState::zeros_like(c.params);
    if (header.at("has_ema").get<bool>()) c.ema = c.params;

    const std::size_t n = c.params.tensors.size();
    const json& tensors = header.at("tensors");
    const std::size_t groups = c.ema ? 4 : 3;
    if (tensors.size() != groups * n) corrupt("tensor table has " + std::to_string(tensors.size()) + " entries");
    for (std::size_t g = 0; g < groups; ++g) {
      for (std::size_t t = 0; t < n; ++t) {
        const json& e = tensors.at(g * n + t);
        ParamTensor& p = c.params.tensors[t];
        std::vector<float>* dst = g == 0 ? &p.values : g == 1 ? &c.adam.m[t] : g == 2 ? &c.adam.v[t] : &c.ema->tensors[t].values;
        if (e.at("name").get<std::string>() != p.name || e.at("shape").get<std::vector<int>>() != p.shape ||
            e.at("count").get<std::size_t>() != dst->size()) {
          corrupt("tensor '" + e.at("name").get<std::string>() + "' disagrees with the architecture");
        }
        const std::size_t offset = e.at("offset").get<std::size_t>();
        if (offset + 4 * dst->size() > payload_bytes) corrupt("tensor '" + p.name + "' runs past the payload");
        read_floats(payload + offset, *dst);
      }
    }
    return c;
  } catch (const json::exception& e) {
    corrupt(std::string("checkpoint header field: ") + e.what());
  } catch (const std::invalid_argument&) {
    corrupt("checkpoint header has a malformed hash");
  }
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(ckpt);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(ErrorCode::IoFailure, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::IoFailure, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot move checkpoint into " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

json to_json(const TrainConfig& c) {
  json j{{"steps", c.steps},
         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},
         {"relight_ratio", c.relight_ratio},
         {"dropout_p", c.dropout_p},
         {"ema_decay", c.ema_decay ? json(*c.ema_decay) : json(nullptr)},
         {"checkpoint_every", c.checkpoint_every},
         {"seed", c.seed},
         {"clip_grad", c.clip_grad},
         {"clip_norm", c.clip_norm},
         {"schedule_steps", c.schedule_steps},
         {"beta_start", c.beta_start},
         {"beta_end", c.beta_end},
         {"time_budget_s", c.time_budget_s}};
  return j;
}

TrainConfig train_config_from_json(const json& j, const std::string& path) {
  StrictObject o(j, path);
  TrainConfig c;
  o.get("steps", c.steps);
  o.get("batch_size", c.batch_size);
  o.get("learning_rate", c.learning_rate);
  o.get("relight_ratio", c.relight_ratio);
  o.get("dropout_p", c.dropout_p);
  if (const json* e = o.child("ema_decay")) {
    if (e->is_null()) c.ema_decay.reset();
    else c.ema_decay = e->get<double>();
  }
  o.get("checkpoint_every", c.checkpoint_every);
  o.get("seed", c.seed);
  o.get("clip_grad", c.clip_grad);
  o.get("clip_norm", c.clip_norm);
  o.get("schedule_steps", c.schedule_steps);
  o.get("beta_start", c.beta_start);
  o.get("beta_end", c.beta_end);
  o.get("time_budget_s", c.time_budget_s);
  o.finish();
  return c;
}

}  // namespace relight
