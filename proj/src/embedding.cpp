#include "segsel/embedding.hpp"

#include <stdexcept>

#include "segsel/optim.hpp"

namespace segsel {

EmbeddingConfig EmbeddingConfig::preset(std::string_view name) {
  EmbeddingConfig cfg;
  if (name == "shallow") return cfg;
  if (name == "deep") {
    cfg.temporal_filters = 25;
    cfg.temporal_kernel = 10;
    cfg.spatial_filters = 25;
    cfg.activation = Activation::elu;
    cfg.pool_window = 3;
    cfg.pool_stride = 2;
    cfg.extra_blocks = {{40, 5, 2}, {40, 5, 1}, {40, 5, 1}};
    return cfg;
  }
  throw std::invalid_argument("unknown embedding preset '" + std::string(name) + "'");
}

std::size_t EmbeddingConfig::feature_dim() const {
  return extra_blocks.empty() ? spatial_filters : extra_blocks.back().filters;
}

std::vector<std::pair<std::size_t, std::size_t>> EmbeddingConfig::temporal_stages() const {
  std::vector<std::pair<std::size_t, std::size_t>> stages;
  stages.emplace_back(temporal_kernel, temporal_stride);
  if (pool_window > 0) stages.emplace_back(pool_window, pool_stride);
  for (const auto& b : extra_blocks) stages.emplace_back(b.kernel, b.stride);
  return stages;
}

namespace {

std::vector<std::string> stage_names(const EmbeddingConfig& cfg) {
  std::vector<std::string> names{"temporal conv"};
  if (cfg.pool_window > 0) names.emplace_back("pooling");
  for (std::size_t i = 0; i < cfg.extra_blocks.size(); ++i) names.push_back("block " + std::to_string(i) + " conv");
  return names;
}

void validate(const EmbeddingConfig& cfg) {
  if (cfg.temporal_filters == 0 || cfg.spatial_filters == 0) {
    throw std::invalid_argument("embedding: filter counts must be positive");
  }
  for (const auto& [k, s] : cfg.temporal_stages()) {
    if (k == 0 || s == 0) throw std::invalid_argument("embedding: kernel and stride must be positive");
  }
  for (const auto& b : cfg.extra_blocks) {
    if (b.filters == 0) throw std::invalid_argument("embedding: block filter count must be positive");
  }
}

}  // namespace

std::size_t EmbeddingConfig::output_length(std::size_t input_length) const {
  validate(*this);
  const auto names = stage_names(*this);
  const auto stages = temporal_stages();
  std::size_t len = input_length;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto [k, s] = stages[i];
    if (len < k) {
      throw std::invalid_argument("embedding: " + names[i] + " needs at least " + std::to_string(k) +
                                  " timepoints but receives " + std::to_string(len));
    }
    len = (len - k) / s + 1;
  }
  return len;
}

ParamStore init_embedding(const EmbeddingConfig& cfg, std::size_t channels, std::mt19937_64& rng) {
  validate(cfg);
  ParamStore store("embedding");
  const std::size_t f = cfg.temporal_filters, k = cfg.temporal_kernel;
  store.add("temporal", xavier_uniform({f, k}, k, f * k, rng));
  store.add("spatial", xavier_init({cfg.spatial_filters, channels * f, 1}, rng));
  store.add("spatial_bias", Tensor({cfg.spatial_filters}, 0.0));
  std::size_t in = cfg.spatial_filters;
  for (std::size_t i = 0; i < cfg.extra_blocks.size(); ++i) {
    const auto& b = cfg.extra_blocks[i];
    store.add("block" + std::to_string(i), xavier_init({b.filters, in, b.kernel}, rng));
    store.add("block" + std::to_string(i) + "_bias", Tensor({b.filters}, 0.0));
    in = b.filters;
  }
  return store;
}

namespace {

template <class Fetch>
Var embed_impl(Var signal, const ParamStore& params, const EmbeddingConfig& cfg, Fetch p) {
  if (signal.value().rank() != 2) throw std::invalid_argument("embed: signal must be [channels x timepoints]");
  cfg.output_length(signal.value().dim(1));
  const std::size_t channels = signal.value().dim(0);
  const Tensor& spatial = params.value("spatial");
  if (spatial.dim(1) != channels * cfg.temporal_filters) {
    throw std::invalid_argument("embed: spatial conv expects " +
                                std::to_string(spatial.dim(1) / cfg.temporal_filters) + " channels, got " +
                                std::to_string(channels));
  }
  Var x = channelwise_conv1d(signal, p("temporal"), cfg.temporal_stride);
  x = add_row_bias(conv1d(x, p("spatial"), 1), p("spatial_bias"));
  x = activate(x, cfg.activation);
  if (cfg.pool_window > 0) x = avg_pool1d(x, cfg.pool_window, cfg.pool_stride);
  for (std::size_t i = 0; i < cfg.extra_blocks.size(); ++i) {
    const std::string name = "block" + std::to_string(i);
    x = add_row_bias(conv1d(x, p(name), cfg.extra_blocks[i].stride), p(name + "_bias"));
    x = activate(x, cfg.activation);
  }
  return x;
}

}  // namespace

Var embed(Var signal, ParamStore& params, const EmbeddingConfig& cfg, bool trainable) {
  Tape& tape = *signal.tape();
  return embed_impl(signal, params, cfg, [&](const std::string& name) {
    return trainable ? tape.param(params, name) : tape.constant(params.value(name));
  });
}

FeatureSequence embed(const Tensor& signal, const ParamStore& params, const EmbeddingConfig& cfg) {
  Tape tape;
  Var features = embed_impl(tape.constant(signal), params, cfg,
                            [&](const std::string& name) { return tape.constant(params.value(name)); });
  FeatureSequence fs;
  fs.features = features.value();
  fs.input_length = signal.dim(1);
  fs.receptive_fields = receptive_fields(cfg, fs.input_length);
  return fs;
}

std::vector<FeatureSequence> embed_batch(const std::vector<Tensor>& signals, const ParamStore& params,
                                         const EmbeddingConfig& cfg) {
  std::vector<FeatureSequence> out;
  out.reserve(signals.size());
  for (const Tensor& s : signals) out.push_back(embed(s, params, cfg));
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> receptive_fields(const EmbeddingConfig& cfg,
                                                                  std::size_t input_length) {
  const std::size_t steps = cfg.output_length(input_length);
  std::size_t field = 1, jump = 1;
  for (const auto& [k, s] : cfg.temporal_stages()) {
    field += (k - 1) * jump;
    jump *= s;
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) out.emplace_back(t * jump, t * jump + field);
  return out;
}

std::pair<std::size_t, std::size_t> map_agent_time_to_input(const FeatureSequence& fs, std::size_t step) {
  if (step >= fs.receptive_fields.size()) {
    throw std::out_of_range("agent step " + std::to_string(step) + " out of range for " +
                            std::to_string(fs.receptive_fields.size()) + " steps");
  }
  return fs.receptive_fields[step];
}

}  // namespace segsel
