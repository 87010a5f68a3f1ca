#include <sstream>
#include <stdexcept>

#include "bytes.hpp"
#include "segsel/trainer.hpp"

namespace segsel {

namespace {

constexpr char kModelMagic[4] = {'S', 'G', 'M', 'D'};
constexpr char kCheckpointMagic[4] = {'S', 'G', 'C', 'K'};
constexpr std::uint32_t kModelVersion = 1;
constexpr std::uint32_t kCheckpointVersion = 1;

void write_magic(detail::ByteWriter& w, const char (&magic)[4], std::uint32_t version) {
  w.raw(magic, 4);
  w.u32(version);
}

void read_magic(detail::ByteReader& r, const char (&magic)[4], std::uint32_t version, const char* kind) {
  char got[4];
  r.raw(got, 4, "magic");
  if (std::string(got, 4) != std::string(magic, 4)) throw FormatError(std::string("not a ") + kind + " file", 0);
  const std::uint32_t v = r.u32("version");
  if (v != version) {
    throw FormatError(std::string("unsupported ") + kind + " version " + std::to_string(v), r.offset() - 4);
  }
}

void write_tensor(detail::ByteWriter& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u64(d);
  for (double v : t.storage()) w.f64(v);
}

Tensor read_tensor(detail::ByteReader& r) {
  const std::uint32_t rank = r.u32("tensor rank");
  if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), r.offset() - 4);
  Tensor::Shape shape(rank);
  for (auto& d : shape) d = r.u64("tensor shape");
  const std::size_t n = shape_size(shape);
  r.need(n * 8, "tensor data");
  Tensor t(shape, 0.0);
  for (std::size_t i = 0; i < n; ++i) t[i] = r.f64("tensor data");
  return t;
}

void write_store(detail::ByteWriter& w, const ParamStore& s) {
  w.str(s.label());
  w.u32(static_cast<std::uint32_t>(s.size()));
  for (const auto& e : s.entries()) {
    w.str(e.name);
    write_tensor(w, e.value);
  }
}

ParamStore read_store(detail::ByteReader& r) {
  ParamStore s(r.str("store label"));
  const std::uint32_t n = r.u32("store size");
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str("parameter name");
    s.add(name, read_tensor(r));
  }
  return s;
}

// Copies values into an existing store, requiring identical names and shapes.
void restore_store(ParamStore& into, const ParamStore& from) {
  if (into.size() != from.size()) {
    throw std::runtime_error("checkpoint store '" + into.label() + "' has a different parameter count");
  }
  for (std::size_t i = 0; i < into.size(); ++i) {
    auto& dst = into.entry(i);
    const auto& src = from.entry(i);
    if (dst.name != src.name || dst.value.shape() != src.value.shape()) {
      throw std::runtime_error("checkpoint parameter '" + src.name + "' does not match '" + dst.name + "'");
    }
    dst.value = src.value;
  }
}

void write_optimizer(detail::ByteWriter& w, const RmsPropState& s) {
  w.f64(s.decay);
  w.f64(s.epsilon);
  w.f64(s.learning_rate);
  w.u32(static_cast<std::uint32_t>(s.accumulators.size()));
  for (const auto& a : s.accumulators) write_tensor(w, a);
}

RmsPropState read_optimizer(detail::ByteReader& r) {
  RmsPropState s;
  s.decay = r.f64("optimizer");
  s.epsilon = r.f64("optimizer");
  s.learning_rate = r.f64("optimizer");
  const std::uint32_t n = r.u32("optimizer");
  for (std::uint32_t i = 0; i < n; ++i) s.accumulators.push_back(read_tensor(r));
  return s;
}

void write_embedding_config(detail::ByteWriter& w, const EmbeddingConfig& c) {
  w.u64(c.temporal_filters);
  w.u64(c.temporal_kernel);
  w.u64(c.temporal_stride);
  w.u64(c.spatial_filters);
  w.str(to_string(c.activation));
  w.u64(c.pool_window);
  w.u64(c.pool_stride);
  w.u32(static_cast<std::uint32_t>(c.extra_blocks.size()));
  for (const auto& b : c.extra_blocks) {
    w.u64(b.filters);
    w.u64(b.kernel);
    w.u64(b.stride);
  }
}

EmbeddingConfig read_embedding_config(detail::ByteReader& r) {
  EmbeddingConfig c;
  c.temporal_filters = r.u64("embedding config");
  c.temporal_kernel = r.u64("embedding config");
  c.temporal_stride = r.u64("embedding config");
  c.spatial_filters = r.u64("embedding config");
  c.activation = activation_from_string(r.str("embedding config"));
  c.pool_window = r.u64("embedding config");
  c.pool_stride = r.u64("embedding config");
  const std::uint32_t n = r.u32("embedding config");
  c.extra_blocks.clear();
  for (std::uint32_t i = 0; i < n; ++i) {
    ConvBlock b;
    b.filters = r.u64("embedding block");
    b.kernel = r.u64("embedding block");
    b.stride = r.u64("embedding block");
    c.extra_blocks.push_back(b);
  }
  return c;
}

void write_log_row(detail::ByteWriter& w, const EpochLog& e) {
  w.u64(e.epoch);
  w.u8(e.pretrain ? 1 : 0);
  for (double v : {e.lr, e.sup_loss, e.actor_loss_mean, e.critic_loss_mean, e.reward_mean, e.sel_fraction,
                   e.train_acc, e.val_acc, e.val_loss}) {
    w.f64(v);
  }
}

EpochLog read_log_row(detail::ByteReader& r) {
  EpochLog e;
  e.epoch = r.u64("log row");
  e.pretrain = r.u8("log row") != 0;
  for (double* v : {&e.lr, &e.sup_loss, &e.actor_loss_mean, &e.critic_loss_mean, &e.reward_mean, &e.sel_fraction,
                    &e.train_acc, &e.val_acc, &e.val_loss}) {
    *v = r.f64("log row");
  }
  return e;
}

void write_networks(detail::ByteWriter& w, const Networks& nets) {
  write_embedding_config(w, nets.embedding_config);
  w.u64(nets.channels);
  w.u64(nets.agent.config.hidden_layers);
  w.u64(nets.agent.config.hidden_width);
  w.str(std::string(to_string(nets.agent.config.critic_head)));
  w.f64(nets.agent.input_scale);
  write_store(w, nets.embedding);
  write_store(w, nets.classifier);
  write_store(w, nets.agent.actor);
  write_store(w, nets.agent.critic);
}

Networks read_networks(detail::ByteReader& r) {
  Networks nets;
  nets.embedding_config = read_embedding_config(r);
  nets.channels = r.u64("channels");
  nets.agent.config.hidden_layers = r.u64("agent config");
  nets.agent.config.hidden_width = r.u64("agent config");
  nets.agent.config.critic_head = critic_head_from_string(r.str("agent config"));
  nets.agent.input_scale = r.f64("agent input scale");
  if (!(nets.agent.input_scale > 0.0) || !std::isfinite(nets.agent.input_scale)) {
    throw FormatError("agent input scale must be positive and finite", r.offset() - 8);
  }
  nets.embedding = read_store(r);
  nets.classifier = read_store(r);
  nets.agent.actor = read_store(r);
  nets.agent.critic = read_store(r);
  return nets;
}

}  // namespace

void save_networks(const std::filesystem::path& path, const Networks& nets) {
  detail::ByteWriter w;
  write_magic(w, kModelMagic, kModelVersion);
  write_networks(w, nets);
  detail::write_file(path, w.bytes());
}

Networks load_networks(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes);
  read_magic(r, kModelMagic, kModelVersion, "model");
  Networks nets = read_networks(r);
  if (!r.at_end()) throw FormatError("trailing bytes after model", r.offset());
  const std::size_t expected_in = nets.channels * nets.embedding_config.temporal_filters;
  if (!nets.embedding.contains("spatial") || nets.embedding.value("spatial").dim(1) != expected_in) {
    throw FormatError("model parameters do not match the stored embedding configuration", 0);
  }
  return nets;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  detail::ByteWriter w;
  write_magic(w, kCheckpointMagic, kCheckpointVersion);
  w.u64(config_hash());
  w.u64(epoch_);
  w.f64(best_val_loss_);
  w.u8(has_best_ ? 1 : 0);
  w.u64(bad_epochs_);
  w.u8(stopped_early_ ? 1 : 0);
  w.u8(fixed_baseline_ ? 1 : 0);
  w.f64(fixed_baseline_.value_or(0.0));
  std::ostringstream rng_text;
  rng_text << rng_;
  w.str(rng_text.str());
  write_networks(w, nets_);
  for (const auto* o : {&opt_embedding_, &opt_classifier_, &opt_actor_, &opt_critic_}) write_optimizer(w, *o);
  w.u64(log_.size());
  for (const auto& row : log_) write_log_row(w, row);
  detail::write_file(path, w.bytes());
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes);
  read_magic(r, kCheckpointMagic, kCheckpointVersion, "checkpoint");
  const std::uint64_t hash = r.u64("config hash");
  if (hash != config_hash()) {
    throw std::runtime_error("checkpoint '" + path.string() + "' was written with a different configuration");
  }
  const std::size_t epoch = r.u64("epoch");
  const double best = r.f64("best validation loss");
  const bool has_best = r.u8("best flag") != 0;
  const std::size_t bad = r.u64("patience counter");
  const bool stopped = r.u8("stop flag") != 0;
  const bool has_fixed = r.u8("baseline flag") != 0;
  const double fixed = r.f64("baseline");
  std::istringstream rng_text(r.str("rng state"));
  std::mt19937_64 rng;
  rng_text >> rng;
  if (!rng_text) throw FormatError("corrupt random-generator state", r.offset());
  const Networks nets = read_networks(r);
  RmsPropState opts[4];
  for (auto& o : opts) o = read_optimizer(r);
  const std::uint64_t rows = r.u64("log size");
  std::vector<EpochLog> log;
  for (std::uint64_t i = 0; i < rows; ++i) log.push_back(read_log_row(r));
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint", r.offset());

  // Validate every store before mutating any state.
  Networks staged = nets_;
  restore_store(staged.embedding, nets.embedding);
  restore_store(staged.classifier, nets.classifier);
  restore_store(staged.agent.actor, nets.agent.actor);
  restore_store(staged.agent.critic, nets.agent.critic);

  staged.agent.input_scale = nets.agent.input_scale;
  nets_ = std::move(staged);
  opt_embedding_ = opts[0];
  opt_classifier_ = opts[1];
  opt_actor_ = opts[2];
  opt_critic_ = opts[3];
  rng_ = rng;
  epoch_ = epoch;
  best_val_loss_ = best;
  has_best_ = has_best;
  bad_epochs_ = bad;
  stopped_early_ = stopped;
  fixed_baseline_ = has_fixed ? std::optional<double>(fixed) : std::nullopt;
  log_ = std::move(log);
}

}  // namespace segsel
