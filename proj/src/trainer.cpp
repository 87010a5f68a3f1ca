#include "segsel/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "segsel/classifier.hpp"

namespace segsel {

Pipeline pipeline_from_string(std::string_view s) {
  if (s == "agent") return Pipeline::agent;
  if (s == "gap") return Pipeline::gap;
  throw std::invalid_argument("unknown pipeline '" + std::string(s) + "' (expected agent or gap)");
}

std::string_view to_string(Pipeline p) { return p == Pipeline::agent ? "agent" : "gap"; }

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(std::string("train config: ") + msg);
  };
  require(batch_size >= 1, "batch_size must be >= 1");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(lr_decay >= 0.0, "lr_decay must be non-negative");
  require(rmsprop_decay > 0.0 && rmsprop_decay < 1.0, "rmsprop_decay must be in (0,1)");
  require(rmsprop_epsilon > 0.0, "rmsprop_epsilon must be positive");
  require(l1 >= 0.0 && l2 >= 0.0, "elastic-net coefficients must be non-negative");
  require(validation_fraction >= 0.0 && validation_fraction < 1.0, "validation_fraction must be in [0,1)");
  require(agent.gamma >= 0.0 && agent.gamma <= 1.0, "gamma must be in [0,1]");
  require(!agent.learning_rate || *agent.learning_rate > 0.0, "agent learning_rate must be positive");
}

double lr_schedule(double initial, double decay_ratio, std::size_t epoch) {
  return initial * std::exp(-decay_ratio * static_cast<double>(epoch));
}

Networks init_networks(const EmbeddingConfig& embedding, const AgentNetConfig& agent, std::size_t channels,
                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Networks nets;
  nets.embedding_config = embedding;
  nets.channels = channels;
  nets.embedding = init_embedding(embedding, channels, rng);
  nets.classifier = init_classifier(embedding.feature_dim(), rng);
  nets.agent = init_agent(embedding.feature_dim(), agent, rng);
  return nets;
}

void write_train_log_csv(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "epoch,lr,sup_loss,actor_loss_mean,critic_loss_mean,reward_mean,sel_fraction,train_acc,val_acc\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << r.lr << ',' << r.sup_loss << ',' << r.actor_loss_mean << ',' << r.critic_loss_mean
        << ',' << r.reward_mean << ',' << r.sel_fraction << ',' << r.train_acc << ',' << r.val_acc << '\n';
  }
}

std::vector<std::uint8_t> steps_in_mask(const FeatureSequence& fs, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != fs.input_length) {
    throw std::invalid_argument("steps_in_mask: mask length does not match the embedded input");
  }
  std::vector<std::uint8_t> out(fs.length(), 0);
  for (std::size_t t = 0; t < fs.length(); ++t) {
    const auto [lo, hi] = fs.receptive_fields[t];
    std::size_t hits = 0;
    for (std::size_t i = lo; i < hi; ++i) hits += mask[i] ? 1 : 0;
    out[t] = 2 * hits > (hi - lo) ? 1 : 0;
  }
  return out;
}

namespace {

std::vector<std::size_t> all_steps(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

void require_both_classes(const std::vector<Trial>& trials, const char* who) {
  bool seen[2] = {false, false};
  for (const auto& t : trials) seen[t.label == 1] = true;
  if (!seen[0] || !seen[1]) {
    throw std::invalid_argument(std::string(who) + ": training data must contain both classes");
  }
}

void set_lr(double lr, std::initializer_list<RmsPropState*> opts) {
  for (auto* o : opts) o->learning_rate = lr;
}

RmsPropState make_optimizer(const TrainConfig& cfg) {
  RmsPropState s;
  s.decay = cfg.rmsprop_decay;
  s.epsilon = cfg.rmsprop_epsilon;
  s.learning_rate = cfg.learning_rate;
  return s;
}

// One supervised minibatch update of embedding and classifier. `selections` null means
// every reduced timestep (the GAP representation). Returns the mean BCE of the batch.
double supervised_update(Networks& nets, const std::vector<Trial>& trials, const std::vector<std::size_t>& batch,
                         const std::vector<Var>* features, Tape* shared_tape,
                         const std::vector<std::vector<std::size_t>>* selections, const TrainConfig& cfg,
                         RmsPropState& opt_embedding, RmsPropState& opt_classifier, std::size_t& correct) {
  Tape local;
  Tape& tape = shared_tape ? *shared_tape : local;
  // Embed the whole batch before classifying so both pipelines record identical tapes.
  std::vector<Var> own_features;
  if (!features) {
    for (std::size_t idx : batch) {
      own_features.push_back(embed(tape.constant(trials[idx].signal), nets.embedding, nets.embedding_config));
    }
    features = &own_features;
  }
  std::vector<Var> losses;
  losses.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Trial& trial = trials[batch[b]];
    Var fs = (*features)[b];
    const std::vector<std::size_t> cols = selections ? (*selections)[b] : all_steps(fs.value().dim(1));
    Var p = classify(mean_columns(fs, cols), nets.classifier);
    if (decide(p.value().item()) == trial.label) ++correct;
    losses.push_back(bce(p, trial.label));
  }
  Var data_loss = mean(losses);
  Var loss = data_loss;
  if (cfg.regularize.embedding) loss = add(loss, elastic_net(tape, nets.embedding, cfg.l1, cfg.l2));
  if (cfg.regularize.classifier) loss = add(loss, elastic_net(tape, nets.classifier, cfg.l1, cfg.l2));
  tape.backward(loss);
  rmsprop_step(nets.embedding, opt_embedding);
  rmsprop_step(nets.classifier, opt_classifier);
  return data_loss.value().item();
}

std::vector<std::vector<std::size_t>> minibatches(std::vector<std::size_t> order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  }
  return out;
}

// Shuffled minibatches of supervised GAP updates; returns (mean batch loss, accuracy).
std::pair<double, double> gap_epoch(Networks& nets, const std::vector<Trial>& trials, const TrainConfig& cfg,
                                    std::mt19937_64& rng, RmsPropState& opt_embedding, RmsPropState& opt_classifier) {
  std::vector<std::size_t> order = all_steps(trials.size());
  std::shuffle(order.begin(), order.end(), rng);
  double loss_sum = 0.0;
  std::size_t batches = 0, correct = 0;
  for (const auto& batch : minibatches(order, cfg.batch_size)) {
    loss_sum += supervised_update(nets, trials, batch, nullptr, nullptr, nullptr, cfg, opt_embedding, opt_classifier,
                                  correct);
    ++batches;
  }
  return {batches ? loss_sum / static_cast<double>(batches) : 0.0,
          trials.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(trials.size())};
}

double feature_rms(const Networks& nets, const std::vector<Trial>& trials) {
  double sum_sq = 0.0;
  std::size_t count = 0;
  for (const auto& trial : trials) {
    const Tensor f = embed(trial.signal, nets.embedding, nets.embedding_config).features;
    for (double v : f.storage()) sum_sq += v * v;
    count += f.size();
  }
  return count ? std::sqrt(sum_sq / static_cast<double>(count)) : 0.0;
}

double mean_gap_loss(const Networks& nets, const std::vector<Trial>& trials) {
  double total = 0.0;
  for (const auto& t : trials) {
    total += baseline_loss(embed(t.signal, nets.embedding, nets.embedding_config).features, nets.classifier, t.label);
  }
  return trials.empty() ? 0.0 : total / static_cast<double>(trials.size());
}

double nan_mean(double sum, std::size_t n) {
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

double pretrain(Networks& nets, const std::vector<Trial>& trials, const TrainConfig& cfg, std::mt19937_64& rng,
                RmsPropState& opt_embedding, RmsPropState& opt_classifier) {
  cfg.validate();
  require_both_classes(trials, "pretrain");
  for (std::size_t epoch = 0; epoch < cfg.n_pre; ++epoch) {
    set_lr(lr_schedule(cfg.learning_rate, cfg.lr_decay, epoch), {&opt_embedding, &opt_classifier});
    gap_epoch(nets, trials, cfg, rng, opt_embedding, opt_classifier);
  }
  return mean_gap_loss(nets, trials);
}

EvalResult evaluate(const std::vector<Trial>& trials, const Networks& nets, Pipeline pipeline,
                    const AgentConfig& agent_cfg, bool keep_traces) {
  EvalResult result;
  std::size_t correct = 0;
  double loss_sum = 0.0, sel_sum = 0.0, in_sum = 0.0, out_sum = 0.0;
  std::size_t in_n = 0, out_n = 0;
  AgentNets agent = nets.agent;  // greedy evaluation never updates the agent
  std::mt19937_64 unused_rng(0);
  for (const Trial& trial : trials) {
    const FeatureSequence fs = embed(trial.signal, nets.embedding, nets.embedding_config);
    TrialOutcome o;
    o.label = trial.label;
    o.steps = fs.length();
    if (pipeline == Pipeline::agent) {
      EpisodeOptions opts;
      opts.gamma = agent_cfg.gamma;
      opts.mode = ActionMode::greedy;
      opts.sign = agent_cfg.reward_sign;
      EpisodeTrace trace = run_episode(fs.features, agent, nets.classifier, trial.label, opts, unused_rng);
      o.selected = trace.selected;
      if (keep_traces) o.trace = std::move(trace);
    } else {
      o.selected = all_steps(fs.length());
    }
    o.probability = classify(aggregate(fs.features, o.selected), nets.classifier);
    o.prediction = decide(o.probability);
    o.loss = bce_value(o.probability, trial.label);
    o.in_mask_rate = o.out_mask_rate = std::numeric_limits<double>::quiet_NaN();
    if (trial.mask) {
      const auto in_mask = steps_in_mask(fs, *trial.mask);
      std::vector<std::uint8_t> chosen(fs.length(), 0);
      for (std::size_t s : o.selected) chosen[s] = 1;
      std::size_t n_in = 0, n_out = 0, sel_in = 0, sel_out = 0, masked_points = 0;
      for (std::size_t t = 0; t < fs.length(); ++t) {
        if (in_mask[t]) {
          ++n_in;
          sel_in += chosen[t];
        } else {
          ++n_out;
          sel_out += chosen[t];
        }
      }
      for (auto m : *trial.mask) masked_points += m ? 1 : 0;
      o.mask_coverage = static_cast<double>(masked_points) / static_cast<double>(trial.mask->size());
      if (n_in) {
        o.in_mask_rate = static_cast<double>(sel_in) / static_cast<double>(n_in);
        in_sum += o.in_mask_rate;
        ++in_n;
      }
      if (n_out) {
        o.out_mask_rate = static_cast<double>(sel_out) / static_cast<double>(n_out);
        out_sum += o.out_mask_rate;
        ++out_n;
      }
    }
    correct += o.prediction == o.label ? 1 : 0;
    loss_sum += o.loss;
    sel_sum += static_cast<double>(o.selected.size()) / static_cast<double>(o.steps);
    result.trials.push_back(std::move(o));
  }
  const double n = static_cast<double>(trials.size());
  result.accuracy = trials.empty() ? 0.0 : static_cast<double>(correct) / n;
  result.mean_loss = trials.empty() ? 0.0 : loss_sum / n;
  result.selection_fraction = trials.empty() ? 0.0 : sel_sum / n;
  result.in_mask_rate = nan_mean(in_sum, in_n);
  result.out_mask_rate = nan_mean(out_sum, out_n);
  return result;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg, EmbeddingConfig embedding, std::vector<Trial> trials)
    : cfg_(std::move(cfg)), rng_(cfg_.seed ^ 0x9e3779b97f4a7c15ULL) {
  cfg_.validate();
  if (trials.empty()) throw std::invalid_argument("trainer: no training trials");
  const std::size_t channels = trials.front().channels();
  const std::size_t length = trials.front().length();
  for (const auto& t : trials) {
    t.validate();
    if (t.channels() != channels || t.length() != length) {
      throw std::invalid_argument("trainer: all trials must share one [channels x timepoints] shape");
    }
  }
  if (embedding.output_length(length) < 2) {
    throw std::invalid_argument("trainer: embedding yields fewer than two reduced timesteps");
  }

  // Stratified-free seeded split; validation takes the tail of a shuffled order.
  std::vector<std::size_t> order = all_steps(trials.size());
  std::mt19937_64 split_rng(cfg_.seed ^ 0x5bd1e9955bd1e995ULL);
  std::shuffle(order.begin(), order.end(), split_rng);
  auto n_val = static_cast<std::size_t>(std::floor(cfg_.validation_fraction * static_cast<double>(trials.size())));
  if (n_val >= trials.size()) n_val = trials.size() - 1;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i + n_val < order.size() ? train_ : val_).push_back(std::move(trials[order[i]]));
  }
  require_both_classes(train_, "trainer");

  nets_ = init_networks(embedding, cfg_.agent.nets, channels, cfg_.seed);
  opt_embedding_ = opt_classifier_ = opt_actor_ = opt_critic_ = make_optimizer(cfg_);
}

bool Trainer::finished() const { return stopped_early_ || epoch_ >= cfg_.n_pre + cfg_.max_epochs; }

void Trainer::set_learning_rate(double lr) {
  set_lr(lr, {&opt_embedding_, &opt_classifier_});
  const double agent_lr = cfg_.agent.learning_rate ? lr_schedule(*cfg_.agent.learning_rate, cfg_.lr_decay, epoch_) : lr;
  set_lr(agent_lr, {&opt_actor_, &opt_critic_});
}

struct Trainer::Snapshot {
  Networks nets;
  RmsPropState e, c, a, v;
  std::mt19937_64 rng;
  std::size_t epoch;
  double best;
  bool has_best;
  std::size_t bad;
  bool stopped;
  std::optional<double> fixed;
  std::size_t log_size;
};

void Trainer::run_epoch() {
  if (finished()) return;
  const Snapshot snap{nets_, opt_embedding_, opt_classifier_, opt_actor_, opt_critic_, rng_, epoch_,
                      best_val_loss_, has_best_, bad_epochs_, stopped_early_, fixed_baseline_, log_.size()};
  try {
    EpochLog row;
    row.epoch = epoch_;
    row.lr = lr_schedule(cfg_.learning_rate, cfg_.lr_decay, epoch_);
    set_learning_rate(row.lr);
    if (epoch_ < cfg_.n_pre) {
      pretrain_epoch(row);
    } else {
      main_epoch(row);
    }
    for (double v : {row.sup_loss, row.val_loss}) {
      if (!std::isfinite(v)) throw NonFiniteError("non-finite loss in epoch " + std::to_string(epoch_));
    }
    log_.push_back(row);
    ++epoch_;
  } catch (const NonFiniteError&) {
    nets_ = snap.nets;
    opt_embedding_ = snap.e;
    opt_classifier_ = snap.c;
    opt_actor_ = snap.a;
    opt_critic_ = snap.v;
    rng_ = snap.rng;
    epoch_ = snap.epoch;
    best_val_loss_ = snap.best;
    has_best_ = snap.has_best;
    bad_epochs_ = snap.bad;
    stopped_early_ = snap.stopped;
    fixed_baseline_ = snap.fixed;
    log_.resize(snap.log_size);
    if (!failure_checkpoint.empty()) save_checkpoint(failure_checkpoint);
    throw;
  }
}

void Trainer::run() {
  while (!finished()) run_epoch();
}

void Trainer::pretrain_epoch(EpochLog& row) {
  if (epoch_ == 0) require_both_classes(train_, "pretrain");
  const auto [loss, acc] = gap_epoch(nets_, train_, cfg_, rng_, opt_embedding_, opt_classifier_);
  row.pretrain = true;
  row.sup_loss = loss;
  row.train_acc = acc;
  if (!val_.empty()) {
    const EvalResult ev = evaluate(val_, nets_, Pipeline::gap, cfg_.agent);
    row.val_acc = ev.accuracy;
    row.val_loss = ev.mean_loss;
  }
}

void Trainer::main_epoch(EpochLog& row) {
  if (cfg_.agent.baseline == BaselineMode::fixed && !fixed_baseline_) fixed_baseline_ = mean_gap_loss(nets_, train_);
  if (cfg_.pipeline == Pipeline::agent && cfg_.agent.normalize_input && epoch_ == cfg_.n_pre) {
    const double rms = feature_rms(nets_, train_);
    if (rms > 0.0 && std::isfinite(rms)) nets_.agent.input_scale = rms;
  }

  if (cfg_.pipeline == Pipeline::gap) {
    const auto [loss, acc] = gap_epoch(nets_, train_, cfg_, rng_, opt_embedding_, opt_classifier_);
    row.sup_loss = loss;
    row.train_acc = acc;
  } else {
    std::vector<std::size_t> order = all_steps(train_.size());
    std::shuffle(order.begin(), order.end(), rng_);
    // Action sampling draws from its own per-epoch stream, so the shuffling stream advances
    // exactly as in the GAP pipeline.
    std::seed_seq episode_seed{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                               static_cast<std::uint32_t>(epoch_), 0xac7u};
    std::mt19937_64 episode_rng(episode_seed);
    double loss_sum = 0.0, actor_sum = 0.0, critic_sum = 0.0, reward_sum = 0.0, sel_sum = 0.0;
    std::size_t batches = 0, steps = 0, correct = 0;

    EpisodeOptions opts;
    opts.gamma = cfg_.agent.gamma;
    opts.mode = ActionMode::stochastic;
    opts.sign = cfg_.agent.reward_sign;
    opts.baseline = cfg_.agent.baseline == BaselineMode::fixed ? fixed_baseline_ : std::nullopt;
    opts.actor_optimizer = &opt_actor_;
    opts.critic_optimizer = &opt_critic_;
    opts.l1 = cfg_.l1;
    opts.l2 = cfg_.l2;
    opts.regularize_actor = cfg_.regularize.actor;
    opts.regularize_critic = cfg_.regularize.critic;

    for (const auto& batch : minibatches(order, cfg_.batch_size)) {
      Tape tape;
      std::vector<Var> features;
      std::vector<std::vector<std::size_t>> selections;
      for (std::size_t idx : batch) {
        const Trial& trial = train_[idx];
        features.push_back(embed(tape.constant(trial.signal), nets_.embedding, nets_.embedding_config));
        const EpisodeTrace trace =
            run_episode(features.back().value(), nets_.agent, nets_.classifier, trial.label, opts, episode_rng);
        for (const auto& s : trace.steps) {
          actor_sum += s.actor_loss;
          critic_sum += s.critic_loss;
          reward_sum += s.reward;
        }
        steps += trace.steps.size();
        sel_sum += static_cast<double>(trace.selected.size()) / static_cast<double>(trace.steps.size());
        selections.push_back(trace.selected);
      }
      if (cfg_.joint_updates) {
        loss_sum += supervised_update(nets_, train_, batch, &features, &tape, &selections, cfg_, opt_embedding_,
                                      opt_classifier_, correct);
      } else {
        double batch_loss = 0.0;
        for (std::size_t b = 0; b < batch.size(); ++b) {
          const double p = classify(aggregate(features[b].value(), selections[b]), nets_.classifier);
          if (decide(p) == train_[batch[b]].label) ++correct;
          batch_loss += bce_value(p, train_[batch[b]].label);
        }
        loss_sum += batch_loss / static_cast<double>(batch.size());
      }
      ++batches;
    }
    row.sup_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    row.actor_loss_mean = steps ? actor_sum / static_cast<double>(steps) : 0.0;
    row.critic_loss_mean = steps ? critic_sum / static_cast<double>(steps) : 0.0;
    row.reward_mean = steps ? reward_sum / static_cast<double>(steps) : 0.0;
    row.sel_fraction = train_.empty() ? 0.0 : sel_sum / static_cast<double>(train_.size());
    row.train_acc = train_.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(train_.size());
  }

  if (!val_.empty()) {
    const EvalResult ev = evaluate(val_, nets_, cfg_.pipeline, cfg_.agent);
    row.val_acc = ev.accuracy;
    row.val_loss = ev.mean_loss;
    if (cfg_.patience > 0) {
      if (!has_best_ || ev.mean_loss < best_val_loss_) {
        best_val_loss_ = ev.mean_loss;
        has_best_ = true;
        bad_epochs_ = 0;
      } else if (++bad_epochs_ >= cfg_.patience) {
        stopped_early_ = true;
      }
    }
  }
}

std::uint64_t Trainer::config_hash() const {
  std::ostringstream os;
  os.precision(17);
  const auto& c = cfg_;
  os << "pipeline=" << to_string(c.pipeline) << ";n_pre=" << c.n_pre << ";batch=" << c.batch_size
     << ";lr=" << c.learning_rate << ";decay=" << c.lr_decay << ";rms=" << c.rmsprop_decay << ',' << c.rmsprop_epsilon
     << ";l1=" << c.l1 << ";l2=" << c.l2 << ";reg=" << c.regularize.embedding << c.regularize.classifier
     << c.regularize.actor << c.regularize.critic << ";epochs=" << c.max_epochs << ";patience=" << c.patience
     << ";val=" << c.validation_fraction << ";seed=" << c.seed << ";gamma=" << c.agent.gamma
     << ";sign=" << to_string(c.agent.reward_sign) << ";baseline=" << to_string(c.agent.baseline)
     << ";hidden=" << c.agent.nets.hidden_layers << 'x' << c.agent.nets.hidden_width
     << ";head=" << to_string(c.agent.nets.critic_head) << ";agent_lr=" << c.agent.learning_rate.value_or(0.0)
     << ";normalize=" << c.agent.normalize_input
     << ";joint=" << c.joint_updates;
  const auto& e = nets_.embedding_config;
  os << ";emb=" << e.temporal_filters << ',' << e.temporal_kernel << ',' << e.temporal_stride << ','
     << e.spatial_filters << ',' << to_string(e.activation) << ',' << e.pool_window << ',' << e.pool_stride;
  for (const auto& b : e.extra_blocks) os << ";block=" << b.filters << ',' << b.kernel << ',' << b.stride;
  os << ";channels=" << nets_.channels << ";train=" << train_.size() << ";val=" << val_.size();
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : os.str()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace segsel
