#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "segsel/agent.hpp"
#include "segsel/embedding.hpp"
#include "segsel/optim.hpp"
#include "segsel/param_store.hpp"
#include "segsel/signal.hpp"

namespace segsel {

/// Which representation feeds the classifier in the main loop and at evaluation.
/// `gap` keeps every reduced timestep (no agent); `agent` uses the learned selection.
enum class Pipeline { agent, gap };

Pipeline pipeline_from_string(std::string_view s);
std::string_view to_string(Pipeline p);

struct AgentConfig {
  double gamma = 0.95;
  RewardSign reward_sign = RewardSign::improvement;
  BaselineMode baseline = BaselineMode::per_trial;
  AgentNetConfig nets;
  /// Actor/critic learning rate (same exponential decay); std::nullopt uses the supervised rate.
  std::optional<double> learning_rate;
  /// At the first main-loop epoch, set the agent's input scale to the RMS of the training
  /// features, so network inputs are O(1) whatever the embedding's output magnitude.
  bool normalize_input = true;
  bool operator==(const AgentConfig&) const = default;
};

/// Which networks receive the elastic-net penalty.
struct RegularizeTargets {
  bool embedding = true;
  bool classifier = true;
  bool actor = true;
  bool critic = true;
  bool operator==(const RegularizeTargets&) const = default;
};

struct TrainConfig {
  Pipeline pipeline = Pipeline::agent;
  std::size_t n_pre = 10;
  std::size_t batch_size = 5;
  double learning_rate = 0.003;
  /// lr(epoch) = learning_rate * exp(-lr_decay * epoch)
  double lr_decay = 0.001;
  double rmsprop_decay = 0.9;
  double rmsprop_epsilon = 1e-8;
  double l1 = 0.01;
  double l2 = 0.001;
  RegularizeTargets regularize;
  /// Main-loop epochs after pre-training.
  std::size_t max_epochs = 100;
  /// Agent pipeline: keep updating embedding and classifier in the main loop. When false the
  /// pre-trained embedding and classifier are frozen and only the agent learns.
  bool joint_updates = true;
  /// Stop after this many main epochs without a lower validation BCE; 0 disables early stopping.
  std::size_t patience = 10;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  AgentConfig agent;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

double lr_schedule(double initial, double decay_ratio, std::size_t epoch);

/// The four trainable networks plus the configuration they were built from.
struct Networks {
  EmbeddingConfig embedding_config;
  std::size_t channels = 0;
  ParamStore embedding{"embedding"};
  ParamStore classifier{"classifier"};
  AgentNets agent;
};

Networks init_networks(const EmbeddingConfig& embedding, const AgentNetConfig& agent, std::size_t channels,
                       std::uint64_t seed);

/// Binary model file: configurations plus all four parameter stores.
void save_networks(const std::filesystem::path& path, const Networks& nets);
Networks load_networks(const std::filesystem::path& path);

struct EpochLog {
  std::size_t epoch = 0;
  bool pretrain = false;
  double lr = 0.0;
  double sup_loss = 0.0;
  double actor_loss_mean = 0.0;
  double critic_loss_mean = 0.0;
  double reward_mean = 0.0;
  double sel_fraction = 1.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double val_loss = 0.0;
  bool operator==(const EpochLog&) const = default;
};

void write_train_log_csv(const std::filesystem::path& path, const std::vector<EpochLog>& log);

struct TrialOutcome {
  int label = 0;
  double probability = 0.0;
  int prediction = 0;
  double loss = 0.0;
  std::vector<std::size_t> selected;
  std::size_t steps = 0;
  /// Fraction of in-mask / out-of-mask reduced steps that were selected (NaN without a mask
  /// or when a category is empty). A step counts as in-mask when most of its receptive field is masked.
  double in_mask_rate = 0.0;
  double out_mask_rate = 0.0;
  double mask_coverage = 0.0;
  EpisodeTrace trace;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  double selection_fraction = 0.0;
  double in_mask_rate = 0.0;   ///< mean over trials with a defined rate (NaN if none)
  double out_mask_rate = 0.0;  ///< mean over trials with a defined rate (NaN if none)
  std::vector<TrialOutcome> trials;
};

/// Greedy evaluation. `pipeline == gap` classifies the mean of every reduced timestep.
/// Trials must already be preprocessed.
EvalResult evaluate(const std::vector<Trial>& trials, const Networks& nets, Pipeline pipeline,
                    const AgentConfig& agent_cfg, bool keep_traces = false);

/// Per-step membership of reduced timesteps in the ground-truth mask (majority of receptive field).
std::vector<std::uint8_t> steps_in_mask(const FeatureSequence& fs, const std::vector<std::uint8_t>& mask);

/// Learner state for the joint training loop. Epochs [0, n_pre) pre-train embedding and
/// classifier on the GAP representation; later epochs alternate, per minibatch, agent
/// episodes (per-step critic and actor updates) and a supervised update of embedding and
/// classifier on the episode's final selection.
class Trainer {
 public:
  /// Splits `trials` (preprocessed) into training and validation parts with the config seed.
  Trainer(TrainConfig cfg, EmbeddingConfig embedding, std::vector<Trial> trials);

  const TrainConfig& config() const { return cfg_; }
  const Networks& networks() const { return nets_; }
  Networks& networks() { return nets_; }
  const std::vector<EpochLog>& log() const { return log_; }
  std::size_t epoch() const { return epoch_; }
  bool finished() const;
  bool stopped_early() const { return stopped_early_; }
  const std::vector<Trial>& training_trials() const { return train_; }
  const std::vector<Trial>& validation_trials() const { return val_; }
  /// Mean L_GAP over training trials, estimated after pre-training.
  std::optional<double> fixed_baseline() const { return fixed_baseline_; }

  /// Runs one epoch. On a non-finite loss the state rolls back to the start of the epoch,
  /// a checkpoint is written to `failure_checkpoint` if set, and NonFiniteError is rethrown.
  void run_epoch();
  /// Runs epochs until finished().
  void run();

  std::filesystem::path failure_checkpoint;

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores a checkpoint written by a trainer with identical configuration and data.
  void load_checkpoint(const std::filesystem::path& path);

  /// Hash of the training, embedding and agent configuration stored in checkpoints.
  std::uint64_t config_hash() const;

 private:
  struct Snapshot;
  void pretrain_epoch(EpochLog& row);
  void main_epoch(EpochLog& row);
  void set_learning_rate(double lr);

  TrainConfig cfg_;
  Networks nets_;
  std::vector<Trial> train_;
  std::vector<Trial> val_;
  RmsPropState opt_embedding_, opt_classifier_, opt_actor_, opt_critic_;
  std::mt19937_64 rng_;
  std::size_t epoch_ = 0;
  double best_val_loss_ = 0.0;
  bool has_best_ = false;
  std::size_t bad_epochs_ = 0;
  bool stopped_early_ = false;
  std::optional<double> fixed_baseline_;
  std::vector<EpochLog> log_;

};

/// Pre-training only (no agent), as a standalone operation on preprocessed trials.
/// Throws if the data contain a single class. Returns the mean post-training L_GAP.
double pretrain(Networks& nets, const std::vector<Trial>& trials, const TrainConfig& cfg, std::mt19937_64& rng,
                RmsPropState& opt_embedding, RmsPropState& opt_classifier);

}  // namespace segsel
