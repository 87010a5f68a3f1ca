#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "segsel/autodiff.hpp"
#include "segsel/optim.hpp"
#include "segsel/param_store.hpp"
#include "segsel/tensor.hpp"

namespace segsel {

// Time indices are 0-based throughout: reduced timestep t runs over [0, T').

/// improvement: r_t = L_GAP - L_t (lower loss than the GAP baseline is rewarded).
/// paper_literal: r_t = L_t - L_GAP.
enum class RewardSign { improvement, paper_literal };
/// per_trial: L_GAP recomputed for each trial at episode start with current parameters.
/// fixed: one dataset-level value estimated after pre-training.
enum class BaselineMode { per_trial, fixed };
enum class CriticHead { sigmoid, linear };
enum class ActionMode { stochastic, greedy, forced };

RewardSign reward_sign_from_string(std::string_view s);
BaselineMode baseline_mode_from_string(std::string_view s);
CriticHead critic_head_from_string(std::string_view s);
std::string_view to_string(RewardSign s);
std::string_view to_string(BaselineMode m);
std::string_view to_string(CriticHead h);

struct AgentNetConfig {
  std::size_t hidden_layers = 2;
  /// 0 means twice the feature dimension (the state width).
  std::size_t hidden_width = 0;
  CriticHead critic_head = CriticHead::sigmoid;
  bool operator==(const AgentNetConfig&) const = default;
};

/// Actor: dense stack -> 2-way softmax over (reject, select).
/// Critic: dense stack -> single output (sigmoid or linear).
struct AgentNets {
  AgentNetConfig config;
  ParamStore actor{"actor"};
  ParamStore critic{"critic"};
  /// Fixed input scaling: states are divided by this before entering either network.
  double input_scale = 1.0;
};

/// The network input for `state`: state / input_scale.
Tensor network_input(const Tensor& state, const AgentNets& nets);

AgentNets init_agent(std::size_t feature_dim, const AgentNetConfig& cfg, std::mt19937_64& rng);

struct AgentState {
  Tensor vector;                      ///< [2D]: AGG(S_{t-1}) ++ AGG(S_{t-1} + {t})
  std::vector<std::size_t> selected;  ///< S_{t-1}, strictly increasing, all < t
  std::size_t t = 0;
};

/// Elementwise mean of the selected columns of `features` [D x T']; empty selection -> zeros.
Tensor aggregate(const Tensor& features, std::span<const std::size_t> selected);

AgentState make_state(const Tensor& features, std::span<const std::size_t> selected, std::size_t t);

/// Actor output [p(reject), p(select)]. The Var overloads take the network input directly;
/// the Tensor overloads apply the input scaling.
Var actor_probabilities(Var state, ParamStore& actor, std::size_t hidden_layers, bool trainable = true);
Tensor actor_probabilities(const Tensor& state, const AgentNets& nets);
Var critic_value(Var state, ParamStore& critic, const AgentNetConfig& cfg, bool trainable = true);
double critic_value(const Tensor& state, const AgentNets& nets);

struct ActionSample {
  int action = 0;
  double probability = 0.0;  ///< pi(action | state)
};

/// Stochastic draws from the actor's softmax; greedy takes the argmax (ties select).
ActionSample sample_action(const AgentState& state, const AgentNets& nets, ActionMode mode, std::mt19937_64& rng);
/// Action choice from precomputed [p(reject), p(select)].
ActionSample choose_action(const Tensor& probs, ActionMode mode, std::mt19937_64& rng);

/// S_t from S_{t-1}: append t when action is 1. Throws std::logic_error if t is already selected.
std::vector<std::size_t> update_selection(std::span<const std::size_t> selected, std::size_t t, int action);

/// BCE of the classifier on the mean of all feature vectors.
double baseline_loss(const Tensor& features, const ParamStore& classifier, int label);

double step_reward(const Tensor& features, std::span<const std::size_t> selected_after, const ParamStore& classifier,
                   int label, double baseline, RewardSign sign);

/// R_t = sum_{k=0}^{T'-1-t} gamma^k r_{t+k}, truncated at the episode end.
double discounted_return(std::span<const double> rewards, double gamma, std::size_t t);
std::vector<double> discounted_returns(std::span<const double> rewards, double gamma);

/// A_t = r_t + gamma V(s_{t+1}) - V(s_t); the terminal step uses V(s_{T'}) = 0.
double advantage(double reward, double value, double next_value, double gamma, bool terminal);
/// log(max(pi, 1e-8)) * A
double actor_loss(double probability, double adv);
/// 0.5 (V(s_t) - target)^2 with target r_t + gamma V(s_{t+1}), or r_t at the terminal step.
double critic_loss(double value, double reward, double next_value, double gamma, bool terminal);

struct EpisodeStep {
  std::size_t t = 0;
  Tensor state;
  int action = 0;
  double probability = 0.0;
  double reward = 0.0;
  double value = 0.0;       ///< V(s_t) as used in the advantage
  double next_value = 0.0;  ///< V(s_{t+1}), 0 at the terminal step
  double advantage = 0.0;
  double actor_loss = 0.0;   ///< log pi * A
  double critic_loss = 0.0;  ///< evaluated before the critic update
  std::vector<std::size_t> selected;  ///< S_t after this step's action
};

struct EpisodeTrace {
  std::vector<EpisodeStep> steps;
  std::vector<double> returns;
  std::vector<std::size_t> selected;  ///< S_{T'}
  double baseline_loss = 0.0;

  std::vector<int> actions() const;
  std::vector<double> rewards() const;
};

/// Replaces the classifier-based reward (e.g. fixed-reward test instances).
using RewardFn = std::function<double(std::size_t t, int action, std::span<const std::size_t> selected_after)>;

struct EpisodeOptions {
  double gamma = 0.95;
  ActionMode mode = ActionMode::stochastic;
  std::vector<int> forced_actions;  ///< used when mode == forced
  RewardSign sign = RewardSign::improvement;
  /// Fixed L_GAP; std::nullopt computes it from this trial's features.
  std::optional<double> baseline;
  /// Per-step critic then actor updates when both optimizers are set.
  RmsPropState* actor_optimizer = nullptr;
  RmsPropState* critic_optimizer = nullptr;
  double l1 = 0.0;
  double l2 = 0.0;
  bool regularize_actor = false;
  bool regularize_critic = false;
  RewardFn reward_override;
};

/// One pass over t = 0..T'-1: state -> action -> reward -> next state -> critic update ->
/// advantage (with the updated critic) -> actor update.
EpisodeTrace run_episode(const Tensor& features, AgentNets& nets, const ParamStore& classifier, int label,
                         const EpisodeOptions& options, std::mt19937_64& rng);

/// CSV with columns t,action,prob,reward,value,advantage.
void write_trace_csv(const std::filesystem::path& path, const EpisodeTrace& trace);

}  // namespace segsel
