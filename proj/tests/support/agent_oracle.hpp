#pragma once

// Independent re-implementations of the agent's forward computations, written with plain
// loops so that episode traces can be checked against code that shares nothing with the
// library's tape ops.

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "segsel/agent.hpp"
#include "segsel/classifier.hpp"

namespace segsel::testing {

inline std::vector<double> naive_mean(const Tensor& features, std::span<const std::size_t> set) {
  const std::size_t d = features.dim(0);
  std::vector<double> out(d, 0.0);
  if (set.empty()) return out;
  // Summation order reversed relative to the library on purpose.
  for (std::size_t i = 0; i < d; ++i) {
    double acc = 0.0;
    for (std::size_t k = set.size(); k-- > 0;) acc += features.at(i, set[k]);
    out[i] = acc / static_cast<double>(set.size());
  }
  return out;
}

inline std::vector<double> naive_dense(const Tensor& w, const Tensor& b, const std::vector<double>& x) {
  std::vector<double> y(w.dim(0));
  for (std::size_t r = 0; r < y.size(); ++r) {
    double acc = b[r];
    for (std::size_t c = 0; c < x.size(); ++c) acc += w.at(r, c) * x[c];
    y[r] = acc;
  }
  return y;
}

inline std::vector<double> naive_mlp(const ParamStore& store, std::size_t hidden_layers, std::vector<double> x) {
  for (std::size_t i = 0; i < hidden_layers; ++i) {
    const std::string name = "hidden" + std::to_string(i);
    x = naive_dense(store.value(name), store.value(name + "_bias"), x);
    for (double& v : x) v = v > 0.0 ? v : 0.01 * v;
  }
  return naive_dense(store.value("head"), store.value("head_bias"), x);
}

inline double naive_sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline std::vector<double> scaled_input(const AgentNets& nets, std::vector<double> state) {
  for (auto& v : state) v /= nets.input_scale;
  return state;
}

inline std::vector<double> naive_actor(const AgentNets& nets, const std::vector<double>& state) {
  const auto z = naive_mlp(nets.actor, nets.config.hidden_layers, scaled_input(nets, state));
  const double e0 = std::exp(z[0] - std::max(z[0], z[1])), e1 = std::exp(z[1] - std::max(z[0], z[1]));
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

inline double naive_critic(const AgentNets& nets, const std::vector<double>& state) {
  const double z = naive_mlp(nets.critic, nets.config.hidden_layers, scaled_input(nets, state))[0];
  return nets.config.critic_head == CriticHead::sigmoid ? naive_sigmoid(z) : z;
}

inline double naive_bce_of(const ParamStore& classifier, const std::vector<double>& feature, int label) {
  double z = classifier.value("bias")[0];
  for (std::size_t i = 0; i < feature.size(); ++i) z += classifier.value("weight")[i] * feature[i];
  const double p = std::clamp(naive_sigmoid(z), 1e-7, 1.0 - 1e-7);
  return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

inline std::vector<double> naive_state(const Tensor& features, const std::vector<std::size_t>& before, std::size_t t) {
  std::vector<std::size_t> with = before;
  with.push_back(t);
  auto a = naive_mean(features, before);
  const auto b = naive_mean(features, with);
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

/// Max absolute deviation between a trace recorded with frozen networks and a from-scratch
/// recomputation of every field out of (features, actions, parameters).
inline double frozen_replay_error(const EpisodeTrace& trace, const Tensor& features, const AgentNets& nets,
                                  const ParamStore& classifier, int label, double gamma, RewardSign sign) {
  const std::size_t steps = features.dim(1);
  std::vector<std::size_t> all(steps);
  for (std::size_t i = 0; i < steps; ++i) all[i] = i;
  const double l_gap = naive_bce_of(classifier, naive_mean(features, all), label);
  double err = std::abs(trace.baseline_loss - l_gap);
  if (trace.steps.size() != steps || trace.returns.size() != steps) return INFINITY;

  std::vector<std::size_t> selected;
  std::vector<double> rewards;
  for (std::size_t t = 0; t < steps; ++t) {
    const EpisodeStep& s = trace.steps[t];
    if (s.t != t) return INFINITY;
    const auto state = naive_state(features, selected, t);
    for (std::size_t i = 0; i < state.size(); ++i) err = std::max(err, std::abs(s.state[i] - state[i]));
    const auto probs = naive_actor(nets, state);
    err = std::max(err, std::abs(s.probability - probs[static_cast<std::size_t>(s.action)]));
    if (s.action == 1) selected.push_back(t);
    if (s.selected != selected) return INFINITY;
    const double loss_t = naive_bce_of(classifier, naive_mean(features, selected), label);
    const double reward = sign == RewardSign::improvement ? l_gap - loss_t : loss_t - l_gap;
    err = std::max(err, std::abs(s.reward - reward));
    rewards.push_back(reward);
    const double value = naive_critic(nets, state);
    const bool terminal = t + 1 == steps;
    const double next = terminal ? 0.0 : naive_critic(nets, naive_state(features, selected, t + 1));
    err = std::max(err, std::abs(s.value - value));
    err = std::max(err, std::abs(s.next_value - next));
    const double adv = reward + gamma * next - value;
    err = std::max(err, std::abs(s.advantage - adv));
    err = std::max(err, std::abs(s.actor_loss - std::log(std::max(probs[static_cast<std::size_t>(s.action)], 1e-8)) * adv));
    err = std::max(err, std::abs(s.critic_loss - 0.5 * adv * adv));
  }
  if (trace.selected != selected) return INFINITY;
  for (std::size_t t = 0; t < steps; ++t) {
    double ret = 0.0;
    for (std::size_t k = t; k < steps; ++k) ret += std::pow(gamma, static_cast<double>(k - t)) * rewards[k];
    err = std::max(err, std::abs(trace.returns[t] - ret));
  }
  return err;
}

/// Two-step fixed-reward instance: selecting step 0 pays +1, selecting step 1 pays -1.
/// Returns pi(select) at the first state and at both possible second states after training.
struct BanditOutcome {
  double first = 0.0;
  double second_after_reject = 0.0;
  double second_after_select = 0.0;
};

inline BanditOutcome train_two_step_bandit(std::uint64_t seed, std::size_t episodes) {
  std::mt19937_64 rng(seed);
  const std::size_t dim = 3;
  Tensor features({dim, 2}, 0.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : features.storage()) v = u(rng);
  AgentNets nets = init_agent(dim, AgentNetConfig{}, rng);
  ParamStore classifier = init_classifier(dim, rng);
  RmsPropState actor_opt, critic_opt;
  EpisodeOptions opt;
  opt.actor_optimizer = &actor_opt;
  opt.critic_optimizer = &critic_opt;
  opt.reward_override = [](std::size_t t, int action, std::span<const std::size_t>) {
    if (action == 0) return 0.0;
    return t == 0 ? 1.0 : -1.0;
  };
  for (std::size_t e = 0; e < episodes; ++e) run_episode(features, nets, classifier, 0, opt, rng);
  BanditOutcome out;
  out.first = actor_probabilities(make_state(features, {}, 0).vector, nets)[1];
  out.second_after_reject = actor_probabilities(make_state(features, {}, 1).vector, nets)[1];
  const std::vector<std::size_t> first{0};
  out.second_after_select = actor_probabilities(make_state(features, first, 1).vector, nets)[1];
  return out;
}

}  // namespace segsel::testing
