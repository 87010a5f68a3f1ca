#include "segsel/agent.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

#include "segsel/classifier.hpp"

namespace segsel {

RewardSign reward_sign_from_string(std::string_view s) {
  if (s == "improvement") return RewardSign::improvement;
  if (s == "paper-literal" || s == "paper_literal") return RewardSign::paper_literal;
  throw std::invalid_argument("unknown reward sign mode '" + std::string(s) + "'");
}

BaselineMode baseline_mode_from_string(std::string_view s) {
  if (s == "per-trial" || s == "per_trial") return BaselineMode::per_trial;
  if (s == "fixed") return BaselineMode::fixed;
  throw std::invalid_argument("unknown baseline mode '" + std::string(s) + "'");
}

CriticHead critic_head_from_string(std::string_view s) {
  if (s == "sigmoid") return CriticHead::sigmoid;
  if (s == "linear") return CriticHead::linear;
  throw std::invalid_argument("unknown critic head '" + std::string(s) + "'");
}

std::string_view to_string(RewardSign s) { return s == RewardSign::improvement ? "improvement" : "paper-literal"; }
std::string_view to_string(BaselineMode m) { return m == BaselineMode::per_trial ? "per-trial" : "fixed"; }
std::string_view to_string(CriticHead h) { return h == CriticHead::sigmoid ? "sigmoid" : "linear"; }

AgentNets init_agent(std::size_t feature_dim, const AgentNetConfig& cfg, std::mt19937_64& rng) {
  AgentNets nets;
  nets.config = cfg;
  const std::size_t state_dim = 2 * feature_dim;
  const std::size_t width = cfg.hidden_width > 0 ? cfg.hidden_width : state_dim;
  for (ParamStore* store : {&nets.actor, &nets.critic}) {
    std::size_t in = state_dim;
    for (std::size_t i = 0; i < cfg.hidden_layers; ++i) {
      store->add("hidden" + std::to_string(i), xavier_init({width, in}, rng));
      store->add("hidden" + std::to_string(i) + "_bias", Tensor({width}, 0.0));
      in = width;
    }
    const std::size_t outputs = store == &nets.actor ? 2 : 1;
    store->add("head", xavier_init({outputs, in}, rng));
    store->add("head_bias", Tensor({outputs}, 0.0));
  }
  return nets;
}

Tensor network_input(const Tensor& state, const AgentNets& nets) {
  if (!(nets.input_scale > 0.0) || !std::isfinite(nets.input_scale)) {
    throw std::invalid_argument("agent input scale must be positive and finite");
  }
  if (nets.input_scale == 1.0) return state;
  Tensor x = state;
  for (auto& v : x.storage()) v /= nets.input_scale;
  return x;
}

Tensor aggregate(const Tensor& features, std::span<const std::size_t> selected) {
  return mean_columns_forward(features, selected);
}

AgentState make_state(const Tensor& features, std::span<const std::size_t> selected, std::size_t t) {
  if (features.rank() != 2) throw std::invalid_argument("make_state: features must be [D x T']");
  if (t >= features.dim(1)) {
    throw std::out_of_range("make_state: step " + std::to_string(t) + " out of range for " +
                            std::to_string(features.dim(1)) + " steps");
  }
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (selected[i] >= t || (i > 0 && selected[i] <= selected[i - 1])) {
      throw std::invalid_argument("make_state: selected set must be strictly increasing and precede t");
    }
  }
  AgentState state;
  state.t = t;
  state.selected.assign(selected.begin(), selected.end());
  std::vector<std::size_t> with_current = state.selected;
  with_current.push_back(t);
  const Tensor before = aggregate(features, selected);
  const Tensor after = aggregate(features, with_current);
  std::vector<double> v(before.data().begin(), before.data().end());
  v.insert(v.end(), after.data().begin(), after.data().end());
  state.vector = Tensor::vector(std::move(v));
  return state;
}

namespace {

template <class Fetch>
Var dense_stack(Var x, std::size_t hidden_layers, Fetch p) {
  for (std::size_t i = 0; i < hidden_layers; ++i) {
    const std::string name = "hidden" + std::to_string(i);
    x = activate(dense(x, p(name), p(name + "_bias")), Activation::leaky_relu);
  }
  return dense(x, p("head"), p("head_bias"));
}

auto trainable_fetch(Tape& tape, ParamStore& store, bool trainable) {
  return [&tape, &store, trainable](const std::string& name) {
    return trainable ? tape.param(store, name) : tape.constant(store.value(name));
  };
}

auto constant_fetch(Tape& tape, const ParamStore& store) {
  return [&tape, &store](const std::string& name) { return tape.constant(store.value(name)); };
}

}  // namespace

Var actor_probabilities(Var state, ParamStore& actor, std::size_t hidden_layers, bool trainable) {
  return softmax(dense_stack(state, hidden_layers, trainable_fetch(*state.tape(), actor, trainable)));
}

Tensor actor_probabilities(const Tensor& state, const AgentNets& nets) {
  Tape tape;
  return softmax(dense_stack(tape.constant(network_input(state, nets)), nets.config.hidden_layers,
                             constant_fetch(tape, nets.actor)))
      .value();
}

Var critic_value(Var state, ParamStore& critic, const AgentNetConfig& cfg, bool trainable) {
  Var out = dense_stack(state, cfg.hidden_layers, trainable_fetch(*state.tape(), critic, trainable));
  return cfg.critic_head == CriticHead::sigmoid ? activate(out, Activation::sigmoid) : out;
}

double critic_value(const Tensor& state, const AgentNets& nets) {
  Tape tape;
  Var out =
      dense_stack(tape.constant(network_input(state, nets)), nets.config.hidden_layers, constant_fetch(tape, nets.critic));
  if (nets.config.critic_head == CriticHead::sigmoid) out = activate(out, Activation::sigmoid);
  return out.value()[0];
}

ActionSample choose_action(const Tensor& probs, ActionMode mode, std::mt19937_64& rng) {
  if (probs.size() != 2) throw std::invalid_argument("choose_action: expected two action probabilities");
  ActionSample sample;
  if (mode == ActionMode::greedy) {
    sample.action = probs[1] >= probs[0] ? 1 : 0;
  } else if (mode == ActionMode::stochastic) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    sample.action = unit(rng) < probs[1] ? 1 : 0;
  } else {
    throw std::invalid_argument("choose_action: forced actions are supplied by the caller");
  }
  sample.probability = probs[static_cast<std::size_t>(sample.action)];
  return sample;
}

ActionSample sample_action(const AgentState& state, const AgentNets& nets, ActionMode mode, std::mt19937_64& rng) {
  return choose_action(actor_probabilities(state.vector, nets), mode, rng);
}

std::vector<std::size_t> update_selection(std::span<const std::size_t> selected, std::size_t t, int action) {
  if (action != 0 && action != 1) throw std::invalid_argument("update_selection: action must be 0 or 1");
  for (std::size_t s : selected) {
    if (s == t) throw std::logic_error("update_selection: step " + std::to_string(t) + " is already selected");
  }
  std::vector<std::size_t> out(selected.begin(), selected.end());
  if (action == 1) out.push_back(t);
  return out;
}

double baseline_loss(const Tensor& features, const ParamStore& classifier, int label) {
  std::vector<std::size_t> all(features.dim(1));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return bce_value(classify(aggregate(features, all), classifier), label);
}

double step_reward(const Tensor& features, std::span<const std::size_t> selected_after, const ParamStore& classifier,
                   int label, double baseline, RewardSign sign) {
  const double loss = bce_value(classify(aggregate(features, selected_after), classifier), label);
  return sign == RewardSign::improvement ? baseline - loss : loss - baseline;
}

double discounted_return(std::span<const double> rewards, double gamma, std::size_t t) {
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("discounted_return: gamma must be in [0,1]");
  if (t >= rewards.size()) throw std::out_of_range("discounted_return: t out of range");
  double total = 0.0, weight = 1.0;
  for (std::size_t k = t; k < rewards.size(); ++k) {
    total += weight * rewards[k];
    weight *= gamma;
  }
  return total;
}

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("discounted_returns: gamma must be in [0,1]");
  std::vector<double> out(rewards.size());
  double running = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    running = rewards[i] + gamma * running;
    out[i] = running;
  }
  return out;
}

double advantage(double reward, double value, double next_value, double gamma, bool terminal) {
  return reward + (terminal ? 0.0 : gamma * next_value) - value;
}

double actor_loss(double probability, double adv) {
  return std::log(std::max(probability, kLogProbFloor)) * adv;
}

double critic_loss(double value, double reward, double next_value, double gamma, bool terminal) {
  const double target = reward + (terminal ? 0.0 : gamma * next_value);
  const double diff = value - target;
  return 0.5 * diff * diff;
}

std::vector<int> EpisodeTrace::actions() const {
  std::vector<int> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.action);
  return out;
}

std::vector<double> EpisodeTrace::rewards() const {
  std::vector<double> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.reward);
  return out;
}

EpisodeTrace run_episode(const Tensor& features, AgentNets& nets, const ParamStore& classifier, int label,
                         const EpisodeOptions& options, std::mt19937_64& rng) {
  if (features.rank() != 2 || features.dim(1) == 0) {
    throw std::invalid_argument("run_episode: features must be a non-empty [D x T'] matrix");
  }
  const std::size_t steps = features.dim(1);
  if (options.mode == ActionMode::forced && options.forced_actions.size() != steps) {
    throw std::invalid_argument("run_episode: forced action count " + std::to_string(options.forced_actions.size()) +
                                " does not match " + std::to_string(steps) + " steps");
  }
  const bool learn = options.actor_optimizer != nullptr && options.critic_optimizer != nullptr;

  EpisodeTrace trace;
  trace.baseline_loss = options.baseline ? *options.baseline : baseline_loss(features, classifier, label);
  trace.steps.reserve(steps);

  std::vector<std::size_t> selected;
  for (std::size_t t = 0; t < steps; ++t) {
    EpisodeStep step;
    step.t = t;
    const AgentState state = make_state(features, selected, t);
    step.state = state.vector;

    Tape actor_tape;
    const Tensor input = network_input(state.vector, nets);
    Var probs = actor_probabilities(actor_tape.constant(input), nets.actor, nets.config.hidden_layers, learn);
    if (options.mode == ActionMode::forced) {
      step.action = options.forced_actions[t];
      if (step.action != 0 && step.action != 1) throw std::invalid_argument("run_episode: forced action not in {0,1}");
      step.probability = probs.value()[static_cast<std::size_t>(step.action)];
    } else {
      const ActionSample a = choose_action(probs.value(), options.mode, rng);
      step.action = a.action;
      step.probability = a.probability;
    }

    step.selected = update_selection(selected, t, step.action);
    step.reward = options.reward_override
                      ? options.reward_override(t, step.action, step.selected)
                      : step_reward(features, step.selected, classifier, label, trace.baseline_loss, options.sign);
    if (!std::isfinite(step.reward)) throw NonFiniteError("non-finite reward at step " + std::to_string(t));

    const bool terminal = t + 1 == steps;
    std::optional<AgentState> next;
    if (!terminal) next = make_state(features, step.selected, t + 1);

    if (learn) {
      const double next_before = terminal ? 0.0 : critic_value(next->vector, nets);
      const double target = step.reward + (terminal ? 0.0 : options.gamma * next_before);
      Tape critic_tape;
      Var v = critic_value(critic_tape.constant(input), nets.critic, nets.config, true);
      Var loss = segsel::critic_loss(v, target);
      step.critic_loss = loss.value()[0];
      if (options.regularize_critic) loss = add(loss, elastic_net(critic_tape, nets.critic, options.l1, options.l2));
      critic_tape.backward(loss);
      rmsprop_step(nets.critic, *options.critic_optimizer);
    }

    step.value = critic_value(state.vector, nets);
    step.next_value = terminal ? 0.0 : critic_value(next->vector, nets);
    if (!learn) step.critic_loss = critic_loss(step.value, step.reward, step.next_value, options.gamma, terminal);
    step.advantage = advantage(step.reward, step.value, step.next_value, options.gamma, terminal);
    step.actor_loss = actor_loss(step.probability, step.advantage);

    if (learn) {
      Var objective = actor_objective(probs, static_cast<std::size_t>(step.action), step.advantage);
      Var loss = scale(objective, -1.0);
      if (options.regularize_actor) loss = add(loss, elastic_net(actor_tape, nets.actor, options.l1, options.l2));
      actor_tape.backward(loss);
      rmsprop_step(nets.actor, *options.actor_optimizer);
    }

    selected = step.selected;
    trace.steps.push_back(std::move(step));
  }
  trace.selected = selected;
  trace.returns = discounted_returns(trace.rewards(), options.gamma);
  return trace;
}

void write_trace_csv(const std::filesystem::path& path, const EpisodeTrace& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "t,action,prob,reward,value,advantage\n";
  for (const auto& s : trace.steps) {
    out << s.t << ',' << s.action << ',' << s.probability << ',' << s.reward << ',' << s.value << ','
        << s.advantage << '\n';
  }
}

}  // namespace segsel
