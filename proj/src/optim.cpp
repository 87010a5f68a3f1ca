#include "segsel/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace segsel {

void rmsprop_step(ParamStore& store, RmsPropState& state) {
  if (state.accumulators.size() != store.size()) {
    if (!state.accumulators.empty()) {
      throw std::invalid_argument("rmsprop: optimizer state does not match store '" + store.label() + "'");
    }
    for (const auto& e : store.entries()) state.accumulators.emplace_back(e.value.shape(), 0.0);
  }
  const double decay = state.decay, lr = state.learning_rate, eps = state.epsilon;
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& e = store.entry(i);
    Tensor& acc = state.accumulators[i];
    if (acc.shape() != e.value.shape()) {
      throw std::invalid_argument("rmsprop: accumulator shape mismatch for '" + e.name + "'");
    }
    for (std::size_t k = 0; k < e.value.size(); ++k) {
      const double g = e.grad[k];
      acc[k] = decay * acc[k] + (1.0 - decay) * g * g;
      e.value[k] -= lr * g / (std::sqrt(acc[k]) + eps);
    }
  }
}

Tensor xavier_uniform(Tensor::Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  if (fan_in + fan_out == 0) throw std::invalid_argument("xavier: fan_in + fan_out must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape), 0.0);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor xavier_init(const Tensor::Shape& shape, std::mt19937_64& rng) {
  switch (shape.size()) {
    case 2: return xavier_uniform(shape, shape[1], shape[0], rng);
    case 3: return xavier_uniform(shape, shape[1] * shape[2], shape[0] * shape[2], rng);
    default:
      throw std::invalid_argument("xavier: need a 2-D or 3-D shape, got " + shape_to_string(shape));
  }
}

Tensor xavier_init(const Tensor::Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return xavier_init(shape, rng);
}

}  // namespace segsel
