#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "segsel/param_store.hpp"
#include "segsel/tensor.hpp"

namespace segsel {

/// RMSProp running state for one ParamStore. Accumulators are sized lazily
/// on the first step and follow the store's entry order.
struct RmsPropState {
  double decay = 0.9;
  double epsilon = 1e-8;
  double learning_rate = 0.003;
  std::vector<Tensor> accumulators;
};

/// acc <- decay*acc + (1-decay)*g^2;  w <- w - lr*g/(sqrt(acc)+eps)
void rmsprop_step(ParamStore& store, RmsPropState& state);

/// Uniform Glorot/Xavier sample in +-sqrt(6/(fan_in+fan_out)).
Tensor xavier_uniform(Tensor::Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

/// Derives fans from the shape: [M x N] dense -> (N, M); [Cout x Cin x K] conv -> (Cin*K, Cout*K).
Tensor xavier_init(const Tensor::Shape& shape, std::uint64_t seed);
Tensor xavier_init(const Tensor::Shape& shape, std::mt19937_64& rng);

}  // namespace segsel
