#pragma once

#include <cstddef>
#include <random>

#include "segsel/autodiff.hpp"
#include "segsel/param_store.hpp"
#include "segsel/tensor.hpp"

namespace segsel {

/// Dense layer [1 x D] + bias followed by a sigmoid: probability of class 1.
ParamStore init_classifier(std::size_t feature_dim, std::mt19937_64& rng);

Var classify(Var feature, ParamStore& params, bool trainable = true);
double classify(const Tensor& feature, const ParamStore& params);

/// Class decision; p == 0.5 resolves to class 1.
inline int decide(double probability) { return probability >= 0.5 ? 1 : 0; }

}  // namespace segsel
