#include "segsel/classifier.hpp"

#include "segsel/optim.hpp"

namespace segsel {

ParamStore init_classifier(std::size_t feature_dim, std::mt19937_64& rng) {
  ParamStore store("classifier");
  store.add("weight", xavier_init({1, feature_dim}, rng));
  store.add("bias", Tensor({1}, 0.0));
  return store;
}

Var classify(Var feature, ParamStore& params, bool trainable) {
  Tape& tape = *feature.tape();
  Var w = trainable ? tape.param(params, "weight") : tape.constant(params.value("weight"));
  Var b = trainable ? tape.param(params, "bias") : tape.constant(params.value("bias"));
  return activate(dense(feature, w, b), Activation::sigmoid);
}

double classify(const Tensor& feature, const ParamStore& params) {
  const Tensor logit = dense_forward(feature, params.value("weight"), params.value("bias"));
  return activation_forward(logit, Activation::sigmoid)[0];
}

}  // namespace segsel
