#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "segsel/autodiff.hpp"
#include "segsel/param_store.hpp"
#include "segsel/tensor.hpp"

namespace segsel {

struct ConvBlock {
  std::size_t filters = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  bool operator==(const ConvBlock&) const = default;
};

/// Convolutional feature extractor:
///   channel-wise temporal conv -> spatial conv over all channels (+bias) -> activation
///   -> optional average pooling -> extra temporal conv blocks (+bias, activation).
/// The feature dimension D is the filter count of the last conv.
struct EmbeddingConfig {
  std::size_t temporal_filters = 40;
  std::size_t temporal_kernel = 25;
  std::size_t temporal_stride = 1;
  std::size_t spatial_filters = 40;
  Activation activation = Activation::square;
  /// Window 0 disables pooling.
  std::size_t pool_window = 30;
  std::size_t pool_stride = 4;
  std::vector<ConvBlock> extra_blocks;

  /// "shallow": temporal + spatial + square + pooling. "deep": adds three eLU temporal blocks.
  static EmbeddingConfig preset(std::string_view name);

  std::size_t feature_dim() const;
  /// Sequence length T' for an input of `input_length` timepoints. Throws naming the first
  /// layer whose input is shorter than its kernel.
  std::size_t output_length(std::size_t input_length) const;
  /// (kernel, stride) of each temporal stage in order; used for receptive-field arithmetic.
  std::vector<std::pair<std::size_t, std::size_t>> temporal_stages() const;

  bool operator==(const EmbeddingConfig&) const = default;
};

/// Feature vectors over reduced time plus where each one comes from in the input.
struct FeatureSequence {
  Tensor features;  ///< [D x T']
  std::size_t input_length = 0;
  /// Half-open input-timepoint interval covered by each reduced timestep.
  std::vector<std::pair<std::size_t, std::size_t>> receptive_fields;

  std::size_t dim() const { return features.dim(0); }
  std::size_t length() const { return features.dim(1); }
};

/// Xavier-initialised parameters for `channels` input channels; biases start at zero.
ParamStore init_embedding(const EmbeddingConfig& cfg, std::size_t channels, std::mt19937_64& rng);

/// Records the embedding of `signal` [C x T] on the signal's tape. With `trainable` false the
/// parameters enter as constants and receive no gradient.
Var embed(Var signal, ParamStore& params, const EmbeddingConfig& cfg, bool trainable = true);

/// Value-only embedding.
FeatureSequence embed(const Tensor& signal, const ParamStore& params, const EmbeddingConfig& cfg);
std::vector<FeatureSequence> embed_batch(const std::vector<Tensor>& signals, const ParamStore& params,
                                         const EmbeddingConfig& cfg);

/// Receptive-field intervals for every reduced timestep.
std::vector<std::pair<std::size_t, std::size_t>> receptive_fields(const EmbeddingConfig& cfg,
                                                                  std::size_t input_length);

/// Input interval [start, end) covered by reduced timestep `step` (0-based).
std::pair<std::size_t, std::size_t> map_agent_time_to_input(const FeatureSequence& fs, std::size_t step);

}  // namespace segsel
