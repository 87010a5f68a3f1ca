#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "segsel/tensor.hpp"

namespace segsel {

/// One labeled multichannel recording.
struct Trial {
  Tensor signal;  ///< [channels x timepoints]
  int label = 0;  ///< 0 or 1
  double sample_rate = 0.0;
  /// One flag per timepoint, 1 where a planted informative burst is active.
  std::optional<std::vector<std::uint8_t>> mask;

  std::size_t channels() const { return signal.rank() == 2 ? signal.dim(0) : 0; }
  std::size_t length() const { return signal.rank() == 2 ? signal.dim(1) : 0; }

  /// Throws std::invalid_argument if any invariant is broken.
  void validate() const;

  bool operator==(const Trial& other) const = default;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

struct CountRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
  bool operator==(const CountRange&) const = default;
};

/// Synthetic trial generator settings. Background is 1/f-shaped Gaussian noise
/// with unit variance per channel; each trial carries Hann-enveloped sinusoidal
/// bursts on the channels mapped to its label.
struct GeneratorConfig {
  std::size_t channels = 20;
  std::size_t samples = 4000;
  double sample_rate = 1000.0;
  Range burst_band{8.0, 13.0};
  CountRange burst_count{1, 2};
  Range burst_duration{0.3, 0.8};
  /// Time span (seconds) in which bursts are placed; hi <= 0 means the whole trial.
  Range burst_span{0.0, 0.0};
  /// Mean burst power over its support divided by background noise power.
  double snr = 1.0;
  /// Channel indices receiving bursts for label 0 and label 1.
  std::array<std::vector<std::size_t>, 2> class_channel_map{};
  std::uint64_t rng_seed = 0;

  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

/// Default generator: `channels` channels with the first half of the
/// channel set carrying label-0 bursts and the second half label-1 bursts.
GeneratorConfig default_generator_config(std::size_t channels = 20);

Trial generate_trial(const GeneratorConfig& cfg, int label);

/// Generates `count` trials with round(count * fraction_class1) of label 1,
/// in a seeded shuffled order. Trial i uses an RNG stream derived from (seed, i).
std::vector<Trial> generate_trials(const GeneratorConfig& cfg, std::size_t count,
                                   double fraction_class1 = 0.5);

struct PreprocessConfig {
  /// Zero-phase band-pass edges in Hz; std::nullopt skips band-pass filtering.
  std::optional<Range> band = Range{8.0, 30.0};
  /// Output sample rate; must divide the input rate. 0 keeps the input rate.
  double target_rate = 100.0;
  /// Crop window in seconds; std::nullopt keeps the full trial.
  std::optional<Range> crop = Range{1.0, 3.5};
  /// Channel indices to keep (in order); empty keeps every channel.
  std::vector<std::size_t> channel_subset;
  int filter_order = 4;

  bool operator==(const PreprocessConfig&) const = default;
};

/// Band-pass (forward-backward Butterworth) -> decimate -> crop -> channel subset.
/// The mask is decimated by strict majority within each decimation window.
Trial preprocess(const Trial& trial, const PreprocessConfig& cfg);

/// Second-order section, a0 normalised to 1.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0, a1 = 0.0, a2 = 0.0;
};

enum class FilterKind { lowpass, highpass };

/// Butterworth filter of even `order` as a cascade of order/2 biquads (bilinear, prewarped).
std::vector<Biquad> butterworth(FilterKind kind, int order, double cutoff_hz, double sample_rate);

/// Causal cascade filtering.
std::vector<double> sosfilt(std::span<const Biquad> sections, std::span<const double> x);

/// Zero-phase forward-backward filtering with odd-reflection padding.
std::vector<double> filtfilt(std::span<const Biquad> sections, std::span<const double> x,
                             std::size_t padlen);

/// Power spectrogram |DFT(hann * frame)|^2, shape [window_len/2 + 1 x frames],
/// frames = (T - window_len)/hop + 1. Uses a periodic Hann window.
Tensor stft_spectrogram(std::span<const double> signal, std::size_t window_len, std::size_t hop);

std::vector<double> hann_window(std::size_t length);

}  // namespace segsel
