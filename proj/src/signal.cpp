#include "segsel/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include "fft.hpp"

namespace segsel {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// Unit-variance noise with power spectral density proportional to 1/f.
std::vector<double> pink_noise(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> white(n);
  for (double& v : white) v = normal(rng);
  if (n < 4) return white;
  auto spectrum = detail::rfft(white);
  spectrum[0] = 0.0;
  for (std::size_t k = 1; k < spectrum.size(); ++k) spectrum[k] /= std::sqrt(static_cast<double>(k));
  std::vector<double> out = detail::irfft(spectrum, n);
  double mean = 0.0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double& v : out) {
    v -= mean;
    var += v * v;
  }
  const double sd = std::sqrt(var / static_cast<double>(n));
  if (sd > 0.0) {
    for (double& v : out) v /= sd;
  }
  return out;
}

}  // namespace

void Trial::validate() const {
  require(signal.rank() == 2, "trial signal must be [channels x timepoints]");
  require(channels() >= 1 && length() >= 1, "trial needs at least one channel and one timepoint");
  require(label == 0 || label == 1, "trial label must be 0 or 1");
  require(sample_rate > 0.0, "trial sample rate must be positive");
  require(signal.all_finite(), "trial signal contains non-finite values");
  if (mask) {
    require(mask->size() == length(), "trial mask length " + std::to_string(mask->size()) +
                                          " does not match " + std::to_string(length()) + " timepoints");
  }
}

void GeneratorConfig::validate() const {
  require(channels >= 1, "generator: channels must be >= 1");
  require(samples >= 1, "generator: samples must be >= 1");
  require(sample_rate > 0.0, "generator: sample_rate must be positive");
  require(burst_band.lo > 0.0 && burst_band.hi > burst_band.lo && burst_band.hi < sample_rate / 2.0,
          "generator: burst_band must lie within (0, sample_rate/2)");
  require(snr > 0.0, "generator: snr must be positive");
  require(burst_count.lo <= burst_count.hi, "generator: burst_count range reversed");
  require(burst_duration.lo > 0.0 && burst_duration.lo <= burst_duration.hi,
          "generator: burst_duration range invalid");
  const double duration = static_cast<double>(samples) / sample_rate;
  if (burst_span.hi > 0.0) {
    require(burst_span.lo >= 0.0 && burst_span.hi <= duration + 1e-12 && burst_span.lo < burst_span.hi,
            "generator: burst_span must lie inside the trial");
    require(burst_duration.hi <= burst_span.hi - burst_span.lo + 1e-12,
            "generator: burst_duration exceeds burst_span");
  } else {
    require(burst_duration.hi <= duration + 1e-12, "generator: burst_duration exceeds trial length");
  }
  for (const auto& group : class_channel_map) {
    for (std::size_t c : group) {
      require(c < channels, "generator: class_channel_map index " + std::to_string(c) + " out of range");
    }
  }
}

GeneratorConfig default_generator_config(std::size_t channels) {
  GeneratorConfig cfg;
  cfg.channels = channels;
  const std::size_t half = std::max<std::size_t>(1, channels / 2);
  for (std::size_t c = 0; c < channels; ++c) {
    cfg.class_channel_map[c < half ? 0 : 1].push_back(c);
  }
  if (cfg.class_channel_map[1].empty()) cfg.class_channel_map[1] = cfg.class_channel_map[0];
  return cfg;
}

Trial generate_trial(const GeneratorConfig& cfg, int label) {
  cfg.validate();
  require(label == 0 || label == 1, "generate_trial: label must be 0 or 1");
  std::mt19937_64 rng(cfg.rng_seed);
  const std::size_t c_count = cfg.channels, n = cfg.samples;
  const double fs = cfg.sample_rate;

  Trial trial;
  trial.label = label;
  trial.sample_rate = fs;
  trial.signal = Tensor({c_count, n}, 0.0);
  for (std::size_t c = 0; c < c_count; ++c) {
    const std::vector<double> noise = pink_noise(n, rng);
    std::copy(noise.begin(), noise.end(), &trial.signal.data()[c * n]);
  }

  std::vector<std::uint8_t> mask(n, 0);
  // Mean of (A * hann * sin)^2 over the support is A^2 * 3/16.
  const double amplitude = std::sqrt(16.0 * cfg.snr / 3.0);
  const double span_lo = cfg.burst_span.hi > 0.0 ? cfg.burst_span.lo : 0.0;
  const double span_hi = cfg.burst_span.hi > 0.0 ? cfg.burst_span.hi : static_cast<double>(n) / fs;
  std::uniform_int_distribution<std::size_t> count_dist(cfg.burst_count.lo, cfg.burst_count.hi);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t bursts = count_dist(rng);
  for (std::size_t b = 0; b < bursts; ++b) {
    const double duration = cfg.burst_duration.lo + unit(rng) * (cfg.burst_duration.hi - cfg.burst_duration.lo);
    const double start = span_lo + unit(rng) * (span_hi - span_lo - duration);
    const double freq = cfg.burst_band.lo + unit(rng) * (cfg.burst_band.hi - cfg.burst_band.lo);
    const double phase = unit(rng) * 2.0 * std::numbers::pi;
    const auto first = static_cast<std::size_t>(std::llround(start * fs));
    const auto len = static_cast<std::size_t>(std::llround(duration * fs));
    const std::size_t last = std::min(n, first + len);
    for (std::size_t i = first; i < last; ++i) {
      const double u = (static_cast<double>(i - first) + 0.5) / static_cast<double>(len);
      const double envelope = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * u));
      const double tsec = static_cast<double>(i) / fs;
      const double v = amplitude * envelope * std::sin(2.0 * std::numbers::pi * freq * tsec + phase);
      for (std::size_t c : cfg.class_channel_map[static_cast<std::size_t>(label)]) trial.signal.at(c, i) += v;
      mask[i] = 1;
    }
  }
  trial.mask = std::move(mask);
  return trial;
}

std::vector<Trial> generate_trials(const GeneratorConfig& cfg, std::size_t count, double fraction_class1) {
  cfg.validate();
  require(fraction_class1 >= 0.0 && fraction_class1 <= 1.0, "generate_trials: class fraction must be in [0,1]");
  const auto ones = static_cast<std::size_t>(std::llround(static_cast<double>(count) * fraction_class1));
  std::vector<int> labels(count, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(ones), 1);
  std::mt19937_64 order_rng(derive_seed(cfg.rng_seed, ~std::uint64_t{0}));
  std::shuffle(labels.begin(), labels.end(), order_rng);

  std::vector<Trial> trials;
  trials.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    GeneratorConfig one = cfg;
    one.rng_seed = derive_seed(cfg.rng_seed, i);
    trials.push_back(generate_trial(one, labels[i]));
  }
  return trials;
}

// ---------------------------------------------------------------------------
// filtering

std::vector<Biquad> butterworth(FilterKind kind, int order, double cutoff_hz, double sample_rate) {
  require(order >= 2 && order % 2 == 0, "butterworth: order must be a positive even number");
  require(cutoff_hz > 0.0 && cutoff_hz < sample_rate / 2.0,
          "butterworth: cutoff " + std::to_string(cutoff_hz) + " Hz must lie below Nyquist (" +
              std::to_string(sample_rate / 2.0) + " Hz)");
  const double k = std::tan(std::numbers::pi * cutoff_hz / sample_rate);
  std::vector<Biquad> sections;
  for (int i = 0; i < order / 2; ++i) {
    const double q = 1.0 / (2.0 * std::sin((2.0 * i + 1.0) * std::numbers::pi / (2.0 * order)));
    const double norm = 1.0 / (1.0 + k / q + k * k);
    Biquad s;
    if (kind == FilterKind::lowpass) {
      s.b0 = k * k * norm;
      s.b1 = 2.0 * s.b0;
      s.b2 = s.b0;
    } else {
      s.b0 = norm;
      s.b1 = -2.0 * norm;
      s.b2 = norm;
    }
    s.a1 = 2.0 * (k * k - 1.0) * norm;
    s.a2 = (1.0 - k / q + k * k) * norm;
    sections.push_back(s);
  }
  return sections;
}

std::vector<double> sosfilt(std::span<const Biquad> sections, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  for (const Biquad& s : sections) {
    double z1 = 0.0, z2 = 0.0;  // transposed direct form II
    for (double& v : y) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
  return y;
}

std::vector<double> filtfilt(std::span<const Biquad> sections, std::span<const double> x, std::size_t padlen) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  padlen = std::min(padlen, n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * padlen);
  for (std::size_t i = padlen; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  std::vector<double> y = sosfilt(sections, ext);
  std::reverse(y.begin(), y.end());
  y = sosfilt(sections, y);
  std::reverse(y.begin(), y.end());
  return {y.begin() + static_cast<std::ptrdiff_t>(padlen), y.begin() + static_cast<std::ptrdiff_t>(padlen + n)};
}

Trial preprocess(const Trial& trial, const PreprocessConfig& cfg) {
  trial.validate();
  const double fs = trial.sample_rate;
  const double target = cfg.target_rate > 0.0 ? cfg.target_rate : fs;
  const double ratio = fs / target;
  const auto factor = static_cast<std::size_t>(std::llround(ratio));
  require(factor >= 1 && std::abs(ratio - static_cast<double>(factor)) < 1e-9,
          "preprocess: target rate " + std::to_string(target) + " Hz must divide the input rate " +
              std::to_string(fs) + " Hz");

  std::vector<Biquad> sections;
  double lowest_edge = 0.0;
  if (cfg.band) {
    require(cfg.band->lo >= 0.0 && cfg.band->hi > cfg.band->lo, "preprocess: band edges invalid");
    require(cfg.band->hi < fs / 2.0, "preprocess: band upper edge " + std::to_string(cfg.band->hi) +
                                         " Hz is above the Nyquist frequency " + std::to_string(fs / 2.0) + " Hz");
    require(cfg.band->hi < target / 2.0, "preprocess: band upper edge " + std::to_string(cfg.band->hi) +
                                             " Hz is above the target Nyquist frequency " +
                                             std::to_string(target / 2.0) + " Hz");
    if (cfg.band->lo > 0.0) {
      auto hp = butterworth(FilterKind::highpass, cfg.filter_order, cfg.band->lo, fs);
      sections.insert(sections.end(), hp.begin(), hp.end());
      lowest_edge = cfg.band->lo;
    }
    auto lp = butterworth(FilterKind::lowpass, cfg.filter_order, cfg.band->hi, fs);
    sections.insert(sections.end(), lp.begin(), lp.end());
  } else if (factor > 1) {
    // anti-aliasing before decimation
    auto lp = butterworth(FilterKind::lowpass, cfg.filter_order, 0.4 * target, fs);
    sections.insert(sections.end(), lp.begin(), lp.end());
  }
  const double slowest = lowest_edge > 0.0 ? lowest_edge : (cfg.band ? cfg.band->hi : 0.4 * target);
  const auto padlen = static_cast<std::size_t>(std::max(27.0, std::ceil(3.0 * fs / slowest)));

  const std::size_t channels = trial.channels(), n = trial.length();
  const std::size_t dec_len = n / factor;
  require(dec_len >= 1, "preprocess: trial shorter than one decimation window");

  Tensor decimated({channels, dec_len}, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    std::span<const double> row(&trial.signal.data()[c * n], n);
    std::vector<double> filtered = sections.empty() ? std::vector<double>(row.begin(), row.end())
                                                    : filtfilt(sections, row, padlen);
    for (std::size_t i = 0; i < dec_len; ++i) decimated.at(c, i) = filtered[i * factor];
  }
  std::optional<std::vector<std::uint8_t>> dec_mask;
  if (trial.mask) {
    dec_mask.emplace(dec_len, 0);
    for (std::size_t i = 0; i < dec_len; ++i) {
      std::size_t votes = 0;
      for (std::size_t q = 0; q < factor; ++q) votes += (*trial.mask)[i * factor + q] ? 1 : 0;
      (*dec_mask)[i] = 2 * votes > factor ? 1 : 0;
    }
  }

  std::size_t start = 0, stop = dec_len;
  if (cfg.crop) {
    const double duration = static_cast<double>(n) / fs;
    require(cfg.crop->lo >= 0.0 && cfg.crop->hi > cfg.crop->lo && cfg.crop->hi <= duration + 1e-9,
            "preprocess: crop [" + std::to_string(cfg.crop->lo) + ", " + std::to_string(cfg.crop->hi) +
                "] s lies outside the " + std::to_string(duration) + " s trial");
    start = static_cast<std::size_t>(std::llround(cfg.crop->lo * target));
    stop = static_cast<std::size_t>(std::llround(cfg.crop->hi * target));
    require(stop <= dec_len && start < stop, "preprocess: crop outside decimated trial");
  }

  std::vector<std::size_t> keep = cfg.channel_subset;
  if (keep.empty()) {
    keep.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) keep[c] = c;
  }
  for (std::size_t c : keep) {
    require(c < channels, "preprocess: channel index " + std::to_string(c) + " out of range for " +
                              std::to_string(channels) + " channels");
  }

  Trial out;
  out.label = trial.label;
  out.sample_rate = target;
  out.signal = Tensor({keep.size(), stop - start}, 0.0);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    for (std::size_t i = start; i < stop; ++i) out.signal.at(r, i - start) = decimated.at(keep[r], i);
  }
  if (dec_mask) out.mask = std::vector<std::uint8_t>(dec_mask->begin() + static_cast<std::ptrdiff_t>(start),
                                                     dec_mask->begin() + static_cast<std::ptrdiff_t>(stop));
  out.signal.require_finite("preprocess output");
  return out;
}

// ---------------------------------------------------------------------------
// spectrogram

std::vector<double> hann_window(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t i = 0; i < length; ++i) {
    w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(length)));
  }
  return w;
}

Tensor stft_spectrogram(std::span<const double> signal, std::size_t window_len, std::size_t hop) {
  require(window_len >= 1 && window_len <= signal.size(),
          "stft: window length " + std::to_string(window_len) + " must be in [1, " +
              std::to_string(signal.size()) + "]");
  require(hop >= 1, "stft: hop must be >= 1");
  const std::size_t frames = (signal.size() - window_len) / hop + 1;
  const std::size_t bins = window_len / 2 + 1;
  const std::vector<double> window = hann_window(window_len);
  Tensor out({bins, frames}, 0.0);
  std::vector<double> frame(window_len);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < window_len; ++i) frame[i] = signal[f * hop + i] * window[i];
    const auto spectrum = detail::rfft(frame);
    for (std::size_t k = 0; k < bins; ++k) out.at(k, f) = std::norm(spectrum[k]);
  }
  return out;
}

}  // namespace segsel
