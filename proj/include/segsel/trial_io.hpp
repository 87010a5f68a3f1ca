#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "segsel/signal.hpp"

namespace segsel {

/// Malformed binary input. `offset` is the byte position where decoding failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

inline constexpr std::uint32_t kTrialFormatVersion = 1;

// Layout, little-endian:
//   "SGTR" | u32 version | u32 count |
//   per trial: u32 C | u32 T | f64 sample_rate | u8 label | u8 has_mask |
//              C*T f64 (row-major by channel) | T u8 mask if has_mask
std::vector<std::uint8_t> encode_trials(const std::vector<Trial>& trials);
std::vector<Trial> decode_trials(const std::vector<std::uint8_t>& bytes);

void save_trials(const std::filesystem::path& path, const std::vector<Trial>& trials);
std::vector<Trial> load_trials(const std::filesystem::path& path);

/// One trial per CSV file. Header `ch0,...,chC-1,label,mask`; one row per timepoint.
/// The label column must be constant; the mask column may be left empty on every row.
Trial load_trial_csv(const std::filesystem::path& path, double sample_rate);
void save_trial_csv(const std::filesystem::path& path, const Trial& trial);

}  // namespace segsel
