#include "segsel/trial_io.hpp"

#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "bytes.hpp"

namespace segsel {

namespace detail {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

}  // namespace detail

std::vector<std::uint8_t> encode_trials(const std::vector<Trial>& trials) {
  detail::ByteWriter w;
  w.raw("SGTR", 4);
  w.u32(kTrialFormatVersion);
  w.u32(static_cast<std::uint32_t>(trials.size()));
  for (const Trial& t : trials) {
    t.validate();
    w.u32(static_cast<std::uint32_t>(t.channels()));
    w.u32(static_cast<std::uint32_t>(t.length()));
    w.f64(t.sample_rate);
    w.u8(static_cast<std::uint8_t>(t.label));
    w.u8(t.mask ? 1 : 0);
    for (double v : t.signal.data()) w.f64(v);
    if (t.mask) {
      for (std::uint8_t m : *t.mask) w.u8(m ? 1 : 0);
    }
  }
  return std::move(w.bytes());
}

std::vector<Trial> decode_trials(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::string(magic, 4) != "SGTR") throw FormatError("bad magic, expected 'SGTR'", 0);
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kTrialFormatVersion) {
    throw FormatError("unsupported trial format version " + std::to_string(version), version_at);
  }
  const std::uint32_t count = r.u32("trial count");
  std::vector<Trial> trials;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t start = r.offset();
    const std::uint32_t c = r.u32("channel count");
    const std::uint32_t t = r.u32("timepoint count");
    if (c == 0 || t == 0) throw FormatError("trial with zero channels or timepoints", start);
    Trial trial;
    trial.sample_rate = r.f64("sample rate");
    const std::size_t label_at = r.offset();
    const std::uint8_t label = r.u8("label");
    if (label > 1) throw FormatError("label must be 0 or 1", label_at);
    trial.label = label;
    const std::size_t flag_at = r.offset();
    const std::uint8_t has_mask = r.u8("mask flag");
    if (has_mask > 1) throw FormatError("mask flag must be 0 or 1", flag_at);
    const std::size_t values = static_cast<std::size_t>(c) * t;
    r.need(values * 8, "signal values");
    std::vector<double> data(values);
    for (double& v : data) v = r.f64("signal value");
    trial.signal = Tensor({c, t}, std::move(data));
    if (has_mask) {
      r.need(t, "mask");
      std::vector<std::uint8_t> mask(t);
      for (auto& m : mask) m = r.u8("mask");
      trial.mask = std::move(mask);
    }
    try {
      trial.validate();
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what(), start);
    }
    trials.push_back(std::move(trial));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last trial", r.offset());
  return trials;
}

void save_trials(const std::filesystem::path& path, const std::vector<Trial>& trials) {
  detail::write_file(path, encode_trials(trials));
}

std::vector<Trial> load_trials(const std::filesystem::path& path) {
  return decode_trials(detail::read_file(path));
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

Trial load_trial_csv(const std::filesystem::path& path, double sample_rate) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty CSV");
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[header.size() - 2] != "label" || header.back() != "mask") {
    throw std::runtime_error(path.string() + ": header must be ch0..chC-1,label,mask");
  }
  const std::size_t channels = header.size() - 2;
  for (std::size_t c = 0; c < channels; ++c) {
    if (header[c] != "ch" + std::to_string(c)) {
      throw std::runtime_error(path.string() + ": expected column 'ch" + std::to_string(c) + "', got '" +
                               header[c] + "'");
    }
  }
  std::vector<std::vector<double>> rows(channels);
  std::vector<std::uint8_t> mask;
  bool any_mask = false, any_blank = false;
  int label = -1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cells.size() != channels + 2) throw std::runtime_error(where + ": wrong number of columns");
    try {
      for (std::size_t c = 0; c < channels; ++c) rows[c].push_back(std::stod(cells[c]));
      const int row_label = std::stoi(cells[channels]);
      if (row_label != 0 && row_label != 1) throw std::runtime_error("label must be 0 or 1");
      if (label >= 0 && row_label != label) throw std::runtime_error("label changes within trial");
      label = row_label;
      if (cells.back().empty()) {
        any_blank = true;
        mask.push_back(0);
      } else {
        any_mask = true;
        mask.push_back(std::stoi(cells.back()) != 0 ? 1 : 0);
      }
    } catch (const std::logic_error& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
  }
  if (label < 0) throw std::runtime_error(path.string() + ": no data rows");
  if (any_mask && any_blank) throw std::runtime_error(path.string() + ": mask column partially filled");
  const std::size_t t = rows[0].size();
  Trial trial;
  trial.label = label;
  trial.sample_rate = sample_rate;
  trial.signal = Tensor({channels, t}, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < t; ++i) trial.signal.at(c, i) = rows[c][i];
  }
  if (any_mask) trial.mask = std::move(mask);
  trial.validate();
  return trial;
}

void save_trial_csv(const std::filesystem::path& path, const Trial& trial) {
  trial.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.precision(std::numeric_limits<double>::max_digits10);
  for (std::size_t c = 0; c < trial.channels(); ++c) out << "ch" << c << ',';
  out << "label,mask\n";
  for (std::size_t i = 0; i < trial.length(); ++i) {
    for (std::size_t c = 0; c < trial.channels(); ++c) out << trial.signal.at(c, i) << ',';
    out << trial.label << ',';
    if (trial.mask) out << static_cast<int>((*trial.mask)[i]);
    out << '\n';
  }
}

}  // namespace segsel
