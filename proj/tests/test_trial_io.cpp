#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "segsel/trial_io.hpp"
#include "temp_dir.hpp"

using namespace segsel;
using segsel::testing::TempDir;

namespace {

Trial random_trial(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dim(1, 6);
  std::normal_distribution<double> n01;
  Trial t;
  const std::size_t c = dim(rng), n = dim(rng) * 3;
  t.signal = Tensor({c, n}, 0.0);
  for (auto& v : t.signal.storage()) v = n01(rng) * 1e3;
  t.label = std::bernoulli_distribution(0.5)(rng) ? 1 : 0;
  t.sample_rate = std::uniform_real_distribution<double>(1.0, 2000.0)(rng);
  if (std::bernoulli_distribution(0.5)(rng)) {
    std::vector<std::uint8_t> mask(n);
    for (auto& m : mask) m = std::bernoulli_distribution(0.3)(rng) ? 1 : 0;
    t.mask = mask;
  }
  return t;
}

// Independent little-endian encoder following the documented layout.
void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
void put_f64(std::vector<std::uint8_t>& b, double v) {
  const auto u = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>((u >> (8 * i)) & 0xff));
}

}  // namespace

TEST(TrialFormat, ByteLayoutMatchesDocumentation) {
  Trial t;
  t.signal = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  t.label = 1;
  t.sample_rate = 250.0;
  t.mask = std::vector<std::uint8_t>{0, 1, 1};

  std::vector<std::uint8_t> want{'S', 'G', 'T', 'R'};
  put_u32(want, 1);
  put_u32(want, 1);
  put_u32(want, 2);
  put_u32(want, 3);
  put_f64(want, 250.0);
  want.push_back(1);
  want.push_back(1);
  for (double v : {1, 2, 3, 4, 5, 6}) put_f64(want, v);
  for (int m : {0, 1, 1}) want.push_back(static_cast<std::uint8_t>(m));

  EXPECT_EQ(encode_trials({t}), want);
}

TEST(TrialFormat, EmptyListIsAValidFile) {
  const auto bytes = encode_trials({});
  EXPECT_EQ(bytes.size(), 12u);
  EXPECT_TRUE(decode_trials(bytes).empty());
}

TEST(TrialFormat, RoundTripIsBitExactForRandomTrials) {
  std::mt19937_64 rng(42);
  TempDir dir;
  for (int round = 0; round < 20; ++round) {
    std::vector<Trial> trials;
    for (int i = 0; i < 10; ++i) trials.push_back(random_trial(rng));
    trials[0].signal[0] = -0.0;
    trials[0].signal[trials[0].signal.size() - 1] = std::numeric_limits<double>::denorm_min();
    save_trials(dir / "t.sgtr", trials);
    const auto back = load_trials(dir / "t.sgtr");
    ASSERT_EQ(back.size(), trials.size());
    for (std::size_t i = 0; i < trials.size(); ++i) {
      EXPECT_EQ(back[i].label, trials[i].label);
      EXPECT_EQ(back[i].mask, trials[i].mask);
      EXPECT_EQ(std::bit_cast<std::uint64_t>(back[i].sample_rate), std::bit_cast<std::uint64_t>(trials[i].sample_rate));
      ASSERT_EQ(back[i].signal.shape(), trials[i].signal.shape());
      for (std::size_t k = 0; k < trials[i].signal.size(); ++k) {
        EXPECT_EQ(std::bit_cast<std::uint64_t>(back[i].signal[k]), std::bit_cast<std::uint64_t>(trials[i].signal[k]));
      }
    }
  }
}

TEST(TrialFormat, EveryTruncationIsAFormatError) {
  std::mt19937_64 rng(1);
  const auto bytes = encode_trials({random_trial(rng), random_trial(rng)});
  for (std::size_t len = 0; len < bytes.size(); ++len) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(len));
    try {
      decode_trials(cut);
      ADD_FAILURE() << "prefix of " << len << " bytes decoded";
    } catch (const FormatError& e) {
      EXPECT_LE(e.offset(), len);
    }
  }
}

TEST(TrialFormat, CorruptionIsReportedWithOffset) {
  Trial t;
  t.signal = Tensor::matrix(1, 2, {1, 2});
  t.sample_rate = 10.0;
  auto bytes = encode_trials({t});

  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(decode_trials(bad_version), FormatError);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_trials(bad_magic), FormatError);

  auto bad_label = bytes;
  bad_label[12 + 16] = 7;  // after count, C, T, sample_rate
  try {
    decode_trials(bad_label);
    ADD_FAILURE();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 28u);
  }

  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_trials(trailing), FormatError);

  TempDir dir;
  EXPECT_THROW(load_trials(dir / "missing.sgtr"), std::runtime_error);
}

TEST(TrialCsv, RoundTrip) {
  std::mt19937_64 rng(3);
  TempDir dir;
  for (int i = 0; i < 10; ++i) {
    Trial t = random_trial(rng);
    t.sample_rate = 500.0;
    save_trial_csv(dir / "t.csv", t);
    const Trial back = load_trial_csv(dir / "t.csv", 500.0);
    EXPECT_EQ(back, t);
  }
}

TEST(TrialCsv, RejectsMalformedFiles) {
  TempDir dir;
  auto write = [&](const std::string& text) {
    std::ofstream(dir / "x.csv") << text;
    return dir / "x.csv";
  };
  EXPECT_THROW(load_trial_csv(write(""), 100.0), std::runtime_error);
  EXPECT_THROW(load_trial_csv(write("a,label,mask\n1,0,\n"), 100.0), std::runtime_error);
  EXPECT_THROW(load_trial_csv(write("ch0,label,mask\n1,0,\n2,1,\n"), 100.0), std::runtime_error);
  EXPECT_THROW(load_trial_csv(write("ch0,label,mask\n1,0,1\n2,0,\n"), 100.0), std::runtime_error);
  EXPECT_THROW(load_trial_csv(write("ch0,label,mask\n1,0\n"), 100.0), std::runtime_error);
  EXPECT_THROW(load_trial_csv(write("ch0,label,mask\n"), 100.0), std::runtime_error);
  const Trial ok = load_trial_csv(write("ch0,ch1,label,mask\n1,2,1,\n3,4,1,\n"), 100.0);
  EXPECT_EQ(ok.signal, Tensor::matrix(2, 2, {1, 3, 2, 4}));
  EXPECT_EQ(ok.label, 1);
  EXPECT_FALSE(ok.mask.has_value());
}
