#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "segsel/experiment.hpp"
#include "segsel/trial_io.hpp"
#include "temp_dir.hpp"

using namespace segsel;
using namespace segsel::testing;
using nlohmann::json;

namespace {

json tiny_config_json(const std::filesystem::path& out) {
  json j = json::parse(R"({
    "seeds": [3, 8],
    "generator": {"channels": 4, "samples": 800, "sample_rate": 200, "burst_count": [1, 1],
                  "burst_duration": [0.4, 0.8], "burst_span": [1.0, 3.5], "snr": 2.0},
    "subjects": {"snr": [1.0, 3.0], "shuffle_channels": true},
    "data": {"n_train": 20, "n_test": 12},
    "preprocess": {"band": [8, 30], "target_rate": 100, "crop": [1.0, 3.5]},
    "embedding": {"temporal_filters": 3, "temporal_kernel": 9, "spatial_filters": 4,
                  "activation": "square", "pool_window": 10, "pool_stride": 5},
    "train": {"n_pre": 1, "max_epochs": 1, "patience": 0, "l1": 0.0001, "validation_fraction": 0.2},
    "traces": {"channels": [0, 3], "trials": 2, "window": 32, "hop": 8}
  })");
  j["output_dir"] = out.string();
  return j;
}

ExperimentConfig tiny_config(const std::filesystem::path& out) {
  return parse_experiment_config(tiny_config_json(out).dump());
}

std::vector<std::string> problems_of(const std::string& text) {
  try {
    parse_experiment_config(text);
  } catch (const ConfigError& e) {
    return e.problems();
  }
  return {};
}

bool mentions(const std::vector<std::string>& problems, const std::string& what) {
  for (const auto& p : problems) {
    if (p.find(what) != std::string::npos) return true;
  }
  return false;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  return json::parse(in);
}

}  // namespace

TEST(Config, EmptyObjectGivesDefaults) {
  const auto cfg = parse_experiment_config("{}");
  EXPECT_EQ(cfg.train, TrainConfig{});
  EXPECT_EQ(cfg.generator, default_generator_config());
  EXPECT_EQ(cfg.preprocess, PreprocessConfig{});
  EXPECT_EQ(cfg.seeds, std::vector<std::uint64_t>{0});
}

TEST(Config, ShippedConfigsParse) {
  for (const auto& entry : std::filesystem::directory_iterator(SEGSEL_SOURCE_DIR "/configs")) {
    if (entry.path().extension() == ".json") {
      EXPECT_NO_THROW(load_experiment_config(entry.path())) << entry.path();
    }
  }
}

TEST(Config, EveryProblemIsReportedTogether) {
  const auto problems = problems_of(R"({
    "colour": 1,
    "train": {"learning_rate": "fast", "pipeline": "both", "l1": 0.1, "epochs": 3},
    "embedding": {"activation": "tanhh"},
    "seeds": [1, 1]
  })");
  EXPECT_GE(problems.size(), 6u);
  EXPECT_TRUE(mentions(problems, "colour: unknown key"));
  EXPECT_TRUE(mentions(problems, "train.epochs: unknown key"));
  EXPECT_TRUE(mentions(problems, "train.learning_rate"));
  EXPECT_TRUE(mentions(problems, "train.pipeline"));
  EXPECT_TRUE(mentions(problems, "embedding.activation"));
  EXPECT_TRUE(mentions(problems, "seeds"));
}

TEST(Config, CrossFieldChecks) {
  EXPECT_TRUE(mentions(problems_of(R"({"train": {"learning_rate": -1}, "preprocess": {"channels": [25]}})"),
                       "preprocess.channels"));
  EXPECT_TRUE(mentions(problems_of(R"({"embedding": {"pool_window": 240}})"), "pooling needs at least 240"));
  EXPECT_TRUE(mentions(problems_of(R"({"embedding": {"pool_window": 220, "pool_stride": 10}})"), "fewer than two"));
  EXPECT_TRUE(mentions(problems_of(R"({"data": {"test_file": "x.sgtr"}})"), "requires data.train_file"));
  EXPECT_TRUE(mentions(problems_of(R"({"data": {"fraction_class1": 2}})"), "fraction_class1"));
  EXPECT_TRUE(mentions(problems_of("{not json"), "malformed JSON"));
  EXPECT_THROW(load_experiment_config("/nonexistent/config.json"), ConfigError);
}

TEST(Subjects, GeneratorVariesBySeedAndIsReproducible) {
  TempDir dir;
  const auto cfg = tiny_config(dir.path());
  const auto a = subject_generator(cfg, 3), b = subject_generator(cfg, 3), c = subject_generator(cfg, 8);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (const auto& g : {a, c}) {
    EXPECT_GE(g.snr, 1.0);
    EXPECT_LE(g.snr, 3.0);
    std::vector<std::size_t> all = g.class_channel_map[0];
    all.insert(all.end(), g.class_channel_map[1].begin(), g.class_channel_map[1].end());
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, (std::vector<std::size_t>{0, 1, 2, 3}));
  }
}

TEST(Subjects, DataSizesBalanceAndPreprocessing) {
  TempDir dir;
  const auto cfg = tiny_config(dir.path());
  const auto data = subject_data(cfg, 3);
  ASSERT_EQ(data.train.size(), 20u);
  ASSERT_EQ(data.test.size(), 12u);
  std::size_t ones = 0;
  for (const auto& t : data.train) ones += t.label;
  for (const auto& t : data.test) ones += t.label;
  EXPECT_EQ(ones, 16u);
  for (const auto& t : data.train) {
    EXPECT_EQ(t.sample_rate, 100.0);
    EXPECT_EQ(t.length(), 250u);
  }
}

TEST(Commands, GenerateWritesReproducibleFiles) {
  TempDir dir;
  auto j = tiny_config_json(dir.path());
  j["data"]["n_test"] = 0;
  const auto cfg = parse_experiment_config(j.dump());
  cmd_generate(cfg, dir / "a");
  cmd_generate(cfg, dir / "b");
  for (std::uint64_t seed : cfg.seeds) {
    const auto sub = "subject-" + std::to_string(seed);
    EXPECT_EQ(slurp(dir / "a" / sub / "train.sgtr"), slurp(dir / "b" / sub / "train.sgtr"));
    const auto [train, test] = raw_subject_data(cfg, seed);
    EXPECT_EQ(load_trials(dir / "a" / sub / "train.sgtr"), train);
    EXPECT_TRUE(load_trials(dir / "a" / sub / "test.sgtr").empty());
  }
}

TEST(Commands, RecordedDataRoundTripsThroughTheTrainer) {
  TempDir dir;
  const auto synthetic = tiny_config(dir / "synthetic");
  cmd_generate(synthetic, dir / "data");
  auto j = tiny_config_json(dir / "recorded");
  j["seeds"] = {3};
  j["data"]["train_file"] = (dir / "data" / "subject-3" / "train.sgtr").string();
  j["data"]["test_file"] = (dir / "data" / "subject-3" / "test.sgtr").string();
  const auto recorded = parse_experiment_config(j.dump());
  EXPECT_EQ(subject_data(recorded, 3).train, subject_data(synthetic, 3).train);
  EXPECT_THROW(cmd_generate(recorded, dir / "x"), ConfigError);
}

TEST(Commands, TrainEvalTracesAndMetrics) {
  TempDir dir;
  const auto cfg = tiny_config(dir.path());
  const auto trained = cmd_train(cfg);
  ASSERT_EQ(trained.size(), 2u);

  // metrics.json agrees with a recount of every predictions.csv.
  const json metrics = read_json(dir / "metrics.json");
  EXPECT_EQ(metrics["subjects"], 2);
  EXPECT_EQ(metrics["pipeline"], "agent");
  double sum = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto rows = read_csv(subject_dir(cfg, cfg.seeds[i]) / "predictions.csv");
    ASSERT_EQ(rows.size(), 13u);
    EXPECT_EQ(rows[0][0], "trial");
    int correct = 0;
    for (std::size_t r = 1; r < rows.size(); ++r) correct += rows[r][1] == rows[r][3];
    const double acc = 100.0 * correct / 12.0;
    EXPECT_DOUBLE_EQ(metrics["per_subject"][i]["accuracy"].get<double>(), acc);
    EXPECT_EQ(metrics["per_subject"][i]["seed"], cfg.seeds[i]);
    sum += acc;
    for (const char* f : {"model.sgmd", "checkpoint.sgck", "train_log.csv"}) {
      EXPECT_TRUE(std::filesystem::exists(subject_dir(cfg, cfg.seeds[i]) / f)) << f;
    }
    EXPECT_EQ(read_csv(subject_dir(cfg, cfg.seeds[i]) / "train_log.csv").size(), 3u);
  }
  EXPECT_DOUBLE_EQ(metrics["accuracy"]["mean"].get<double>(), sum / 2.0);
  EXPECT_EQ(read_csv(dir / "accuracies.csv").size(), 3u);

  // Re-evaluation of the saved models reproduces the training-time metrics.
  const std::string before = slurp(dir / "metrics.json");
  const auto evaluated = cmd_eval(cfg);
  EXPECT_EQ(slurp(dir / "metrics.json"), before);
  EXPECT_EQ(evaluated[0].accuracy, trained[0].accuracy);

  // Traces: per-step actions agree with the action trace and the input overlay.
  cmd_traces(cfg);
  const auto tdir = subject_dir(cfg, 3) / "traces" / "trial-1";
  const auto actions = read_csv(tdir / "actions.csv");
  const auto steps = read_csv(tdir / "steps.csv");
  const auto overlay = read_csv(tdir / "overlay.csv");
  ASSERT_EQ(steps.size(), actions.size());
  const std::size_t action_col =
      std::find(actions[0].begin(), actions[0].end(), "action") - actions[0].begin();
  ASSERT_LT(action_col, actions[0].size());
  ASSERT_EQ(overlay.size(), 251u);
  std::vector<int> covered(250, 0);
  for (std::size_t s = 1; s < steps.size(); ++s) {
    EXPECT_EQ(steps[s][1], actions[s][action_col]);
    if (steps[s][1] == "1") {
      for (std::size_t k = std::stoul(steps[s][2]); k < std::stoul(steps[s][3]); ++k) covered[k] = 1;
    }
  }
  for (std::size_t k = 0; k < 250; ++k) EXPECT_EQ(overlay[k + 1][2], std::to_string(covered[k]));
  const auto spec = read_csv(tdir / "spectrogram_ch3.csv");
  EXPECT_EQ(spec.size(), 1u + 17u);  // header + 17 non-negative bins of a 32-point window
  EXPECT_EQ(spec[0].size(), 1u + (250 - 32) / 8 + 1);
  EXPECT_EQ(read_csv(subject_dir(cfg, 3) / "traces" / "summary.csv").size(), 3u);
}

TEST(Commands, CompareAlignsSubjectsBySeed) {
  TempDir dir;
  auto write = [&](const std::string& name, const std::vector<std::pair<int, double>>& acc) {
    json j;
    j["per_subject"] = json::array();
    for (auto [seed, a] : acc) j["per_subject"].push_back({{"seed", seed}, {"accuracy", a}});
    std::ofstream(dir / name) << j.dump();
  };
  write("a.json", {{1, 70}, {2, 71}, {3, 72}, {4, 73}, {5, 74}, {9, 50}});
  write("b.json", {{5, 60}, {4, 60}, {3, 60}, {2, 60}, {1, 60}, {7, 99}});
  const auto cmp = cmd_compare(dir / "a.json", dir / "b.json", dir / "cmp" / "out.json");
  EXPECT_EQ(cmp.seeds, (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));
  EXPECT_DOUBLE_EQ(cmp.test.p_value, 0.0625);
  const json out = read_json(dir / "cmp" / "out.json");
  EXPECT_EQ(out["method"], "exact");
  EXPECT_EQ(out["n_pairs"], 5);

  write("c.json", {{11, 70}});
  EXPECT_THROW(cmd_compare(dir / "a.json", dir / "c.json", std::nullopt), std::runtime_error);
  write("d.json", {{1, 170}, {2, 1}, {3, 1}, {4, 1}, {5, 1}});
  EXPECT_THROW(cmd_compare(dir / "d.json", dir / "b.json", std::nullopt), std::runtime_error);
  std::ofstream(dir / "bad.json") << "{";
  EXPECT_THROW(cmd_compare(dir / "bad.json", dir / "b.json", std::nullopt), ConfigError);
}

#ifdef SEGSEL_CLI_PATH
namespace {
int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + SEGSEL_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
}  // namespace

TEST(Cli, ExitCodes) {
  TempDir dir;
  auto j = tiny_config_json(dir / "run");
  std::ofstream(dir / "ok.json") << j.dump();
  std::ofstream(dir / "bad.json") << R"({"train": {"learning_rate": -1}})";
  const std::string ok = (dir / "ok.json").string();

  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("train"), 2);
  EXPECT_EQ(run_cli("train --config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(run_cli("train --config " + (dir / "bad.json").string()), 2);
  EXPECT_EQ(run_cli("eval --config " + ok), 3);  // no trained model yet
  EXPECT_EQ(run_cli("generate --config " + ok + " --seed 4 --out " + (dir / "gen").string()), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "gen" / "subject-4" / "train.sgtr"));
  EXPECT_FALSE(std::filesystem::exists(dir / "gen" / "subject-3"));
  EXPECT_EQ(run_cli("compare " + (dir / "nope.json").string() + " " + ok), 2);
}
#endif
