// Command-line front end: generate, train, eval, traces, compare.
// Exit codes: 0 success, 2 configuration error, 3 runtime error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "segsel/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config) {
  auto* opt = cmd->add_option("--config", c.config, "Experiment config (JSON)");
  if (needs_config) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Run only this subject seed");
  cmd->add_option("--out", c.out, "Output directory (overrides output_dir)");
}

segsel::ExperimentConfig load(const Common& c) {
  segsel::ExperimentConfig cfg = segsel::load_experiment_config(c.config);
  if (c.seed) cfg.seeds = {*c.seed};
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

void print_metrics(const std::vector<segsel::SubjectMetrics>& metrics) {
  for (const auto& m : metrics) {
    std::printf("subject %llu: accuracy %.2f%%  selection %.3f  in-mask %.3f  out-of-mask %.3f\n",
                static_cast<unsigned long long>(m.seed), m.accuracy, m.selection_fraction, m.in_mask_rate,
                m.out_mask_rate);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reinforcement-learned temporal segment selection for two-class multichannel signals"};
  app.require_subcommand(1);

  Common gen, train, eval, traces;
  auto* cmd_gen = app.add_subcommand("generate", "Write synthetic trial files for every subject seed");
  add_common(cmd_gen, gen, true);
  auto* cmd_train = app.add_subcommand("train", "Train and evaluate every subject");
  add_common(cmd_train, train, true);
  auto* cmd_eval = app.add_subcommand("eval", "Re-evaluate saved models on the test trials");
  add_common(cmd_eval, eval, true);
  auto* cmd_traces = app.add_subcommand("traces", "Emit action traces, selection overlays and spectrograms");
  add_common(cmd_traces, traces, true);

  std::string metrics_a, metrics_b, compare_out;
  auto* cmd_compare = app.add_subcommand("compare", "Paired Wilcoxon signed-rank test of two metrics files");
  cmd_compare->add_option("metrics_a", metrics_a, "metrics.json of method A")->required();
  cmd_compare->add_option("metrics_b", metrics_b, "metrics.json of method B")->required();
  cmd_compare->add_option("--out", compare_out, "Write the comparison as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*cmd_gen) {
      const auto cfg = load(gen);
      const std::filesystem::path out = gen.out.empty() ? cfg.output_dir / "data" : std::filesystem::path(gen.out);
      segsel::cmd_generate(cfg, out);
      std::printf("wrote %zu subject(s) to %s\n", cfg.seeds.size(), out.string().c_str());
    } else if (*cmd_train) {
      print_metrics(segsel::cmd_train(load(train)));
    } else if (*cmd_eval) {
      print_metrics(segsel::cmd_eval(load(eval)));
    } else if (*cmd_traces) {
      segsel::cmd_traces(load(traces));
    } else if (*cmd_compare) {
      std::optional<std::filesystem::path> out;
      if (!compare_out.empty()) out = compare_out;
      const auto cmp = segsel::cmd_compare(metrics_a, metrics_b, out);
      std::printf("n=%zu  W+=%.1f  W-=%.1f  W=%.1f  p=%.6g (%s)\n", cmp.test.n, cmp.test.w_plus, cmp.test.w_minus,
                  cmp.test.statistic, cmp.test.p_value, cmp.test.exact ? "exact" : "normal approximation");
    }
  } catch (const segsel::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
