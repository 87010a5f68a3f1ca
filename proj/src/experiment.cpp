#include "segsel/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "segsel/trial_io.hpp"

namespace segsel {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string out = "invalid configuration:";
  for (const auto& p : problems) out += "\n  - " + p;
  return out;
}

// Walks one JSON object, recording which keys were consumed and every problem found.
class Section {
 public:
  Section(const json& node, std::string path, std::vector<std::string>& problems)
      : node_(node), path_(std::move(path)), problems_(problems) {
    if (!node_.is_object()) problem("must be an object");
  }
  ~Section() {
    if (!node_.is_object()) return;
    for (const auto& [key, _] : node_.items()) {
      if (!seen_.count(key)) problems_.push_back(where(key) + ": unknown key");
    }
  }
  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.is_object() && node_.contains(key);
  }
  const json& at(const std::string& key) const { return node_.at(key); }
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  void problem(const std::string& what) { problems_.push_back((path_.empty() ? "<root>" : path_) + ": " + what); }
  void problem(const std::string& key, const std::string& what) { problems_.push_back(where(key) + ": " + what); }
  std::vector<std::string>& problems() { return problems_; }

  template <class T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = node_.at(key).get<T>();
    } catch (const json::exception&) {
      problem(key, "has the wrong type");
    }
  }
  void read_count(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const json& v = node_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      problem(key, "must be a non-negative integer");
      return;
    }
    out = v.get<std::size_t>();
  }
  void read_positive(const std::string& key, double& out) {
    read(key, out);
    if (has(key) && !(out > 0.0)) problem(key, "must be positive");
  }
  void read_range(const std::string& key, Range& out) {
    if (!has(key)) return;
    const json& v = node_.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      problem(key, "must be a two-element numeric array [lo, hi]");
      return;
    }
    out = {v[0].get<double>(), v[1].get<double>()};
    if (out.lo > out.hi) problem(key, "lo must not exceed hi");
  }
  void read_optional_range(const std::string& key, std::optional<Range>& out) {
    if (!has(key)) return;
    if (node_.at(key).is_null()) {
      out.reset();
      return;
    }
    Range r;
    read_range(key, r);
    out = r;
  }
  void read_indices(const std::string& key, std::vector<std::size_t>& out) {
    if (!has(key)) return;
    const json& v = node_.at(key);
    bool ok = v.is_array();
    if (ok) {
      for (const auto& e : v) ok = ok && e.is_number_integer() && e.get<long long>() >= 0;
    }
    if (!ok) {
      problem(key, "must be an array of non-negative integers");
      return;
    }
    out = v.get<std::vector<std::size_t>>();
  }
  template <class Enum, class Parse>
  void read_enum(const std::string& key, Enum& out, Parse parse) {
    if (!has(key)) return;
    if (!node_.at(key).is_string()) {
      problem(key, "must be a string");
      return;
    }
    try {
      out = parse(node_.at(key).get<std::string>());
    } catch (const std::invalid_argument& e) {
      problem(key, e.what());
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

template <class F>
void try_validate(std::vector<std::string>& problems, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    problems.emplace_back(e.what());
  }
}

void parse_generator(Section& s, GeneratorConfig& g) {
  bool map_given = false;
  s.read_count("channels", g.channels);
  s.read_count("samples", g.samples);
  s.read_positive("sample_rate", g.sample_rate);
  s.read_range("burst_band", g.burst_band);
  if (s.has("burst_count")) {
    Range r;
    s.read_range("burst_count", r);
    if (r.lo < 0 || r.lo != std::floor(r.lo) || r.hi != std::floor(r.hi)) {
      s.problem("burst_count", "must hold non-negative integers");
    } else {
      g.burst_count = {static_cast<std::size_t>(r.lo), static_cast<std::size_t>(r.hi)};
    }
  }
  s.read_range("burst_duration", g.burst_duration);
  s.read_range("burst_span", g.burst_span);
  s.read("snr", g.snr);
  if (s.has("class_channel_map")) {
    const json& v = s.at("class_channel_map");
    try {
      auto groups = v.get<std::vector<std::vector<std::size_t>>>();
      if (groups.size() != 2) throw std::invalid_argument("");
      g.class_channel_map = {groups[0], groups[1]};
      map_given = true;
    } catch (const std::exception&) {
      s.problem("class_channel_map", "must be two arrays of channel indices");
    }
  }
  if (!map_given) g.class_channel_map = default_generator_config(g.channels).class_channel_map;
}

void parse_embedding(Section& s, EmbeddingConfig& e) {
  if (s.has("preset")) {
    std::string name;
    s.read("preset", name);
    try {
      e = EmbeddingConfig::preset(name);
    } catch (const std::invalid_argument& err) {
      s.problem("preset", err.what());
    }
  }
  s.read_count("temporal_filters", e.temporal_filters);
  s.read_count("temporal_kernel", e.temporal_kernel);
  s.read_count("temporal_stride", e.temporal_stride);
  s.read_count("spatial_filters", e.spatial_filters);
  s.read_enum("activation", e.activation, [](const std::string& v) { return activation_from_string(v); });
  s.read_count("pool_window", e.pool_window);
  s.read_count("pool_stride", e.pool_stride);
  if (s.has("blocks")) {
    const json& blocks = s.at("blocks");
    if (!blocks.is_array()) {
      s.problem("blocks", "must be an array");
    } else {
      e.extra_blocks.clear();
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        Section b(blocks[i], s.where("blocks") + "[" + std::to_string(i) + "]", s.problems());
        ConvBlock block;
        b.read_count("filters", block.filters);
        b.read_count("kernel", block.kernel);
        b.read_count("stride", block.stride);
        e.extra_blocks.push_back(block);
      }
    }
  }
}

void parse_agent(Section& s, AgentConfig& a) {
  s.read("gamma", a.gamma);
  s.read_enum("reward_sign", a.reward_sign, [](const std::string& v) { return reward_sign_from_string(v); });
  s.read_enum("baseline", a.baseline, [](const std::string& v) { return baseline_mode_from_string(v); });
  s.read_count("hidden_layers", a.nets.hidden_layers);
  s.read_count("hidden_width", a.nets.hidden_width);
  s.read_enum("critic_head", a.nets.critic_head, [](const std::string& v) { return critic_head_from_string(v); });
  if (s.has("learning_rate")) {
    double lr = 0.0;
    s.read("learning_rate", lr);
    a.learning_rate = lr;
  }
  s.read("normalize_input", a.normalize_input);
}

void parse_train(Section& s, TrainConfig& t) {
  s.read_enum("pipeline", t.pipeline, [](const std::string& v) { return pipeline_from_string(v); });
  s.read_count("n_pre", t.n_pre);
  s.read_count("batch_size", t.batch_size);
  s.read("learning_rate", t.learning_rate);
  s.read("lr_decay", t.lr_decay);
  s.read("rmsprop_decay", t.rmsprop_decay);
  s.read("rmsprop_epsilon", t.rmsprop_epsilon);
  s.read("l1", t.l1);
  s.read("l2", t.l2);
  if (s.has("regularize")) {
    Section r(s.at("regularize"), s.where("regularize"), s.problems());
    r.read("embedding", t.regularize.embedding);
    r.read("classifier", t.regularize.classifier);
    r.read("actor", t.regularize.actor);
    r.read("critic", t.regularize.critic);
  }
  s.read_count("max_epochs", t.max_epochs);
  s.read_count("patience", t.patience);
  s.read("joint_updates", t.joint_updates);
  s.read("validation_fraction", t.validation_fraction);
}

std::vector<Trial> load_trial_source(const fs::path& path, double csv_rate) {
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.path().extension() == ".csv") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Trial> trials;
    for (const auto& f : files) trials.push_back(load_trial_csv(f, csv_rate));
    return trials;
  }
  if (path.extension() == ".csv") return {load_trial_csv(path, csv_rate)};
  return load_trials(path);
}

// Preprocessed length of a generator-shaped trial; throws on inconsistent settings.
std::size_t preprocessed_length(const ExperimentConfig& cfg) {
  Trial probe;
  probe.signal = Tensor({cfg.generator.channels, cfg.generator.samples}, 0.0);
  probe.sample_rate = cfg.generator.sample_rate;
  return preprocess(probe, cfg.preprocess).length();
}

std::size_t preprocessed_channels(const ExperimentConfig& cfg) {
  return cfg.preprocess.channel_subset.empty() ? cfg.generator.channels : cfg.preprocess.channel_subset.size();
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double json_number(const json& v) {
  return v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN();
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.precision(std::numeric_limits<double>::max_digits10);
  return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

ExperimentConfig parse_experiment_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("malformed JSON: ") + e.what()});
  }
  ExperimentConfig cfg;
  std::vector<std::string> problems;
  {
    Section s(root, "", problems);
    if (s.has("output_dir")) {
      std::string dir;
      s.read("output_dir", dir);
      cfg.output_dir = dir;
    }
    if (s.has("seeds")) {
      try {
        cfg.seeds = root.at("seeds").get<std::vector<std::uint64_t>>();
      } catch (const json::exception&) {
        s.problem("seeds", "must be an array of non-negative integers");
      }
      if (cfg.seeds.empty()) s.problem("seeds", "must not be empty");
      if (std::set<std::uint64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size()) {
        s.problem("seeds", "must not contain duplicates");
      }
    }
    if (s.has("generator")) {
      Section g(root.at("generator"), "generator", problems);
      parse_generator(g, cfg.generator);
    }
    if (s.has("subjects")) {
      Section v(root.at("subjects"), "subjects", problems);
      v.read_optional_range("snr", cfg.subjects.snr);
      v.read_optional_range("duration_scale", cfg.subjects.duration_scale);
      v.read("shuffle_channels", cfg.subjects.shuffle_channels);
    }
    if (s.has("data")) {
      Section d(root.at("data"), "data", problems);
      d.read_count("n_train", cfg.data.n_train);
      d.read_count("n_test", cfg.data.n_test);
      d.read("fraction_class1", cfg.data.fraction_class1);
      for (auto [key, field] : {std::pair{"train_file", &cfg.data.train_file}, {"test_file", &cfg.data.test_file}}) {
        if (d.has(key)) {
          std::string p;
          d.read(key, p);
          *field = fs::path(p);
        }
      }
      d.read_positive("csv_sample_rate", cfg.data.csv_sample_rate);
      if (cfg.data.fraction_class1 < 0.0 || cfg.data.fraction_class1 > 1.0) {
        d.problem("fraction_class1", "must lie in [0, 1]");
      }
    }
    if (s.has("preprocess")) {
      Section p(root.at("preprocess"), "preprocess", problems);
      p.read_optional_range("band", cfg.preprocess.band);
      p.read("target_rate", cfg.preprocess.target_rate);
      p.read_optional_range("crop", cfg.preprocess.crop);
      p.read_indices("channels", cfg.preprocess.channel_subset);
      p.read("filter_order", cfg.preprocess.filter_order);
    }
    if (s.has("embedding")) {
      Section e(root.at("embedding"), "embedding", problems);
      parse_embedding(e, cfg.embedding);
    }
    if (s.has("agent")) {
      Section a(root.at("agent"), "agent", problems);
      parse_agent(a, cfg.train.agent);
    }
    if (s.has("train")) {
      Section t(root.at("train"), "train", problems);
      parse_train(t, cfg.train);
    }
    if (s.has("traces")) {
      Section t(root.at("traces"), "traces", problems);
      t.read_indices("channels", cfg.traces.channels);
      t.read_count("trials", cfg.traces.trials);
      t.read_count("window", cfg.traces.window);
      t.read_count("hop", cfg.traces.hop);
    }
  }
  if (!problems.empty()) throw ConfigError(problems);

  // Cross-field checks; everything is reported together.
  const bool synthetic = !cfg.data.train_file;
  if (cfg.data.test_file && !cfg.data.train_file) problems.emplace_back("data.test_file requires data.train_file");
  try_validate(problems, [&] { cfg.train.validate(); });
  if (synthetic) {
    try_validate(problems, [&] { cfg.generator.validate(); });
    if (cfg.subjects.snr && cfg.subjects.snr->lo < 0.0) problems.emplace_back("subjects.snr: must be non-negative");
    if (cfg.subjects.duration_scale && cfg.subjects.duration_scale->lo <= 0.0) {
      problems.emplace_back("subjects.duration_scale: must be positive");
    }
    for (std::size_t c : cfg.preprocess.channel_subset) {
      if (c >= cfg.generator.channels) {
        problems.push_back("preprocess.channels: index " + std::to_string(c) + " out of range for " +
                           std::to_string(cfg.generator.channels) + " channels");
      }
    }
    if (problems.empty()) {
      try_validate(problems, [&] {
        const std::size_t steps = cfg.embedding.output_length(preprocessed_length(cfg));
        if (steps < 2) throw std::invalid_argument("embedding yields fewer than two reduced timesteps");
      });
      for (std::size_t c : cfg.traces.channels) {
        if (c >= preprocessed_channels(cfg)) {
          problems.push_back("traces.channels: index " + std::to_string(c) + " out of range for " +
                             std::to_string(preprocessed_channels(cfg)) + " channels");
        }
      }
    }
  }
  if (cfg.traces.window < 2 || cfg.traces.hop == 0) problems.emplace_back("traces: window >= 2 and hop >= 1 required");
  if (!problems.empty()) throw ConfigError(problems);
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot read config file '" + path.string() + "'"});
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_experiment_config(buffer.str());
}

GeneratorConfig subject_generator(const ExperimentConfig& cfg, std::uint64_t seed) {
  GeneratorConfig g = cfg.generator;
  g.rng_seed = seed;
  std::seed_seq sequence{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5eedu};
  std::mt19937_64 rng(sequence);
  if (cfg.subjects.snr) g.snr = std::uniform_real_distribution<double>(cfg.subjects.snr->lo, cfg.subjects.snr->hi)(rng);
  if (cfg.subjects.duration_scale) {
    const double k =
        std::uniform_real_distribution<double>(cfg.subjects.duration_scale->lo, cfg.subjects.duration_scale->hi)(rng);
    g.burst_duration = {g.burst_duration.lo * k, g.burst_duration.hi * k};
  }
  if (cfg.subjects.shuffle_channels) {
    std::vector<std::size_t> all(g.channels);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    const std::size_t n0 = g.class_channel_map[0].size(), n1 = g.class_channel_map[1].size();
    g.class_channel_map[0].assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n0));
    g.class_channel_map[1].assign(all.begin() + static_cast<std::ptrdiff_t>(n0),
                                  all.begin() + static_cast<std::ptrdiff_t>(n0 + n1));
  }
  return g;
}

std::pair<std::vector<Trial>, std::vector<Trial>> raw_subject_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.data.train_file) {
    std::vector<Trial> train = load_trial_source(*cfg.data.train_file, cfg.data.csv_sample_rate);
    std::vector<Trial> test;
    if (cfg.data.test_file) test = load_trial_source(*cfg.data.test_file, cfg.data.csv_sample_rate);
    return {std::move(train), std::move(test)};
  }
  const GeneratorConfig g = subject_generator(cfg, seed);
  std::vector<Trial> all = generate_trials(g, cfg.data.n_train + cfg.data.n_test, cfg.data.fraction_class1);
  std::vector<Trial> test(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(cfg.data.n_train)),
                          std::make_move_iterator(all.end()));
  all.resize(cfg.data.n_train);
  return {std::move(all), std::move(test)};
}

SubjectData subject_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  auto [train, test] = raw_subject_data(cfg, seed);
  SubjectData out;
  for (const auto& t : train) out.train.push_back(preprocess(t, cfg.preprocess));
  for (const auto& t : test) out.test.push_back(preprocess(t, cfg.preprocess));
  return out;
}

fs::path subject_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.output_dir / ("subject-" + std::to_string(seed));
}

SubjectMetrics evaluate_subject(const ExperimentConfig& cfg, std::uint64_t seed, const Networks& nets,
                                const std::vector<Trial>& test) {
  const EvalResult ev = evaluate(test, nets, cfg.train.pipeline, cfg.train.agent);
  const fs::path dir = subject_dir(cfg, seed);
  fs::create_directories(dir);
  auto out = open_csv(dir / "predictions.csv");
  out << "trial,label,probability,prediction,loss,selected,steps,in_mask_rate,out_mask_rate,mask_coverage\n";
  double coverage = 0.0;
  std::size_t with_mask = 0;
  for (std::size_t i = 0; i < ev.trials.size(); ++i) {
    const auto& o = ev.trials[i];
    out << i << ',' << o.label << ',' << o.probability << ',' << o.prediction << ',' << o.loss << ','
        << o.selected.size() << ',' << o.steps << ',' << o.in_mask_rate << ',' << o.out_mask_rate << ','
        << o.mask_coverage << '\n';
    if (test[i].mask) {
      coverage += o.mask_coverage;
      ++with_mask;
    }
  }
  SubjectMetrics m;
  m.seed = seed;
  m.accuracy = 100.0 * ev.accuracy;
  m.selection_fraction = ev.selection_fraction;
  m.in_mask_rate = ev.in_mask_rate;
  m.out_mask_rate = ev.out_mask_rate;
  m.mask_coverage = with_mask ? coverage / static_cast<double>(with_mask) : std::numeric_limits<double>::quiet_NaN();
  return m;
}

void write_metrics(const ExperimentConfig& cfg, const std::vector<SubjectMetrics>& subjects) {
  if (subjects.empty()) throw std::invalid_argument("write_metrics: no subjects");
  fs::create_directories(cfg.output_dir);
  auto csv = open_csv(cfg.output_dir / "accuracies.csv");
  csv << "seed,accuracy,selection_fraction,in_mask_rate,out_mask_rate,mask_coverage\n";
  std::vector<double> acc;
  json per_subject = json::array();
  for (const auto& s : subjects) {
    csv << s.seed << ',' << s.accuracy << ',' << s.selection_fraction << ',' << s.in_mask_rate << ','
        << s.out_mask_rate << ',' << s.mask_coverage << '\n';
    acc.push_back(s.accuracy);
    per_subject.push_back({{"seed", s.seed},
                           {"accuracy", s.accuracy},
                           {"selection_fraction", s.selection_fraction},
                           {"in_mask_rate", nullable(s.in_mask_rate)},
                           {"out_mask_rate", nullable(s.out_mask_rate)},
                           {"mask_coverage", nullable(s.mask_coverage)}});
  }
  const Summary sum = summarize(acc);
  json j;
  j["pipeline"] = std::string(to_string(cfg.train.pipeline));
  j["subjects"] = subjects.size();
  j["accuracy"] = {{"mean", sum.mean}, {"sd", sum.sd}, {"median", sum.median}, {"max", sum.max}, {"min", sum.min}};
  j["per_subject"] = per_subject;
  write_json(cfg.output_dir / "metrics.json", j);
}

void cmd_generate(const ExperimentConfig& cfg, const fs::path& out) {
  if (cfg.data.train_file) throw ConfigError({"generate: data.train_file is set; nothing to generate"});
  for (std::uint64_t seed : cfg.seeds) {
    const fs::path dir = out / ("subject-" + std::to_string(seed));
    fs::create_directories(dir);
    auto [train, test] = raw_subject_data(cfg, seed);
    save_trials(dir / "train.sgtr", train);
    save_trials(dir / "test.sgtr", test);
  }
}

std::vector<SubjectMetrics> cmd_train(const ExperimentConfig& cfg) {
  std::vector<SubjectMetrics> metrics;
  for (std::uint64_t seed : cfg.seeds) {
    SubjectData data = subject_data(cfg, seed);
    const fs::path dir = subject_dir(cfg, seed);
    fs::create_directories(dir);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    Trainer trainer(tc, cfg.embedding, std::move(data.train));
    trainer.failure_checkpoint = dir / "failure.sgck";
    trainer.run();
    trainer.save_checkpoint(dir / "checkpoint.sgck");
    save_networks(dir / "model.sgmd", trainer.networks());
    write_train_log_csv(dir / "train_log.csv", trainer.log());
    if (!data.test.empty()) metrics.push_back(evaluate_subject(cfg, seed, trainer.networks(), data.test));
  }
  if (!metrics.empty()) write_metrics(cfg, metrics);
  return metrics;
}

std::vector<SubjectMetrics> cmd_eval(const ExperimentConfig& cfg) {
  std::vector<SubjectMetrics> metrics;
  for (std::uint64_t seed : cfg.seeds) {
    const Networks nets = load_networks(subject_dir(cfg, seed) / "model.sgmd");
    const SubjectData data = subject_data(cfg, seed);
    if (data.test.empty()) throw std::runtime_error("eval: subject " + std::to_string(seed) + " has no test trials");
    metrics.push_back(evaluate_subject(cfg, seed, nets, data.test));
  }
  write_metrics(cfg, metrics);
  return metrics;
}

void cmd_traces(const ExperimentConfig& cfg) {
  for (std::uint64_t seed : cfg.seeds) {
    const Networks nets = load_networks(subject_dir(cfg, seed) / "model.sgmd");
    const SubjectData data = subject_data(cfg, seed);
    const std::size_t n = std::min(cfg.traces.trials, data.test.size());
    const fs::path root = subject_dir(cfg, seed) / "traces";
    fs::create_directories(root);
    auto summary = open_csv(root / "summary.csv");
    summary << "trial,label,prediction,steps,selected,in_mask_selected,in_mask_steps,out_mask_selected,out_mask_steps\n";
    for (std::size_t i = 0; i < n; ++i) {
      const Trial& trial = data.test[i];
      for (std::size_t c : cfg.traces.channels) {
        if (c >= trial.channels()) {
          throw ConfigError({"traces.channels: index " + std::to_string(c) + " out of range for " +
                             std::to_string(trial.channels()) + " channels"});
        }
      }
      const fs::path dir = root / ("trial-" + std::to_string(i));
      fs::create_directories(dir);
      const EvalResult ev = evaluate({trial}, nets, cfg.train.pipeline, cfg.train.agent, true);
      const TrialOutcome& o = ev.trials.front();
      const FeatureSequence feats = embed(trial.signal, nets.embedding, nets.embedding_config);
      write_trace_csv(dir / "actions.csv", o.trace);

      std::vector<std::uint8_t> chosen(feats.length(), 0);
      for (std::size_t s : o.selected) chosen[s] = 1;
      std::vector<std::uint8_t> step_mask;
      if (trial.mask) step_mask = steps_in_mask(feats, *trial.mask);

      auto steps = open_csv(dir / "steps.csv");
      steps << "step,action,start,end,start_s,end_s,in_mask\n";
      for (std::size_t s = 0; s < feats.length(); ++s) {
        const auto [lo, hi] = map_agent_time_to_input(feats, s);
        steps << s << ',' << int(chosen[s]) << ',' << lo << ',' << hi << ',' << lo / trial.sample_rate << ','
              << hi / trial.sample_rate << ',' << (trial.mask ? std::to_string(step_mask[s]) : "") << '\n';
      }

      // Per input timepoint: how many selected steps cover it, and the ground-truth mask.
      std::vector<std::size_t> cover(trial.length(), 0);
      for (std::size_t s : o.selected) {
        const auto [lo, hi] = map_agent_time_to_input(feats, s);
        for (std::size_t k = lo; k < hi; ++k) ++cover[k];
      }
      auto overlay = open_csv(dir / "overlay.csv");
      overlay << "timepoint,time_s,selected,coverage,mask\n";
      for (std::size_t k = 0; k < trial.length(); ++k) {
        overlay << k << ',' << k / trial.sample_rate << ',' << (cover[k] > 0 ? 1 : 0) << ',' << cover[k] << ','
                << (trial.mask ? std::to_string((*trial.mask)[k]) : "") << '\n';
      }

      for (std::size_t c : cfg.traces.channels) {
        const auto row = trial.signal.data().subspan(c * trial.length(), trial.length());
        if (row.size() < cfg.traces.window) {
          throw ConfigError({"traces.window exceeds the trial length of " + std::to_string(row.size())});
        }
        const Tensor spec = stft_spectrogram(row, cfg.traces.window, cfg.traces.hop);
        auto out = open_csv(dir / ("spectrogram_ch" + std::to_string(c) + ".csv"));
        out << "freq_hz";
        for (std::size_t f = 0; f < spec.dim(1); ++f) {
          out << ",t" << (f * cfg.traces.hop + cfg.traces.window / 2) / trial.sample_rate;
        }
        out << '\n';
        for (std::size_t b = 0; b < spec.dim(0); ++b) {
          out << b * trial.sample_rate / static_cast<double>(cfg.traces.window);
          for (std::size_t f = 0; f < spec.dim(1); ++f) out << ',' << spec.at(b, f);
          out << '\n';
        }
      }

      std::size_t in_sel = 0, in_n = 0, out_sel = 0, out_n = 0;
      for (std::size_t s = 0; s < step_mask.size(); ++s) {
        (step_mask[s] ? in_n : out_n) += 1;
        (step_mask[s] ? in_sel : out_sel) += chosen[s];
      }
      summary << i << ',' << o.label << ',' << o.prediction << ',' << feats.length() << ',' << o.selected.size() << ','
              << in_sel << ',' << in_n << ',' << out_sel << ',' << out_n << '\n';
    }
  }
}

Comparison cmd_compare(const fs::path& metrics_a, const fs::path& metrics_b, const std::optional<fs::path>& out) {
  auto read = [](const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw ConfigError({"cannot read metrics file '" + p.string() + "'"});
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError({"malformed metrics file '" + p.string() + "': " + e.what()});
    }
  };
  const json a = read(metrics_a), b = read(metrics_b);
  std::map<std::uint64_t, double> by_seed;
  for (const auto& s : b.at("per_subject")) by_seed[s.at("seed").get<std::uint64_t>()] = json_number(s.at("accuracy"));
  Comparison cmp;
  for (const auto& s : a.at("per_subject")) {
    const auto seed = s.at("seed").get<std::uint64_t>();
    auto it = by_seed.find(seed);
    if (it == by_seed.end()) continue;
    const double va = json_number(s.at("accuracy")), vb = it->second;
    for (double v : {va, vb}) {
      if (!(v >= 0.0 && v <= 100.0)) throw std::runtime_error("compare: accuracy outside [0, 100]");
    }
    cmp.seeds.push_back(seed);
    cmp.a.push_back(va);
    cmp.b.push_back(vb);
  }
  if (cmp.seeds.empty()) throw std::runtime_error("compare: the metrics files share no subject seeds");
  cmp.test = wilcoxon_signed_rank(cmp.a, cmp.b);
  if (out) {
    json j;
    j["n_pairs"] = cmp.seeds.size();
    j["n_nonzero"] = cmp.test.n;
    j["w_plus"] = cmp.test.w_plus;
    j["w_minus"] = cmp.test.w_minus;
    j["statistic"] = cmp.test.statistic;
    j["p_value"] = cmp.test.p_value;
    j["method"] = cmp.test.exact ? "exact" : "normal-approximation";
    j["zero_differences"] = "dropped";
    j["mean_a"] = summarize(cmp.a).mean;
    j["mean_b"] = summarize(cmp.b).mean;
    json pairs = json::array();
    for (std::size_t i = 0; i < cmp.seeds.size(); ++i) pairs.push_back({{"seed", cmp.seeds[i]}, {"a", cmp.a[i]}, {"b", cmp.b[i]}});
    j["pairs"] = pairs;
    if (out->has_parent_path()) fs::create_directories(out->parent_path());
    write_json(*out, j);
  }
  return cmp;
}

}  // namespace segsel
