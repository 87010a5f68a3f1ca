#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "agent_oracle.hpp"
#include "segsel/classifier.hpp"
#include "segsel/trainer.hpp"
#include "segsel/trial_io.hpp"
#include "temp_dir.hpp"

using namespace segsel;
using namespace segsel::testing;

namespace {

std::vector<Trial> small_corpus(std::size_t count, double snr, std::uint64_t seed, double fraction = 0.5) {
  GeneratorConfig g = default_generator_config(4);
  g.samples = 200;
  g.sample_rate = 100.0;
  g.burst_band = {8.0, 13.0};
  g.burst_count = {1, 1};
  g.burst_duration = {0.4, 0.7};
  g.snr = snr;
  g.rng_seed = seed;
  return generate_trials(g, count, fraction);
}

EmbeddingConfig small_embedding() {
  EmbeddingConfig e;
  e.temporal_filters = 3;
  e.temporal_kernel = 9;
  e.spatial_filters = 4;
  e.activation = Activation::square;
  e.pool_window = 10;
  e.pool_stride = 5;  // T' = (192 - 10) / 5 + 1 = 37
  return e;
}

TrainConfig small_config(Pipeline pipeline = Pipeline::agent) {
  TrainConfig c;
  c.pipeline = pipeline;
  c.n_pre = 2;
  c.max_epochs = 2;
  c.patience = 0;
  c.l1 = 1e-4;
  c.validation_fraction = 0.2;
  c.seed = 5;
  return c;
}

bool same_networks(const Networks& a, const Networks& b) {
  return a.embedding.same_values(b.embedding) && a.classifier.same_values(b.classifier) &&
         a.agent.actor.same_values(b.agent.actor) && a.agent.critic.same_values(b.agent.critic);
}

void saturate_select(AgentNets& agent) {
  for (auto& e : agent.actor.entries()) e.value.fill(0.0);
  agent.actor.value("head_bias") = Tensor::vector({-100.0, 100.0});
}

}  // namespace

TEST(LearningRate, ScheduleExamples) {
  EXPECT_DOUBLE_EQ(lr_schedule(0.003, 0.001, 0), 0.003);
  EXPECT_DOUBLE_EQ(lr_schedule(0.003, 0.0, 57), 0.003);
  EXPECT_NEAR(lr_schedule(0.003, 0.001, 100), 0.003 * std::exp(-0.1), 1e-18);
}

TEST(TrainConfigTest, DefaultsAndValidation) {
  const TrainConfig d;
  EXPECT_EQ(d.n_pre, 10u);
  EXPECT_EQ(d.batch_size, 5u);
  EXPECT_EQ(d.learning_rate, 0.003);
  EXPECT_EQ(d.lr_decay, 0.001);
  EXPECT_EQ(d.agent.gamma, 0.95);
  EXPECT_EQ(d.l1, 0.01);
  EXPECT_EQ(d.l2, 0.001);
  EXPECT_NO_THROW(d.validate());
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), std::invalid_argument);
  };
  bad([](TrainConfig& c) { c.learning_rate = 0.0; });
  bad([](TrainConfig& c) { c.batch_size = 0; });
  bad([](TrainConfig& c) { c.agent.gamma = 1.1; });
  bad([](TrainConfig& c) { c.l1 = -1.0; });
  bad([](TrainConfig& c) { c.validation_fraction = 1.0; });
  bad([](TrainConfig& c) { c.rmsprop_decay = 1.0; });
  EXPECT_EQ(pipeline_from_string(to_string(Pipeline::gap)), Pipeline::gap);
  EXPECT_THROW(pipeline_from_string("both"), std::invalid_argument);
}

TEST(Pretrain, ZeroEpochsLeaveInitialParameters) {
  const auto trials = small_corpus(20, 1.0, 1);
  Networks nets = init_networks(small_embedding(), {}, 4, 3);
  const Networks before = nets;
  TrainConfig cfg = small_config();
  cfg.n_pre = 0;
  std::mt19937_64 rng(0);
  RmsPropState oe, oc;
  pretrain(nets, trials, cfg, rng, oe, oc);
  EXPECT_TRUE(same_networks(nets, before));
}

TEST(Pretrain, SingleClassDataIsAnError) {
  const auto ones = small_corpus(10, 1.0, 1, 1.0);
  Networks nets = init_networks(small_embedding(), {}, 4, 3);
  std::mt19937_64 rng(0);
  RmsPropState oe, oc;
  EXPECT_THROW(pretrain(nets, ones, small_config(), rng, oe, oc), std::invalid_argument);
  EXPECT_THROW(Trainer(small_config(), small_embedding(), ones), std::invalid_argument);
}

TEST(Pretrain, DeterministicForFixedSeed) {
  const auto trials = small_corpus(20, 1.0, 2);
  auto run = [&]() {
    Networks nets = init_networks(small_embedding(), {}, 4, 3);
    std::mt19937_64 rng(9);
    RmsPropState oe, oc;
    const double l = pretrain(nets, trials, small_config(), rng, oe, oc);
    return std::make_pair(nets, l);
  };
  const auto [a, la] = run();
  const auto [b, lb] = run();
  EXPECT_TRUE(same_networks(a, b));
  EXPECT_EQ(la, lb);
}

TEST(Pretrain, LossFallsOnSeparableData) {
  TrainConfig cfg = small_config(Pipeline::gap);
  cfg.n_pre = 10;
  cfg.max_epochs = 0;
  Trainer trainer(cfg, small_embedding(), small_corpus(60, 4.0, 3));
  trainer.run();
  const auto& log = trainer.log();
  ASSERT_EQ(log.size(), 10u);
  const double lead = (log[0].sup_loss + log[1].sup_loss + log[2].sup_loss) / 3.0;
  const double trail = (log[7].sup_loss + log[8].sup_loss + log[9].sup_loss) / 3.0;
  EXPECT_LT(trail, lead);
  for (const auto& row : log) EXPECT_TRUE(row.pretrain);
}

TEST(TrainerTest, SplitIsSeededAndComplete) {
  const auto trials = small_corpus(30, 1.0, 4);
  Trainer a(small_config(), small_embedding(), trials);
  EXPECT_EQ(a.training_trials().size(), 24u);
  EXPECT_EQ(a.validation_trials().size(), 6u);
  Trainer b(small_config(), small_embedding(), trials);
  EXPECT_EQ(a.validation_trials(), b.validation_trials());
}

TEST(TrainerTest, RejectsBadInputs) {
  auto trials = small_corpus(10, 1.0, 4);
  EXPECT_THROW(Trainer(small_config(), small_embedding(), {}), std::invalid_argument);
  EmbeddingConfig too_coarse = small_embedding();
  too_coarse.pool_window = 190;  // T' = 1
  EXPECT_THROW(Trainer(small_config(), too_coarse, trials), std::invalid_argument);
  trials[3].signal = Tensor({4, 100}, 0.0);
  trials[3].mask.reset();
  EXPECT_THROW(Trainer(small_config(), small_embedding(), trials), std::invalid_argument);
}

TEST(TrainerTest, RunIsDeterministic) {
  const auto trials = small_corpus(30, 1.0, 5);
  Trainer a(small_config(), small_embedding(), trials);
  Trainer b(small_config(), small_embedding(), trials);
  a.run();
  b.run();
  EXPECT_TRUE(same_networks(a.networks(), b.networks()));
  EXPECT_EQ(a.log(), b.log());
  EXPECT_EQ(a.log().size(), 4u);
}

TEST(TrainerTest, LogRowsDescribeEachEpoch) {
  Trainer t(small_config(), small_embedding(), small_corpus(30, 1.0, 6));
  t.run();
  const auto& log = t.log();
  ASSERT_EQ(log.size(), 4u);
  for (std::size_t i = 0; i < log.size(); ++i) {
    EXPECT_EQ(log[i].epoch, i);
    EXPECT_EQ(log[i].pretrain, i < 2);
    EXPECT_DOUBLE_EQ(log[i].lr, lr_schedule(0.003, 0.001, i));
    EXPECT_GE(log[i].sel_fraction, 0.0);
    EXPECT_LE(log[i].sel_fraction, 1.0);
    EXPECT_GE(log[i].val_acc, 0.0);
    EXPECT_LE(log[i].val_acc, 1.0);
  }
  EXPECT_EQ(log[0].sel_fraction, 1.0);
  EXPECT_NE(log[3].critic_loss_mean, 0.0);

  TempDir dir;
  write_train_log_csv(dir / "log.csv", log);
  std::ifstream in(dir / "log.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,lr,sup_loss,actor_loss_mean,critic_loss_mean,reward_mean,sel_fraction,train_acc,val_acc");
}

TEST(TrainerTest, AlwaysSelectAgentReproducesGapTrajectory) {
  const auto trials = small_corpus(30, 1.0, 7);
  TrainConfig agent_cfg = small_config(Pipeline::agent);
  agent_cfg.max_epochs = 3;
  TrainConfig gap_cfg = agent_cfg;
  gap_cfg.pipeline = Pipeline::gap;
  Trainer agent(agent_cfg, small_embedding(), trials);
  Trainer gap(gap_cfg, small_embedding(), trials);
  saturate_select(agent.networks().agent);
  agent.run();
  gap.run();
  EXPECT_TRUE(agent.networks().embedding.same_values(gap.networks().embedding));
  EXPECT_TRUE(agent.networks().classifier.same_values(gap.networks().classifier));
  ASSERT_EQ(agent.log().size(), gap.log().size());
  for (std::size_t i = 0; i < agent.log().size(); ++i) {
    EXPECT_EQ(agent.log()[i].sup_loss, gap.log()[i].sup_loss);
    EXPECT_EQ(agent.log()[i].val_loss, gap.log()[i].val_loss);
    EXPECT_EQ(agent.log()[i].sel_fraction, 1.0);
  }
}

TEST(TrainerTest, GapPipelineNeverTouchesTheAgent) {
  TrainConfig cfg = small_config(Pipeline::gap);
  Trainer t(cfg, small_embedding(), small_corpus(20, 1.0, 8));
  const AgentNets before = t.networks().agent;
  const Networks start = t.networks();
  t.run();
  EXPECT_TRUE(t.networks().agent.actor.same_values(before.actor));
  EXPECT_TRUE(t.networks().agent.critic.same_values(before.critic));
  EXPECT_FALSE(t.networks().embedding.same_values(start.embedding));
}

TEST(TrainerTest, EpisodesTouchOnlyActorAndCritic) {
  // Within a main epoch the episode phase reads embedding features and classifier by value;
  // with zero supervised learning rates nothing but the agent may move.
  Trainer t(small_config(), small_embedding(), small_corpus(20, 1.0, 9));
  t.run_epoch();
  t.run_epoch();  // pre-training done
  const Networks before = t.networks();
  std::mt19937_64 rng(1);
  RmsPropState ao, co;
  EpisodeOptions opt;
  opt.actor_optimizer = &ao;
  opt.critic_optimizer = &co;
  Networks& nets = t.networks();
  for (const auto& trial : t.training_trials()) {
    const FeatureSequence fs = embed(trial.signal, nets.embedding, nets.embedding_config);
    run_episode(fs.features, nets.agent, nets.classifier, trial.label, opt, rng);
  }
  EXPECT_TRUE(nets.embedding.same_values(before.embedding));
  EXPECT_TRUE(nets.classifier.same_values(before.classifier));
  EXPECT_FALSE(nets.agent.actor.same_values(before.agent.actor));
  EXPECT_FALSE(nets.agent.critic.same_values(before.agent.critic));
}

TEST(TrainerTest, FixedBaselineIsMeanGapLossAfterPretraining) {
  TrainConfig cfg = small_config();
  cfg.agent.baseline = BaselineMode::fixed;
  Trainer t(cfg, small_embedding(), small_corpus(20, 1.0, 10));
  t.run_epoch();
  t.run_epoch();
  EXPECT_FALSE(t.fixed_baseline().has_value());
  double sum = 0.0;
  for (const auto& trial : t.training_trials()) {
    const FeatureSequence fs = embed(trial.signal, t.networks().embedding, t.networks().embedding_config);
    sum += baseline_loss(fs.features, t.networks().classifier, trial.label);
  }
  t.run_epoch();
  ASSERT_TRUE(t.fixed_baseline().has_value());
  EXPECT_NEAR(*t.fixed_baseline(), sum / static_cast<double>(t.training_trials().size()), 1e-12);
}

TEST(TrainerTest, PatienceStopsEarly) {
  TrainConfig cfg = small_config();
  cfg.max_epochs = 50;
  cfg.patience = 1;
  cfg.learning_rate = 0.05;
  Trainer t(cfg, small_embedding(), small_corpus(20, 0.01, 11));
  t.run();
  EXPECT_TRUE(t.stopped_early());
  EXPECT_LT(t.epoch(), cfg.n_pre + cfg.max_epochs);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  for (Pipeline p : {Pipeline::agent, Pipeline::gap}) {
    TrainConfig cfg = small_config(p);
    cfg.max_epochs = 3;
    cfg.patience = 2;
    const auto trials = small_corpus(30, 1.0, 12);
    TempDir dir;
    Trainer full(cfg, small_embedding(), trials);
    full.run();

    Trainer first(cfg, small_embedding(), trials);
    for (int i = 0; i < 3; ++i) first.run_epoch();
    first.save_checkpoint(dir / "ck.sgck");

    Trainer resumed(cfg, small_embedding(), trials);
    resumed.load_checkpoint(dir / "ck.sgck");
    EXPECT_EQ(resumed.epoch(), 3u);
    resumed.run();
    EXPECT_TRUE(same_networks(resumed.networks(), full.networks()));
    EXPECT_EQ(resumed.log(), full.log());
  }
}

TEST(Checkpoint, ConfigurationMismatchIsRejected) {
  const auto trials = small_corpus(20, 1.0, 13);
  TempDir dir;
  Trainer a(small_config(), small_embedding(), trials);
  a.save_checkpoint(dir / "ck.sgck");
  TrainConfig other = small_config();
  other.learning_rate = 0.01;
  Trainer b(other, small_embedding(), trials);
  EXPECT_NE(a.config_hash(), b.config_hash());
  EXPECT_THROW(b.load_checkpoint(dir / "ck.sgck"), std::runtime_error);

  // Truncated files are format errors and leave the trainer untouched.
  std::ifstream in(dir / "ck.sgck", std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  std::ofstream(dir / "cut.sgck", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  Trainer c(small_config(), small_embedding(), trials);
  const Networks before = c.networks();
  EXPECT_THROW(c.load_checkpoint(dir / "cut.sgck"), FormatError);
  EXPECT_TRUE(same_networks(before, c.networks()));
}

TEST(Checkpoint, NonFiniteLossRollsBackAndWritesLastGoodState) {
  const auto trials = small_corpus(20, 1.0, 14);
  TempDir dir;
  Trainer t(small_config(), small_embedding(), trials);
  t.run_epoch();
  t.networks().embedding.value("temporal")[0] = 1e200;  // squares to infinity
  const Networks poisoned = t.networks();
  t.failure_checkpoint = dir / "failure.sgck";
  EXPECT_THROW(t.run_epoch(), NonFiniteError);
  EXPECT_EQ(t.epoch(), 1u);
  EXPECT_EQ(t.log().size(), 1u);
  EXPECT_TRUE(same_networks(t.networks(), poisoned));
  ASSERT_TRUE(std::filesystem::exists(dir / "failure.sgck"));
  Trainer reload(small_config(), small_embedding(), trials);
  reload.load_checkpoint(dir / "failure.sgck");
  EXPECT_EQ(reload.epoch(), 1u);
  EXPECT_TRUE(same_networks(reload.networks(), poisoned));
}

TEST(ModelFile, RoundTrip) {
  TempDir dir;
  Networks nets = init_networks(EmbeddingConfig::preset("deep"), {}, 3, 4);
  nets.agent.input_scale = 2.5;
  save_networks(dir / "m.sgmd", nets);
  const Networks back = load_networks(dir / "m.sgmd");
  EXPECT_TRUE(same_networks(nets, back));
  EXPECT_EQ(back.embedding_config, nets.embedding_config);
  EXPECT_EQ(back.channels, 3u);
  EXPECT_EQ(back.agent.config, nets.agent.config);
  EXPECT_EQ(back.agent.input_scale, 2.5);
  std::ofstream(dir / "junk.sgmd") << "SGTRxxxx";
  EXPECT_THROW(load_networks(dir / "junk.sgmd"), FormatError);
}

TEST(Evaluate, AccuracyMatchesHandCount) {
  const auto trials = small_corpus(10, 2.0, 15);
  Networks nets = init_networks(small_embedding(), {}, 4, 6);
  const EvalResult ev = evaluate(trials, nets, Pipeline::gap, {});
  int correct = 0;
  double loss = 0.0;
  for (const auto& trial : trials) {
    const FeatureSequence fs = embed(trial.signal, nets.embedding, nets.embedding_config);
    std::vector<std::size_t> all(fs.length());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto mean = naive_mean(fs.features, all);
    double z = nets.classifier.value("bias")[0];
    for (std::size_t i = 0; i < mean.size(); ++i) z += nets.classifier.value("weight")[i] * mean[i];
    const int predicted = z >= 0.0 ? 1 : 0;
    correct += predicted == trial.label;
    loss += naive_bce_of(nets.classifier, mean, trial.label);
  }
  EXPECT_DOUBLE_EQ(ev.accuracy, correct / 10.0);
  EXPECT_NEAR(ev.mean_loss, loss / 10.0, 1e-12);
  EXPECT_EQ(ev.selection_fraction, 1.0);
}

TEST(Evaluate, ChanceLevelOnUninformativeData) {
  const auto trials = small_corpus(400, 1e-6, 16);
  std::size_t ones = 0;
  for (const auto& t : trials) ones += t.label;
  ASSERT_EQ(ones, 200u);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Networks nets = init_networks(small_embedding(), {}, 4, seed);
    EXPECT_NEAR(evaluate(trials, nets, Pipeline::agent, {}).accuracy, 0.5, 0.05);
  }
}

TEST(Evaluate, RepeatableAndDoesNotMutateAgent) {
  const auto trials = small_corpus(20, 1.0, 17);
  const Networks nets = init_networks(small_embedding(), {}, 4, 7);
  const EvalResult a = evaluate(trials, nets, Pipeline::agent, {}, true);
  const EvalResult b = evaluate(trials, nets, Pipeline::agent, {}, true);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.mean_loss, b.mean_loss);
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    EXPECT_EQ(a.trials[i].selected, b.trials[i].selected);
    EXPECT_EQ(a.trials[i].trace.actions(), b.trials[i].trace.actions());
  }
}

TEST(Evaluate, MaskRatesAgreeWithSelectedSteps) {
  const auto trials = small_corpus(20, 1.0, 18);
  const Networks nets = init_networks(small_embedding(), {}, 4, 8);
  const EvalResult ev = evaluate(trials, nets, Pipeline::agent, {});
  double in_sum = 0.0;
  int in_n = 0;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const FeatureSequence fs = embed(trials[i].signal, nets.embedding, nets.embedding_config);
    const auto in_mask = steps_in_mask(fs, *trials[i].mask);
    std::size_t n_in = 0, hit = 0;
    for (std::size_t t = 0; t < fs.length(); ++t) {
      if (!in_mask[t]) continue;
      ++n_in;
      hit += std::count(ev.trials[i].selected.begin(), ev.trials[i].selected.end(), t);
    }
    if (n_in) {
      EXPECT_DOUBLE_EQ(ev.trials[i].in_mask_rate, double(hit) / double(n_in));
      in_sum += ev.trials[i].in_mask_rate;
      ++in_n;
    } else {
      EXPECT_TRUE(std::isnan(ev.trials[i].in_mask_rate));
    }
  }
  EXPECT_NEAR(ev.in_mask_rate, in_sum / in_n, 1e-12);
}

TEST(StepsInMask, StrictMajorityOfReceptiveField) {
  FeatureSequence fs;
  fs.features = Tensor({1, 3}, 0.0);
  fs.input_length = 8;
  fs.receptive_fields = {{0, 4}, {2, 6}, {4, 8}};
  const std::vector<std::uint8_t> mask{0, 0, 1, 1, 1, 0, 0, 0};
  // [0,4): 2/4 (tie, out); [2,6): 3/4 (in); [4,8): 1/4 (out)
  EXPECT_EQ(steps_in_mask(fs, mask), (std::vector<std::uint8_t>{0, 1, 0}));
  EXPECT_THROW(steps_in_mask(fs, std::vector<std::uint8_t>(7, 0)), std::invalid_argument);
}

TEST(TrainerTest, AgentInputScaleIsFeatureRmsAfterPretraining) {
  const auto trials = small_corpus(20, 1.0, 19);
  Trainer t(small_config(), small_embedding(), trials);
  t.run_epoch();
  t.run_epoch();
  EXPECT_EQ(t.networks().agent.input_scale, 1.0);
  double sum_sq = 0.0, count = 0.0;
  for (const auto& trial : t.training_trials()) {
    const FeatureSequence fs = embed(trial.signal, t.networks().embedding, t.networks().embedding_config);
    for (double v : fs.features.data()) {
      sum_sq += v * v;
      count += 1.0;
    }
  }
  t.run_epoch();
  EXPECT_NEAR(t.networks().agent.input_scale, std::sqrt(sum_sq / count), 1e-9 * std::sqrt(sum_sq / count));

  TrainConfig off = small_config();
  off.agent.normalize_input = false;
  Trainer u(off, small_embedding(), trials);
  u.run();
  EXPECT_EQ(u.networks().agent.input_scale, 1.0);
  EXPECT_NE(u.config_hash(), t.config_hash());
}

TEST(TrainerTest, SeparateAgentLearningRateLeavesSupervisedPathAlone) {
  // Saturated always-select actor: the supervised trajectory must not depend on the agent rate.
  const auto trials = small_corpus(20, 1.0, 20);
  TrainConfig a = small_config();
  TrainConfig b = a;
  b.agent.learning_rate = 1e-5;
  Trainer ta(a, small_embedding(), trials), tb(b, small_embedding(), trials);
  saturate_select(ta.networks().agent);
  saturate_select(tb.networks().agent);
  ta.run();
  tb.run();
  EXPECT_TRUE(ta.networks().embedding.same_values(tb.networks().embedding));
  EXPECT_FALSE(ta.networks().agent.critic.same_values(tb.networks().agent.critic));
  b.agent.learning_rate = -1.0;
  EXPECT_THROW(b.validate(), std::invalid_argument);
}

TEST(TrainerTest, FrozenSupervisedNetworksOnlyTrainTheAgent) {
  const auto trials = small_corpus(20, 1.0, 21);
  TrainConfig cfg = small_config();
  cfg.joint_updates = false;
  TrainConfig pre_only = cfg;
  pre_only.max_epochs = 0;
  Trainer frozen(cfg, small_embedding(), trials), reference(pre_only, small_embedding(), trials);
  frozen.run();
  reference.run();
  EXPECT_TRUE(frozen.networks().embedding.same_values(reference.networks().embedding));
  EXPECT_TRUE(frozen.networks().classifier.same_values(reference.networks().classifier));
  EXPECT_FALSE(frozen.networks().agent.actor.same_values(reference.networks().agent.actor));
  for (const auto& row : frozen.log()) {
    if (row.pretrain) continue;
    EXPECT_GT(row.sup_loss, 0.0);
    EXPECT_GE(row.train_acc, 0.0);
    EXPECT_LE(row.train_acc, 1.0);
  }
}
