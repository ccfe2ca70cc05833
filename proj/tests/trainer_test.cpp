#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mmaffect/dataio/synthetic.hpp"
#include "mmaffect/trainer/trainer.hpp"
#include "test_util.hpp"

using namespace mmaffect;
using testing_util::code_of;
using testing_util::TempDir;

namespace {

TrainConfig tiny_config(Task task) {
  TrainConfig c;
  c.task = task;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.head_hidden = 8;
  c.segment_length = 32;
  c.batch_size = 4;
  c.lr = 1e-3;
  c.epochs = 3;
  c.seed = 11;
  return c;
}

Dataset tiny_data(Task task, std::uint64_t seed = 5) {
  SyntheticSpec s;
  s.task = task;
  s.n_videos = 5;
  s.t_min = 40;
  s.t_max = 80;
  s.seed = seed;
  return generate_synthetic(s);
}

std::vector<std::vector<double>> snapshot(ModelParams& p) {
  std::vector<std::vector<double>> out;
  for (Tensor* t : p.tensors()) out.emplace_back(t->data().begin(), t->data().end());
  return out;
}

/// Ground truth of a video in the layout predict_video returns.
Tensor perfect_prediction(const Video& v) {
  const auto& l = v.labels;
  switch (l.task()) {
    case Task::VA: {
      Tensor t({v.frames(), kVaDims});
      for (std::size_t f = 0; f < v.frames(); ++f)
        for (std::size_t d = 0; d < kVaDims; ++d) t.at(f, d) = l.va().frames[f][d];
      return t;
    }
    case Task::Expr: {
      Tensor t({v.frames(), kExprClasses}, 0.0);
      for (std::size_t f = 0; f < v.frames(); ++f)
        if (l.expr().frames[f] >= 0) t.at(f, static_cast<std::size_t>(l.expr().frames[f])) = 1.0;
      return t;
    }
    case Task::AU: {
      Tensor t({v.frames(), kAuCount});
      for (std::size_t f = 0; f < v.frames(); ++f)
        for (std::size_t a = 0; a < kAuCount; ++a) t.at(f, a) = l.au().frames[f][a] == 1 ? 0.9 : 0.1;
      return t;
    }
    case Task::ERI:
      return Tensor({kEriDims}, std::vector<double>(l.eri().values.begin(), l.eri().values.end()));
  }
  return Tensor({1});
}

}  // namespace

// ---- Adam ----

TEST(Adam, FirstStepMovesByLearningRate) {
  const AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  std::vector<double> p{1.0, -2.0}, g{1.0, -3.0};
  AdamMoments m(2);
  adam_step(p, g, m, 1, cfg);
  EXPECT_NEAR(p[0], 1.0 - 0.01 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], -2.0 + 0.01 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_NEAR(m.m[0], 0.1, 1e-15);
  EXPECT_NEAR(m.v[1], 0.001 * 9.0, 1e-15);
}

TEST(Adam, ZeroGradientLeavesParamsAndDecaysMoments) {
  const AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  std::vector<double> p{0.5}, zero{0.0};
  AdamMoments m(1);
  m.m[0] = 0.2;
  m.v[0] = 0.0;
  adam_step(p, zero, m, 3, cfg);
  EXPECT_NEAR(m.m[0], 0.18, 1e-15);
  std::vector<double> q{0.5};
  AdamMoments fresh(1);
  adam_step(q, zero, fresh, 1, cfg);
  EXPECT_EQ(q[0], 0.5);
  EXPECT_EQ(fresh.m[0], 0.0);
  EXPECT_EQ(fresh.v[0], 0.0);
}

TEST(Adam, ConstantGradientStepTendsToLearningRate) {
  const AdamConfig cfg{0.001, 0.9, 0.999, 1e-8};
  std::vector<double> p{0.0}, g{0.37};
  AdamMoments m(1);
  double prev = 0.0;
  for (std::uint64_t s = 1; s <= 200; ++s) {
    adam_step(p, g, m, s, cfg);
    EXPECT_NEAR(prev - p[0], 0.001, 1e-9);
    prev = p[0];
  }
}

TEST(Adam, Errors) {
  std::vector<double> p{1.0, 2.0}, g{1.0};
  AdamMoments m(2);
  EXPECT_EQ(code_of([&] { adam_step(p, g, m, 1, {}); }), ErrorCode::ShapeMismatch);
  std::vector<double> g2{1.0, 1.0};
  EXPECT_EQ(code_of([&] { adam_step(p, g2, m, 0, {}); }), ErrorCode::InvalidArgument);
  AdamMoments small(1);
  EXPECT_EQ(code_of([&] { adam_step(p, g2, small, 1, {}); }), ErrorCode::ShapeMismatch);
}

TEST(Adam, TensorOverloadUsesAccumulatedGradient) {
  Tensor t = Tensor::vector({1.0, 1.0});
  t.set_requires_grad(true);
  t.mutable_grad()[0] = 2.0;
  AdamMoments m(2);
  adam_step(t, m, 1, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  EXPECT_NEAR(t[0], 0.9, 1e-9);
  EXPECT_EQ(t[1], 1.0);
}

// ---- Config ----

TEST(TrainConfig, DefaultsMatchReferenceSettings) {
  const TrainConfig c;
  EXPECT_EQ(c.d_model, 256u);
  EXPECT_EQ(c.n_layers, 4u);
  EXPECT_EQ(c.n_heads, 4u);
  EXPECT_EQ(c.segment_length, 256u);
  EXPECT_EQ(c.batch_size, 128u);
  EXPECT_EQ(c.lr, 1e-4);
  EXPECT_EQ(c.effective_dropout(), 0.1);
  TrainConfig t;
  t.encoder = EncoderVariant::TEMMA;
  EXPECT_EQ(t.effective_dropout(), 0.2);
}

TEST(TrainConfig, ParsesKeysAndComments) {
  const TrainConfig c = parse_train_config(
      "# tiny run\n"
      "task = expr\n"
      "encoder=temma   # inline comment\n"
      "\n"
      "d_model=32\nlr=0.002\ndropout=0.3\nfeatures=audio_a, visual_a\ntarget_score=0.5\n");
  EXPECT_EQ(c.task, Task::Expr);
  EXPECT_EQ(c.encoder, EncoderVariant::TEMMA);
  EXPECT_EQ(c.d_model, 32u);
  EXPECT_EQ(c.lr, 0.002);
  EXPECT_EQ(c.effective_dropout(), 0.3);
  EXPECT_EQ(c.features, (std::vector<std::string>{"audio_a", "visual_a"}));
  ASSERT_TRUE(c.target_score);
  EXPECT_EQ(*c.target_score, 0.5);
  EXPECT_EQ(c.n_layers, 4u);
}

TEST(TrainConfig, KeepsDefaultsForAbsentKeys) {
  TrainConfig d;
  d.task = Task::AU;
  d.seed = 99;
  const TrainConfig c = parse_train_config("epochs=2\n", d);
  EXPECT_EQ(c.task, Task::AU);
  EXPECT_EQ(c.seed, 99u);
  EXPECT_EQ(c.epochs, 2u);
}

TEST(TrainConfig, Rejections) {
  for (const char* bad : {"learning_rate=1\n", "lr=abc\n", "lr=0\n", "lr=-1\n", "beta1=1\n", "beta2=1.5\n",
                          "d_model=\n", "noequals\n", "dropout=1\n", "task=dance\n", "encoder=rnn\n", "eps=0\n",
                          "batch_size=0\n"}) {
    EXPECT_EQ(code_of([&] { parse_train_config(bad).validate(); }), ErrorCode::InvalidConfig) << bad;
  }
}

TEST(TrainConfig, ErrorNamesTheLine) {
  try {
    parse_train_config("d_model=8\n\nbogus=1\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(TrainConfig, TextRoundTrip) {
  TrainConfig c = tiny_config(Task::ERI);
  c.encoder = EncoderVariant::TEMMA;
  c.dropout = 0.25;
  c.lr = 0.1 + 0.2;
  c.features = {"a", "b"};
  c.target_score = 0.123456789012345;
  c.checkpoint_dir = "/tmp/x";
  const TrainConfig back = parse_train_config(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.lr, c.lr);
  EXPECT_EQ(back.hash(), c.hash());
  const TrainConfig plain = parse_train_config(TrainConfig{}.to_text());
  EXPECT_FALSE(plain.dropout);
  EXPECT_FALSE(plain.target_score);
  EXPECT_TRUE(plain.features.empty());
}

TEST(TrainConfig, HashCoversModelKeysOnly) {
  const TrainConfig base = tiny_config(Task::VA);
  TrainConfig longer = base;
  longer.epochs = 50;
  longer.checkpoint_dir = "elsewhere";
  longer.checkpoint_every = 0;
  longer.target_score = 0.9;
  EXPECT_EQ(longer.hash(), base.hash());
  TrainConfig wider = base;
  wider.d_model = 16;
  EXPECT_NE(wider.hash(), base.hash());
  TrainConfig reseeded = base;
  reseeded.seed = 12;
  EXPECT_NE(reseeded.hash(), base.hash());
}

// ---- Checkpoints ----

TEST(Checkpoint, EncodeDecodeRoundTrip) {
  Trainer t(tiny_config(Task::VA), tiny_data(Task::VA));
  t.train_epoch();
  const Checkpoint ck = t.checkpoint();
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
  EXPECT_EQ(back.config_text, ck.config_text);
  EXPECT_EQ(back.config_hash, ck.config_hash);
  EXPECT_EQ(back.epoch, 1u);
  EXPECT_EQ(back.step, t.step());
  ASSERT_EQ(back.tensors.size(), ck.tensors.size());
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    EXPECT_EQ(back.tensors[i].name, ck.tensors[i].name);
    EXPECT_EQ(back.tensors[i].value, ck.tensors[i].value);
    EXPECT_EQ(back.tensors[i].moments.m, ck.tensors[i].moments.m);
    EXPECT_EQ(back.tensors[i].moments.v, ck.tensors[i].moments.v);
  }
}

TEST(Checkpoint, CorruptionIsDetected) {
  Trainer t(tiny_config(Task::Expr), tiny_data(Task::Expr));
  const std::string bytes = encode_checkpoint(t.checkpoint());
  EXPECT_EQ(code_of([&] { decode_checkpoint(bytes.substr(0, bytes.size() / 2)); }), ErrorCode::CorruptCheckpoint);
  EXPECT_EQ(code_of([&] { decode_checkpoint(""); }), ErrorCode::CorruptCheckpoint);
  EXPECT_EQ(code_of([&] { decode_checkpoint(bytes + "x"); }), ErrorCode::CorruptCheckpoint);
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::string flipped = bytes;
    flipped[gen() % flipped.size()] ^= static_cast<char>(1u << (gen() % 8));
    EXPECT_EQ(code_of([&] { decode_checkpoint(flipped); }), ErrorCode::CorruptCheckpoint);
  }
  TempDir dir("ck");
  EXPECT_EQ(code_of([&] { load_checkpoint(dir / "missing.mmck"); }), ErrorCode::Io);
}

TEST(Checkpoint, ConfigHashMismatchOnResume) {
  const Dataset data = tiny_data(Task::VA);
  Trainer a(tiny_config(Task::VA), data);
  const Checkpoint ck = a.checkpoint();
  TrainConfig other = tiny_config(Task::VA);
  other.d_model = 16;
  Trainer b(other, data);
  EXPECT_EQ(code_of([&] { b.restore(ck); }), ErrorCode::ConfigHashMismatch);
  TrainConfig longer = tiny_config(Task::VA);
  longer.epochs = 9;
  Trainer c(longer, data);
  EXPECT_NO_THROW(c.restore(ck));
}

TEST(Checkpoint, ResumeContinuesTheExactTrajectory) {
  for (Task task : {Task::VA, Task::AU}) {
    const Dataset data = tiny_data(task);
    TrainConfig cfg = tiny_config(task);
    cfg.epochs = 5;
    TempDir dir("resume");
    Trainer straight(cfg, data);
    std::vector<double> losses;
    for (int e = 0; e < 5; ++e) {
      losses.push_back(straight.train_epoch());
      if (e == 2) straight.save_checkpoint(dir / "e3.mmck");
    }
    Trainer resumed(cfg, data);
    resumed.resume(dir / "e3.mmck");
    EXPECT_EQ(resumed.epoch(), 3u);
    EXPECT_EQ(resumed.train_epoch(), losses[3]);
    EXPECT_EQ(resumed.train_epoch(), losses[4]);
    EXPECT_EQ(snapshot(resumed.params()), snapshot(straight.params()));
  }
}

TEST(Checkpoint, TrainWritesLatestAndLoadModelReproducesEvaluation) {
  const Dataset data = tiny_data(Task::VA);
  TempDir dir("latest");
  TrainConfig cfg = tiny_config(Task::VA);
  cfg.checkpoint_dir = dir.path().string();
  Trainer t(cfg, data);
  const auto logs = t.train();
  ASSERT_EQ(logs.size(), 3u);
  ASSERT_TRUE(std::filesystem::exists(t.latest_checkpoint_path()));
  const Checkpoint ck = load_checkpoint(t.latest_checkpoint_path());
  EXPECT_EQ(ck.epoch, 3u);
  LoadedModel m = load_model(ck, data.registry);
  const EvalReport direct = t.evaluate(data.val);
  const EvalReport loaded = evaluate(m.params, m.config, data.val, m.train_config.segment_length);
  EXPECT_EQ(loaded.aggregate, direct.aggregate);
  EXPECT_EQ(loaded.to_text(), logs.back().val->to_text());
}

TEST(Checkpoint, TemmaRoundTrip) {
  TrainConfig cfg = tiny_config(Task::ERI);
  cfg.encoder = EncoderVariant::TEMMA;
  SyntheticSpec s;
  s.task = Task::ERI;
  s.n_videos = 5;
  s.t_min = 40;
  s.t_max = 60;
  const Dataset data = generate_synthetic(s);
  Trainer t(cfg, data);
  const double loss = t.train_epoch();
  EXPECT_TRUE(std::isfinite(loss));
  LoadedModel m = load_model(decode_checkpoint(encode_checkpoint(t.checkpoint())), data.registry);
  EXPECT_EQ(m.config.variant, EncoderVariant::TEMMA);
  EXPECT_EQ(snapshot(m.params), snapshot(t.params()));
}

// ---- Training ----

TEST(Trainer, SameSeedSameRun) {
  const Dataset data = tiny_data(Task::Expr);
  Trainer a(tiny_config(Task::Expr), data), b(tiny_config(Task::Expr), data);
  for (int e = 0; e < 2; ++e) EXPECT_EQ(a.train_epoch(), b.train_epoch());
  EXPECT_EQ(snapshot(a.params()), snapshot(b.params()));
  TrainConfig other = tiny_config(Task::Expr);
  other.seed = 12;
  Trainer c(other, data);
  EXPECT_NE(snapshot(c.params()), snapshot(a.params()));
}

TEST(Trainer, VanishingLearningRateLeavesParameters) {
  const Dataset data = tiny_data(Task::AU);
  TrainConfig cfg = tiny_config(Task::AU);
  cfg.lr = 1e-300;
  Trainer t(cfg, data);
  const auto before = snapshot(t.params());
  t.train_epoch();
  ASSERT_GT(t.step(), 0u);
  // An Adam step moves each entry by at most a few lr.
  const double bound = 10.0 * static_cast<double>(t.step()) * cfg.lr;
  const auto after = snapshot(t.params());
  for (std::size_t k = 0; k < before.size(); ++k)
    for (std::size_t i = 0; i < before[k].size(); ++i) ASSERT_NEAR(after[k][i], before[k][i], bound);
}

TEST(Trainer, LossIsFiniteAndDecreasesForEveryTask) {
  for (Task task : {Task::VA, Task::Expr, Task::AU, Task::ERI}) {
    TrainConfig cfg = tiny_config(task);
    cfg.lr = 3e-3;
    cfg.dropout = 0.0;
    Trainer t(cfg, tiny_data(task));
    const double first = t.train_epoch();
    double last = first;
    for (int e = 0; e < 15; ++e) {
      last = t.train_epoch();
      ASSERT_TRUE(std::isfinite(last)) << to_string(task);
    }
    EXPECT_LT(last, first) << to_string(task);
  }
}

TEST(Trainer, ExprReportsMacroF1) {
  Trainer t(tiny_config(Task::Expr), tiny_data(Task::Expr));
  const EpochLog log = t.run_epoch();
  ASSERT_TRUE(log.val);
  EXPECT_EQ(log.val->metric_name(), "macro_f1");
  EXPECT_EQ(log.epoch, 1u);
  const std::string line = format_epoch_log(log);
  EXPECT_EQ(line.rfind("epoch=1 train_loss=", 0), 0u) << line;
  EXPECT_NE(line.find(" val_macro_f1="), std::string::npos) << line;
}

TEST(Trainer, TargetScoreStopsEarly) {
  TrainConfig cfg = tiny_config(Task::VA);
  cfg.epochs = 10;
  cfg.target_score = -1.0;
  Trainer t(cfg, tiny_data(Task::VA));
  EXPECT_EQ(t.train().size(), 1u);
}

TEST(Trainer, GradientClippingBoundsTheUpdate) {
  // Adam normalizes scale, so clipping must leave a finite, deterministic run.
  TrainConfig cfg = tiny_config(Task::VA);
  cfg.grad_clip = 1e-3;
  const Dataset data = tiny_data(Task::VA);
  Trainer a(cfg, data), b(cfg, data);
  EXPECT_EQ(a.train_epoch(), b.train_epoch());
  cfg.grad_clip = -1.0;
  EXPECT_EQ(code_of([&] { Trainer bad(cfg, data); }), ErrorCode::InvalidConfig);
}

TEST(Trainer, Errors) {
  const Dataset va = tiny_data(Task::VA);
  EXPECT_EQ(code_of([&] { Trainer t(tiny_config(Task::Expr), va); }), ErrorCode::TaskMismatch);
  TrainConfig unknown = tiny_config(Task::VA);
  unknown.features = {"nope"};
  EXPECT_EQ(code_of([&] { Trainer t(unknown, va); }), ErrorCode::UnknownFeature);
  TrainConfig odd = tiny_config(Task::VA);
  odd.d_model = 7;
  odd.n_heads = 7;
  EXPECT_EQ(code_of([&] { Trainer t(odd, va); }), ErrorCode::OddModelDim);
}

TEST(Trainer, FeatureSubsetTrainsOnSelectedFeaturesOnly) {
  const Dataset data = tiny_data(Task::VA);
  TrainConfig cfg = tiny_config(Task::VA);
  cfg.features = {data.registry[1].name};
  Trainer t(cfg, data);
  EXPECT_EQ(t.model_config().features.size(), 1u);
  EXPECT_EQ(t.params().affine.size(), 1u);
  EXPECT_EQ(t.data().train.front().features.size(), 1u);
  EXPECT_EQ(t.data().train.front().features[0].values, data.train.front().features[1].values);
  EXPECT_TRUE(std::isfinite(t.train_epoch()));
}

// ---- Evaluation ----

TEST(Evaluate, PerfectPredictionsScoreOne) {
  for (Task task : {Task::VA, Task::Expr, Task::AU, Task::ERI}) {
    SyntheticSpec s;
    s.task = task;
    s.n_videos = task == Task::ERI ? 12 : 5;
    s.t_min = 60;
    s.t_max = 90;
    const Dataset data = generate_synthetic(s);
    const auto order = sorted_by_id(data.train);
    std::vector<Tensor> preds;
    for (const Video* v : order) preds.push_back(perfect_prediction(*v));
    const EvalReport r = score_predictions(task, order, preds);
    if (task == Task::Expr || task == Task::AU) {
      // A class or AU absent from the split scores 0 by convention; every present one is 1.
      for (const auto& [name, v] : r.scores) EXPECT_TRUE(v == 1.0 || v == 0.0) << name;
      EXPECT_GT(r.aggregate, 0.5) << to_string(task);
    } else {
      EXPECT_NEAR(r.aggregate, 1.0, 1e-12) << to_string(task);
    }
  }
}

TEST(Evaluate, ConstantValenceArousalScoresZero) {
  const Dataset data = tiny_data(Task::VA);
  const auto order = sorted_by_id(data.train);
  std::vector<Tensor> preds;
  for (const Video* v : order) preds.emplace_back(ad::Shape{v->frames(), kVaDims}, 0.3);
  const EvalReport r = score_predictions(Task::VA, order, preds);
  EXPECT_NEAR(r.aggregate, 0.0, 1e-15);
  EXPECT_EQ(r.scores.at(0).first, "ccc_valence");
}

TEST(Evaluate, SegmentPredictionsLandOnTheirFrames) {
  const Dataset data = tiny_data(Task::AU);
  ModelConfig cfg = make_model_config(tiny_config(Task::AU), data.registry);
  ModelParams p = init_model(cfg, 4);
  const Video& v = data.train.front();
  ASSERT_GT(v.frames(), 32u);
  const Tensor whole = predict_video(p, cfg, v, 32);
  ASSERT_EQ(whole.shape(), (ad::Shape{v.frames(), kAuCount}));
  for (const Segment& s : segment_video(v, 32)) {
    Graph g(false);
    const Tensor y = finalize_predictions(Task::AU, forward(g, p, cfg, s.features).value());
    for (std::size_t f = 0; f < s.length(); ++f)
      for (std::size_t a = 0; a < kAuCount; ++a) EXPECT_EQ(whole.at(s.start_frame + f, a), y.at(f, a));
  }
}

TEST(Evaluate, EriIsLengthWeightedMeanOfSegments) {
  SyntheticSpec s;
  s.task = Task::ERI;
  s.n_videos = 5;
  s.t_min = 70;
  s.t_max = 70;
  const Dataset data = generate_synthetic(s);
  ModelConfig cfg = make_model_config(tiny_config(Task::ERI), data.registry);
  ModelParams p = init_model(cfg, 4);
  const Video& v = data.train.front();
  const Tensor mean = predict_video(p, cfg, v, 32);
  std::vector<double> expect(kEriDims, 0.0);
  for (const Segment& seg : segment_video(v, 32)) {
    Graph g(false);
    const Tensor y = finalize_predictions(Task::ERI, forward(g, p, cfg, seg.features).value());
    for (std::size_t d = 0; d < kEriDims; ++d) expect[d] += y[d] * static_cast<double>(seg.length()) / 70.0;
  }
  for (std::size_t d = 0; d < kEriDims; ++d) {
    EXPECT_NEAR(mean[d], expect[d], 1e-15);
    EXPECT_GT(mean[d], 0.0);
    EXPECT_LT(mean[d], 1.0);
  }
}

TEST(Evaluate, IndependentOfInputOrder) {
  const Dataset data = tiny_data(Task::VA);
  ModelConfig cfg = make_model_config(tiny_config(Task::VA), data.registry);
  ModelParams p = init_model(cfg, 4);
  std::vector<Video> reversed(data.train.rbegin(), data.train.rend());
  EXPECT_EQ(evaluate(p, cfg, data.train, 32).to_text(), evaluate(p, cfg, reversed, 32).to_text());
}

TEST(Evaluate, TaskMismatch) {
  const Dataset va = tiny_data(Task::VA);
  const Dataset expr = tiny_data(Task::Expr);
  ModelConfig cfg = make_model_config(tiny_config(Task::VA), va.registry);
  ModelParams p = init_model(cfg, 4);
  EXPECT_EQ(code_of([&] { evaluate(p, cfg, expr.train, 32); }), ErrorCode::TaskMismatch);
}
