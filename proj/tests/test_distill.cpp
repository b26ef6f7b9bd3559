#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cvlm/distill/train.hpp"

using namespace cvlm;
using namespace cvlm::distill;
using num::Matrix;
using num::Var;

namespace {

// Two visual and two language layers, small enough for per-element finite
// differences over every trainable tensor.
PipelineConfig tiny() {
  PipelineConfig c;
  c.dense_tokens = 16;
  c.grid_h = 4;
  c.grid_w = 4;
  c.visual_dim = 8;
  c.visual_heads = 2;
  c.lm_dim = 8;
  c.lm_heads = 2;
  c.text_len = 4;
  c.text_prefix = 1;
  c.vocab = 11;
  c.compact_tokens = 8;
  c.kv_anchors = 4;
  c.tau = 0.5;
  c.validate();
  return c;
}

double param_distance(const CivicParams<Matrix>& a, const CivicParams<Matrix>& b) {
  double worst = 0;
  zip_params(kCivicPrefix, [&](const std::string&, const Matrix& x, const Matrix& y) {
    worst = std::max(worst, num::max_abs_diff(x, y));
  }, a, b);
  return worst;
}

double frob(const Matrix& m) {
  double s = 0;
  for (double v : m.values()) s += v * v;
  return std::sqrt(s);
}

double mean_loss(const std::vector<DistillSample>& data, const std::vector<Matrix>& teacher,
                 const ModelWeights<Matrix>& theta, const CivicParams<Matrix>& phi, const PipelineConfig& c) {
  return evaluate(data, teacher, theta, phi, c);
}

}  // namespace

TEST(Alignment, IdentityWhenSpansMatch) {
  auto m = build_alignment(5, 2, 4, 4);
  ASSERT_EQ(m.size(), 5u);
  EXPECT_EQ(m.teacher, m.student);
}

TEST(Alignment, ShiftsRowsAfterTheSpan) {
  // prefix 2, dense span 4, compact span 2: dense row 7 sits at compact row 5
  auto m = build_alignment(4, 2, 4, 2);
  EXPECT_EQ(m.teacher, (std::vector<std::size_t>{0, 1, 6, 7}));
  EXPECT_EQ(m.student, (std::vector<std::size_t>{0, 1, 4, 5}));
}

TEST(Alignment, CoversEveryTextPositionOnce) {
  auto c = PipelineConfig{};
  for (std::size_t pre : {0u, 1u, 3u, 8u}) {
    auto m = build_alignment(8, pre, c.prefill_visual_tokens(), c.compact_prefill_tokens());
    EXPECT_EQ(m.size(), 8u);
    EXPECT_TRUE(std::is_sorted(m.teacher.begin(), m.teacher.end()));
    for (std::size_t i = 0; i < m.size(); ++i) {
      const bool visual = m.teacher[i] >= pre && m.teacher[i] < pre + c.prefill_visual_tokens();
      EXPECT_FALSE(visual) << m.teacher[i];
    }
  }
}

TEST(Alignment, RejectsLongerCompactSpan) { EXPECT_THROW(build_alignment(4, 1, 2, 3), ConfigError); }

TEST(KlLoss, ZeroForIdenticalDistributions) {
  Matrix t{{0.3, -1, 2}, {1, 1, 1}};
  auto m = build_alignment(2, 0, 0, 0);
  EXPECT_NEAR(kl_loss(t, t, m, 1.0, 1.0)(0, 0), 0.0, 1e-15);
  Matrix shifted = num::add(t, Matrix(2, 3, 5.0));
  EXPECT_NEAR(kl_loss(t, shifted, m, 1.0, 1.0)(0, 0), 0.0, 1e-14);
}

TEST(KlLoss, TwoClassClosedForm) {
  // p = (3/4, 1/4) against the uniform student
  Matrix t{{std::log(3.0), 0.0}};
  Matrix s{{0.0, 0.0}};
  auto m = build_alignment(1, 0, 0, 0);
  const double expected = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  EXPECT_NEAR(kl_loss(t, s, m, 1.0, 1.0)(0, 0), expected, 1e-15);
  EXPECT_NEAR(kl_loss(t, s, m, 1.0, 0.5)(0, 0), 0.5 * expected, 1e-15);
}

TEST(KlLoss, AveragesOverAlignedRows) {
  Matrix t{{std::log(3.0), 0.0}, {0.0, 0.0}};
  Matrix s{{0.0, 0.0}, {0.0, 0.0}};
  const double one = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  EXPECT_NEAR(kl_loss(t, s, build_alignment(2, 0, 0, 0), 1.0, 1.0)(0, 0), one / 2, 1e-15);
}

TEST(KlLoss, TemperatureSquaredScaling) {
  num::Rng rng(3);
  Matrix t = rng.gaussian(3, 7, 1.0), s = rng.gaussian(3, 7, 1.0);
  auto m = build_alignment(3, 0, 0, 0);
  const double base = kl_loss(t, s, m, 1.0, 1.0)(0, 0);
  const double doubled = kl_loss(num::scale(t, 2.0), num::scale(s, 2.0), m, 2.0, 1.0)(0, 0);
  EXPECT_NEAR(doubled, 4 * base, 1e-13);
}

TEST(KlLoss, NonNegative) {
  num::Rng rng(17);
  for (int k = 0; k < 50; ++k) {
    Matrix t = rng.gaussian(4, 9, 3.0), s = rng.gaussian(4, 9, 3.0);
    EXPECT_GE(kl_loss(t, s, build_alignment(4, 0, 0, 0), rng.uniform(0.5, 4.0), 1.0)(0, 0), 0.0);
  }
}

TEST(KlLoss, VocabMismatchThrows) {
  EXPECT_THROW(kl_loss(Matrix(2, 3), Matrix(2, 4), build_alignment(2, 0, 0, 0), 1.0, 1.0), num::DimensionError);
}

TEST(KlLoss, TapedMatchesPlain) {
  num::Rng rng(5);
  Matrix t = rng.gaussian(6, 5, 1.0), s = rng.gaussian(5, 5, 1.0);
  auto m = build_alignment(3, 1, 3, 2);
  num::Tape tape;
  Var sv = tape.leaf(s);
  EXPECT_NEAR(kl_loss(t, sv, m, 1.5, 0.7).value()(0, 0), kl_loss(t, s, m, 1.5, 0.7)(0, 0), 1e-15);
}

TEST(Synthetic, DeterministicAndBounded) {
  auto c = PipelineConfig{};
  auto a = gen_synthetic(9, 4, c), b = gen_synthetic(9, 4, c);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(num::max_abs_diff(a[i].input.patches, b[i].input.patches), 0.0);
    EXPECT_EQ(a[i].prompt, b[i].prompt);
    for (double v : a[i].input.patches.values()) EXPECT_LE(std::abs(v), kPatchClamp);
    for (auto t : a[i].prompt) EXPECT_LT(t, c.vocab);
    EXPECT_NO_THROW(a[i].input.validate(c));
  }
  auto other = gen_synthetic(10, 1, c);
  EXPECT_GT(num::max_abs_diff(a[0].input.patches, other[0].input.patches), 0.0);
}

TEST(Synthetic, PrefixOfLargerSetIsStable) {
  auto c = PipelineConfig{};
  auto small = gen_synthetic(4, 2, c), large = gen_synthetic(4, 5, c);
  for (std::size_t i = 0; i < small.size(); ++i) {
    EXPECT_EQ(small[i].seed, large[i].seed);
    EXPECT_EQ(num::max_abs_diff(small[i].input.patches, large[i].input.patches), 0.0);
  }
}

TEST(Synthetic, EmptySetRejected) { EXPECT_THROW(gen_synthetic(1, 0, PipelineConfig{}), std::invalid_argument); }

// Central differences in double precision against the taped gradient, over
// every element of the anchors, each KV-assignment matrix and the compact
// projector. Entries below 1e-7 in both are compared against that floor.
class DistillGradient : public ::testing::TestWithParam<double> {};

TEST_P(DistillGradient, MatchesFiniteDifferences) {
  auto c = tiny();
  c.tau = GetParam();
  const auto theta = init_model_weights(c);
  const auto phi0 = init_civic_params(c, theta);
  const auto data = gen_synthetic(21, 2, c);
  const auto teacher = teacher_logits(data, theta, c);
  const auto lg = loss_and_grad(data, teacher, theta, phi0, c);
  EXPECT_NEAR(lg.loss, mean_loss(data, teacher, theta, phi0, c), 1e-14);

  const double h = 1e-5;
  std::size_t checked = 0;
  auto phi = phi0;
  zip_params(kCivicPrefix, [&](const std::string& name, Matrix& p, const Matrix& g) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double x0 = p.values()[i];
      p.values()[i] = x0 + h;
      const double fp = mean_loss(data, teacher, theta, phi, c);
      p.values()[i] = x0 - h;
      const double fm = mean_loss(data, teacher, theta, phi, c);
      p.values()[i] = x0;
      const double fd = (fp - fm) / (2 * h);
      const double an = g.values()[i];
      const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-7});
      EXPECT_LE(err, 1e-4) << name << "[" << i << "] fd=" << fd << " analytic=" << an;
      ++checked;
    }
  }, phi, lg.grad);
  EXPECT_GT(checked, 0u);
  EXPECT_GT(frob(lg.grad.anchors), 0.0);
  for (const auto& b : lg.grad.kv_assign) EXPECT_GT(frob(b), 0.0);
  EXPECT_GT(frob(lg.grad.projector.w1), 0.0);
}

INSTANTIATE_TEST_SUITE_P(Temperatures, DistillGradient, ::testing::Values(0.5, 0.07));

TEST(DistillBatch, InvariantToSampleOrder) {
  const auto c = tiny();
  const auto theta = init_model_weights(c);
  const auto phi = init_civic_params(c, theta);
  auto data = gen_synthetic(3, 4, c);
  auto teacher = teacher_logits(data, theta, c);
  const auto a = loss_and_grad(data, teacher, theta, phi, c);
  std::reverse(data.begin(), data.end());
  std::reverse(teacher.begin(), teacher.end());
  const auto b = loss_and_grad(data, teacher, theta, phi, c);
  EXPECT_NEAR(a.loss, b.loss, 1e-15);
  EXPECT_LE(param_distance(a.grad, b.grad), 1e-14);
}

TEST(DistillTrain, ZeroLearningRateLeavesPhiUnchanged) {
  const auto c = tiny();
  const auto theta = init_model_weights(c);
  const auto phi = init_civic_params(c, theta);
  TrainOptions o;
  o.steps = 3;
  o.train_samples = 2;
  o.heldout_samples = 2;
  o.adam.lr = 0;
  auto st = train(theta, phi, c, o);
  EXPECT_EQ(param_distance(st.phi, phi), 0.0);
  ASSERT_EQ(st.history.size(), 4u);
  for (const auto& r : st.history) EXPECT_EQ(r.train_loss, st.history[0].train_loss);
}

TEST(DistillTrain, TeacherIsFrozen) {
  const auto c = tiny();
  const auto theta = init_model_weights(c);
  const auto before = checksum(theta);
  TrainOptions o;
  o.steps = 5;
  o.train_samples = 3;
  o.heldout_samples = 2;
  o.adam.lr = 1e-2;
  auto st = train(theta, init_civic_params(c, theta), c, o);
  EXPECT_EQ(checksum(theta), before);
  EXPECT_EQ(checksum(theta), checksum(init_model_weights(c)));
  EXPECT_NE(checksum(st.phi), checksum(init_civic_params(c, theta)));
}

TEST(DistillTrain, OneStepMovesAnchorsAndAssignments) {
  const auto c = tiny();
  const auto theta = init_model_weights(c);
  const auto phi = init_civic_params(c, theta);
  TrainOptions o;
  o.steps = 1;
  o.train_samples = 2;
  o.heldout_samples = 1;
  auto st = train(theta, phi, c, o);
  EXPECT_GT(frob(num::sub(st.phi.anchors, phi.anchors)), 0.0);
  for (std::size_t l = 0; l < phi.kv_assign.size(); ++l)
    EXPECT_GT(frob(num::sub(st.phi.kv_assign[l], phi.kv_assign[l])), 0.0) << "layer " << l;
}

TEST(DistillTrain, DeterministicHistory) {
  const auto c = tiny();
  const auto theta = init_model_weights(c);
  TrainOptions o;
  o.steps = 4;
  o.train_samples = 3;
  o.heldout_samples = 2;
  auto a = train(theta, init_civic_params(c, theta), c, o);
  auto b = train(theta, init_civic_params(c, theta), c, o);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].heldout_loss, b.history[i].heldout_loss);
  }
  EXPECT_LT(a.history.back().train_loss, a.history.front().train_loss);
}

TEST(DistillTrain, NonFiniteLossAbortsWithNorms) {
  const auto c = tiny();
  const auto theta = init_model_weights(c);
  auto phi = init_civic_params(c, theta);
  phi.projector.b2(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainOptions o;
  o.steps = 2;
  o.train_samples = 1;
  o.heldout_samples = 1;
  try {
    train(theta, phi, c, o);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("civic.anchors="), std::string::npos) << msg;
  }
}

TEST(DistillTrain, MetricsCsvLayout) {
  std::ostringstream os;
  write_metrics_csv(os, {{0, 0.5, 0.25}, {1, 0.125, 0.0625}});
  EXPECT_EQ(os.str(), "step,train_loss,heldout_loss\n0,0.5,0.25\n1,0.125,0.0625\n");
}
