#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <thread>

#include "eitskin/bend.hpp"
#include "eitskin/report.hpp"
#include "eitskin/scenario.hpp"
#include "eitskin/world.hpp"

using namespace eitskin;

namespace {

const World& world() {
  static const World w = build_world();
  return w;
}

// Textbook form: SST = sum of squares about the grand mean,
// SSB = sum_g n_g * mean_g^2 - n * grand^2, SSW = SST - SSB.
double textbook_f(const Eigen::VectorXd& x, const std::vector<int>& g) {
  std::map<int, std::pair<double, int>> acc;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    acc[g[static_cast<std::size_t>(i)]].first += x[i];
    acc[g[static_cast<std::size_t>(i)]].second += 1;
  }
  const double n = static_cast<double>(x.size());
  const double grand = x.sum() / n;
  const double sst = (x.array() - grand).square().sum();
  double ssb = -n * grand * grand;
  for (const auto& [k, v] : acc) ssb += v.first * v.first / v.second;
  const double k = static_cast<double>(acc.size());
  return (ssb / (k - 1.0)) / ((sst - ssb) / (n - k));
}

struct Planted {
  Eigen::MatrixXd X;
  std::vector<int> groups;
  std::vector<int> channels;
};

Planted planted(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Planted p;
  p.channels = {3, 11, 19, 27, 38};
  const int per = 15;
  p.X.resize(6 * per, 40);
  for (int a = 0; a < 6; ++a)
    for (int r = 0; r < per; ++r) {
      const int row = a * per + r;
      p.groups.push_back(10 * a);
      for (int c = 0; c < 40; ++c) p.X(row, c) = n01(rng);
      for (int c : p.channels) p.X(row, c) = 10.0 * a + 0.1 * n01(rng);
    }
  return p;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = n01(rng);
  return m;
}

struct Calibrated {
  BendModel model;
  Eigen::VectorXd ref;
};

const Calibrated& calibrated() {
  static const Calibrated c = [] {
    const FrameLog log = run_scenario(scenarios::bend_calib_90(1), world());
    const Eigen::VectorXd ref = world().homogeneous_frame;
    const BendSamples s = bend_samples(log, ref);
    return Calibrated{fit_bend_model(s.dV, s.angles, kBendFeatures, 1), ref};
  }();
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// ANOVA scores

TEST(Anova, ConstantChannelScoresZero) {
  Eigen::MatrixXd X(4, 2);
  X << 5, 1, 5, 2, 5, 3, 5, 9;
  const auto s = anova_f_scores(X, std::vector<int>{0, 0, 1, 1});
  EXPECT_EQ(s[0], 0.0);
  EXPECT_GT(s[1], 0.0);
}

TEST(Anova, PerfectSeparationGetsSentinel) {
  Eigen::MatrixXd X(4, 1);
  X << 0, 0, 1, 1;
  const auto s = anova_f_scores(X, std::vector<int>{0, 0, 1, 1});
  EXPECT_EQ(s[0], std::numeric_limits<double>::max());
  EXPECT_TRUE(std::isfinite(s[0]));
}

TEST(Anova, HandExample) {
  // means 2 and 5, grand 3.5: SSB = 13.5 on 1 dof, SSW = 4 on 4 dof.
  Eigen::MatrixXd X(6, 1);
  X << 1, 2, 3, 4, 5, 6;
  const auto s = anova_f_scores(X, std::vector<int>{0, 0, 0, 1, 1, 1});
  EXPECT_NEAR(s[0], 13.5, 1e-12);
}

TEST(Anova, MatchesTextbookFormulaOnRandomData) {
  std::mt19937_64 rng(7);
  const Eigen::MatrixXd X = random_matrix(rng, 23, 12);
  std::vector<int> g;
  for (int i = 0; i < 23; ++i) g.push_back(i % 4);
  const auto s = anova_f_scores(X, g);
  for (int c = 0; c < 12; ++c) EXPECT_NEAR(s[c], textbook_f(X.col(c), g), 1e-9 * std::abs(s[c])) << c;
}

TEST(Anova, PlantedChannelsSelected) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Planted p = planted(seed);
    const auto s = anova_f_scores(p.X, p.groups);
    for (int c = 0; c < 40; ++c) EXPECT_NEAR(s[c], textbook_f(p.X.col(c), p.groups), 1e-9 * s[c]);
    auto sel = select_k_best(s, 5);
    std::sort(sel.begin(), sel.end());
    EXPECT_EQ(sel, p.channels) << "seed " << seed;
  }
}

TEST(Anova, AffineRescalingInvariant) {
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd X = random_matrix(rng, 30, 8);
  std::vector<int> g;
  for (int i = 0; i < 30; ++i) g.push_back(i % 5);
  Eigen::MatrixXd Y = X;
  for (int c = 0; c < 8; ++c) Y.col(c) = Y.col(c) * (c % 2 ? -1e-3 : 250.0 + c) + Eigen::VectorXd::Constant(30, 17.0 * c);
  const auto a = anova_f_scores(X, g);
  const auto b = anova_f_scores(Y, g);
  for (int c = 0; c < 8; ++c) EXPECT_NEAR(a[c], b[c], 1e-9 * a[c]);
}

TEST(Anova, DegenerateGroupingRejected) {
  const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(4, 2);
  try {
    anova_f_scores(X, std::vector<int>{1, 1, 1, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientGroups);
  }
  try {
    anova_f_scores(X, std::vector<int>{1, 1, 1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientGroups);
  }
  EXPECT_THROW(anova_f_scores(X, std::vector<int>{1, 2}), Error);
}

// ---------------------------------------------------------------------------
// select_k_best

TEST(SelectKBest, Examples) {
  EXPECT_EQ(select_k_best(Eigen::Vector3d(3, 1, 2), 2), (std::vector<int>{0, 2}));
  EXPECT_EQ(select_k_best(Eigen::VectorXd::Constant(8, 4.0), 5), (std::vector<int>{0, 1, 2, 3, 4}));
  EXPECT_EQ(select_k_best(Eigen::Vector3d(3, 1, 2), 3), (std::vector<int>{0, 2, 1}));
  EXPECT_TRUE(select_k_best(Eigen::Vector3d(3, 1, 2), 0).empty());
  EXPECT_THROW(select_k_best(Eigen::Vector3d(3, 1, 2), 4), Error);
}

TEST(SelectKBest, MonotoneTransformKeepsSelection) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.1, 50.0);
  Eigen::VectorXd s(40);
  for (auto& v : s) v = u(rng);
  s[7] = s[9];  // a tie
  const Eigen::VectorXd t = s.array().log().exp().pow(3.0) * 2.0 + 1.0;
  EXPECT_EQ(select_k_best(s, 5), select_k_best(t, 5));
  EXPECT_EQ(select_k_best(s, 40), select_k_best(t, 40));
}

// ---------------------------------------------------------------------------
// Least squares

TEST(FitLinear, NoiselessAffineRecovered) {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd X = random_matrix(rng, 20, 5);
  Eigen::VectorXd w(5);
  w << 1.5, -2.0, 0.25, 7.0, -0.5;
  const Eigen::VectorXd y = X * w + Eigen::VectorXd::Constant(20, 3.0);
  const auto fit = fit_linear(X, y);
  EXPECT_LT((fit.weights - w).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(fit.intercept, 3.0, 1e-8);
}

TEST(FitLinear, MatchesBruteForceNormalEquations) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::MatrixXd X = random_matrix(rng, 12, 5);
    const Eigen::VectorXd y = random_matrix(rng, 12, 1);
    Eigen::MatrixXd A(12, 6);
    A << X, Eigen::VectorXd::Ones(12);
    const Eigen::VectorXd beta = (A.transpose() * A).inverse() * (A.transpose() * y);
    const auto fit = fit_linear(X, y);
    Eigen::VectorXd got(6);
    got << fit.weights, fit.intercept;
    EXPECT_LT((got - beta).norm(), 1e-8 * beta.norm()) << trial;
    const Eigen::VectorXd resid = y - A * got;
    EXPECT_LT((A.transpose() * resid).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(FitLinear, DuplicatedSamplesGiveSameFit) {
  std::mt19937_64 rng(13);
  const Eigen::MatrixXd X = random_matrix(rng, 10, 5);
  const Eigen::VectorXd y = random_matrix(rng, 10, 1);
  Eigen::MatrixXd X2(20, 5);
  X2 << X, X;
  Eigen::VectorXd y2(20);
  y2 << y, y;
  const auto a = fit_linear(X, y);
  const auto b = fit_linear(X2, y2);
  EXPECT_LT((a.weights - b.weights).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(a.intercept, b.intercept, 1e-8);
}

TEST(FitLinear, MillivoltScaleFeatures) {
  std::mt19937_64 rng(17);
  const Eigen::MatrixXd X = random_matrix(rng, 30, 5) * 1e-3;
  Eigen::VectorXd w(5);
  w << 4000, -1000, 2500, 300, -7000;
  const Eigen::VectorXd y = X * w + Eigen::VectorXd::Constant(30, 12.0);
  const auto fit = fit_linear(X, y);
  EXPECT_LT(((fit.weights - w).array() / w.array()).abs().maxCoeff(), 1e-8);
}

TEST(FitLinear, RankDeficiencyReported) {
  std::mt19937_64 rng(19);
  Eigen::MatrixXd X = random_matrix(rng, 12, 5);
  X.col(3) = 2.0 * X.col(1) - X.col(0);
  const Eigen::VectorXd y = random_matrix(rng, 12, 1);
  EXPECT_THROW(fit_linear(X, y), Error);
  // A constant column duplicates the intercept.
  Eigen::MatrixXd Y = random_matrix(rng, 12, 5);
  Y.col(2).setConstant(0.3);
  EXPECT_THROW(fit_linear(Y, y), Error);
  EXPECT_THROW(fit_linear(random_matrix(rng, 5, 5), Eigen::VectorXd::Zero(5)), Error);
  EXPECT_THROW(fit_linear(random_matrix(rng, 8, 5), Eigen::VectorXd::Zero(7)), Error);
}

// ---------------------------------------------------------------------------
// Model, prediction, artifact

TEST(BendModel, PredictionIsAffineAndClamped) {
  BendModel m;
  m.M = 4;
  m.selection.selected = {2, 0};
  m.selection.scores = Eigen::Vector4d(5, 1, 9, 0);
  m.weights = Eigen::Vector2d(10.0, -1.0);
  m.intercept = 20.0;
  MeasurementFrame f;
  const Eigen::VectorXd ref = Eigen::Vector4d(1, 1, 1, 1);
  f.voltages = Eigen::Vector4d(1.0, 7.0, 2.0, -3.0);  // dV = (0, 6, 1, -4)
  EXPECT_DOUBLE_EQ(predict_angle(m, f, ref), 30.0);
  f.voltages = ref;
  EXPECT_DOUBLE_EQ(predict_angle(m, f, ref), 20.0);
  f.voltages = Eigen::Vector4d(1.0, 1.0, 10.0, 1.0);
  EXPECT_DOUBLE_EQ(predict_angle(m, f, ref), 60.0);
  f.voltages = Eigen::Vector4d(1.0, 1.0, -10.0, 1.0);
  EXPECT_DOUBLE_EQ(predict_angle(m, f, ref), 0.0);
  f.voltages = Eigen::Vector3d(1, 1, 1);
  EXPECT_THROW(predict_angle(m, f, ref), Error);
}

TEST(BendModel, ArtifactRoundTripsExactly) {
  const BendModel& m = calibrated().model;
  std::stringstream ss;
  write_bend_model(ss, m);
  const BendModel back = read_bend_model(ss);
  EXPECT_TRUE(back == m);
  std::stringstream again;
  write_bend_model(again, back);
  std::stringstream first;
  write_bend_model(first, m);
  EXPECT_EQ(again.str(), first.str());
}

TEST(BendModel, ArtifactRejectsGarbage) {
  std::stringstream bad("eitskin-bend 2\n");
  EXPECT_THROW(read_bend_model(bad), Error);
  std::stringstream ss;
  write_bend_model(ss, calibrated().model);
  const std::string text = ss.str();
  std::stringstream cut(text.substr(0, text.size() / 2));
  EXPECT_THROW(read_bend_model(cut), Error);
  std::string wrong = text;
  wrong.replace(wrong.find("selected 5 "), 11, "selected 5 99 ");
  std::stringstream oob(wrong);
  EXPECT_THROW(read_bend_model(oob), Error);
}

TEST(BendModel, MetadataRecorded) {
  const BendModel& m = calibrated().model;
  EXPECT_EQ(m.M, world().M());
  EXPECT_EQ(m.selection.selected.size(), 5u);
  EXPECT_EQ(m.angles, (std::vector<double>{0, 10, 20, 30, 40, 50}));
  EXPECT_EQ(m.samples_per_angle, (std::vector<int>(6, 15)));
  EXPECT_EQ(m.seed, 1u);
  for (int i : m.selection.selected) {
    EXPECT_GE(i, 0);
    EXPECT_LT(i, m.M);
  }
}

// ---------------------------------------------------------------------------
// Simulated calibration

TEST(BendCalibration, TrainingErrorBelowOneDegree) {
  EXPECT_LT(calibrated().model.training_mae, 1.0);
}

TEST(BendCalibration, UnbentFrameNearZero) {
  const auto& c = calibrated();
  MeasurementFrame f;
  f.voltages = c.ref;
  EXPECT_LT(predict_angle(c.model, f, c.ref), 1.0);
}

TEST(BendCalibration, HeldOutSweepWithinTwoDegrees) {
  const auto& c = calibrated();
  const FrameLog log = run_scenario(scenarios::bend_eval_20(2), world());
  double sum = 0.0;
  int n = 0;
  for (const auto& lf : log.frames) {
    const double truth = *truth_angle(lf.truth);
    sum += std::abs(predict_angle(c.model, lf.frame, c.ref) - truth);
    ++n;
  }
  EXPECT_EQ(n, 20);
  EXPECT_LE(sum / n, 2.0);
}

TEST(BendCalibration, PredictionDeterministicAcrossThreads) {
  const auto& c = calibrated();
  const FrameLog log = run_scenario(scenarios::bend_eval_20(4), world());
  std::vector<double> a(log.size()), b(log.size());
  std::thread t([&] {
    for (std::size_t i = 0; i < log.size(); ++i) a[i] = predict_angle(c.model, log.frames[i].frame, c.ref);
  });
  for (std::size_t i = 0; i < log.size(); ++i) b[i] = predict_angle(c.model, log.frames[i].frame, c.ref);
  t.join();
  EXPECT_EQ(a, b);
}

TEST(BendCalibration, SameSeedSameModel) {
  const FrameLog log = run_scenario(scenarios::bend_calib_90(1), world());
  const BendSamples s = bend_samples(log, world().homogeneous_frame);
  EXPECT_TRUE(fit_bend_model(s.dV, s.angles, kBendFeatures, 1) == calibrated().model);
}

TEST(BendCalibration, SingleAngleRejected) {
  const Eigen::MatrixXd dV = Eigen::MatrixXd::Random(10, 40);
  try {
    fit_bend_model(dV, std::vector<double>(10, 20.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientGroups);
  }
}
