#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "eitskin/classifier.hpp"

using namespace eitskin;
using namespace eitskin::nn;

namespace {

std::vector<double> random_binary(std::uint64_t seed, int size = kImageSize) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution on(0.15);
  std::vector<double> img(static_cast<std::size_t>(size * size));
  for (auto& v : img) v = on(rng) ? 1.0 : 0.0;
  return img;
}

template <class S>
std::vector<Mat<S>> weights_of(Network<S>& net) {
  std::vector<Mat<S>> out;
  for (auto& [name, m] : net.tensors()) out.push_back(*m);
  return out;
}

/// Three blocky, well separated patterns: empty-ish, a spot, a vertical bar.
Dataset toy_dataset(int size = kImageSize) {
  Dataset d(3);
  for (auto& s : d) s.raster.assign(static_cast<std::size_t>(size * size), 0.0);
  d[0].label = 0;
  d[0].raster[0] = 1.0;
  d[1].label = 1;
  for (int r = 10; r < 20; ++r)
    for (int c = 10; c < 20; ++c) d[1].raster[static_cast<std::size_t>(r * size + c)] = 1.0;
  d[2].label = 2;
  for (int r = 0; r < size; ++r)
    for (int c = size / 2 - 6; c < size / 2 + 6; ++c) d[2].raster[static_cast<std::size_t>(r * size + c)] = 1.0;
  return d;
}

const World& world() {
  static const World w = build_world();
  return w;
}

}  // namespace

TEST(Network, ParameterCountFromClosedForm) {
  // conv 1->16->32->64 (3x3, no bias) with BN scale+shift, transposed convs
  // 64->32->16 (+bias), 16->1 (+bias), dense 9216->256->128->16->3.
  const std::int64_t by_hand = (1 * 16 * 9 + 32) + (16 * 32 * 9 + 64) + (32 * 64 * 9 + 128) + (64 * 32 * 9 + 32) +
                               (32 * 16 * 9 + 16) + (16 * 9 + 1) + (9216 * 256 + 256) + (256 * 128 + 128) +
                               (128 * 16 + 16) + (16 * 3 + 3);
  EXPECT_EQ(by_hand, 2441204);
  auto net = make_classifier<float>();
  EXPECT_EQ(net.parameter_count(), by_hand);
  EXPECT_EQ(expected_parameter_count({}), by_hand);
}

TEST(Network, LayerOrderFollowsArchitecture) {
  auto net = make_classifier<float>();
  std::vector<std::string> kinds;
  for (const auto& l : net.layers()) kinds.push_back(l->kind());
  ASSERT_GE(kinds.size(), 4u);
  EXPECT_EQ(kinds.front(), "conv2d");
  EXPECT_EQ(kinds.back(), "dense");
  EXPECT_EQ(std::count(kinds.begin(), kinds.end(), "dropout"), 2);
  EXPECT_EQ(std::count(kinds.begin(), kinds.end(), "max_pool2"), 3);
  EXPECT_EQ(std::count(kinds.begin(), kinds.end(), "batch_norm"), 3);
}

TEST(Network, SameSeedSameWeights) {
  auto a = make_classifier<float>({}, 5);
  auto b = make_classifier<float>({}, 5);
  auto c = make_classifier<float>({}, 6);
  EXPECT_EQ(weights_of(a), weights_of(b));
  EXPECT_NE(weights_of(a), weights_of(c));
}

TEST(Network, SoftmaxIsASimplex) {
  auto net = make_classifier<float>({}, 1);
  std::vector<std::vector<double>> inputs{std::vector<double>(kImageSize * kImageSize, 0.0)};
  for (int i = 0; i < 4; ++i) inputs.push_back(random_binary(100 + i));
  for (const auto& img : inputs) {
    const auto p = forward_pass(net, img);
    double s = 0.0;
    for (double v : p) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Network, InferenceIsRepeatable) {
  auto net = make_classifier<float>({}, 2);
  const auto img = random_binary(3);
  EXPECT_EQ(forward_pass(net, img), forward_pass(net, img));
}

TEST(Network, DropoutOnlyInTraining) {
  auto net = make_dense_head<double>(32, {}, 4);
  std::vector<double> x(32);
  for (int i = 0; i < 32; ++i) x[i] = std::sin(i + 1.0);
  std::mt19937_64 r1(1), r2(2);
  const auto eval1 = forward_pass(net, x);
  const auto t1 = forward_pass(net, x, true, &r1);
  const auto t2 = forward_pass(net, x, true, &r2);
  EXPECT_NE(t1, t2);
  EXPECT_EQ(forward_pass(net, x), eval1);
}

TEST(Network, ClassPermutationPermutesOutput) {
  auto net = make_classifier<double>({}, 9);
  const auto img = random_binary(10);
  const auto p = forward_pass(net, img);
  auto tensors = net.tensors();
  Mat<double>& w = *tensors[tensors.size() - 2].second;
  Mat<double>& b = *tensors.back().second;
  ASSERT_EQ(w.rows(), 3);
  const int perm[3] = {2, 0, 1};  // new row k takes old row perm[k]
  const Mat<double> w0 = w, b0 = b;
  for (int k = 0; k < 3; ++k) {
    w.row(k) = w0.row(perm[k]);
    b.row(k) = b0.row(perm[k]);
  }
  const auto q = forward_pass(net, img);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(q[k], p[perm[k]], 1e-12);
}

TEST(GradientCheck, FullNetworkBelowTolerance) {
  auto net = make_classifier<double>({}, 11);
  const auto img = random_binary(12);
  const auto rep = gradient_check(net, img, 1, 1e-4, 200, 0);
  EXPECT_GE(rep.checked, 200);
  EXPECT_LT(rep.max_relative_error, 1e-4) << rep.worst;
  EXPECT_LT(rep.unresolved, rep.checked / 10);
  auto again = make_classifier<double>({}, 11);
  EXPECT_EQ(gradient_check(again, img, 1, 1e-4, 200, 0), rep);
}

TEST(GradientCheck, DenseHeadIsTight) {
  auto net = make_dense_head<double>(64, {}, 13);
  std::vector<double> x(64);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (auto& v : x) v = g(rng);
  const auto rep = gradient_check(net, x, 2, 1e-4, 200, 1);
  EXPECT_GE(rep.checked, 200);
  EXPECT_LT(rep.max_relative_error, 1e-6) << rep.worst;
}

TEST(Train, ToyDatasetLearnedWithin50Epochs) {
  const Dataset d = toy_dataset();
  auto net = make_classifier<float>({}, 3);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.test_fraction = 0.0;
  // One full batch of three images: at the default 0.01 the momentum steps
  // overshoot once the loss reaches ~0 and the run diverges.
  cfg.learning_rate = 0.001;
  const auto res = train(net, d, cfg);
  ASSERT_EQ(res.history.size(), 50u);
  std::vector<std::size_t> all{0, 1, 2};
  EXPECT_EQ(accuracy(net, d, all), 1.0);
  EXPECT_LT(res.history.back().train_loss, res.history.front().train_loss);
}

TEST(Train, ZeroLearningRateLeavesWeights) {
  const Dataset d = toy_dataset();
  auto net = make_classifier<float>({}, 3);
  std::vector<Mat<float>> params_before;
  for (auto* p : net.params()) params_before.push_back(p->value);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 0.0;
  cfg.test_fraction = 0.0;
  train(net, d, cfg);
  std::vector<Mat<float>> params_after;
  for (auto* p : net.params()) params_after.push_back(p->value);
  EXPECT_EQ(params_before, params_after);
}

TEST(Train, DeterministicGivenSeed) {
  NetworkSpec small;
  small.image = 16;
  small.encoder = {4, 4, 4};
  small.decoder = {4, 4};
  small.dense = {16, 8, 4};
  Dataset d;
  for (int i = 0; i < 30; ++i) d.push_back({random_binary(200 + i, 16), i % 3});
  auto run = [&] {
    auto net = make_classifier<float>(small, 21);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 4;
    const auto res = train(net, d, cfg);
    return std::make_pair(weights_of(net), res.history);
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Train, RejectsBadInput) {
  auto net = make_classifier<float>({}, 1);
  EXPECT_THROW(train(net, Dataset{}, TrainConfig{}), Error);
  Dataset d = toy_dataset();
  d[0].label = 3;
  EXPECT_THROW(train(net, d, TrainConfig{}), Error);
}

TEST(Train, DivergenceReportsEpoch) {
  NetworkSpec small;
  small.image = 16;
  small.encoder = {4, 4, 4};
  small.decoder = {4, 4};
  small.dense = {16, 8, 4};
  Dataset d;
  for (int i = 0; i < 12; ++i) d.push_back({random_binary(300 + i, 16), i % 3});
  auto net = make_classifier<float>(small, 2);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e9;
  cfg.test_fraction = 0.0;
  try {
    train(net, d, cfg);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Divergence);
    EXPECT_GE(e.epoch(), 1);
    EXPECT_LE(e.epoch(), 20);
  }
}

TEST(Split, StratifiedEightyTwenty) {
  Dataset d;
  for (int i = 0; i < 500; ++i) d.push_back({{}, 0});
  for (int i = 0; i < 315; ++i) d.push_back({{}, 1});
  for (int i = 0; i < 225; ++i) d.push_back({{}, 2});
  const Split s = stratified_split(d, 0.2, 0);
  int per[3] = {};
  for (auto i : s.test) ++per[d[i].label];
  EXPECT_EQ(per[0], 100);
  EXPECT_EQ(per[1], 63);
  EXPECT_EQ(per[2], 45);
  EXPECT_EQ(s.train.size() + s.test.size(), d.size());
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  for (auto i : s.test) EXPECT_FALSE(all.count(i));
  EXPECT_NE(stratified_split(d, 0.2, 1).test, s.test);
}

TEST(Weights, RoundTripIsBitExact) {
  auto net = make_classifier<float>({}, 17);
  std::stringstream ss;
  write_weights(ss, net);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 6), "EITNN1");
  auto back = read_weights<float>(ss);
  EXPECT_EQ(weights_of(back), weights_of(net));
  std::stringstream again;
  write_weights(again, back);
  EXPECT_EQ(again.str(), bytes);
  const auto img = random_binary(18);
  EXPECT_EQ(forward_pass(back, img), forward_pass(net, img));
}

TEST(Weights, RejectsGarbage) {
  std::stringstream bad("NOTNN1xxxxxxxx");
  EXPECT_THROW(read_weights<float>(bad), Error);
  auto net = make_classifier<float>({}, 1);
  std::stringstream ss;
  write_weights(ss, net);
  std::string bytes = ss.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_weights<float>(truncated), Error);
}

TEST(Preprocess, MatchesHandBinarization) {
  ReconstructionImage img;
  img.raster.at(3, 3) = 8.0;
  img.raster.at(3, 4) = 3.0;
  img.raster.at(3, 5) = 4.0;
  img.raster.at(50, 50) = -5.0;
  const Raster b = preprocess(img);
  EXPECT_EQ(b.at(3, 3), 1.0);
  EXPECT_EQ(b.at(3, 4), 0.0);
  EXPECT_EQ(b.at(3, 5), 1.0);
  EXPECT_EQ(std::accumulate(b.values.begin(), b.values.end(), 0.0), 2.0);
  ReconstructionImage again;
  again.raster = b;
  EXPECT_EQ(preprocess(again), b);
  EXPECT_EQ(preprocess(ReconstructionImage{}).max(), 0.0);
}

TEST(Baseline, HandBuiltRasters) {
  Raster empty;
  EXPECT_EQ(baseline_classify(empty), Modality::Idle);
  Raster spot;
  for (int r = 40; r < 44; ++r)
    for (int c = 20; c < 24; ++c) spot.at(r, c) = 1.0;
  EXPECT_EQ(baseline_classify(spot), Modality::Touch);
  Raster few;
  for (int c = 0; c < 9; ++c) few.at(0, c) = 1.0;
  EXPECT_EQ(baseline_classify(few), Modality::Idle);
  Raster band;  // columns of x in [60, 90] mm, full height
  for (int r = 0; r < 96; ++r)
    for (int c = 39; c < 57; ++c) band.at(r, c) = 1.0;
  EXPECT_EQ(baseline_classify(band), Modality::Bend);
  Raster outside = band;
  for (int r = 0; r < 96; ++r) outside.at(r, 5) = 1.0;  // separate small strip; largest stays the band
  EXPECT_EQ(baseline_classify(outside), Modality::Bend);
  Raster short_band;
  for (int r = 0; r < 60; ++r)
    for (int c = 39; c < 57; ++c) short_band.at(r, c) = 1.0;
  EXPECT_EQ(baseline_classify(short_band), Modality::Touch);
}

TEST(Baseline, SimulatedSweeps) {
  const World& w = world();
  int bend_ok = 0, bend_n = 0, touch_ok = 0, touch_n = 0;
  std::int64_t id = 0;
  for (double angle : {20.0, 30.0, 40.0, 50.0, 60.0}) {
    for (int rep = 0; rep < 8; ++rep) {
      auto rng = frame_rng(31, id++);
      const auto f = w.synthesize({BendPhantom{angle}}, NoiseModel{}, rng);
      bend_ok += baseline_classify(preprocess(reconstruct(*w.reconstructor, f, w.homogeneous_frame))) == Modality::Bend;
      ++bend_n;
    }
  }
  for (const Point p : scenarios::touch_grid_positions()) {
    for (int rep = 0; rep < 3; ++rep) {
      auto rng = frame_rng(32, id++);
      const auto f = w.synthesize({TouchPhantom{p}}, NoiseModel{}, rng);
      touch_ok +=
          baseline_classify(preprocess(reconstruct(*w.reconstructor, f, w.homogeneous_frame))) == Modality::Touch;
      ++touch_n;
    }
  }
  EXPECT_GE(bend_ok, 0.95 * bend_n);
  EXPECT_GE(touch_ok, 0.95 * touch_n);
}

TEST(Classifier, EmptyRasterIsIdleForBoth) {
  auto net = make_classifier<float>({}, 1);
  const auto nc = ModalityClassifier::network(net);
  const auto bc = ModalityClassifier::baseline();
  EXPECT_EQ(nc(Raster{}), Modality::Idle);
  EXPECT_EQ(bc(Raster{}), Modality::Idle);
  EXPECT_TRUE(nc.uses_network());
  EXPECT_EQ(bc.name(), "baseline");
}

TEST(Classifier, NetworkRejectsWrongRasterSize) {
  NetworkSpec small;
  small.image = 16;
  small.encoder = {4, 4, 4};
  small.decoder = {4, 4};
  small.dense = {16, 8, 4};
  const auto nc = ModalityClassifier::network(make_classifier<float>(small, 1));
  Raster r;
  r.at(0, 0) = 1.0;
  EXPECT_THROW(nc(r), Error);
}

TEST(Dataset, BuildSkipsCompositeFrames) {
  const FrameLog log = run_scenario(scenarios::bend_touch(20.0, 1), world());
  const auto ref = leading_idle_reference(log, world());
  const Dataset d = build_dataset(log, world(), ref);
  int composite = 0;
  for (const auto& lf : log.frames) composite += lf.label == Label::TouchBend;
  EXPECT_EQ(d.size(), log.size() - static_cast<std::size_t>(composite));
  for (const auto& s : d) {
    EXPECT_EQ(s.raster.size(), 9216u);
    for (double v : s.raster) EXPECT_TRUE(v == 0.0 || v == 1.0);
  }
  // The reference is the mean of the 10 leading idle frames.
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(world().M());
  for (int i = 0; i < 10; ++i) mean += log.frames[static_cast<std::size_t>(i)].frame.voltages;
  EXPECT_LT((ref - mean / 10).cwiseAbs().maxCoeff(), 1e-12);
}
