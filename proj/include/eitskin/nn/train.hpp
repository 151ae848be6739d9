#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "eitskin/error.hpp"
#include "eitskin/nn/network.hpp"

namespace eitskin::nn {

struct LabeledImage {
  std::vector<double> raster;  ///< row-major, values in {0, 1} after preprocessing
  int label = 0;               ///< Modality as int
};

using Dataset = std::vector<LabeledImage>;

struct TrainConfig {
  int batch_size = 64;
  int epochs = 100;
  double learning_rate = 0.01;
  double momentum = 0.9;
  int lr_halving_epochs = 30;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct Split {
  std::vector<std::size_t> train, test;
};

/// Per-class shuffle, then the first round(fraction * n_class) of each class
/// go to the test set. Both index lists are returned in ascending order.
inline Split stratified_split(const Dataset& data, double test_fraction, std::uint64_t seed) {
  require(test_fraction >= 0.0 && test_fraction < 1.0, "test fraction must lie in [0, 1)");
  std::mt19937_64 rng(seed ^ 0x73706c6974ULL);
  Split split;
  for (int c = 0; c < kClasses; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data[i].label == c) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(idx.size())));
    split.test.insert(split.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.train.insert(split.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

/// Inference-mode predictions, processed in batches.
template <class S>
std::vector<int> predict(Network<S>& net, const Dataset& data, const std::vector<std::size_t>& indices,
                         int batch_size = 64) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t b = 0; b < indices.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(indices.size(), b + static_cast<std::size_t>(batch_size));
    std::vector<const std::vector<double>*> imgs;
    for (std::size_t i = b; i < e; ++i) imgs.push_back(&data[indices[i]].raster);
    const auto logits = net.forward(make_batch<S>(imgs, net.input_h(), net.input_w()), Context{false, nullptr});
    for (Eigen::Index j = 0; j < logits.x.cols(); ++j) {
      Eigen::Index k;
      logits.x.col(j).maxCoeff(&k);
      out.push_back(static_cast<int>(k));
    }
  }
  return out;
}

template <class S>
double accuracy(Network<S>& net, const Dataset& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) return 0.0;
  const auto pred = predict(net, data, indices);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) ok += pred[i] == data[indices[i]].label;
  return static_cast<double>(ok) / static_cast<double>(indices.size());
}

struct TrainResult {
  std::vector<EpochStats> history;
  Split split;
  double initial_test_acc = 0.0;
  double final_test_acc = 0.0;
};

/// Mini-batch SGD with momentum (v = mu*v + g; w -= lr*v), learning rate
/// halved every `lr_halving_epochs`. Shuffling and dropout draw from one
/// stream seeded by cfg.seed. Throws DivergenceError on a non-finite loss.
template <class S>
TrainResult train(Network<S>& net, const Dataset& data, const TrainConfig& cfg,
                  const std::function<void(const EpochStats&)>& on_epoch = {}) {
  require(!data.empty(), "training set is empty");
  require(cfg.batch_size >= 1 && cfg.epochs >= 0, "batch size must be >= 1 and epochs >= 0");
  for (const auto& s : data) require(s.label >= 0 && s.label < kClasses, "labels must lie in {0, 1, 2}");

  TrainResult res;
  res.split = stratified_split(data, cfg.test_fraction, cfg.seed);
  require(!res.split.train.empty(), "training split is empty");
  res.initial_test_acc = accuracy(net, data, res.split.test);
  res.final_test_acc = res.initial_test_acc;

  std::mt19937_64 rng(cfg.seed ^ 0x747261696eULL);
  auto params = net.params();
  for (auto* p : params) p->velocity.setZero();
  std::vector<std::size_t> order = res.split.train;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate * std::pow(0.5, (epoch - 1) / std::max(1, cfg.lr_halving_epochs));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const std::vector<double>*> imgs;
      std::vector<int> labels;
      for (std::size_t i = b; i < e; ++i) {
        imgs.push_back(&data[order[i]].raster);
        labels.push_back(data[order[i]].label);
      }
      net.zero_grad();
      const auto logits = net.forward(make_batch<S>(imgs, net.input_h(), net.input_w()), Context{true, &rng});
      Mat<S> g;
      const double loss = cross_entropy(logits.x, labels, &g);
      if (!std::isfinite(loss)) throw DivergenceError("training loss became non-finite", epoch);
      loss_sum += loss * static_cast<double>(labels.size());
      for (Eigen::Index j = 0; j < logits.x.cols(); ++j) {
        Eigen::Index k;
        logits.x.col(j).maxCoeff(&k);
        correct += static_cast<int>(k) == labels[static_cast<std::size_t>(j)];
      }
      net.backward(Activation<S>{g, static_cast<int>(labels.size()), 1, 1});
      for (auto* p : params) {
        p->velocity = static_cast<S>(cfg.momentum) * p->velocity + p->grad;
        p->value -= static_cast<S>(lr) * p->velocity;
      }
    }
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / static_cast<double>(order.size());
    st.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    st.test_acc = accuracy(net, data, res.split.test);
    if (!std::isfinite(st.train_loss)) throw DivergenceError("training loss became non-finite", epoch);
    res.history.push_back(st);
    res.final_test_acc = st.test_acc;
    if (on_epoch) on_epoch(st);
  }
  return res;
}

inline void write_history_csv(std::ostream& os, const std::vector<EpochStats>& history) {
  os << "epoch,train_loss,train_acc,test_acc\n";
  for (const auto& s : history) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.6f,%.6f\n", s.epoch, s.train_loss, s.train_acc, s.test_acc);
    os << buf;
  }
}

}  // namespace eitskin::nn
