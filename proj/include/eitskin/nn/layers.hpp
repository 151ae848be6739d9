#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eitskin/error.hpp"

namespace eitskin::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// A batch of feature maps stored as a C x (N*H*W) column-major matrix: each
/// column is one pixel of one sample, samples are contiguous blocks of H*W
/// columns in row-major pixel order. Dense activations use H = W = 1.
template <class S>
struct Activation {
  Mat<S> x;
  int n = 0, h = 1, w = 1;

  int channels() const { return static_cast<int>(x.rows()); }
  int pixels() const { return h * w; }
};

template <class S>
struct Param {
  std::string name;
  Mat<S> value, grad, velocity;

  void init(std::string n, Eigen::Index rows, Eigen::Index cols) {
    name = std::move(n);
    value = Mat<S>::Zero(rows, cols);
    grad = Mat<S>::Zero(rows, cols);
    velocity = Mat<S>::Zero(rows, cols);
  }
};

/// Non-trainable state that is still part of the model (running statistics).
template <class S>
struct Buffer {
  std::string name;
  Mat<S> value;
};

struct Context {
  bool training = false;
  std::mt19937_64* rng = nullptr;  ///< dropout masks; required when training
};

template <class S>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  /// Results live in layer-owned buffers and stay valid until the next call.
  virtual const Activation<S>& forward(const Activation<S>& in, const Context& ctx) = 0;
  virtual const Activation<S>& backward(const Activation<S>& grad_out) = 0;
  virtual std::vector<Param<S>*> params() { return {}; }
  virtual std::vector<Buffer<S>*> buffers() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
  /// Fan-in-scaled uniform initialization.
  virtual void initialize(std::mt19937_64&) {}
  /// Hash of the piecewise-linear branch decisions taken by the last forward
  /// pass (ReLU masks, pooling winners); 0 for smooth layers.
  virtual std::uint64_t switch_hash() const { return 0; }
};

namespace detail {

inline std::uint64_t hash_mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

template <class S>
void he_uniform(Mat<S>& m, double fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<S>(u(rng));
}

/// 3x3 patch geometry between a "big" grid and a "small" grid: small pixel
/// (i, j) with tap (ky, kx) touches big pixel (i*stride - pad + ky, j*stride - pad + kx).
struct Geometry {
  int big_h, big_w, small_h, small_w, stride, pad;
};

inline constexpr int kTaps = 9;

template <class S>
void resize(Mat<S>& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() != rows || m.cols() != cols) m.resize(rows, cols);
}

/// Gather: cols[(tap*C + c), q_small] = big[c, q_big] (zero outside).
/// Out-of-range taps keep the zeros written when `cols` was last reshaped.
template <class S>
void im2col(const Mat<S>& big, int n, const Geometry& g, Mat<S>& cols) {
  const Eigen::Index C = big.rows();
  const Eigen::Index rows = C * kTaps, q_all = static_cast<Eigen::Index>(n) * g.small_h * g.small_w;
  if (cols.rows() != rows || cols.cols() != q_all) cols.setZero(rows, q_all);
  const S* src = big.data();
  S* dst = cols.data();
  for (int s = 0; s < n; ++s) {
    const Eigen::Index big0 = static_cast<Eigen::Index>(s) * g.big_h * g.big_w;
    const Eigen::Index small0 = static_cast<Eigen::Index>(s) * g.small_h * g.small_w;
    for (int i = 0; i < g.small_h; ++i)
      for (int j = 0; j < g.small_w; ++j) {
        S* col = dst + (small0 + i * g.small_w + j) * rows;
        for (int ky = 0; ky < 3; ++ky) {
          const int by = i * g.stride - g.pad + ky;
          if (by < 0 || by >= g.big_h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int bx = j * g.stride - g.pad + kx;
            if (bx < 0 || bx >= g.big_w) continue;
            std::copy_n(src + (big0 + by * g.big_w + bx) * C, C, col + (ky * 3 + kx) * C);
          }
        }
      }
  }
}

/// Scatter-add, the adjoint of im2col. `big` is overwritten.
template <class S>
void col2im(const Mat<S>& cols, int n, const Geometry& g, Eigen::Index C, Mat<S>& big) {
  resize(big, C, static_cast<Eigen::Index>(n) * g.big_h * g.big_w);
  big.setZero();
  const Eigen::Index rows = C * kTaps;
  const S* src = cols.data();
  S* dst = big.data();
  for (int s = 0; s < n; ++s) {
    const Eigen::Index big0 = static_cast<Eigen::Index>(s) * g.big_h * g.big_w;
    const Eigen::Index small0 = static_cast<Eigen::Index>(s) * g.small_h * g.small_w;
    for (int i = 0; i < g.small_h; ++i)
      for (int j = 0; j < g.small_w; ++j) {
        const S* col = src + (small0 + i * g.small_w + j) * rows;
        for (int ky = 0; ky < 3; ++ky) {
          const int by = i * g.stride - g.pad + ky;
          if (by < 0 || by >= g.big_h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int bx = j * g.stride - g.pad + kx;
            if (bx < 0 || bx >= g.big_w) continue;
            S* out = dst + (big0 + by * g.big_w + bx) * C;
            const S* in = col + (ky * 3 + kx) * C;
            for (Eigen::Index c = 0; c < C; ++c) out[c] += in[c];
          }
        }
      }
  }
}

}  // namespace detail

/// 3x3 convolution, stride 1, zero padding 1, no bias.
/// Weight layout: [out, tap*in + c].
template <class S>
class Conv2d : public Layer<S> {
 public:
  Conv2d(int in, int out) : in_(in), out_(out) { w_.init("weight", out, in * detail::kTaps); }

  std::string kind() const override { return "conv2d"; }

  const Activation<S>& forward(const Activation<S>& in, const Context&) override {
    require(in.channels() == in_, "conv2d input channel mismatch", ErrorKind::DimensionMismatch);
    geo_ = {in.h, in.w, in.h, in.w, 1, 1};
    detail::im2col(in.x, in.n, geo_, cols_);
    y_.n = in.n;
    y_.h = in.h;
    y_.w = in.w;
    detail::resize(y_.x, out_, cols_.cols());
    y_.x.noalias() = w_.value * cols_;
    return y_;
  }

  const Activation<S>& backward(const Activation<S>& g) override {
    w_.grad.noalias() += g.x * cols_.transpose();
    detail::resize(dcols_, w_.value.cols(), g.x.cols());
    dcols_.noalias() = w_.value.transpose() * g.x;
    dx_.n = g.n;
    dx_.h = geo_.big_h;
    dx_.w = geo_.big_w;
    detail::col2im(dcols_, g.n, geo_, in_, dx_.x);
    return dx_;
  }

  std::vector<Param<S>*> params() override { return {&w_}; }
  std::unique_ptr<Layer<S>> clone() const override { return std::make_unique<Conv2d>(*this); }
  void initialize(std::mt19937_64& rng) override { detail::he_uniform(w_.value, in_ * detail::kTaps, rng); }

 private:
  int in_, out_;
  Param<S> w_;
  detail::Geometry geo_{};
  Mat<S> cols_, dcols_;
  Activation<S> y_, dx_;
};

/// 3x3 transposed convolution with bias. Output size
/// (H-1)*stride - 2*pad + 3 + output_pad. Weight layout: [in, tap*out + c].
template <class S>
class ConvTranspose2d : public Layer<S> {
 public:
  ConvTranspose2d(int in, int out, int stride = 1, int pad = 1, int output_pad = 0)
      : in_(in), out_(out), stride_(stride), pad_(pad), output_pad_(output_pad) {
    w_.init("weight", in, out * detail::kTaps);
    b_.init("bias", out, 1);
  }

  std::string kind() const override { return "conv_transpose2d"; }

  const Activation<S>& forward(const Activation<S>& in, const Context&) override {
    require(in.channels() == in_, "transposed conv input channel mismatch", ErrorKind::DimensionMismatch);
    const int oh = (in.h - 1) * stride_ - 2 * pad_ + 3 + output_pad_;
    const int ow = (in.w - 1) * stride_ - 2 * pad_ + 3 + output_pad_;
    geo_ = {oh, ow, in.h, in.w, stride_, pad_};
    input_ = &in.x;
    detail::resize(cols_, w_.value.cols(), in.x.cols());
    cols_.noalias() = w_.value.transpose() * in.x;
    y_.n = in.n;
    y_.h = oh;
    y_.w = ow;
    detail::col2im(cols_, in.n, geo_, out_, y_.x);
    y_.x.colwise() += b_.value.col(0);
    return y_;
  }

  const Activation<S>& backward(const Activation<S>& g) override {
    b_.grad.col(0) += g.x.rowwise().sum();
    detail::im2col(g.x, g.n, geo_, dcols_);
    w_.grad.noalias() += *input_ * dcols_.transpose();
    dx_.n = g.n;
    dx_.h = geo_.small_h;
    dx_.w = geo_.small_w;
    detail::resize(dx_.x, in_, dcols_.cols());
    dx_.x.noalias() = w_.value * dcols_;
    return dx_;
  }

  std::vector<Param<S>*> params() override { return {&w_, &b_}; }
  std::unique_ptr<Layer<S>> clone() const override { return std::make_unique<ConvTranspose2d>(*this); }
  void initialize(std::mt19937_64& rng) override {
    detail::he_uniform(w_.value, static_cast<double>(in_ * detail::kTaps) / (stride_ * stride_), rng);
    b_.value.setZero();
  }

 private:
  int in_, out_, stride_, pad_, output_pad_;
  Param<S> w_, b_;
  detail::Geometry geo_{};
  const Mat<S>* input_ = nullptr;
  Mat<S> cols_, dcols_;  ///< dcols_ relies on im2col's persistent zero padding
  Activation<S> y_, dx_;
};

/// Per-channel batch normalization. Training uses batch statistics and
/// updates running = momentum*running + (1-momentum)*batch (unbiased var).
template <class S>
class BatchNorm : public Layer<S> {
 public:
  explicit BatchNorm(int channels, double eps = 1e-5, double momentum = 0.9)
      : c_(channels), eps_(eps), momentum_(momentum) {
    gamma_.init("gamma", channels, 1);
    beta_.init("beta", channels, 1);
    gamma_.value.setOnes();
    mean_ = {"running_mean", Mat<S>::Zero(channels, 1)};
    var_ = {"running_var", Mat<S>::Ones(channels, 1)};
  }

  std::string kind() const override { return "batch_norm"; }

  const Activation<S>& forward(const Activation<S>& in, const Context& ctx) override {
    require(in.channels() == c_, "batch norm channel mismatch", ErrorKind::DimensionMismatch);
    training_ = ctx.training;
    const Eigen::Index q = in.x.cols();
    Eigen::VectorXd mean(c_), var(c_);
    if (training_) {
      require(q > 1, "batch norm needs more than one value per channel in training");
      // double accumulation in float-sized chunks
      mean.setZero();
      for (Eigen::Index j0 = 0; j0 < q; j0 += kChunk)
        mean += in.x.middleCols(j0, std::min(kChunk, q - j0)).rowwise().sum().template cast<double>();
      mean /= static_cast<double>(q);
      const Vec<S> mf = mean.template cast<S>();
      var.setZero();
      for (Eigen::Index j0 = 0; j0 < q; j0 += kChunk)
        var += (in.x.middleCols(j0, std::min(kChunk, q - j0)).colwise() - mf)
                   .cwiseAbs2()
                   .rowwise()
                   .sum()
                   .template cast<double>();
      var /= static_cast<double>(q);
      const double unbias = static_cast<double>(q) / static_cast<double>(q - 1);
      for (int c = 0; c < c_; ++c) {
        mean_.value(c, 0) = static_cast<S>(momentum_ * mean_.value(c, 0) + (1.0 - momentum_) * mean[c]);
        var_.value(c, 0) = static_cast<S>(momentum_ * var_.value(c, 0) + (1.0 - momentum_) * var[c] * unbias);
      }
    } else {
      mean = mean_.value.col(0).template cast<double>();
      var = var_.value.col(0).template cast<double>();
    }
    inv_std_ = (var.array() + eps_).rsqrt().matrix().template cast<S>();
    const Vec<S> m = mean.template cast<S>();
    detail::resize(xhat_, c_, q);
    xhat_ = (in.x.colwise() - m).array().colwise() * inv_std_.array();
    y_.n = in.n;
    y_.h = in.h;
    y_.w = in.w;
    detail::resize(y_.x, c_, q);
    y_.x = (xhat_.array().colwise() * gamma_.value.col(0).array()).colwise() + beta_.value.col(0).array();
    return y_;
  }

  const Activation<S>& backward(const Activation<S>& g) override {
    const Vec<S> dbeta = g.x.rowwise().sum();
    const Vec<S> dgamma = g.x.cwiseProduct(xhat_).rowwise().sum();
    gamma_.grad.col(0) += dgamma;
    beta_.grad.col(0) += dbeta;
    dx_.n = g.n;
    dx_.h = g.h;
    dx_.w = g.w;
    detail::resize(dx_.x, g.x.rows(), g.x.cols());
    const Vec<S> scale = gamma_.value.col(0).cwiseProduct(inv_std_);
    if (!training_) {
      dx_.x = g.x.array().colwise() * scale.array();
      return dx_;
    }
    const S q = static_cast<S>(g.x.cols());
    // dx = scale/q * (q*g - sum(g) - xhat*sum(g*xhat))
    const Vec<S> a = scale / q;
    const Vec<S> b = a.cwiseProduct(dbeta);
    const Vec<S> c = a.cwiseProduct(dgamma);
    dx_.x = ((g.x.array().colwise() * (scale.array())).colwise() - b.array()) - xhat_.array().colwise() * c.array();
    return dx_;
  }

  std::vector<Param<S>*> params() override { return {&gamma_, &beta_}; }
  std::vector<Buffer<S>*> buffers() override { return {&mean_, &var_}; }
  std::unique_ptr<Layer<S>> clone() const override { return std::make_unique<BatchNorm>(*this); }

 private:
  static constexpr Eigen::Index kChunk = 256;
  int c_;
  double eps_, momentum_;
  Param<S> gamma_, beta_;
  Buffer<S> mean_, var_;
  bool training_ = false;
  Vec<S> inv_std_;
  Mat<S> xhat_;
  Activation<S> y_, dx_;
};

template <class S>
class ReLU : public Layer<S> {
 public:
  std::string kind() const override { return "relu"; }

  const Activation<S>& forward(const Activation<S>& in, const Context&) override {
    y_.n = in.n;
    y_.h = in.h;
    y_.w = in.w;
    detail::resize(y_.x, in.x.rows(), in.x.cols());
    y_.x = in.x.cwiseMax(S(0));
    return y_;
  }

  const Activation<S>& backward(const Activation<S>& g) override {
    dx_.n = g.n;
    dx_.h = g.h;
    dx_.w = g.w;
    detail::resize(dx_.x, g.x.rows(), g.x.cols());
    dx_.x = (y_.x.array() > S(0)).select(g.x, S(0));
    return dx_;
  }

  std::unique_ptr<Layer<S>> clone() const override { return std::make_unique<ReLU>(*this); }
  std::uint64_t switch_hash() const override {
    std::uint64_t h = 1;
    for (Eigen::Index i = 0; i < y_.x.size(); ++i)
      if (y_.x.data()[i] > S(0)) h = detail::hash_mix(h, static_cast<std::uint64_t>(i));
    return h;
  }

 private:
  Activation<S> y_, dx_;
};

/// 2x2 max pooling with stride 2; ties resolve to the first pixel in scan order.
template <class S>
class MaxPool2 : public Layer<S> {
 public:
  std::string kind() const override { return "max_pool2"; }

  const Activation<S>& forward(const Activation<S>& in, const Context&) override {
    require(in.h % 2 == 0 && in.w % 2 == 0, "max pool needs even spatial size", ErrorKind::DimensionMismatch);
    in_h_ = in.h;
    in_w_ = in.w;
    const int oh = in.h / 2, ow = in.w / 2;
    const Eigen::Index C = in.x.rows();
    y_.n = in.n;
    y_.h = oh;
    y_.w = ow;
    detail::resize(y_.x, C, static_cast<Eigen::Index>(in.n) * oh * ow);
    winner_.resize(static_cast<std::size_t>(y_.x.size()));
    for (int s = 0; s < in.n; ++s)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          const Eigen::Index qo = (static_cast<Eigen::Index>(s) * oh + i) * ow + j;
          const Eigen::Index base = (static_cast<Eigen::Index>(s) * in.h + 2 * i) * in.w + 2 * j;
          const S* src[4] = {&in.x(0, base), &in.x(0, base + 1), &in.x(0, base + in.w), &in.x(0, base + in.w + 1)};
          S* dst = &y_.x(0, qo);
          std::uint8_t* win = &winner_[static_cast<std::size_t>(qo * C)];
          for (Eigen::Index c = 0; c < C; ++c) {
            std::uint8_t best = 0;
            S v = src[0][c];
            for (std::uint8_t k = 1; k < 4; ++k)
              if (src[k][c] > v) {
                v = src[k][c];
                best = k;
              }
            dst[c] = v;
            win[c] = best;
          }
        }
    return y_;
  }

  const Activation<S>& backward(const Activation<S>& g) override {
    const Eigen::Index C = g.x.rows();
    dx_.n = g.n;
    dx_.h = in_h_;
    dx_.w = in_w_;
    detail::resize(dx_.x, C, static_cast<Eigen::Index>(g.n) * in_h_ * in_w_);
    dx_.x.setZero();
    for (int s = 0; s < g.n; ++s)
      for (int i = 0; i < g.h; ++i)
        for (int j = 0; j < g.w; ++j) {
          const Eigen::Index qo = (static_cast<Eigen::Index>(s) * g.h + i) * g.w + j;
          const Eigen::Index base = (static_cast<Eigen::Index>(s) * in_h_ + 2 * i) * in_w_ + 2 * j;
          const Eigen::Index dst[4] = {base, base + 1, base + in_w_, base + in_w_ + 1};
          const std::uint8_t* win = &winner_[static_cast<std::size_t>(qo * C)];
          for (Eigen::Index c = 0; c < C; ++c) dx_.x(c, dst[win[c]]) = g.x(c, qo);
        }
    return dx_;
  }

  std::unique_ptr<Layer<S>> clone() const override { return std::make_unique<MaxPool2>(*this); }
  std::uint64_t switch_hash() const override {
    std::uint64_t h = 2;
    for (auto a : winner_) h = detail::hash_mix(h, a);
    return h;
  }

 private:
  int in_h_ = 0, in_w_ = 0;
  std::vector<std::uint8_t> winner_;
  Activation<S> y_, dx_;
};

/// Nearest-neighbour 2x upsampling.
template <class S>
class Upsample2 : public Layer<S> {
 public:
  std::string kind() const override { return "upsample2"; }

  const Activation<S>& forward(const Activation<S>& in, const Context&) override {
    const int oh = in.h * 2, ow = in.w * 2;
    y_.n = in.n;
    y_.h = oh;
    y_.w = ow;
    detail::resize(y_.x, in.x.rows(), static_cast<Eigen::Index>(in.n) * oh * ow);
    for (int s = 0; s < in.n; ++s)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j)
          y_.x.col((static_cast<Eigen::Index>(s) * oh + i) * ow + j) =
              in.x.col((static_cast<Eigen::Index>(s) * in.h + i / 2) * in.w + j / 2);
    return y_;
  }

  const Activation<S>& backward(const Activation<S>& g) override {
    const int ih = g.h / 2, iw = g.w / 2;
    dx_.n = g.n;
    dx_.h = ih;
    dx_.w = iw;
    detail::resize(dx_.x, g.x.rows(), static_cast<Eigen::Index>(g.n) * ih * iw);
    dx_.x.setZero();
    for (int s = 0; s < g.n; ++s)
      for (int i = 0; i < g.h; ++i)
        for (int j = 0; j < g.w; ++j)
          dx_.x.col((static_cast<Eigen::Index>(s) * ih + i / 2) * iw + j / 2) +=
              g.x.col((static_cast<Eigen::Index>(s) * g.h + i) * g.w + j);
    return dx_;
  }

  std::unique_ptr<Layer<S>> clone() const override { return std::make_unique<Upsample2>(*this); }

 private:
  Activation<S> y_, dx_;
};

/// C x (N*H*W) maps to (C*H*W) x N. The memory order is unchanged, so each
/// sample's feature vector is its pixels in scan order, channels interleaved.
template <class S>
class Flatten : public Layer<S> {
 public:
  std::string kind() const override { return "flatten"; }

  const Activation<S>& forward(const Activation<S>& in, const Context&) override {
    c_ = in.channels();
    h_ = in.h;
    w_ = in.w;
    y_ = {Eigen::Map<const Mat<S>>(in.x.data(), static_cast<Eigen::Index>(c_) * h_ * w_, in.n), in.n, 1, 1};
    return y_;
  }

  const Activation<S>& backward(const Activation<S>& g) override {
    dx_ = {Eigen::Map<const Mat<S>>(g.x.data(), c_, static_cast<Eigen::Index>(g.n) * h_ * w_), g.n, h_, w_};
    return dx_;
  }

  std::unique_ptr<Layer<S>> clone() const override { return std::make_unique<Flatten>(*this); }

 private:
  int c_ = 0, h_ = 0, w_ = 0;
  Activation<S> y_, dx_;
};

template <class S>
class Dense : public Layer<S> {
 public:
  Dense(int in, int out) : in_(in), out_(out) {
    w_.init("weight", out, in);
    b_.init("bias", out, 1);
  }

  std::string kind() const override { return "dense"; }

  const Activation<S>& forward(const Activation<S>& in, const Context&) override {
    require(in.channels() == in_ && in.h == 1 && in.w == 1, "dense input size mismatch", ErrorKind::DimensionMismatch);
    input_ = &in.x;
    y_.n = in.n;
    detail::resize(y_.x, out_, in.x.cols());
    y_.x.noalias() = w_.value * in.x;
    y_.x.colwise() += b_.value.col(0);
    return y_;
  }

  const Activation<S>& backward(const Activation<S>& g) override {
    w_.grad.noalias() += g.x * input_->transpose();
    b_.grad.col(0) += g.x.rowwise().sum();
    dx_.n = g.n;
    detail::resize(dx_.x, in_, g.x.cols());
    dx_.x.noalias() = w_.value.transpose() * g.x;
    return dx_;
  }

  std::vector<Param<S>*> params() override { return {&w_, &b_}; }
  std::unique_ptr<Layer<S>> clone() const override { return std::make_unique<Dense>(*this); }
  void initialize(std::mt19937_64& rng) override {
    detail::he_uniform(w_.value, in_, rng);
    b_.value.setZero();
  }

 private:
  int in_, out_;
  Param<S> w_, b_;
  const Mat<S>* input_ = nullptr;
  Activation<S> y_, dx_;
};

/// Inverted dropout; identity outside training.
template <class S>
class Dropout : public Layer<S> {
 public:
  explicit Dropout(double rate) : rate_(rate) {}

  std::string kind() const override { return "dropout"; }

  const Activation<S>& forward(const Activation<S>& in, const Context& ctx) override {
    active_ = ctx.training && rate_ > 0.0;
    if (!active_) return in;
    require(ctx.rng != nullptr, "dropout in training needs a random stream");
    std::bernoulli_distribution keep(1.0 - rate_);
    const S scale = static_cast<S>(1.0 / (1.0 - rate_));
    detail::resize(mask_, in.x.rows(), in.x.cols());
    for (Eigen::Index i = 0; i < mask_.size(); ++i) mask_.data()[i] = keep(*ctx.rng) ? scale : S(0);
    y_ = {in.x.cwiseProduct(mask_), in.n, in.h, in.w};
    return y_;
  }

  const Activation<S>& backward(const Activation<S>& g) override {
    if (!active_) return g;
    dx_ = {g.x.cwiseProduct(mask_), g.n, g.h, g.w};
    return dx_;
  }

  std::unique_ptr<Layer<S>> clone() const override { return std::make_unique<Dropout>(*this); }

 private:
  double rate_;
  bool active_ = false;
  Mat<S> mask_;
  Activation<S> y_, dx_;
};

}  // namespace eitskin::nn
