#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "eitskin/error.hpp"
#include "eitskin/nn/layers.hpp"

namespace eitskin::nn {

inline constexpr int kImageSize = 96;
inline constexpr int kClasses = 3;

/// Classifier label order.
enum class Modality : int { Idle = 0, Touch = 1, Bend = 2 };

inline std::string to_string(Modality m) {
  switch (m) {
    case Modality::Idle: return "idle";
    case Modality::Touch: return "touch";
    case Modality::Bend: return "bend";
  }
  return "idle";
}

/// Layer widths of the classifier. The defaults are the full-size classifier;
/// smaller instances exist for fast tests.
struct NetworkSpec {
  int image = kImageSize;
  std::array<int, 3> encoder{16, 32, 64};
  std::array<int, 2> decoder{32, 16};
  std::array<int, 3> dense{256, 128, 16};
  double dropout = 0.1;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Closed-form parameter count of the classifier built from `spec`.
inline std::int64_t expected_parameter_count(const NetworkSpec& spec) {
  std::int64_t n = 0;
  int in = 1;
  for (int c : spec.encoder) {
    n += static_cast<std::int64_t>(in) * c * 9 + 2 * c;  // conv (no bias) + BN scale/shift
    in = c;
  }
  for (int c : spec.decoder) {
    n += static_cast<std::int64_t>(in) * c * 9 + c;
    in = c;
  }
  n += static_cast<std::int64_t>(in) * 1 * 9 + 1;
  int features = spec.image * spec.image;
  for (int d : spec.dense) {
    n += static_cast<std::int64_t>(features) * d + d;
    features = d;
  }
  n += static_cast<std::int64_t>(features) * kClasses + kClasses;
  return n;
}

template <class S>
class Network {
 public:
  Network() = default;
  Network(const Network& o) : spec_(o.spec_), input_h_(o.input_h_), input_w_(o.input_w_) {
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  Network& operator=(const Network& o) {
    if (this != &o) *this = Network(o);
    return *this;
  }
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  void add(std::unique_ptr<Layer<S>> layer) { layers_.push_back(std::move(layer)); }

  const NetworkSpec& spec() const { return spec_; }
  void set_spec(const NetworkSpec& s) { spec_ = s; }
  int input_h() const { return input_h_; }
  int input_w() const { return input_w_; }
  void set_input(int h, int w) {
    input_h_ = h;
    input_w_ = w;
  }
  const std::vector<std::unique_ptr<Layer<S>>>& layers() const { return layers_; }

  /// The returned activation is owned by the last layer.
  const Activation<S>& forward(const Activation<S>& x, const Context& ctx) {
    const Activation<S>* cur = &x;
    for (auto& l : layers_) cur = &l->forward(*cur, ctx);
    return *cur;
  }

  void backward(const Activation<S>& g) {
    const Activation<S>* cur = &g;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = &(*it)->backward(*cur);
  }

  std::vector<Param<S>*> params() {
    std::vector<Param<S>*> out;
    for (auto& l : layers_)
      for (auto* p : l->params()) out.push_back(p);
    return out;
  }

  /// Parameters and buffers in layer order, as serialized.
  std::vector<std::pair<std::string, Mat<S>*>> tensors() {
    std::vector<std::pair<std::string, Mat<S>*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string prefix = std::to_string(i) + "." + layers_[i]->kind() + ".";
      for (auto* p : layers_[i]->params()) out.emplace_back(prefix + p->name, &p->value);
      for (auto* b : layers_[i]->buffers()) out.emplace_back(prefix + b->name, &b->value);
    }
    return out;
  }

  std::int64_t parameter_count() {
    std::int64_t n = 0;
    for (auto* p : params()) n += p->value.size();
    return n;
  }

  std::uint64_t switch_hash() const {
    std::uint64_t h = 0;
    for (const auto& l : layers_) h = detail::hash_mix(h, l->switch_hash());
    return h;
  }

  void zero_grad() {
    for (auto* p : params()) p->grad.setZero();
  }

  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& l : layers_) l->initialize(rng);
  }

  template <class T>
  Network<T> cast() const {
    Network<T> out = build_like<T>();
    auto src = const_cast<Network*>(this)->tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<T>();
    return out;
  }

  template <class T>
  Network<T> build_like() const;

 private:
  std::vector<std::unique_ptr<Layer<S>>> layers_;
  NetworkSpec spec_;
  int input_h_ = kImageSize, input_w_ = kImageSize;
};

/// The modality classifier: three conv/BN/ReLU/pool stages, an
/// upsample/transposed-conv decoder back to image resolution, and a dense head.
template <class S>
Network<S> make_classifier(const NetworkSpec& spec = {}, std::uint64_t seed = 0) {
  require(spec.image % 8 == 0 && spec.image > 0, "image size must be a positive multiple of 8");
  Network<S> net;
  net.set_spec(spec);
  net.set_input(spec.image, spec.image);
  int in = 1;
  for (int c : spec.encoder) {
    require(c > 0, "layer widths must be positive");
    net.add(std::make_unique<Conv2d<S>>(in, c));
    net.add(std::make_unique<BatchNorm<S>>(c, spec.bn_eps, spec.bn_momentum));
    net.add(std::make_unique<ReLU<S>>());
    net.add(std::make_unique<MaxPool2<S>>());
    in = c;
  }
  for (int c : spec.decoder) {
    net.add(std::make_unique<Upsample2<S>>());
    net.add(std::make_unique<ConvTranspose2d<S>>(in, c, 1, 1, 0));
    net.add(std::make_unique<ReLU<S>>());
    in = c;
  }
  // image/8 -> two upsamples -> image/2 -> stride-2 transposed conv -> image
  net.add(std::make_unique<ConvTranspose2d<S>>(in, 1, 2, 1, 1));
  net.add(std::make_unique<Flatten<S>>());
  int features = spec.image * spec.image;
  for (std::size_t i = 0; i < spec.dense.size(); ++i) {
    net.add(std::make_unique<Dense<S>>(features, spec.dense[i]));
    net.add(std::make_unique<ReLU<S>>());
    if (i + 1 < spec.dense.size()) net.add(std::make_unique<Dropout<S>>(spec.dropout));
    features = spec.dense[i];
  }
  net.add(std::make_unique<Dense<S>>(features, kClasses));
  net.initialize(seed);
  return net;
}

/// Dense head alone (input features -> dense widths -> 3), used to check
/// gradients on a reduced network.
template <class S>
Network<S> make_dense_head(int features, const NetworkSpec& spec = {}, std::uint64_t seed = 0) {
  Network<S> net;
  net.set_spec(spec);
  net.set_input(1, features);
  net.add(std::make_unique<Flatten<S>>());
  int in = features;
  for (std::size_t i = 0; i < spec.dense.size(); ++i) {
    net.add(std::make_unique<Dense<S>>(in, spec.dense[i]));
    net.add(std::make_unique<ReLU<S>>());
    if (i + 1 < spec.dense.size()) net.add(std::make_unique<Dropout<S>>(spec.dropout));
    in = spec.dense[i];
  }
  net.add(std::make_unique<Dense<S>>(in, kClasses));
  net.initialize(seed);
  return net;
}

template <class S>
template <class T>
Network<T> Network<S>::build_like() const {
  if (input_h_ == 1) return make_dense_head<T>(input_w_, spec_);
  return make_classifier<T>(spec_);
}

/// Stack single-channel images (row-major, h*w values each) into a batch.
template <class S>
Activation<S> make_batch(const std::vector<const std::vector<double>*>& images, int h, int w) {
  Activation<S> a{Mat<S>(1, static_cast<Eigen::Index>(images.size()) * h * w), static_cast<int>(images.size()), h, w};
  for (std::size_t i = 0; i < images.size(); ++i) {
    require(static_cast<int>(images[i]->size()) == h * w, "image size does not match the network input",
            ErrorKind::DimensionMismatch);
    for (int p = 0; p < h * w; ++p) a.x(0, static_cast<Eigen::Index>(i) * h * w + p) = static_cast<S>((*images[i])[p]);
  }
  return a;
}

/// Column-wise softmax, computed in double.
template <class S>
Eigen::MatrixXd softmax(const Mat<S>& logits) {
  Eigen::MatrixXd p = logits.template cast<double>();
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    p.col(j).array() -= p.col(j).maxCoeff();
    p.col(j) = p.col(j).array().exp().matrix();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

/// Mean sparse categorical cross-entropy; fills the logit gradient.
template <class S>
double cross_entropy(const Mat<S>& logits, const std::vector<int>& labels, Mat<S>* grad) {
  const Eigen::MatrixXd p = softmax(logits);
  const auto n = static_cast<double>(labels.size());
  double loss = 0.0;
  for (std::size_t j = 0; j < labels.size(); ++j) loss -= std::log(std::max(p(labels[j], static_cast<Eigen::Index>(j)), 1e-300));
  if (grad) {
    Eigen::MatrixXd g = p;
    for (std::size_t j = 0; j < labels.size(); ++j) g(labels[j], static_cast<Eigen::Index>(j)) -= 1.0;
    *grad = (g / n).template cast<S>();
  }
  return loss / n;
}

/// Class probabilities for one image.
template <class S>
std::array<double, kClasses> forward_pass(Network<S>& net, const std::vector<double>& image, bool training = false,
                                          std::mt19937_64* rng = nullptr) {
  const auto a = make_batch<S>({&image}, net.input_h(), net.input_w());
  const auto logits = net.forward(a, Context{training, rng});
  const Eigen::MatrixXd p = softmax(logits.x);
  return {p(0, 0), p(1, 0), p(2, 0)};
}

template <std::size_t K>
int argmax(const std::array<double, K>& p) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(K); ++k)
    if (p[k] > p[best]) best = k;
  return best;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckReport {
  double max_relative_error = 0.0;
  int checked = 0;
  int refined = 0;   ///< samples re-differenced with a smaller step (kink inside +-epsilon)
  int unresolved = 0;  ///< samples whose interval still contained a kink at the smallest step
  std::string worst;  ///< tensor name and flat index of the worst entry

  friend bool operator==(const GradCheckReport&, const GradCheckReport&) = default;
};

/// Analytic gradients against central differences with dropout off and
/// batch norm on running statistics. At least `min_samples` parameters are
/// drawn, spread evenly across the parameter tensors. Entries where both
/// gradients are below `abs_floor` count as agreeing.
///
/// A central difference is only a derivative estimate when no ReLU or
/// pooling decision flips inside [w - h, w + h]. Such samples are detected
/// by comparing branch hashes and re-differenced with h / 10 down to
/// `min_epsilon`; those still straddling a kink are counted as unresolved
/// and excluded from the maximum.
template <class S>
GradCheckReport gradient_check(Network<S>& net, const std::vector<double>& image, int label, double epsilon = 1e-4,
                               int min_samples = 200, std::uint64_t seed = 0, double abs_floor = 1e-10,
                               double min_epsilon = 1e-8) {
  const auto a = make_batch<S>({&image}, net.input_h(), net.input_w());
  const Context ctx{false, nullptr};
  const std::vector<int> labels{label};
  net.zero_grad();
  Mat<S> g;
  cross_entropy(net.forward(a, ctx).x, labels, &g);
  const std::uint64_t base_hash = net.switch_hash();
  net.backward(Activation<S>{g, 1, 1, 1});

  auto params = net.params();
  const int per = static_cast<int>((min_samples + params.size() - 1) / params.size());
  std::mt19937_64 rng(seed);
  GradCheckReport rep;
  const auto loss_at = [&](S& w, S value, std::uint64_t& hash) {
    w = value;
    const double l = cross_entropy(net.forward(a, ctx).x, labels, static_cast<Mat<S>*>(nullptr));
    hash = net.switch_hash();
    return l;
  };
  for (auto* p : params) {
    std::uniform_int_distribution<Eigen::Index> pick(0, p->value.size() - 1);
    for (int s = 0; s < per; ++s) {
      const Eigen::Index k = pick(rng);
      S& w = p->value.data()[k];
      const S saved = w;
      double h = epsilon, numeric = 0.0;
      bool smooth = false;
      for (; h >= min_epsilon * (1.0 - 1e-9); h /= 10.0) {
        std::uint64_t hp = 0, hm = 0;
        const double lp = loss_at(w, saved + static_cast<S>(h), hp);
        const double lm = loss_at(w, saved - static_cast<S>(h), hm);
        w = saved;
        numeric = (lp - lm) / (2.0 * h);
        if (hp == base_hash && hm == base_hash) {
          smooth = true;
          break;
        }
      }
      ++rep.checked;
      if (h < epsilon * (1.0 - 1e-9)) ++rep.refined;
      if (!smooth) {
        ++rep.unresolved;
        continue;
      }
      const double analytic = static_cast<double>(p->grad.data()[k]);
      const double denom = std::max(std::abs(numeric), std::abs(analytic));
      const double err = denom < abs_floor ? 0.0 : std::abs(numeric - analytic) / denom;
      if (err > rep.max_relative_error || rep.worst.empty()) {
        rep.max_relative_error = err;
        rep.worst = p->name + "[" + std::to_string(k) + "]";
      }
    }
  }
  net.forward(a, ctx);  // leave the cached state consistent with the weights
  return rep;
}

// ---------------------------------------------------------------------------
// EITNN1 weights container (little-endian)
//
//   "EITNN1"
//   u32 image, u32 enc[3], u32 dec[2], u32 dense[3], f64 dropout, f64 bn_eps, f64 bn_momentum
//   u32 input_h, u32 input_w
//   u32 tensor_count
//   per tensor: u32 name_len, name bytes, u32 ndim (=2), u32 rows, u32 cols,
//               rows*cols f32 values in column-major order

namespace detail {

inline constexpr char kMagic[6] = {'E', 'I', 'T', 'N', 'N', '1'};

template <class T>
void put_le(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw Error(ErrorKind::Io, "weights file truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

template <class S>
void write_weights(std::ostream& os, Network<S>& net) {
  os.write(detail::kMagic, sizeof detail::kMagic);
  const auto& sp = net.spec();
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(sp.image));
  for (int v : sp.encoder) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(v));
  for (int v : sp.decoder) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(v));
  for (int v : sp.dense) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(v));
  detail::put_le<double>(os, sp.dropout);
  detail::put_le<double>(os, sp.bn_eps);
  detail::put_le<double>(os, sp.bn_momentum);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(net.input_h()));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(net.input_w()));
  const auto tensors = net.tensors();
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint32_t>(os, 2);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(m->rows()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(m->cols()));
    for (Eigen::Index i = 0; i < m->size(); ++i) detail::put_le<float>(os, static_cast<float>(m->data()[i]));
  }
}

template <class S>
Network<S> read_weights(std::istream& is) {
  char magic[6];
  if (!is.read(magic, 6) || std::memcmp(magic, detail::kMagic, 6) != 0)
    throw Error(ErrorKind::Io, "not an EITNN1 weights file");
  NetworkSpec sp;
  sp.image = static_cast<int>(detail::get_le<std::uint32_t>(is));
  for (int& v : sp.encoder) v = static_cast<int>(detail::get_le<std::uint32_t>(is));
  for (int& v : sp.decoder) v = static_cast<int>(detail::get_le<std::uint32_t>(is));
  for (int& v : sp.dense) v = static_cast<int>(detail::get_le<std::uint32_t>(is));
  sp.dropout = detail::get_le<double>(is);
  sp.bn_eps = detail::get_le<double>(is);
  sp.bn_momentum = detail::get_le<double>(is);
  const int ih = static_cast<int>(detail::get_le<std::uint32_t>(is));
  const int iw = static_cast<int>(detail::get_le<std::uint32_t>(is));
  Network<S> net = ih == 1 ? make_dense_head<S>(iw, sp) : make_classifier<S>(sp);
  auto tensors = net.tensors();
  const auto count = detail::get_le<std::uint32_t>(is);
  if (count != tensors.size()) throw Error(ErrorKind::Io, "weights file tensor count does not match its network spec");
  for (auto& [name, m] : tensors) {
    const auto len = detail::get_le<std::uint32_t>(is);
    std::string got(len, '\0');
    if (len > 4096 || !is.read(got.data(), len)) throw Error(ErrorKind::Io, "weights file truncated");
    if (got != name) throw Error(ErrorKind::Io, "weights file tensor '" + got + "' where '" + name + "' was expected");
    const auto ndim = detail::get_le<std::uint32_t>(is);
    const auto rows = detail::get_le<std::uint32_t>(is);
    const auto cols = detail::get_le<std::uint32_t>(is);
    if (ndim != 2 || rows != m->rows() || cols != m->cols())
      throw Error(ErrorKind::Io, "weights file tensor '" + name + "' has the wrong shape");
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = static_cast<S>(detail::get_le<float>(is));
  }
  return net;
}

}  // namespace eitskin::nn
