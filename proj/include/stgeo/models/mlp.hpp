#pragma once

// Small trainable denoiser: residual SiLU MLP on sinusoidal features of the
// scaled input and of log-SNR, wrapped in skip/out preconditioning
//   x̂0 = c_skip(t) y + c_out(t) F(c_in(t) y, λ_t),   y = x_t / α_t.
// Backprop is written out by hand for this fixed architecture.

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "stgeo/models/denoiser.hpp"
#include "stgeo/optimizer.hpp"
#include "stgeo/rng.hpp"

namespace stgeo {

struct MlpConfig {
  int hidden = 128;
  int layers = 3;  // residual hidden blocks
  int emb = 128;   // sinusoidal features per input (half sin, half cos)
};

struct TrainConfig {
  int steps = 4000;
  int batch = 256;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;  // AdamW
  double sigma_data = 0.0;     // 0: estimate from the samples
  std::uint64_t seed = 0;
  MlpConfig arch;
};

class MlpDenoiser final : public DenoiserModel {
 public:
  using Mat = Eigen::MatrixXd;
  using Col = Eigen::VectorXd;

  MlpDenoiser() = default;

  /// PyTorch-style uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
  MlpDenoiser(std::size_t dim, const MlpConfig& arch, double sigma_data, std::uint64_t seed)
      : dim_(dim), arch_(arch), sigma_data_(sigma_data) {
    if (dim == 0) throw DomainError("MlpDenoiser: dim must be >= 1");
    if (arch.hidden < 1 || arch.layers < 0 || arch.emb < 2 || arch.emb % 2) {
      throw DomainError("MlpDenoiser: bad architecture (hidden >= 1, layers >= 0, even emb >= 2)");
    }
    if (!(sigma_data > 0)) throw DomainError("MlpDenoiser: sigma_data must be > 0");
    Rng rng = make_rng(seed);
    auto layer = [&](int out, int in) {
      const double a = 1.0 / std::sqrt(static_cast<double>(in));
      Mat w(out, in);
      Col b(out);
      for (int j = 0; j < in; ++j)
        for (int i = 0; i < out; ++i) w(i, j) = a * (2 * NormalSampler::uniform01(rng) - 1);
      for (int i = 0; i < out; ++i) b(i) = a * (2 * NormalSampler::uniform01(rng) - 1);
      W_.push_back(std::move(w));
      b_.push_back(std::move(b));
    };
    layer(arch.hidden, in_features());
    for (int l = 0; l < arch.layers; ++l) layer(arch.hidden, arch.hidden);
    layer(static_cast<int>(dim), arch.hidden);
  }

  std::size_t dim() const override { return dim_; }
  std::string name() const override { return "mlp"; }
  const MlpConfig& arch() const { return arch_; }
  double sigma_data() const { return sigma_data_; }
  std::size_t n_params() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) n += static_cast<std::size_t>(W_[l].size() + b_[l].size());
    return n;
  }

  Vec denoise(const NoiseSchedule& schedule, std::span<const double> x, double t) const override {
    check_input(x.size());
    const auto [alpha, sigma] = schedule.alpha_sigma(t);
    const double lam = schedule.log_snr(t);
    const Pre p = precond(sigma / alpha);
    Col u(dim_);
    for (std::size_t i = 0; i < dim_; ++i) u(static_cast<Eigen::Index>(i)) = p.c_in * x[i] / alpha;
    const Col f = network(features(u, lam));
    Vec out(dim_);
    for (std::size_t i = 0; i < dim_; ++i) out[i] = p.c_skip * x[i] / alpha + p.c_out * f(static_cast<Eigen::Index>(i));
    return out;
  }

  /// Forward-mode pass: value and one directional derivative.
  std::vector<Dual1> denoise(const NoiseSchedule& schedule, std::span<const Dual1> x, Dual1 t) const override {
    check_input(x.size());
    const auto [alpha, sigma] = schedule.alpha_sigma(t);
    const Dual1 lam = schedule.log_snr(t);
    const Dual1 se = sigma / alpha;
    const Dual1 s2 = sigma_data_ * sigma_data_;
    const Dual1 r = stgeo::sqrt(se * se + s2);
    const Dual1 c_in = 1.0 / r, c_skip = s2 / (se * se + s2), c_out = se * sigma_data_ / r;
    std::vector<Dual1> y(dim_);
    Col u(dim_), du(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
      y[i] = x[i] / alpha;
      const Dual1 ui = c_in * y[i];
      u(static_cast<Eigen::Index>(i)) = ui.v;
      du(static_cast<Eigen::Index>(i)) = ui.d;
    }
    Col e, de;
    features_jvp(u, du, lam.v, lam.d, e, de);
    Col f, df;
    network_jvp(e, de, f, df);
    std::vector<Dual1> out(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      out[i] = c_skip * y[i] + c_out * Dual1(f(k), df(k));
    }
    return out;
  }

  bool has_second_derivatives() const override { return true; }

  /// Nested forward pass: value, two tangents and their mixed second derivative.
  std::vector<Dual2> denoise2(const NoiseSchedule& schedule, std::span<const Dual2> x, Dual2 t) const override {
    check_input(x.size());
    const auto [alpha, sigma] = schedule.alpha_sigma(t);
    const Dual2 lam = schedule.log_snr(t);
    const Dual2 se = sigma / alpha;
    const double s2 = sigma_data_ * sigma_data_;
    const Dual2 q = se * se + s2;
    const Dual2 r = stgeo::sqrt(q);
    const Dual2 c_in = 1.0 / r, c_skip = s2 / q, c_out = se * sigma_data_ / r;
    std::vector<Dual2> y(dim_), in(dim_ + 1);
    for (std::size_t i = 0; i < dim_; ++i) {
      y[i] = x[i] / alpha;
      in[i] = c_in * y[i];
    }
    in[dim_] = lam;
    const Second f = network2(features2(in));
    std::vector<Dual2> out(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      out[i] = c_skip * y[i] + c_out * Dual2(Dual1(f.v(k), f.a(k)), Dual1(f.b(k), f.ab(k)));
    }
    return out;
  }

  /// Weighted denoising loss w(λ)‖x̂0 − x0‖² with λ ~ U[λ_min+1, λ_max−1]; returns the loss trace.
  Vec train(const NoiseSchedule& schedule, const std::vector<Vec>& samples, const TrainConfig& cfg);

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["format"] = "stgeo-mlp-denoiser";
    j["version"] = 1;
    j["dim"] = dim_;
    j["hidden"] = arch_.hidden;
    j["layers"] = arch_.layers;
    j["emb"] = arch_.emb;
    j["sigma_data"] = sigma_data_;
    auto& ls = j["weights"] = nlohmann::ordered_json::array();
    for (std::size_t l = 0; l < W_.size(); ++l) {
      std::vector<double> w(static_cast<std::size_t>(W_[l].size()));
      for (Eigen::Index r = 0; r < W_[l].rows(); ++r)
        for (Eigen::Index c = 0; c < W_[l].cols(); ++c) w[static_cast<std::size_t>(r * W_[l].cols() + c)] = W_[l](r, c);
      ls.push_back({{"rows", W_[l].rows()}, {"cols", W_[l].cols()}, {"w", w},
                    {"b", std::vector<double>(b_[l].data(), b_[l].data() + b_[l].size())}});
    }
    return j;
  }

  static MlpDenoiser from_json(const nlohmann::json& j) {
    try {
      if (j.at("format") != "stgeo-mlp-denoiser") throw DomainError("checkpoint: unknown format");
      MlpConfig a{j.at("hidden").get<int>(), j.at("layers").get<int>(), j.at("emb").get<int>()};
      MlpDenoiser m(j.at("dim").get<std::size_t>(), a, j.at("sigma_data").get<double>(), 0);
      const auto& ls = j.at("weights");
      if (ls.size() != m.W_.size()) throw DomainError("checkpoint: layer count does not match the architecture");
      for (std::size_t l = 0; l < m.W_.size(); ++l) {
        const auto rows = ls[l].at("rows").get<Eigen::Index>(), cols = ls[l].at("cols").get<Eigen::Index>();
        const auto w = ls[l].at("w").get<std::vector<double>>();
        const auto b = ls[l].at("b").get<std::vector<double>>();
        if (rows != m.W_[l].rows() || cols != m.W_[l].cols() || static_cast<Eigen::Index>(w.size()) != rows * cols ||
            static_cast<Eigen::Index>(b.size()) != rows) {
          throw DomainError("checkpoint: layer " + std::to_string(l) + " has the wrong shape");
        }
        for (Eigen::Index r = 0; r < rows; ++r)
          for (Eigen::Index c = 0; c < cols; ++c) m.W_[l](r, c) = w[static_cast<std::size_t>(r * cols + c)];
        for (Eigen::Index r = 0; r < rows; ++r) m.b_[l](r) = b[static_cast<std::size_t>(r)];
      }
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw DomainError(std::string("checkpoint: ") + e.what());
    }
  }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw DomainError("cannot write checkpoint " + path);
    f << to_json().dump() << '\n';
  }

  static MlpDenoiser load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DomainError("cannot read checkpoint " + path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DomainError("checkpoint " + path + ": " + e.what());
    }
    return from_json(j);
  }

  // Flat parameter access (training and gradient checks).
  Vec parameters() const {
    Vec p;
    p.reserve(n_params());
    for (std::size_t l = 0; l < W_.size(); ++l) {
      p.insert(p.end(), W_[l].data(), W_[l].data() + W_[l].size());
      p.insert(p.end(), b_[l].data(), b_[l].data() + b_[l].size());
    }
    return p;
  }

  void set_parameters(const Vec& p) {
    if (p.size() != n_params()) throw DomainError("set_parameters: wrong size");
    std::size_t o = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) {
      std::copy_n(p.data() + o, W_[l].size(), W_[l].data());
      o += static_cast<std::size_t>(W_[l].size());
      std::copy_n(p.data() + o, b_[l].size(), b_[l].data());
      o += static_cast<std::size_t>(b_[l].size());
    }
  }

  /// Loss and its gradient (flattened like parameters()) on a fixed batch.
  double loss_and_gradient(const NoiseSchedule& schedule, const std::vector<Vec>& x0, const Vec& t,
                           const std::vector<Vec>& noise, Vec* grad) const;

 private:
  struct Pre {
    double c_in, c_skip, c_out;
  };

  std::size_t dim_ = 0;
  MlpConfig arch_;
  double sigma_data_ = 1.0;
  std::vector<Mat> W_;
  std::vector<Col> b_;

  int in_features() const { return static_cast<int>(dim_ + 1) * arch_.emb; }
  int half() const { return arch_.emb / 2; }

  void check_input(std::size_t n) const {
    if (W_.empty()) throw DomainError("MlpDenoiser: model has no weights");
    if (n != dim_) throw DomainError("MlpDenoiser: input dimension mismatch");
  }

  Pre precond(double se) const {
    const double s2 = sigma_data_ * sigma_data_;
    const double r = std::sqrt(se * se + s2);
    return {1.0 / r, s2 / (se * se + s2), se * sigma_data_ / r};
  }

  double freq(int k) const { return std::exp(-std::log(1e4) * k / std::max(1, half() - 1)); }

  /// [sin(f u_i), cos(f u_i)] for each coordinate, then the same for λ.
  Col features(const Col& u, double lam) const {
    Col e(in_features());
    const int h = half();
    for (std::size_t i = 0; i <= dim_; ++i) {
      const double v = i < dim_ ? u(static_cast<Eigen::Index>(i)) : lam;
      const auto base = static_cast<Eigen::Index>(i) * arch_.emb;
      for (int k = 0; k < h; ++k) {
        e(base + k) = std::sin(v * freq(k));
        e(base + h + k) = std::cos(v * freq(k));
      }
    }
    return e;
  }

  void features_jvp(const Col& u, const Col& du, double lam, double dlam, Col& e, Col& de) const {
    e.resize(in_features());
    de.resize(in_features());
    const int h = half();
    for (std::size_t i = 0; i <= dim_; ++i) {
      const double v = i < dim_ ? u(static_cast<Eigen::Index>(i)) : lam;
      const double dv = i < dim_ ? du(static_cast<Eigen::Index>(i)) : dlam;
      const auto base = static_cast<Eigen::Index>(i) * arch_.emb;
      for (int k = 0; k < h; ++k) {
        const double f = freq(k), s = std::sin(v * f), c = std::cos(v * f);
        e(base + k) = s;
        e(base + h + k) = c;
        de(base + k) = c * f * dv;
        de(base + h + k) = -s * f * dv;
      }
    }
  }

  /// Components of a nested dual vector: value, tangents a and b, mixed ab.
  struct Second {
    Col v, a, b, ab;
  };

  Second features2(const std::vector<Dual2>& in) const {
    Second e{Col(in_features()), Col(in_features()), Col(in_features()), Col(in_features())};
    const int h = half();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double v = in[i].v.v, da = in[i].v.d, db = in[i].d.v, dab = in[i].d.d;
      const auto base = static_cast<Eigen::Index>(i) * arch_.emb;
      for (int k = 0; k < h; ++k) {
        const double f = freq(k), sn = std::sin(v * f), cs = std::cos(v * f);
        const auto j = base + k, jc = base + h + k;
        e.v(j) = sn;
        e.a(j) = cs * f * da;
        e.b(j) = cs * f * db;
        e.ab(j) = -sn * f * f * da * db + cs * f * dab;
        e.v(jc) = cs;
        e.a(jc) = -sn * f * da;
        e.b(jc) = -sn * f * db;
        e.ab(jc) = -cs * f * f * da * db - sn * f * dab;
      }
    }
    return e;
  }

  static Second affine2(const Mat& w, const Col& bias, const Second& x) {
    return {w * x.v + bias, w * x.a, w * x.b, w * x.ab};
  }

  static Second silu2(const Second& z) {
    const Col s1 = z.v.unaryExpr(&dsilu), s2 = z.v.unaryExpr(&d2silu);
    return {z.v.unaryExpr(&silu), s1.cwiseProduct(z.a), s1.cwiseProduct(z.b),
            s2.cwiseProduct(z.a).cwiseProduct(z.b) + s1.cwiseProduct(z.ab)};
  }

  Second network2(const Second& e) const {
    Second a = silu2(affine2(W_[0], b_[0], e));
    for (int l = 1; l <= arch_.layers; ++l) {
      const auto L = static_cast<std::size_t>(l);
      const Second g = silu2(affine2(W_[L], b_[L], a));
      a.v += g.v;
      a.a += g.a;
      a.b += g.b;
      a.ab += g.ab;
    }
    return affine2(W_.back(), b_.back(), a);
  }

  static double sigm(double z) { return 1.0 / (1.0 + std::exp(-z)); }
  static double silu(double z) { return z * sigm(z); }
  static double dsilu(double z) {
    const double s = sigm(z);
    return s * (1.0 + z * (1.0 - s));
  }
  static double d2silu(double z) {
    const double s = sigm(z);
    return s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s));
  }

  Col network(const Col& e) const {
    Col a = (W_[0] * e + b_[0]).unaryExpr(&silu);
    for (int l = 1; l <= arch_.layers; ++l) a += (W_[l] * a + b_[l]).unaryExpr(&silu);
    return W_.back() * a + b_.back();
  }

  void network_jvp(const Col& e, const Col& de, Col& f, Col& df) const {
    Col z = W_[0] * e + b_[0];
    Col a = z.unaryExpr(&silu);
    Col da = z.unaryExpr(&dsilu).cwiseProduct(W_[0] * de);
    for (int l = 1; l <= arch_.layers; ++l) {
      z = W_[l] * a + b_[l];
      da += z.unaryExpr(&dsilu).cwiseProduct(W_[l] * da);
      a += z.unaryExpr(&silu);
    }
    f = W_.back() * a + b_.back();
    df = W_.back() * da;
  }
};

inline double MlpDenoiser::loss_and_gradient(const NoiseSchedule& schedule, const std::vector<Vec>& x0,
                                             const Vec& t, const std::vector<Vec>& noise, Vec* grad) const {
  const auto B = static_cast<Eigen::Index>(x0.size());
  const auto D = static_cast<Eigen::Index>(dim_);
  Mat E(in_features(), B);
  Vec c_skip(x0.size()), c_out(x0.size()), w(x0.size());
  Mat Y(D, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto k = static_cast<std::size_t>(b);
    const auto [alpha, sigma] = schedule.alpha_sigma(t[k]);
    const double lam = schedule.log_snr(t[k]);
    const Pre p = precond(sigma / alpha);
    Col u(D);
    for (Eigen::Index i = 0; i < D; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      // y = x_t / α = x0 + (σ/α) ε
      Y(i, b) = x0[k][ii] + sigma / alpha * noise[k][ii];
      u(i) = p.c_in * Y(i, b);
    }
    E.col(b) = features(u, lam);
    c_skip[k] = p.c_skip;
    c_out[k] = p.c_out;
    w[k] = std::sqrt(sigm(lam + 2.0));
  }
  // Forward, keeping pre-activations.
  std::vector<Mat> Z(static_cast<std::size_t>(arch_.layers) + 1), A(static_cast<std::size_t>(arch_.layers) + 1);
  Z[0] = (W_[0] * E).colwise() + b_[0];
  A[0] = Z[0].unaryExpr(&silu);
  for (int l = 1; l <= arch_.layers; ++l) {
    const auto L = static_cast<std::size_t>(l);
    Z[L] = (W_[L] * A[L - 1]).colwise() + b_[L];
    A[L] = A[L - 1] + Z[L].unaryExpr(&silu);
  }
  const Mat F = (W_.back() * A.back()).colwise() + b_.back();
  double loss = 0.0;
  Mat dF(D, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto k = static_cast<std::size_t>(b);
    for (Eigen::Index i = 0; i < D; ++i) {
      const double r = c_skip[k] * Y(i, b) + c_out[k] * F(i, b) - x0[k][static_cast<std::size_t>(i)];
      loss += w[k] * r * r;
      dF(i, b) = 2.0 * w[k] * r * c_out[k] / static_cast<double>(B);
    }
  }
  loss /= static_cast<double>(B);
  if (!grad) return loss;

  std::vector<Mat> gW(W_.size());
  std::vector<Col> gb(b_.size());
  gW.back() = dF * A.back().transpose();
  gb.back() = dF.rowwise().sum();
  Mat dA = W_.back().transpose() * dF;
  for (int l = arch_.layers; l >= 1; --l) {
    const auto L = static_cast<std::size_t>(l);
    const Mat dZ = dA.cwiseProduct(Z[L].unaryExpr(&dsilu));
    gW[L] = dZ * A[L - 1].transpose();
    gb[L] = dZ.rowwise().sum();
    dA += W_[L].transpose() * dZ;
  }
  const Mat dZ0 = dA.cwiseProduct(Z[0].unaryExpr(&dsilu));
  gW[0] = dZ0 * E.transpose();
  gb[0] = dZ0.rowwise().sum();

  grad->clear();
  grad->reserve(n_params());
  for (std::size_t l = 0; l < W_.size(); ++l) {
    grad->insert(grad->end(), gW[l].data(), gW[l].data() + gW[l].size());
    grad->insert(grad->end(), gb[l].data(), gb[l].data() + gb[l].size());
  }
  return loss;
}

/// Training-time λ range: [λ_min + 1, λ_max − 1]; VE has no finite λ_max, so 10 is used.
inline std::pair<double, double> training_logsnr_range(const NoiseSchedule& schedule) {
  const double hi = std::isfinite(schedule.lambda_max) ? schedule.lambda_max - 1.0 : 10.0;
  return {schedule.lambda_min + 1.0, hi};
}

inline Vec MlpDenoiser::train(const NoiseSchedule& schedule, const std::vector<Vec>& samples,
                              const TrainConfig& cfg) {
  if (samples.empty()) throw DomainError("train_denoiser: empty sample set");
  if (cfg.steps < 1 || cfg.batch < 1) throw DomainError("train_denoiser: steps and batch must be >= 1");
  for (const auto& s : samples) {
    if (s.size() != dim_) throw DomainError("train_denoiser: sample dimension mismatch");
  }
  const auto [lo, hi] = training_logsnr_range(schedule);
  Rng rng = make_rng(cfg.seed, 1);
  NormalSampler normal;
  AdamConfig ac;
  ac.kind = OptimizerKind::adamw;
  ac.learning_rate = cfg.learning_rate;
  ac.weight_decay = cfg.weight_decay;
  Vec params = parameters();
  Adam opt(params.size(), ac);
  Vec trace, grad;
  std::vector<Vec> x0(static_cast<std::size_t>(cfg.batch)), eps(static_cast<std::size_t>(cfg.batch), Vec(dim_));
  Vec t(static_cast<std::size_t>(cfg.batch));
  for (int step = 0; step < cfg.steps; ++step) {
    for (std::size_t b = 0; b < x0.size(); ++b) {
      x0[b] = samples[static_cast<std::size_t>(NormalSampler::uniform01(rng) * static_cast<double>(samples.size())) %
                      samples.size()];
      t[b] = schedule.t_of_logsnr(lo + (hi - lo) * NormalSampler::uniform01(rng));
      for (auto& e : eps[b]) e = normal(rng);
    }
    const double loss = loss_and_gradient(schedule, x0, t, eps, &grad);
    if (!std::isfinite(loss)) {
      std::ostringstream os;
      os << "train_denoiser: non-finite loss at step " << step;
      throw NumericalError(os.str());
    }
    trace.push_back(loss);
    opt.step(params, grad);
    set_parameters(params);
  }
  return trace;
}

/// RMS per-coordinate standard deviation of the samples (floored at 1e-3).
inline double estimate_sigma_data(const std::vector<Vec>& samples) {
  if (samples.empty()) throw DomainError("estimate_sigma_data: empty sample set");
  const std::size_t d = samples.front().size();
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double m = 0.0, v = 0.0;
    for (const auto& s : samples) m += s[i];
    m /= static_cast<double>(samples.size());
    for (const auto& s : samples) v += (s[i] - m) * (s[i] - m);
    acc += v / static_cast<double>(samples.size());
  }
  return std::max(1e-3, std::sqrt(acc / static_cast<double>(d)));
}

struct TrainedDenoiser {
  MlpDenoiser model;
  Vec loss_trace;
};

inline TrainedDenoiser train_denoiser(const std::vector<Vec>& samples, const NoiseSchedule& schedule,
                                      const TrainConfig& cfg) {
  if (samples.empty()) throw DomainError("train_denoiser: empty sample set");
  const double sd = cfg.sigma_data > 0 ? cfg.sigma_data : estimate_sigma_data(samples);
  TrainedDenoiser out{MlpDenoiser(samples.front().size(), cfg.arch, sd, cfg.seed), {}};
  out.loss_trace = out.model.train(schedule, samples, cfg);
  return out;
}

}  // namespace stgeo
