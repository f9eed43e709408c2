#pragma once

// Run-config parsing. Every value is read through ConfigNode, which knows its
// JSON pointer, so type errors, missing keys and unknown keys report where in
// the document they occurred.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "stgeo/constraints.hpp"
#include "stgeo/errors.hpp"
#include "stgeo/geodesic.hpp"
#include "stgeo/models/boltzmann.hpp"
#include "stgeo/models/gmm.hpp"
#include "stgeo/models/mlp.hpp"
#include "stgeo/pfode.hpp"
#include "stgeo/tps.hpp"

namespace stgeo {

class ConfigNode {
 public:
  ConfigNode(const nlohmann::json& j, std::string pointer) : j_(&j), ptr_(std::move(pointer)) {}

  const std::string& pointer() const { return ptr_; }
  const nlohmann::json& raw() const { return *j_; }
  bool is_object() const { return j_->is_object(); }
  bool is_array() const { return j_->is_array(); }
  bool is_string() const { return j_->is_string(); }
  bool is_number() const { return j_->is_number(); }

  [[noreturn]] void fail(const std::string& what) const { throw ConfigError(ptr_.empty() ? "/" : ptr_, what); }

  bool has(const std::string& key) const {
    require_object();
    return j_->contains(key);
  }

  ConfigNode at(const std::string& key) const {
    require_object();
    if (!j_->contains(key)) ConfigNode(*j_, child_ptr(key)).fail("missing required key");
    used_->insert(key);
    return {(*j_)[key], child_ptr(key)};
  }

  std::optional<ConfigNode> find(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return at(key);
  }

  std::size_t size() const {
    if (!j_->is_array()) fail("expected an array");
    return j_->size();
  }

  ConfigNode operator[](std::size_t i) const {
    if (!j_->is_array()) fail("expected an array");
    return {(*j_)[i], ptr_ + "/" + std::to_string(i)};
  }

  double number() const {
    if (j_->is_number()) return j_->get<double>();
    if (j_->is_string()) {
      const auto s = j_->get<std::string>();
      if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
      if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    fail("expected a number");
  }

  long long integer() const {
    if (!j_->is_number_integer()) fail("expected an integer");
    return j_->get<long long>();
  }

  std::size_t count() const {
    const long long v = integer();
    if (v < 0) fail("expected a non-negative integer");
    return static_cast<std::size_t>(v);
  }

  bool boolean() const {
    if (!j_->is_boolean()) fail("expected true or false");
    return j_->get<bool>();
  }

  std::string string() const {
    if (!j_->is_string()) fail("expected a string");
    return j_->get<std::string>();
  }

  Vec vec() const {
    if (j_->is_number()) return {number()};
    Vec out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back((*this)[i].number());
    return out;
  }

  double number(const std::string& key, double def) const { return has(key) ? at(key).number() : def; }
  int integer(const std::string& key, int def) const {
    if (!has(key)) return def;
    const auto n = at(key);
    const long long v = n.integer();
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) n.fail("integer out of range");
    return static_cast<int>(v);
  }
  std::size_t count(const std::string& key, std::size_t def) const { return has(key) ? at(key).count() : def; }
  bool boolean(const std::string& key, bool def) const { return has(key) ? at(key).boolean() : def; }
  std::string string(const std::string& key, const std::string& def) const {
    return has(key) ? at(key).string() : def;
  }

  /// One of `choices`, reporting the valid set otherwise.
  std::string choice(const std::vector<std::string>& choices) const {
    const auto s = string();
    for (const auto& c : choices) {
      if (s == c) return s;
    }
    std::string list;
    for (const auto& c : choices) list += (list.empty() ? "" : ", ") + c;
    fail("unknown value '" + s + "'; valid: " + list);
  }

  /// Rejects keys of this object that were never read.
  void finish() const {
    require_object();
    for (const auto& [k, v] : j_->items()) {
      if (!used_->count(k)) ConfigNode(v, child_ptr(k)).fail("unknown key");
    }
  }

  /// Marks a key as known without reading it.
  void ignore(const std::string& key) const { used_->insert(key); }

 private:
  void require_object() const {
    if (!j_->is_object()) fail("expected an object");
  }

  std::string child_ptr(const std::string& key) const {
    std::string esc;
    for (char c : key) {
      if (c == '~') esc += "~0";
      else if (c == '/') esc += "~1";
      else esc += c;
    }
    return ptr_ + "/" + esc;
  }

  const nlohmann::json* j_;
  std::string ptr_;
  std::shared_ptr<std::set<std::string>> used_ = std::make_shared<std::set<std::string>>();
};

/// A parsed document that owns its JSON and the directory relative paths resolve against.
struct ConfigDocument {
  nlohmann::json json;
  std::filesystem::path base_dir;

  ConfigNode root() const { return {json, ""}; }

  static ConfigDocument load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("", "cannot open config file " + path.string());
    ConfigDocument d;
    try {
      d.json = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("", "invalid JSON in " + path.string() + ": " + e.what());
    }
    d.base_dir = path.parent_path();
    return d;
  }

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base_dir / fp;
  }
};

namespace detail {

/// Runs `f`, turning domain errors raised while building a value into config errors at `node`.
template <class F>
auto at_node(const ConfigNode& node, F&& f) {
  try {
    return f();
  } catch (const DomainError& e) {
    node.fail(e.what());
  }
}

}  // namespace detail

inline NoiseSchedule parse_schedule(const std::optional<ConfigNode>& node) {
  if (!node) return NoiseSchedule::vp();
  const auto& n = *node;
  const auto kind = n.has("kind") ? n.at("kind").choice({"vp", "ve"}) : std::string("vp");
  NoiseSchedule s = detail::at_node(n, [&] {
    if (kind == "ve") return NoiseSchedule::ve(n.number("T", 80.0));
    return NoiseSchedule::vp(n.number("lambda_min", -10.0), n.number("lambda_max", 10.0), n.number("T", 1.0));
  });
  n.finish();
  return s;
}

/// A time given either as {"t": ...} or {"log_snr": ...} within `n`.
inline std::optional<double> parse_time(const ConfigNode& n, const NoiseSchedule& schedule, const std::string& t_key,
                                        const std::string& lambda_key) {
  if (n.has(t_key) && n.has(lambda_key)) n.fail("give either '" + t_key + "' or '" + lambda_key + "', not both");
  if (n.has(t_key)) {
    const auto c = n.at(t_key);
    const double t = c.number();
    detail::at_node(c, [&] {
      schedule.check_time(t);
      return 0;
    });
    return t;
  }
  if (n.has(lambda_key)) {
    const auto c = n.at(lambda_key);
    return detail::at_node(c, [&] { return schedule.t_of_logsnr(c.number()); });
  }
  return std::nullopt;
}

inline SpacetimePoint parse_point(const ConfigNode& n, const NoiseSchedule& schedule) {
  SpacetimePoint p;
  p.x = n.at("x").vec();
  const auto t = parse_time(n, schedule, "t", "log_snr");
  if (!t) n.fail("point needs 't' or 'log_snr'");
  p.t = *t;
  n.finish();
  return p;
}

inline std::vector<Vec> parse_vec_list(const ConfigNode& n) {
  std::vector<Vec> out;
  for (std::size_t i = 0; i < n.size(); ++i) out.push_back(n[i].vec());
  return out;
}

inline GaussianMixture parse_mixture(const ConfigNode& n) {
  if (n.is_string()) {
    const auto name = n.choice({"paper_1d", "toy_2d"});
    return name == "toy_2d" ? GaussianMixture::toy_2d() : GaussianMixture::paper_1d();
  }
  GaussianMixture q;
  q.weights = n.at("weights").vec();
  q.means = parse_vec_list(n.at("means"));
  q.variance = n.at("variance").number();
  n.finish();
  detail::at_node(n, [&] {
    q.validate();
    return 0;
  });
  return q;
}

inline DivergenceConfig parse_divergence(const std::optional<ConfigNode>& node, std::uint64_t seed) {
  DivergenceConfig d;
  d.seed = seed;
  if (!node) return d;
  const auto& n = *node;
  if (n.has("mode")) {
    const auto m = n.at("mode").choice({"automatic", "exact", "hutchinson"});
    d.mode = m == "exact" ? DivergenceConfig::Mode::exact
             : m == "hutchinson" ? DivergenceConfig::Mode::hutchinson
                                 : DivergenceConfig::Mode::automatic;
  }
  d.probes = n.integer("probes", 0);
  if (n.has("kind")) d.kind = n.at("kind").choice({"basis", "rademacher"}) == "basis" ? ProbeKind::basis
                                                                                     : ProbeKind::rademacher;
  n.finish();
  return d;
}

/// Denoiser backend plus whatever analytic structure it carries.
struct ModelSpec {
  std::string backend;
  std::shared_ptr<const DenoiserModel> model;
  std::optional<GaussianMixture> mixture;         // gmm, gaussian
  std::optional<BoltzmannPotential> potential;    // double_well
};

inline const std::vector<std::string>& model_backends() {
  static const std::vector<std::string> names{"gmm", "gaussian", "double_well", "mlp"};
  return names;
}

inline ModelSpec parse_model(const ConfigNode& n, const ConfigDocument& doc) {
  ModelSpec m;
  m.backend = n.at("backend").choice(model_backends());
  if (m.backend == "gmm") {
    m.mixture = n.has("mixture") ? parse_mixture(n.at("mixture")) : GaussianMixture::paper_1d();
    m.model = std::make_shared<GmmDenoiser>(*m.mixture);
  } else if (m.backend == "gaussian") {
    const auto mean = n.at("mean").vec();
    const auto var = n.at("variance");
    m.mixture = detail::at_node(var, [&] {
      auto q = GaussianMixture::single(mean, var.number());
      q.validate();
      return q;
    });
    m.model = std::make_shared<GmmDenoiser>(*m.mixture);
  } else if (m.backend == "double_well") {
    m.potential = BoltzmannPotential::double_well();
    const std::size_t nodes = n.count("nodes_per_axis", 601);
    const double half = n.number("half_width", 3.0);
    m.model = detail::at_node(n, [&] {
      return std::make_shared<QuadratureDenoiser>(*m.potential, Vec{-half, -half}, Vec{half, half}, nodes);
    });
  } else {
    const auto c = n.at("checkpoint");
    const auto path = doc.resolve(c.string());
    m.model = detail::at_node(c, [&] { return std::make_shared<MlpDenoiser>(MlpDenoiser::load(path.string())); });
  }
  n.finish();
  return m;
}

/// Optimizer settings layered on `base`.
inline OptimizerConfig parse_optimizer(const std::optional<ConfigNode>& node, const NoiseSchedule& schedule,
                                       const OptimizerConfig& base, std::uint64_t seed) {
  OptimizerConfig c = base;
  c.divergence.seed = seed;
  if (!node) return c;
  const auto& n = *node;
  c.steps = n.integer("steps", c.steps);
  c.learning_rate = n.number("learning_rate", c.learning_rate);
  if (n.has("optimizer")) {
    c.optimizer = n.at("optimizer").choice({"adam", "adamw"}) == "adamw" ? OptimizerKind::adamw : OptimizerKind::adam;
  }
  c.weight_decay = n.number("weight_decay", c.weight_decay);
  c.n_gamma = n.count("n_gamma", c.n_gamma);
  if (const auto t = parse_time(n, schedule, "t_min", "t_min_log_snr")) {
    // A preset sharpness is relative to the anchor it was chosen for.
    if (base.floor_sharpness > 0 && base.t_min > 0) c.floor_sharpness = base.floor_sharpness * base.t_min / *t;
    c.t_min = *t;
  }
  if (n.has("floor")) {
    c.t_floor_mode =
        n.at("floor").choice({"softplus", "clamp"}) == "clamp" ? TimeFloorMode::clamp : TimeFloorMode::softplus;
  }
  c.floor_sharpness = n.number("floor_sharpness", c.floor_sharpness);
  c.nodes = n.count("nodes", c.nodes);
  if (n.has("parametrization")) {
    c.parametrization =
        n.at("parametrization").choice({"spline", "points"}) == "points" ? Parametrization::points : Parametrization::spline;
  }
  if (const auto t = parse_time(n, schedule, "t_peak", "t_peak_log_snr")) c.t_peak = *t;
  c.record_every = n.integer("record_every", c.record_every);
  c.divergence = parse_divergence(n.find("divergence"), seed);
  n.finish();
  detail::at_node(n, [&] {
    c.validate();
    return 0;
  });
  return c;
}

inline PiecewiseLinear parse_lambda(const ConfigNode& n) {
  if (n.is_number()) return PiecewiseLinear::constant(n.number());
  std::vector<std::pair<double, double>> knots;
  const auto list = n.at("knots");
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto k = list[i].vec();
    if (k.size() != 2) list[i].fail("knot must be [step, value]");
    knots.emplace_back(k[0], k[1]);
  }
  n.finish();
  return detail::at_node(list, [&] { return PiecewiseLinear(std::move(knots)); });
}

inline std::vector<PenaltySpec> parse_penalties(const std::optional<ConfigNode>& node, const NoiseSchedule& schedule) {
  std::vector<PenaltySpec> out;
  if (!node) return out;
  for (std::size_t i = 0; i < node->size(); ++i) {
    const auto n = (*node)[i];
    PenaltySpec p;
    p.kind = n.at("kind").choice({"low_variance", "region_avoid"}) == "region_avoid" ? PenaltyKind::region_avoid
                                                                                      : PenaltyKind::low_variance;
    if (p.kind == PenaltyKind::region_avoid) p.rho = std::numeric_limits<double>::infinity();
    p.rho = n.number("rho", p.rho);
    p.lambda_schedule = n.has("lambda") ? parse_lambda(n.at("lambda")) : PiecewiseLinear::constant(1.0);
    if (p.kind == PenaltyKind::region_avoid) p.z_star = parse_point(n.at("z_star"), schedule);
    n.finish();
    out.push_back(std::move(p));
  }
  return out;
}

inline TpsConfig parse_tps(const std::optional<ConfigNode>& node, std::uint64_t seed, unsigned threads) {
  TpsConfig c;
  c.seed = seed;
  c.threads = threads;
  if (!node) return c;
  const auto& n = *node;
  c.langevin_steps = n.integer("langevin_steps", c.langevin_steps);
  c.dt = n.number("dt", c.dt);
  c.n_paths = n.count("n_paths", c.n_paths);
  c.burn_in = n.integer("burn_in", c.burn_in);
  c.noise_scale = n.number("noise_scale", c.noise_scale);
  n.finish();
  return c;
}

inline TrainConfig parse_train(const std::optional<ConfigNode>& node, std::uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  if (!node) return c;
  const auto& n = *node;
  c.steps = n.integer("steps", c.steps);
  c.batch = n.integer("batch", c.batch);
  c.learning_rate = n.number("learning_rate", c.learning_rate);
  c.weight_decay = n.number("weight_decay", c.weight_decay);
  c.sigma_data = n.number("sigma_data", c.sigma_data);
  if (const auto a = n.find("arch")) {
    c.arch.hidden = a->integer("hidden", c.arch.hidden);
    c.arch.layers = a->integer("layers", c.arch.layers);
    c.arch.emb = a->integer("emb", c.arch.emb);
    a->finish();
  }
  n.finish();
  return c;
}

inline OdeMethod parse_method(const ConfigNode& n) {
  return n.choice({"euler", "heun"}) == "heun" ? OdeMethod::heun : OdeMethod::euler;
}

}  // namespace stgeo
