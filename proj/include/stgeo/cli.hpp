#pragma once

// Experiment driver behind the stgeo command-line tool. Each subcommand reads
// one JSON run-config and writes CSV / JSON / SVG artifacts into --out.
// Exit codes: 0 success, 1 threshold check failed, 2 config or domain error,
// 3 numerical failure.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stgeo/config.hpp"
#include "stgeo/diffed.hpp"
#include "stgeo/io.hpp"
#include "stgeo/svg.hpp"

namespace stgeo {

struct CliOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::optional<unsigned> threads;
  std::optional<double> threshold;
};

/// Raised when a run completes but fails its requested threshold check.
class ThresholdFailed : public std::runtime_error {
 public:
  explicit ThresholdFailed(const std::string& what) : std::runtime_error(what) {}
};

namespace cli {

namespace fs = std::filesystem;

struct Run {
  ConfigDocument doc;
  ConfigNode root;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  fs::path out;
  std::optional<double> threshold;
  std::ostream& log;

  Run(const CliOptions& o, const std::string& command, std::ostream& log_stream)
      : doc(ConfigDocument::load(o.config)), root(doc.root()), out(o.out), threshold(o.threshold), log(log_stream) {
    if (!root.is_object()) root.fail("run-config must be a JSON object");
    if (const auto c = root.find("command"); c && c->string() != command) {
      c->fail("config is for '" + c->string() + "', not '" + command + "'");
    }
    root.ignore("description");
    root.ignore("seed");
    root.ignore("threads");
    seed = o.seed ? *o.seed : static_cast<std::uint64_t>(root.has("seed") ? root.at("seed").count() : 0);
    threads = o.threads ? *o.threads : static_cast<unsigned>(root.count("threads", 1));
    if (threads == 0) threads = 1;
    fs::create_directories(out);
  }

  void write(const std::string& name, const std::string& content) const { write_file(out / name, content); }
  void write(const std::string& name, const nlohmann::ordered_json& j) const { write_json(out / name, j); }
};

inline double span_lo(double lo, double hi) { return lo - 0.1 * std::max(hi - lo, 1.0); }
inline double span_hi(double lo, double hi) { return hi + 0.1 * std::max(hi - lo, 1.0); }

/// Density / landscape backdrop for plots in data space or (t, x) space.
inline std::function<double(double, double)> backdrop(const ModelSpec& m, const NoiseSchedule& schedule, bool spacetime,
                                                      double t_fixed) {
  if (m.mixture) {
    const auto q = *m.mixture;
    if (spacetime) {
      return [q, schedule](double t, double x) {
        if (!(t > 0) || t > schedule.T) return std::numeric_limits<double>::quiet_NaN();
        const Vec v{x};
        return gmm_log_density<double>(q, schedule, v, t);
      };
    }
    return [q, schedule, t_fixed](double x, double y) {
      const Vec v{x, y};
      return gmm_log_density<double>(q, schedule, v, t_fixed);
    };
  }
  if (m.potential && !spacetime) {
    const auto u = *m.potential;
    return [u](double x, double y) { return -std::min(u.energy(Vec{x, y}), 6.0); };
  }
  return {};
}

/// Plots spacetime curves: (t, x) for D = 1, the data-space projection for D = 2.
inline std::optional<std::string> plot_curves(const ModelSpec& m, const NoiseSchedule& schedule,
                                              const std::vector<std::pair<std::string, DiscretizedCurve>>& curves) {
  if (curves.empty() || curves.front().second.points.empty()) return std::nullopt;
  const std::size_t d = curves.front().second.points.front().dim();
  if (d > 2) return std::nullopt;
  static const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  double lo[2] = {INFINITY, INFINITY}, hi[2] = {-INFINITY, -INFINITY}, t_lo = INFINITY;
  for (const auto& [name, c] : curves) {
    for (const auto& p : c.points) {
      const double v[2] = {d == 1 ? p.t : p.x[0], d == 1 ? p.x[0] : p.x[1]};
      for (int i = 0; i < 2; ++i) {
        lo[i] = std::min(lo[i], v[i]);
        hi[i] = std::max(hi[i], v[i]);
      }
      t_lo = std::min(t_lo, p.t);
    }
  }
  const bool spacetime = d == 1;
  const double x0 = spacetime ? 0.0 : span_lo(lo[0], hi[0]);
  const double x1 = spacetime ? schedule.T : span_hi(lo[0], hi[0]);
  SvgPlot plot(x0, x1, span_lo(lo[1], hi[1]), span_hi(lo[1], hi[1]), spacetime ? "t" : "x_1", spacetime ? "x" : "x_2");
  if (auto f = backdrop(m, schedule, spacetime, t_lo)) plot.heatmap(f);
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto& [name, c] = curves[k];
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : c.points) pts.emplace_back(spacetime ? p.t : p.x[0], spacetime ? p.x[0] : p.x[1]);
    const std::string color = colors[k % 6];
    plot.polyline(pts, color);
    plot.marker(pts.front().first, pts.front().second, color);
    plot.marker(pts.back().first, pts.back().second, color);
    plot.legend(name, color);
  }
  return plot.str();
}

inline std::string energy_trace_csv(const GeodesicResult& r, std::size_t n_terms) {
  std::vector<std::string> header{"step", "energy"};
  for (std::size_t i = 0; i < n_terms; ++i) header.push_back("penalty_" + std::to_string(i + 1));
  CsvWriter w(std::move(header));
  for (std::size_t k = 0; k < r.energy_trace.size(); ++k) {
    std::vector<double> row{static_cast<double>(r.trace_steps[k]), r.energy_trace[k]};
    for (std::size_t i = 0; i < n_terms; ++i) row.push_back(r.term_traces[i][k]);
    w.row(row);
  }
  return w.str();
}

inline int cmd_geodesic(Run& run) {
  const auto& root = run.root;
  const auto schedule = parse_schedule(root.find("schedule"));
  const auto model = parse_model(root.at("model"), run.doc);
  const auto ends = root.at("endpoints");
  const auto a = parse_point(ends.at("a"), schedule);
  const auto b = parse_point(ends.at("b"), schedule);
  ends.finish();
  if (a.dim() != model.model->dim()) ends.at("a").fail("endpoint dimension differs from the model's");
  if (b.dim() != a.dim()) ends.at("b").fail("endpoint dimensions differ");
  const auto cfg = parse_optimizer(root.find("optimizer"), schedule, OptimizerConfig{}, run.seed);
  auto penalties = parse_penalties(root.find("penalties"), schedule);
  if (root.boolean("co_apply_low_variance", true)) penalties = with_default_low_variance(penalties, cfg.steps);
  const bool svg = root.boolean("svg", true);
  root.finish();

  const auto& m = *model.model;
  const auto r = penalties.empty() ? optimize_geodesic(m, schedule, a, b, cfg)
                                   : optimize_constrained(m, schedule, a, b, penalties, cfg);
  const auto curve = sample_curve(schedule, r.curve, cfg);
  const auto straight = straight_segment(a, b, cfg.n_gamma);
  const auto len = curve_length(m, schedule, curve, cfg.divergence);

  nlohmann::ordered_json rep;
  rep["backend"] = model.backend;
  rep["a"] = to_json(a);
  rep["b"] = to_json(b);
  rep["n_gamma"] = cfg.n_gamma;
  rep["steps"] = cfg.steps;
  rep["initial_energy"] = r.initial_energy;
  rep["final_energy"] = r.final_energy;
  rep["straight_energy"] = curve_energy(m, schedule, straight, cfg.divergence);
  rep["length"] = len.length;
  rep["clamped_segments"] = len.clamped;
  rep["final_penalties"] = r.final_terms;
  double t_max = 0.0;
  for (const auto& p : curve.points) t_max = std::max(t_max, p.t);
  rep["max_t"] = t_max;
  rep["min_log_snr"] = schedule.log_snr(t_max);
  rep["nodes"] = r.curve.nodes();

  run.write("curve.csv", curve_csv(schedule, curve));
  run.write("energy_trace.csv", energy_trace_csv(r, penalties.size()));
  run.write("geodesic.json", rep);
  if (svg) {
    if (auto s = plot_curves(model, schedule, {{"geodesic", curve}, {"straight", straight}})) run.write("curve.svg", *s);
  }
  run.log << "geodesic: energy " << r.initial_energy << " -> " << r.final_energy << " (straight "
          << rep["straight_energy"].get<double>() << "), artifacts in " << run.out.string() << "\n";
  return 0;
}

inline int cmd_pfode(Run& run) {
  const auto& root = run.root;
  const auto schedule = parse_schedule(root.find("schedule"));
  const auto model = parse_model(root.at("model"), run.doc);
  const auto starts = parse_vec_list(root.at("starts"));
  const double t_start = parse_time(root, schedule, "t_start", "t_start_log_snr").value_or(schedule.T);
  const auto t_end = parse_time(root, schedule, "t_end", "t_end_log_snr");
  if (!t_end) root.fail("missing 't_end' or 't_end_log_snr'");
  const int steps = root.integer("steps", 512);
  const auto method = root.has("method") ? parse_method(root.at("method")) : OdeMethod::euler;
  OptimizerConfig base;
  base.nodes = 10;
  base.n_gamma = 512;
  base.steps = 2000;
  base.learning_rate = 0.01;
  base.optimizer = OptimizerKind::adamw;
  const auto cfg = parse_optimizer(root.find("optimizer"), schedule, base, run.seed);
  const bool svg = root.boolean("svg", true);
  root.finish();

  const auto& m = *model.model;
  const auto score = score_fn(m, schedule);
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  std::vector<std::pair<std::string, DiscretizedCurve>> plots;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    if (starts[k].size() != m.dim()) root.at("starts")[k].fail("start dimension differs from the model's");
    const auto traj = solve_pf_ode(score, schedule, starts[k], t_start, *t_end, steps, method);
    const double e_ode = curve_energy(m, schedule, as_curve(traj), cfg.divergence);
    const auto geo = optimize_geodesic(m, schedule, traj.front(), traj.back(), cfg);
    const auto curve = sample_curve(schedule, geo.curve, cfg);
    run.write("trajectory_" + std::to_string(k) + ".csv", trajectory_csv(traj));
    run.write("geodesic_" + std::to_string(k) + ".csv", curve_csv(schedule, curve));
    runs.push_back({{"x_start", starts[k]},
                    {"x_end", traj.back().x},
                    {"pf_ode_energy", e_ode},
                    {"geodesic_energy", geo.final_energy},
                    {"energy_ratio", geo.final_energy / e_ode}});
    plots.emplace_back("pf-ode " + std::to_string(k), as_curve(traj));
    plots.emplace_back("geodesic " + std::to_string(k), curve);
    run.log << "pfode: start " << k << " PF-ODE energy " << e_ode << ", geodesic " << geo.final_energy << "\n";
  }
  run.write("pfode.json", nlohmann::ordered_json{{"backend", model.backend}, {"steps", steps}, {"runs", runs}});
  if (svg) {
    if (auto s = plot_curves(model, schedule, plots)) run.write("pfode.svg", *s);
  }
  return 0;
}

inline int cmd_diffed(Run& run) {
  const auto& root = run.root;
  const auto schedule = parse_schedule(root.find("schedule"));
  const auto model = parse_model(root.at("model"), run.doc);
  const auto points = parse_vec_list(root.at("points"));
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != model.model->dim()) root.at("points")[i].fail("point dimension differs from the model's");
  }
  const auto cfg = parse_optimizer(root.find("optimizer"), schedule, diffed_default_config(schedule), run.seed);
  root.finish();

  const auto d = diffed_matrix(*model.model, schedule, points, cfg, run.threads);
  std::vector<std::string> header{"point"};
  for (std::size_t j = 0; j < points.size(); ++j) header.push_back("d_" + std::to_string(j));
  CsvWriter w(std::move(header));
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::vector<double> row{static_cast<double>(i)};
    row.insert(row.end(), d[i].begin(), d[i].end());
    w.row(row);
  }
  run.write("distances.csv", w.str());
  run.write("diffed.json", nlohmann::ordered_json{
                               {"backend", model.backend}, {"t_min", cfg.t_min}, {"points", points}, {"distances", d}});
  run.log << "diffed: " << points.size() << "x" << points.size() << " distance matrix written to "
          << (run.out / "distances.csv").string() << "\n";
  return 0;
}

inline nlohmann::ordered_json summary_json(const PathsSummary& s) {
  return {{"max_energy_mean", s.max_energy_mean},
          {"max_energy_std", s.max_energy_std},
          {"n_energy_evals", s.n_energy_evals},
          {"total_energy_evals", s.total_energy_evals},
          {"n_paths", s.paths.size()}};
}

inline int cmd_tps(Run& run) {
  const auto& root = run.root;
  const auto schedule = parse_schedule(root.find("schedule"));
  const auto model_node = root.at("model");
  const auto model = parse_model(model_node, run.doc);
  if (!model.potential) model_node.at("backend").fail("tps needs a Boltzmann backend (double_well)");
  const auto& u = *model.potential;
  const Vec x_a = root.at("x_a").vec(), x_b = root.at("x_b").vec();
  if (x_a.size() != u.dim || x_b.size() != u.dim) root.at("x_a").fail("endpoints must match the potential dimension");
  OptimizerConfig base;
  base.t_min = schedule.t_of_logsnr(4.0);
  const auto cfg = parse_optimizer(root.find("optimizer"), schedule, base, run.seed);
  const auto tcfg = parse_tps(root.find("tps"), run.seed, run.threads);
  const bool baseline = root.boolean("baseline", true);
  const bool bound = root.boolean("lower_bound", u.dim == 2);
  const std::size_t keep = root.count("write_paths", 3);
  const std::size_t stride = std::max<std::size_t>(1, root.count("path_stride", 64));
  const bool svg = root.boolean("svg", true);
  root.finish();

  const auto geo = optimize_geodesic(*model.model, schedule, x_a, x_b, cfg);
  const auto curve = sample_curve(schedule, geo.curve, cfg);
  const auto chains = sample_transition_paths(u, curve, schedule, tcfg);
  const auto summary = report_paths(u, chains);

  auto rep = summary_json(summary);
  rep["n_states"] = chains.front().states.size();
  rep["geodesic_energy"] = geo.final_energy;
  rep["t_min"] = cfg.t_min;
  if (bound) rep["lower_bound"] = lower_bound_max_energy(u, x_a, x_b, {});
  if (baseline) {
    const auto line = straight_segment({x_a, cfg.t_min}, {x_b, cfg.t_min}, cfg.n_gamma);
    rep["baseline"] = summary_json(report_paths(u, sample_transition_paths(u, line, schedule, tcfg)));
  }
  run.write("report.json", rep);
  run.write("curve.csv", curve_csv(schedule, curve));

  std::vector<std::string> header{"path", "state", "curve_index"};
  for (std::size_t i = 0; i < u.dim; ++i) header.push_back("x_" + std::to_string(i + 1));
  CsvWriter w(std::move(header));
  for (std::size_t p = 0; p < std::min(keep, chains.size()); ++p) {
    const auto& ch = chains[p];
    for (std::size_t k = 0; k < ch.states.size(); ++k) {
      if (k % stride != 0 && k + 1 != ch.states.size()) continue;
      std::vector<double> row{static_cast<double>(p), static_cast<double>(k), static_cast<double>(ch.geodesic_index[k])};
      row.insert(row.end(), ch.states[k].begin(), ch.states[k].end());
      w.row(row);
    }
  }
  run.write("paths.csv", w.str());

  if (svg && u.dim == 2) {
    SvgPlot plot(-2, 2, -2, 2, "x_1", "x_2");
    plot.heatmap(backdrop(model, schedule, false, cfg.t_min));
    for (std::size_t p = 0; p < std::min(keep, chains.size()); ++p) {
      std::vector<std::pair<double, double>> pts;
      for (std::size_t k = 0; k < chains[p].states.size(); k += stride) pts.emplace_back(chains[p].states[k][0], chains[p].states[k][1]);
      plot.polyline(pts, "#1f77b4", 1.0, 0.6);
    }
    std::vector<std::pair<double, double>> gp;
    for (const auto& pt : curve.points) gp.emplace_back(pt.x[0], pt.x[1]);
    plot.polyline(gp, "#d62728", 2.5);
    plot.legend("geodesic (data projection)", "#d62728");
    plot.legend("transition paths", "#1f77b4");
    run.write("tps.svg", plot.str());
  }
  run.log << "tps: MaxEnergy " << summary.max_energy_mean << " +- " << summary.max_energy_std << " over "
          << summary.paths.size() << " paths, " << summary.n_energy_evals << " energy evaluations each\n";
  return 0;
}

inline int cmd_pullback(Run& run) {
  const auto& root = run.root;
  const auto schedule = parse_schedule(root.find("schedule"));
  const auto model = parse_model(root.at("model"), run.doc);
  const Vec x_a = root.at("x_a").vec(), x_b = root.at("x_b").vec();
  if (x_a.size() != model.model->dim()) root.at("x_a").fail("endpoint dimension differs from the model's");
  const int steps = root.integer("steps", 512);
  PullbackOptions opts;
  if (root.has("method")) opts.method = parse_method(root.at("method"));
  opts.t_data = root.number("t_data", opts.t_data);
  opts.n_interp = root.integer("n_interp", opts.n_interp);
  const auto cfg_threshold = root.has("threshold") ? std::optional<double>(root.at("threshold").number()) : std::nullopt;
  root.finish();
  const auto threshold = run.threshold ? run.threshold : cfg_threshold;

  const double dev = pullback_straightness(score_fn(*model.model, schedule), schedule, x_a, x_b, steps, opts);
  nlohmann::ordered_json rep{{"max_deviation", dev}, {"steps", steps}};
  if (threshold) {
    rep["threshold"] = *threshold;
    rep["passed"] = dev <= *threshold;
  }
  run.write("pullback.json", rep);
  run.log << "pullback: max deviation " << dev << "\n";
  if (threshold && !(dev <= *threshold)) {
    throw ThresholdFailed("pullback: max deviation " + format_double(dev) + " exceeds threshold " +
                          format_double(*threshold));
  }
  return 0;
}

inline int cmd_train(Run& run) {
  const auto& root = run.root;
  const auto schedule = parse_schedule(root.find("schedule"));
  const auto data = root.at("data");
  const auto q = data.has("mixture") ? parse_mixture(data.at("mixture")) : GaussianMixture::paper_1d();
  const std::size_t n = data.count("n_samples", 100000);
  data.finish();
  if (n == 0) data.at("n_samples").fail("need at least one sample");
  const auto tcfg = parse_train(root.find("train"), run.seed);
  root.finish();

  Rng rng = make_rng(run.seed);
  NormalSampler normal;
  std::vector<Vec> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) samples.push_back(q.sample(rng, normal));
  const auto r = train_denoiser(samples, schedule, tcfg);

  CsvWriter w({"step", "loss"});
  for (std::size_t k = 0; k < r.loss_trace.size(); ++k) w.row({static_cast<double>(k), r.loss_trace[k]});
  run.write("loss.csv", w.str());
  r.model.save((run.out / "model.json").string());

  // Held-out check against the analytic mixture denoiser on noised data samples.
  const GmmDenoiser analytic(q);
  Rng vrng = make_rng(run.seed, 1);
  double mse = 0.0;
  int count = 0;
  for (int j = 1; j <= 9; ++j) {
    const double t = schedule.T * j / 10.0;
    const auto [alpha, sigma] = schedule.alpha_sigma(t);
    for (int k = 0; k < 64; ++k) {
      Vec x = q.sample(vrng, normal);
      for (double& v : x) v = alpha * v + sigma * normal(vrng);
      const auto a = analytic.denoise(schedule, x, t), b = r.model.denoise(schedule, x, t);
      for (std::size_t i = 0; i < x.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
      ++count;
    }
  }
  double tail = 0.0;
  const std::size_t last = std::min<std::size_t>(100, r.loss_trace.size());
  for (std::size_t k = r.loss_trace.size() - last; k < r.loss_trace.size(); ++k) tail += r.loss_trace[k];
  run.write("train.json", nlohmann::ordered_json{{"steps", tcfg.steps},
                                                 {"n_samples", n},
                                                 {"sigma_data", r.model.sigma_data()},
                                                 {"final_loss", tail / static_cast<double>(last)},
                                                 {"validation_mse", mse / count},
                                                 {"checkpoint", "model.json"}});
  run.log << "train: final loss " << tail / static_cast<double>(last) << ", validation MSE vs analytic "
          << mse / count << ", checkpoint " << (run.out / "model.json").string() << "\n";
  return 0;
}

}  // namespace cli

/// Entry point shared by the executable and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Spacetime Fisher-Rao geometry of diffusion denoising distributions"};
  app.require_subcommand(1);
  CliOptions opts;
  using Handler = int (*)(cli::Run&);
  const std::vector<std::tuple<std::string, std::string, Handler>> commands{
      {"geodesic", "optimize a spacetime geodesic (optionally constrained)", cli::cmd_geodesic},
      {"pfode", "compare PF-ODE trajectories with geodesics between their endpoints", cli::cmd_pfode},
      {"diffed", "diffusion edit distance matrix between data points", cli::cmd_diffed},
      {"tps", "transition path sampling along a geodesic", cli::cmd_tps},
      {"pullback", "decode-straightness check of PF-ODE pullback geodesics", cli::cmd_pullback},
      {"train", "train the MLP denoiser on mixture samples", cli::cmd_train}};
  std::vector<CLI::App*> subs;
  for (const auto& [name, help, fn] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config, "run-config JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", opts.seed, "RNG seed (overrides the config)");
    sub->add_option("--out", opts.out, "output directory")->capture_default_str();
    sub->add_option("--threads", opts.threads, "worker threads (overrides the config)");
    if (name == "pullback") sub->add_option("--threshold", opts.threshold, "fail (exit 1) above this deviation");
    subs.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    const auto& [name, help, fn] = commands[i];
    try {
      cli::Run run(opts, name, out);
      return fn(run);
    } catch (const ThresholdFailed& e) {
      err << e.what() << "\n";
      return 1;
    } catch (const ConfigError& e) {
      err << "config error at " << e.what() << "\n";
      return 2;
    } catch (const DomainError& e) {
      err << "error: " << e.what() << "\n";
      return 2;
    } catch (const CapabilityError& e) {
      err << "error: " << e.what() << "\n";
      return 2;
    } catch (const std::filesystem::filesystem_error& e) {
      err << "error: " << e.what() << "\n";
      return 2;
    } catch (const NumericalError& e) {
      err << "numerical failure: " << e.what() << "\n";
      return 3;
    } catch (const std::exception& e) {
      err << "failure: " << e.what() << "\n";
      return 3;
    }
  }
  return 2;
}

}  // namespace stgeo
