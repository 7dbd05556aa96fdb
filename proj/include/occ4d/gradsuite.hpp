#pragma once

// Finite-difference verification of every differentiable path: single
// operators, the slice -> splat -> CE + Lovasz chain for each fitting
// variant, the refiner and the dynamics heads. A deliberately wrong adjoint
// serves as negative control.

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "occ4d/diff/gradcheck.hpp"
#include "occ4d/diff/losses.hpp"
#include "occ4d/dynamics.hpp"
#include "occ4d/optimize.hpp"
#include "occ4d/refiner.hpp"

namespace occ4d::gradsuite {

using diff::Graph;
using diff::ParameterStore;
using diff::Tensor;
using diff::Var;

struct SuiteOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  std::uint64_t seed = 1;
  bool inject_fault = false;  // checks the corrupted operator like any other
  /// Only entries whose name contains this substring run (all if empty).
  std::string only;
};

struct SuiteEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
  bool passed = false;
};

struct SuiteReport {
  std::vector<SuiteEntry> entries;
  SuiteEntry control;     // must fail
  bool control_detected = false;
  bool passed = false;    // every entry passed and the control was caught
};

namespace detail {

inline Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

inline Var probe(Graph& g, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor w = Tensor::zeros_like(y.value());
  for (auto& v : w.values()) v = n(rng);
  return diff::sum(diff::mul(y, g.constant(w)));
}

/// x^2 whose adjoint is scaled by 1.1.
inline Var corrupted_square(Var x) {
  Tensor y = x.value();
  for (auto& v : y.values()) v *= v;
  return x.graph->record(std::move(y), {x}, [x](Graph& g, const Tensor& gy) {
    Tensor gx = Tensor::zeros_like(x.value());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = 2.2 * x.value()[i] * gy[i];
    g.accumulate(x, gx);
  });
}

struct Case {
  std::string name;
  std::function<void(ParameterStore&, std::mt19937_64&)> init;
  diff::LossBuilder build;
};

/// Packed structured Gaussians in a store, spread over a small grid.
inline void init_structured(ParameterStore& s, std::mt19937_64& rng, std::size_t n, int classes) {
  s.add("mu_s", random_tensor(rng, n, 3, -0.8, 0.8));
  s.add("mu_t", random_tensor(rng, n, 1, 0.8, 1.6));
  s.add("ls", random_tensor(rng, n, 3, -0.6, -0.1));
  s.add("quat", random_tensor(rng, n, 4, -1.0, 1.0));
  s.add("lst", random_tensor(rng, n, 1, -0.3, 0.3));
  s.add("op", random_tensor(rng, n, 1, -1.0, 1.0));
  s.add("logits", random_tensor(rng, n, static_cast<std::size_t>(classes), -1.0, 1.0));
  s.add("vdyn", random_tensor(rng, n, 2, -0.5, 0.5));
  s.add("vscene", random_tensor(rng, 1, 2, -0.5, 0.5));
}

inline std::vector<Case> cases(const SuiteOptions& opts) {
  std::vector<Case> out;
  auto op = [&](std::string name, std::function<void(ParameterStore&, std::mt19937_64&)> init,
                diff::LossBuilder build) { out.push_back({std::move(name), std::move(init), std::move(build)}); };
  auto two = [](std::size_t r, std::size_t c) {
    return [r, c](ParameterStore& s, std::mt19937_64& rng) {
      s.add("a", random_tensor(rng, r, c, 0.2, 1.5));
      s.add("b", random_tensor(rng, r, c, -1.5, -0.2));
    };
  };
  op("add_sub_mul_scale", two(3, 4), [](Graph& g, ParameterStore& s) {
    Var a = g.parameter(s, "a"), b = g.parameter(s, "b");
    return probe(g, diff::mul(diff::add(a, diff::scale(b, 0.7)), diff::sub(a, b)), 1);
  });
  op("exp_sigmoid_relu", two(3, 4), [](Graph& g, ParameterStore& s) {
    Var a = g.parameter(s, "a"), b = g.parameter(s, "b");
    return probe(g, diff::add(diff::exp(b), diff::mul(diff::sigmoid(a), diff::relu(a))), 2);
  });
  op("matmul_linear_transpose",
     [](ParameterStore& s, std::mt19937_64& rng) {
       s.add("x", random_tensor(rng, 3, 4, -1, 1));
       s.add("w", random_tensor(rng, 4, 5, -1, 1));
       s.add("b", random_tensor(rng, 1, 5, -1, 1));
     },
     [](Graph& g, ParameterStore& s) {
       Var y = diff::linear(g.parameter(s, "x"), g.parameter(s, "w"), g.parameter(s, "b"));
       return probe(g, diff::matmul(diff::transpose(y), y), 3);
     });
  op("add_row_mul_col",
     [](ParameterStore& s, std::mt19937_64& rng) {
       s.add("x", random_tensor(rng, 4, 3, -1, 1));
       s.add("row", random_tensor(rng, 1, 3, -1, 1));
       s.add("col", random_tensor(rng, 4, 1, -1, 1));
     },
     [](Graph& g, ParameterStore& s) {
       return probe(g, diff::mul_col(diff::add_row(g.parameter(s, "x"), g.parameter(s, "row")), g.parameter(s, "col")), 4);
     });
  op("layer_norm", [](ParameterStore& s, std::mt19937_64& rng) { s.add("x", random_tensor(rng, 3, 6, -2, 2)); },
     [](Graph& g, ParameterStore& s) { return probe(g, diff::layer_norm(g.parameter(s, "x")), 5); });
  op("softmax", [](ParameterStore& s, std::mt19937_64& rng) { s.add("x", random_tensor(rng, 3, 5, -2, 2)); },
     [](Graph& g, ParameterStore& s) { return probe(g, diff::softmax(g.parameter(s, "x"), 1), 6); });
  op("normalize_rows", [](ParameterStore& s, std::mt19937_64& rng) { s.add("x", random_tensor(rng, 3, 4, 0.2, 2)); },
     [](Graph& g, ParameterStore& s) { return probe(g, diff::normalize_rows(g.parameter(s, "x")), 7); });
  op("columns_concat_reshape", two(4, 3), [](Graph& g, ParameterStore& s) {
    Var a = g.parameter(s, "a"), b = g.parameter(s, "b");
    Var c = diff::concat_cols({diff::columns(a, 1, 3), b});
    return probe(g, diff::reshape(c, {2, 10}), 8);
  });
  op("mlp",
     [](ParameterStore& s, std::mt19937_64& rng) {
       diff::init_mlp(s, "m", {4, 6, 3}, rng);
       s.add("x", random_tensor(rng, 5, 4, -1, 1));
     },
     [](Graph& g, ParameterStore& s) { return probe(g, diff::apply_mlp(g, s, "m", g.parameter(s, "x")), 9); });
  op("attention",
     [](ParameterStore& s, std::mt19937_64& rng) {
       diff::init_attention(s, "att", 4, rng);
       s.add("q", random_tensor(rng, 3, 4, -1, 1));
       s.add("kv", random_tensor(rng, 5, 4, -1, 1));
     },
     [](Graph& g, ParameterStore& s) {
       Var kv = g.parameter(s, "kv");
       return probe(g, diff::mh_attention(g, s, "att", g.parameter(s, "q"), kv, kv, 2), 10);
     });
  op("covariance",
     [](ParameterStore& s, std::mt19937_64& rng) {
       s.add("ls", random_tensor(rng, 4, 3, -0.5, 0.5));
       s.add("quat", random_tensor(rng, 4, 4, -1, 1));
     },
     [](Graph& g, ParameterStore& s) {
       return probe(g, diff::covariance(g.parameter(s, "ls"), g.parameter(s, "quat")), 11);
     });
  op("slice_means_weights", [](ParameterStore& s, std::mt19937_64& rng) { init_structured(s, rng, 4, 4); },
     [](Graph& g, ParameterStore& s) {
       Var v = diff::embed_planar(g.parameter(s, "vdyn"));
       Var m = diff::slice_means(g.parameter(s, "mu_s"), g.parameter(s, "mu_t"), v, 1.3);
       Var w = diff::slice_weights(g.parameter(s, "op"), g.parameter(s, "mu_t"), g.parameter(s, "lst"), 1.3);
       return diff::add(probe(g, m, 12), probe(g, w, 13));
     });
  op("compose_velocity_class_mass", [](ParameterStore& s, std::mt19937_64& rng) { init_structured(s, rng, 4, 4); },
     [](Graph& g, ParameterStore& s) {
       Var alpha = diff::class_mass(diff::softmax(g.parameter(s, "logits"), 1), default_dynamic_classes());
       return probe(g, diff::compose_velocity(g.parameter(s, "vscene"), alpha, g.parameter(s, "vdyn")), 14);
     });
  op("joint_covariance",
     [](ParameterStore& s, std::mt19937_64& rng) {
       s.add("ls4", random_tensor(rng, 3, 4, -0.5, 0.5));
       s.add("ql", random_tensor(rng, 3, 4, -1, 1));
       s.add("qr", random_tensor(rng, 3, 4, -1, 1));
     },
     [](Graph& g, ParameterStore& s) {
       return probe(g, diff::joint_covariance(g.parameter(s, "ls4"), g.parameter(s, "ql"), g.parameter(s, "qr")), 15);
     });
  op("condition_slices",
     [](ParameterStore& s, std::mt19937_64& rng) {
       s.add("mu_s", random_tensor(rng, 3, 3, -1, 1));
       s.add("mu_t", random_tensor(rng, 3, 1, 0.5, 2.5));
       s.add("ls4", random_tensor(rng, 3, 4, -0.5, 0.5));
       s.add("ql", random_tensor(rng, 3, 4, -1, 1));
       s.add("qr", random_tensor(rng, 3, 4, -1, 1));
       s.add("op", random_tensor(rng, 3, 1, -1, 1));
     },
     [](Graph& g, ParameterStore& s) {
       Var cov4 = diff::joint_covariance(g.parameter(s, "ls4"), g.parameter(s, "ql"), g.parameter(s, "qr"));
       return probe(g, diff::condition_slices(g.parameter(s, "mu_s"), g.parameter(s, "mu_t"), cov4,
                                              g.parameter(s, "op"), 1.7),
                    16);
     });
  const GridSpec small{Vec3(-1.6, -1.6, -1.6), {8, 8, 8}, 0.4, 4};
  op("splat_field", [](ParameterStore& s, std::mt19937_64& rng) { init_structured(s, rng, 4, 4); },
     [small](Graph& g, ParameterStore& s) {
       Var cov = diff::covariance(g.parameter(s, "ls"), g.parameter(s, "quat"));
       Var m = diff::slice_means(g.parameter(s, "mu_s"), g.parameter(s, "mu_t"),
                                 diff::embed_planar(g.parameter(s, "vdyn")), 1.2);
       Var w = diff::slice_weights(g.parameter(s, "op"), g.parameter(s, "mu_t"), g.parameter(s, "lst"), 1.2);
       Var field = diff::splat_field(diff::concat_cols({m, cov, w}), diff::softmax(g.parameter(s, "logits"), 1),
                                     small, 10.0);
       return probe(g, field, 17);
     });
  op("cross_entropy_lovasz",
     [](ParameterStore& s, std::mt19937_64& rng) { s.add("x", random_tensor(rng, 30, 5, -2, 2)); },
     [](Graph& g, ParameterStore& s) {
       std::vector<std::uint8_t> labels(30);
       for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>((i * 7) % 5);
       static const std::vector<double> weights{1.0, 2.0, 1.0, 0.5, 1.0};
       Var p = diff::softmax(g.parameter(s, "x"), 1);
       return diff::add(diff::cross_entropy_loss(p, labels, weights),
                        diff::lovasz_softmax_loss(p, labels));
     });
  op("occupancy_distribution",
     [](ParameterStore& s, std::mt19937_64& rng) { s.add("x", random_tensor(rng, 6, 5, 0.05, 0.9)); },
     [](Graph& g, ParameterStore& s) { return probe(g, diff::occupancy_distribution(g.parameter(s, "x")), 18); });
  op("mse", two(4, 2), [](Graph& g, ParameterStore& s) {
    return diff::mse_loss(g.parameter(s, "a"), g.parameter(s, "b"));
  });
  op("sample_field",
     [](ParameterStore& s, std::mt19937_64& rng) {
       Tensor a = random_tensor(rng, 5, 4, -1.3, 1.3);
       for (std::size_t q = 0; q < 5; ++q) a(q, 3) = 1.5 + 0.9 * a(q, 3);
       s.add("anchors", a);
     },
     [small, seed = opts.seed](Graph& g, ParameterStore& s) {
       static std::shared_ptr<refiner::FeatureField> field;
       if (!field) {
         field = std::make_shared<refiner::FeatureField>(small, std::vector<double>{0.0, 1.0, 2.0, 3.0}, 3);
         std::mt19937_64 frng(seed + 100);
         std::normal_distribution<double> n(0.0, 1.0);
         for (auto& v : field->values) v = n(frng);
       }
       return probe(g, refiner::sample_field(g.parameter(s, "anchors"), field), 19);
     });

  // Full occupancy objective of each fitting variant on 4 Gaussians / 8^3 grid.
  for (auto variant : {optimize::Variant::structured, optimize::Variant::unified_velocity,
                       optimize::Variant::full_4d_covariance}) {
    auto scenario = std::make_shared<Scenario>();
    scenario->name = "gradcheck";
    scenario->grid = small;
    scenario->timestamps = {0.5, 1.5};
    scenario->scene.boxes.push_back(
        SceneBox{Vec3(0.2, 0.0, 0.0), Vec3(1.2, 0.8, 0.8), 0.3, classes::car, Vec2(0.4, 0.0)});
    scenario->scene.boxes.push_back(
        SceneBox{Vec3(-0.8, 0.6, 0.0), Vec3(0.8, 0.8, 1.2), 0.0, classes::building, Vec2::Zero()});
    rasterize_scenario(*scenario);
    op("pipeline_" + optimize::variant_name(variant),
       [scenario, variant](ParameterStore& s, std::mt19937_64& rng) {
         optimize::FitConfig cfg;
         cfg.gaussians = 4;
         cfg.variant = variant;
         cfg.seed = rng();
         cfg.init_scale = 0.5;
         optimize::init_fit_params(s, cfg, *scenario);
         std::normal_distribution<double> n(0.0, 0.3);
         for (auto& e : s.entries()) {
           if (e.name == "gauss.mu_s") continue;
           for (auto& v : e.value.values()) v += n(rng);
         }
       },
       [scenario](Graph& g, ParameterStore& s) {
         auto gv = optimize::bind_fit_params(g, s, default_dynamic_classes());
         optimize::LossWeights w;
         return optimize::occupancy_loss(gv, scenario->gt, scenario->timestamps, scenario->grid, w, 10.0).loss;
       });
  }

  op("refiner",
     [](ParameterStore& s, std::mt19937_64& rng) {
       refiner::RefinerConfig cfg;
       cfg.dim = 4;
       cfg.bank = 2;
       cfg.queries = 3;
       cfg.hidden = 4;
       cfg.blocks = 1;
       refiner::init_refiner(s, cfg, rng);
       std::normal_distribution<double> n(0.0, 0.1);
       for (auto& e : s.entries()) {
         if (e.name.rfind("ref.b0.rect", 0) == 0) {
           for (auto& v : e.value.values()) v = n(rng);
         }
       }
       auto [anchors, feats] = refiner::init_anchors(cfg, GridSpec{Vec3(-1.6, -1.6, -1.6), {8, 8, 8}, 0.4, 4}, 3.0, rng());
       s.add("in.anchors", anchors);
       s.add("in.features", feats);
     },
     [small](Graph& g, ParameterStore& s) {
       refiner::RefinerConfig cfg;
       cfg.dim = 4;
       cfg.bank = 2;
       cfg.queries = 3;
       cfg.hidden = 4;
       cfg.blocks = 1;
       static std::shared_ptr<refiner::FeatureField> field;
       if (!field) {
         field = std::make_shared<refiner::FeatureField>(small, std::vector<double>{0.0, 1.5, 3.0}, 4);
         std::mt19937_64 frng(7);
         std::normal_distribution<double> n(0.0, 1.0);
         for (auto& v : field->values) v = n(frng);
       }
       const auto r = refiner::refine(g, s, cfg, field, g.parameter(s, "in.anchors"), g.parameter(s, "in.features"));
       const auto& h = r.heads;
       Var total = probe(g, h.mu_s, 20);
       std::uint64_t k = 21;
       for (Var v : {h.mu_t, h.log_scales, h.quat, h.log_sigma_t, h.opacity_logit, h.logits, h.v_dyn}) {
         total = diff::add(total, probe(g, v, k++));
       }
       return total;
     });
  op("dynamics",
     [](ParameterStore& s, std::mt19937_64& rng) {
       dynamics::DynamicsConfig cfg;
       cfg.dim = 4;
       cfg.hidden = 4;
       dynamics::init_dynamics(s, cfg, rng);
       s.add("features", random_tensor(rng, 3, 4, -1, 1));
     },
     [](Graph& g, ParameterStore& s) {
       dynamics::DynamicsConfig cfg;
       cfg.dim = 4;
       cfg.hidden = 4;
       static const auto history = straight_drive_scenario(3.0).history;
       Var f = g.parameter(s, "features");
       Var v = dynamics::scene_velocity(g, s, dynamics::encode_ego(g, s, history, dynamics::EgoRole::scene, cfg), f, cfg);
       // the planning branch only sees features through stop_gradient, so it
       // gets a fixed set here; its own parameters are still checked
       static std::mt19937_64 frng(40);
       static const Tensor fixed = random_tensor(frng, 3, 4, -1, 1);
       Var p = dynamics::plan(g, s, dynamics::encode_ego(g, s, history, dynamics::EgoRole::trajectory, cfg),
                              g.constant(fixed), cfg);
       return diff::add(probe(g, v, 30), probe(g, p, 31));
     });
  return out;
}

inline SuiteEntry run_case(const Case& c, const SuiteOptions& opts, std::uint64_t seed) {
  ParameterStore store;
  std::mt19937_64 rng(seed);
  c.init(store, rng);
  diff::GradCheckOptions go;
  go.step = opts.step;
  go.tolerance = opts.tolerance;
  const auto r = diff::finite_diff_check(c.build, store, go);
  return SuiteEntry{c.name, r.max_rel_error, r.worst_param, r.checked, r.passed};
}

inline Case control_case() {
  return Case{"negative_control_corrupted_adjoint",
              [](ParameterStore& s, std::mt19937_64& rng) { s.add("x", random_tensor(rng, 2, 3, 0.5, 1.5)); },
              [](Graph& g, ParameterStore& s) { return diff::sum(corrupted_square(g.parameter(s, "x"))); }};
}

}  // namespace detail

inline SuiteReport run_gradient_suite(const SuiteOptions& opts = {}) {
  SuiteReport report;
  std::uint64_t k = 0;
  for (const auto& c : detail::cases(opts)) {
    ++k;
    if (!opts.only.empty() && c.name.find(opts.only) == std::string::npos) continue;
    report.entries.push_back(detail::run_case(c, opts, opts.seed * 1000 + k));
  }
  report.control = detail::run_case(detail::control_case(), opts, opts.seed);
  report.control_detected = !report.control.passed;
  if (opts.inject_fault) report.entries.push_back(report.control);
  bool ok = report.control_detected;
  for (const auto& e : report.entries) ok = ok && e.passed;
  report.passed = ok;
  return report;
}

inline std::string format_report(const SuiteReport& r, double tolerance) {
  std::ostringstream os;
  os << "operator\tmax_rel_error\tworst_param\tchecked\tstatus\n";
  auto row = [&](const SuiteEntry& e, const char* status) {
    os << e.name << '\t' << std::setprecision(3) << std::scientific << e.max_rel_error << '\t'
       << (e.worst_param.empty() ? "-" : e.worst_param) << '\t' << e.checked << '\t' << status << '\n';
  };
  for (const auto& e : r.entries) row(e, e.passed ? "pass" : "FAIL");
  row(r.control, r.control_detected ? "control-detected" : "CONTROL-MISSED");
  os << std::defaultfloat << "tolerance " << tolerance << ": " << (r.passed ? "all passed" : "FAILED") << '\n';
  return os.str();
}

}  // namespace occ4d::gradsuite
