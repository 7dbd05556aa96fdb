#pragma once

// Occupancy objectives and fitting loops: direct per-scene optimization of
// a shared Gaussian set, its two ablation variants and toy end-to-end
// training of the refiner and planner.

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "occ4d/diff/adam.hpp"
#include "occ4d/diff/checkpoint.hpp"
#include "occ4d/diff/gaussian_ops.hpp"
#include "occ4d/diff/losses.hpp"
#include "occ4d/dynamics.hpp"
#include "occ4d/metrics.hpp"
#include "occ4d/refiner.hpp"
#include "occ4d/scenegen.hpp"
#include "occ4d/splat.hpp"

namespace occ4d::optimize {

using diff::Graph;
using diff::ParameterStore;
using diff::Tensor;
using diff::Var;

enum class Variant { structured, unified_velocity, full_4d_covariance };

inline Variant parse_variant(const std::string& s) {
  if (s == "structured") return Variant::structured;
  if (s == "unified_velocity") return Variant::unified_velocity;
  if (s == "full_4d_covariance") return Variant::full_4d_covariance;
  fail(ErrorKind::validation, "unknown variant '" + s +
                                  "' (expected structured, unified_velocity or full_4d_covariance)");
}

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::structured: return "structured";
    case Variant::unified_velocity: return "unified_velocity";
    case Variant::full_4d_covariance: return "full_4d_covariance";
  }
  return "?";
}

struct LossWeights {
  double lambda_ce = 6.0;
  double lambda_lov = 1.0;
  double lambda_plan = 1.0;
  std::vector<double> class_weights;  // C + 1 entries; empty means all ones
};

/// Graph handles of one Gaussian set. Either (log_scales, quat, log_sigma_t,
/// velocity) or a joint covariance is used for slicing.
struct GaussianVars {
  Var mu_s, mu_t, opacity_logit, logits;
  Var log_scales, quat, log_sigma_t, velocity;
  Var cov4;
  bool joint = false;
  std::optional<Var> cov3;  // cached R S S^T R^T
  std::optional<Var> probs;
};

inline Var class_probs(GaussianVars& gv) {
  if (!gv.probs) gv.probs = diff::softmax(gv.logits, 1);
  return *gv.probs;
}

/// Packed Q x 13 slices [mean(3), cov(9), weight] at time t.
inline Var slice_packed(GaussianVars& gv, double t) {
  if (gv.joint) return diff::condition_slices(gv.mu_s, gv.mu_t, gv.cov4, gv.opacity_logit, t);
  if (!gv.cov3) gv.cov3 = diff::covariance(gv.log_scales, gv.quat);
  Var mean = diff::slice_means(gv.mu_s, gv.mu_t, gv.velocity, t);
  Var weight = diff::slice_weights(gv.opacity_logit, gv.mu_t, gv.log_sigma_t, t);
  return diff::concat_cols({mean, *gv.cov3, weight});
}

struct OccupancyTerms {
  Var loss;
  std::vector<Var> fields;  // V x (C+1) [class_prob, occ] per timestamp
  std::vector<double> ce, lovasz;
};

/// Sum over timestamps of lambda_ce * CE + lambda_lov * Lovasz on the
/// (C+1)-way occupancy distribution of the splatted slices.
inline OccupancyTerms occupancy_loss(GaussianVars& gv, const std::vector<LabelGrid>& gt,
                                     const std::vector<double>& timestamps, const GridSpec& grid,
                                     const LossWeights& w, double cutoff = kDefaultCutoffSigma) {
  if (gt.size() != timestamps.size() || gt.empty()) {
    fail(ErrorKind::validation, "occupancy_loss: " + std::to_string(gt.size()) + " grids for " +
                                    std::to_string(timestamps.size()) + " timestamps");
  }
  std::vector<double> cw = w.class_weights;
  if (cw.empty()) cw.assign(static_cast<std::size_t>(grid.num_classes + 1), 1.0);
  Graph& g = *gv.mu_s.graph;
  OccupancyTerms out;
  std::optional<Var> total;
  for (std::size_t i = 0; i < timestamps.size(); ++i) {
    if (!(gt[i].spec == grid)) fail(ErrorKind::validation, "occupancy_loss: ground truth grid mismatch");
    Var field = diff::splat_field(slice_packed(gv, timestamps[i]), class_probs(gv), grid, cutoff);
    Var dist = diff::occupancy_distribution(field);
    Var ce = diff::cross_entropy_loss(dist, gt[i], cw);
    Var lov = diff::lovasz_softmax_loss(dist, gt[i]);
    out.ce.push_back(ce.value().item());
    out.lovasz.push_back(lov.value().item());
    Var term = diff::add(diff::scale(ce, w.lambda_ce), diff::scale(lov, w.lambda_lov));
    total = total ? diff::add(*total, term) : term;
    out.fields.push_back(field);
  }
  (void)g;
  out.loss = *total;
  return out;
}

/// L_occ + lambda_plan * L_plan.
inline Var total_loss(Var occ, Var plan, double lambda_plan) {
  return diff::add(occ, diff::scale(plan, lambda_plan));
}

inline SemanticOccupancyGrid field_to_grid(const Tensor& field, const GridSpec& spec) {
  SemanticOccupancyGrid grid(spec);
  const auto classes = static_cast<std::size_t>(spec.num_classes);
  for (std::size_t v = 0; v < spec.voxel_count(); ++v) {
    for (std::size_t c = 0; c < classes; ++c) grid.class_prob[v * classes + c] = field(v, c);
    grid.occ_prob[v] = field(v, classes);
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Direct fitting

struct FitConfig {
  std::uint64_t seed = 0;
  std::size_t gaussians = 128;
  int steps = 1000;    // length of the schedule
  int stop_after = -1;  // >= 0: halt once this many steps are done
  double lr = 1e-2;
  double min_lr = 0.0;
  Variant variant = Variant::structured;
  LossWeights weights;
  double cutoff = kDefaultCutoffSigma;
  double init_scale = 0.0;  // <= 0: one voxel
  double init_opacity_logit = 0.0;
  int log_every = 50;
  double target_loss = 0.0;  // > 0: stop once the loss reaches it
  std::vector<int> dynamic_classes = default_dynamic_classes();
  std::string checkpoint_out;
  int checkpoint_every = 0;
  std::string resume_from;
};

/// Registers the fit parameters of a variant in the store.
inline void init_fit_params(ParameterStore& store, const FitConfig& cfg, const Scenario& s) {
  const std::size_t n = cfg.gaussians;
  const std::size_t k = static_cast<std::size_t>(s.grid.num_classes);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 0.05);
  const Vec3 ext = s.grid.extent();
  Tensor mu_s = Tensor::matrix(n, 3), mu_t = Tensor::matrix(n, 1);
  for (std::size_t q = 0; q < n; ++q) {
    for (int a = 0; a < 3; ++a) mu_s(q, static_cast<std::size_t>(a)) = s.grid.origin[a] + u(rng) * ext[a];
    mu_t[q] = u(rng) * s.scene.horizon;
  }
  const double log_scale = std::log(cfg.init_scale > 0.0 ? cfg.init_scale : s.grid.voxel_size);
  Tensor quat = Tensor::matrix(n, 4);
  for (std::size_t q = 0; q < n; ++q) {
    quat(q, 0) = 1.0;
    for (std::size_t i = 1; i < 4; ++i) quat(q, i) = jitter(rng);
  }
  Tensor logits = Tensor::matrix(n, k);
  for (auto& v : logits.values()) v = jitter(rng);
  store.add("gauss.mu_s", std::move(mu_s));
  store.add("gauss.mu_t", std::move(mu_t));
  store.add("gauss.opacity_logit", Tensor::matrix(n, 1, cfg.init_opacity_logit));
  store.add("gauss.logits", std::move(logits));
  switch (cfg.variant) {
    case Variant::structured:
      store.add("gauss.log_scales", Tensor::matrix(n, 3, log_scale));
      store.add("gauss.quat", std::move(quat));
      store.add("gauss.log_sigma_t", Tensor::matrix(n, 1, 0.0));
      store.add("gauss.v_dyn", Tensor::matrix(n, 2));
      store.add("scene.v_scene", Tensor::matrix(1, 2));
      break;
    case Variant::unified_velocity:
      store.add("gauss.log_scales", Tensor::matrix(n, 3, log_scale));
      store.add("gauss.quat", std::move(quat));
      store.add("gauss.log_sigma_t", Tensor::matrix(n, 1, 0.0));
      store.add("gauss.velocity", Tensor::matrix(n, 2));
      break;
    case Variant::full_4d_covariance: {
      Tensor ls4 = Tensor::matrix(n, 4, log_scale);
      for (std::size_t q = 0; q < n; ++q) ls4(q, 3) = 0.0;
      // q_right = conj(q_left) starts every primitive without space-time coupling
      Tensor qr = quat;
      for (std::size_t q = 0; q < n; ++q) {
        for (std::size_t i = 1; i < 4; ++i) qr(q, i) = -qr(q, i);
      }
      store.add("gauss.log_scales4", std::move(ls4));
      store.add("gauss.q_left", std::move(quat));
      store.add("gauss.q_right", std::move(qr));
      break;
    }
  }
}

inline Variant detect_variant(const ParameterStore& store) {
  if (store.contains("gauss.q_left")) return Variant::full_4d_covariance;
  if (store.contains("gauss.velocity")) return Variant::unified_velocity;
  return Variant::structured;
}

/// Binds the fit parameters of the store into a graph.
inline GaussianVars bind_fit_params(Graph& g, ParameterStore& store, const std::vector<int>& dynamic_classes) {
  GaussianVars gv;
  gv.mu_s = g.parameter(store, "gauss.mu_s");
  gv.mu_t = g.parameter(store, "gauss.mu_t");
  gv.opacity_logit = g.parameter(store, "gauss.opacity_logit");
  gv.logits = g.parameter(store, "gauss.logits");
  switch (detect_variant(store)) {
    case Variant::structured: {
      gv.log_scales = g.parameter(store, "gauss.log_scales");
      gv.quat = g.parameter(store, "gauss.quat");
      gv.log_sigma_t = g.parameter(store, "gauss.log_sigma_t");
      Var alpha = diff::class_mass(class_probs(gv), dynamic_classes);
      gv.velocity = diff::compose_velocity(g.parameter(store, "scene.v_scene"), alpha,
                                           g.parameter(store, "gauss.v_dyn"));
      break;
    }
    case Variant::unified_velocity:
      gv.log_scales = g.parameter(store, "gauss.log_scales");
      gv.quat = g.parameter(store, "gauss.quat");
      gv.log_sigma_t = g.parameter(store, "gauss.log_sigma_t");
      gv.velocity = diff::embed_planar(g.parameter(store, "gauss.velocity"));
      break;
    case Variant::full_4d_covariance:
      gv.joint = true;
      gv.cov4 = diff::joint_covariance(g.parameter(store, "gauss.log_scales4"),
                                       g.parameter(store, "gauss.q_left"), g.parameter(store, "gauss.q_right"));
      break;
  }
  return gv;
}

/// Rotation matrix to a unit quaternion (w, x, y, z).
inline Vec4 rotation_to_quat(const Mat3& r) {
  const Eigen::Quaterniond q(r);
  return Vec4(q.w(), q.x(), q.y(), q.z());
}

struct ExportedWorld {
  std::vector<Gaussian4D> gaussians;
  Vec2 v_scene = Vec2::Zero();
};

/// Converts fitted parameters to structured primitives. The unified variant
/// stores its per-primitive velocity as v_dyn with alpha = 1 and a zero
/// scene velocity. The joint-covariance variant is exported approximately:
/// its conditional covariance is re-factored into scales and rotation and the
/// implied planar velocity Sigma_xt / sigma_t^2 is kept (the vertical part
/// is dropped).
inline ExportedWorld export_world(const ParameterStore& store, const std::vector<int>& dynamic_classes) {
  const Variant variant = detect_variant(store);
  const Tensor& mu_s = store.value("gauss.mu_s");
  const Tensor& mu_t = store.value("gauss.mu_t");
  const Tensor& op = store.value("gauss.opacity_logit");
  const Tensor& logits = store.value("gauss.logits");
  const std::size_t n = mu_s.rows(), k = logits.cols();
  ExportedWorld out;
  out.gaussians.resize(n);
  std::optional<Tensor> cov4;
  if (variant == Variant::full_4d_covariance) {
    Graph g;
    cov4 = diff::joint_covariance(g.constant(store.value("gauss.log_scales4")),
                                  g.constant(store.value("gauss.q_left")),
                                  g.constant(store.value("gauss.q_right")))
               .value();
  }
  if (variant == Variant::structured) {
    out.v_scene = Vec2(store.value("scene.v_scene")[0], store.value("scene.v_scene")[1]);
  }
  for (std::size_t q = 0; q < n; ++q) {
    Gaussian4D& g = out.gaussians[q];
    for (int i = 0; i < 3; ++i) g.mu_s[i] = mu_s(q, static_cast<std::size_t>(i));
    g.mu_t = mu_t[q];
    g.opacity_logit = op[q];
    g.logits = VecX(static_cast<Eigen::Index>(k));
    for (std::size_t c = 0; c < k; ++c) g.logits[static_cast<Eigen::Index>(c)] = logits(q, c);
    if (variant == Variant::full_4d_covariance) {
      Mat4 c4;
      for (int i = 0; i < 16; ++i) c4(i / 4, i % 4) = (*cov4)(q, static_cast<std::size_t>(i));
      const auto cond = condition_joint(JointGaussian4D{Vec4::Zero(), c4}, 0.0);
      Eigen::SelfAdjointEigenSolver<Mat3> es(cond.cov);
      Mat3 r = es.eigenvectors();
      if (r.determinant() < 0) r.col(0) = -r.col(0);
      g.log_scales = es.eigenvalues().cwiseMax(1e-24).cwiseSqrt().array().log().matrix();
      g.quat = rotation_to_quat(r);
      g.log_sigma_t = 0.5 * std::log(c4(3, 3));
      g.v_dyn = Vec2(c4(0, 3), c4(1, 3)) / c4(3, 3);
      g.alpha = 1.0;
      continue;
    }
    const Tensor& ls = store.value("gauss.log_scales");
    const Tensor& qt = store.value("gauss.quat");
    for (int i = 0; i < 3; ++i) g.log_scales[i] = ls(q, static_cast<std::size_t>(i));
    for (int i = 0; i < 4; ++i) g.quat[i] = qt(q, static_cast<std::size_t>(i));
    g.quat.normalize();
    g.log_sigma_t = store.value("gauss.log_sigma_t")[q];
    if (variant == Variant::unified_velocity) {
      const Tensor& v = store.value("gauss.velocity");
      g.v_dyn = Vec2(v(q, 0), v(q, 1));
      g.alpha = 1.0;
    } else {
      const Tensor& v = store.value("gauss.v_dyn");
      g.v_dyn = Vec2(v(q, 0), v(q, 1));
      g.alpha = dynamics::dynamic_probability(g.logits, dynamic_classes);
    }
  }
  return out;
}

/// Slices every primitive at t and splats the result.
inline SemanticOccupancyGrid query_world(const ExportedWorld& w, double t, const GridSpec& grid,
                                         double cutoff = kDefaultCutoffSigma) {
  std::vector<SlicedGaussian3D> slices;
  slices.reserve(w.gaussians.size());
  for (const auto& g : w.gaussians) slices.push_back(slice_at(g, effective_velocity(g, w.v_scene), t));
  return splat(slices, grid, cutoff);
}

struct FitResult {
  ParameterStore store;
  diff::AdamState adam;
  std::vector<double> loss_trace;             // loss before each update
  std::vector<metrics::MetricRow> trace;      // logged iou / miou per timestamp
  std::vector<metrics::MetricRow> final_metrics;
  ExportedWorld world;
  int steps_run = 0;
  std::optional<int> reached_target_step;
  double final_loss = 0.0;
};

inline void check_finite(const ParameterStore& store, int step) {
  for (const auto& e : store.entries()) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      if (!std::isfinite(e.value[i]) || !std::isfinite(e.grad[i])) {
        fail(ErrorKind::numeric, "fit diverged at step " + std::to_string(step) + ": parameter '" + e.name +
                                     "' element " + std::to_string(i) + " is not finite");
      }
    }
  }
}

inline std::vector<metrics::MetricRow> evaluate_fields(const std::string& name, const std::vector<Var>& fields,
                                                       const Scenario& s) {
  std::vector<metrics::MetricRow> rows;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const LabelGrid pred = to_labels(field_to_grid(fields[i].value(), s.grid));
    rows.push_back({name, s.timestamps[i], "iou", metrics::binary_iou(pred, s.gt[i])});
    const auto m = metrics::mean_iou(pred, s.gt[i]);
    rows.push_back({name, s.timestamps[i], "miou", m.mean.value_or(0.0)});
  }
  return rows;
}

/// Mean binary IoU over the scenario timestamps of an exported world.
inline double mean_binary_iou(const ExportedWorld& w, const Scenario& s, double cutoff = kDefaultCutoffSigma) {
  double sum = 0.0;
  for (std::size_t i = 0; i < s.timestamps.size(); ++i) {
    sum += metrics::binary_iou(to_labels(query_world(w, s.timestamps[i], s.grid, cutoff)), s.gt[i]);
  }
  return sum / static_cast<double>(s.timestamps.size());
}

/// Optimizes one shared Gaussian set against the ground-truth sequence of
/// the scenario. Deterministic given the config.
inline FitResult fit_world(const Scenario& s, const FitConfig& cfg) {
  if (s.timestamps.size() < 2) fail(ErrorKind::validation, "fit_world: needs at least two supervised timestamps");
  if (s.gt.size() != s.timestamps.size()) fail(ErrorKind::validation, "fit_world: scenario lacks ground truth");
  for (double t : s.timestamps) {
    if (t < 0.0 || t > s.scene.horizon) fail(ErrorKind::range, "fit_world: timestamp outside the horizon");
  }
  FitResult r;
  init_fit_params(r.store, cfg, s);
  int start = 0;
  if (!cfg.resume_from.empty()) {
    diff::load_checkpoint(cfg.resume_from, r.store, &r.adam);
    start = static_cast<int>(r.adam.step);
  }
  r.steps_run = start;
  diff::AdamConfig adam;
  const int end = cfg.stop_after >= 0 ? std::min(cfg.steps, cfg.stop_after) : cfg.steps;
  for (int step = start; step < end; ++step) {
    r.store.zero_grad();
    check_finite(r.store, step);
    Graph g;
    GaussianVars gv = bind_fit_params(g, r.store, cfg.dynamic_classes);
    OccupancyTerms terms = occupancy_loss(gv, s.gt, s.timestamps, s.grid, cfg.weights, cfg.cutoff);
    const double loss = terms.loss.value().item();
    r.loss_trace.push_back(loss);
    if (!std::isfinite(loss)) {
      g.backward(terms.loss);
      check_finite(r.store, step);
      fail(ErrorKind::numeric, "fit diverged at step " + std::to_string(step) + ": loss is not finite");
    }
    if (cfg.log_every > 0 && step % cfg.log_every == 0) {
      for (auto row : evaluate_fields(s.name, terms.fields, s)) {
        row.metric += "@" + std::to_string(step);
        r.trace.push_back(row);
      }
    }
    if (cfg.target_loss > 0.0 && loss <= cfg.target_loss) {
      r.reached_target_step = step;
      r.final_loss = loss;
      r.steps_run = step;
      break;
    }
    g.backward(terms.loss);
    check_finite(r.store, step);
    adam.lr = diff::cosine_lr(cfg.lr, step, cfg.steps, cfg.min_lr);
    diff::adam_step(r.store, r.adam, adam);
    r.steps_run = step + 1;
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_out.empty() && (step + 1) % cfg.checkpoint_every == 0) {
      diff::save_checkpoint(cfg.checkpoint_out, r.store, &r.adam);
    }
  }
  {
    Graph g;
    GaussianVars gv = bind_fit_params(g, r.store, cfg.dynamic_classes);
    OccupancyTerms terms = occupancy_loss(gv, s.gt, s.timestamps, s.grid, cfg.weights, cfg.cutoff);
    if (!r.reached_target_step) r.final_loss = terms.loss.value().item();
    r.final_metrics = evaluate_fields(s.name, terms.fields, s);
  }
  if (!cfg.checkpoint_out.empty()) diff::save_checkpoint(cfg.checkpoint_out, r.store, &r.adam);
  r.world = export_world(r.store, cfg.dynamic_classes);
  return r;
}

// ---------------------------------------------------------------------------
// Toy end-to-end training

struct ToyConfig {
  refiner::RefinerConfig refiner;
  dynamics::DynamicsConfig dynamics;
  LossWeights weights;
  double lr = 2e-4;
  double weight_decay = 0.01;
  int steps = 50;
  std::uint64_t seed = 0;
  double cutoff = kDefaultCutoffSigma;
  bool occupancy = true;  // false trains the planner only
};

struct ToyModel {
  ParameterStore store;
  diff::AdamState adam;
};

inline ToyModel init_toy_model(const ToyConfig& cfg) {
  ToyModel m;
  diff::Rng rng(cfg.seed);
  refiner::init_refiner(m.store, cfg.refiner, rng);
  dynamics::init_dynamics(m.store, cfg.dynamics, rng);
  return m;
}

/// Inputs of one scenario that stay fixed during training.
struct ToySample {
  const Scenario* scenario = nullptr;
  std::shared_ptr<const refiner::FeatureField> field;
  Tensor anchors, features;
};

inline ToySample make_toy_sample(const Scenario& s, const ToyConfig& cfg, std::uint64_t seed) {
  ToySample t;
  t.scenario = &s;
  t.field = std::make_shared<refiner::FeatureField>(refiner::scene_feature_field(s, cfg.refiner.dim, seed));
  std::tie(t.anchors, t.features) = refiner::init_anchors(cfg.refiner, s.grid, s.scene.horizon, seed + 1);
  return t;
}

struct ToyForward {
  refiner::Refined refined;
  Var v_scene;
  Var plan;
  std::optional<Var> occ;
  Var plan_loss;
  Var loss;
};

inline ToyForward toy_forward(Graph& g, ParameterStore& store, const ToyConfig& cfg, const ToySample& sample) {
  const Scenario& s = *sample.scenario;
  ToyForward f;
  f.refined = refiner::refine(g, store, cfg.refiner, sample.field, g.constant(sample.anchors),
                              g.constant(sample.features));
  Var features = f.refined.features;
  Var q_scene = dynamics::encode_ego(g, store, s.history, dynamics::EgoRole::scene, cfg.dynamics);
  f.v_scene = dynamics::scene_velocity(g, store, q_scene, features, cfg.dynamics);
  Var q_traj = dynamics::encode_ego(g, store, s.history, dynamics::EgoRole::trajectory, cfg.dynamics);
  f.plan = dynamics::plan(g, store, q_traj, features, cfg.dynamics);
  f.plan_loss = diff::mse_loss(f.plan, g.constant(dynamics::waypoints_tensor(s.waypoints)));
  if (cfg.occupancy) {
    const auto& h = f.refined.heads;
    GaussianVars gv;
    gv.mu_s = h.mu_s;
    gv.mu_t = h.mu_t;
    gv.opacity_logit = h.opacity_logit;
    gv.logits = h.logits;
    gv.log_scales = h.log_scales;
    gv.quat = h.quat;
    gv.log_sigma_t = h.log_sigma_t;
    Var alpha = diff::class_mass(class_probs(gv), cfg.dynamics.dynamic_classes);
    gv.velocity = diff::compose_velocity(f.v_scene, alpha, h.v_dyn);
    f.occ = occupancy_loss(gv, s.gt, s.timestamps, s.grid, cfg.weights, cfg.cutoff).loss;
    f.loss = total_loss(*f.occ, f.plan_loss, cfg.weights.lambda_plan);
  } else {
    f.loss = diff::scale(f.plan_loss, cfg.weights.lambda_plan);
  }
  return f;
}

struct ToyResult {
  std::vector<double> loss_trace;  // mean batch loss before each update
};

/// AdamW with cosine annealing over the batch mean of the total loss.
inline ToyResult train_toy_pipeline(ToyModel& model, const std::vector<ToySample>& batch, const ToyConfig& cfg) {
  if (batch.empty()) fail(ErrorKind::validation, "train_toy_pipeline: empty batch");
  ToyResult r;
  diff::AdamConfig adam;
  adam.weight_decay = cfg.weight_decay;
  for (int step = 0; step < cfg.steps; ++step) {
    model.store.zero_grad();
    double total = 0.0;
    for (const auto& sample : batch) {
      Graph g;
      ToyForward f = toy_forward(g, model.store, cfg, sample);
      Var scaled = diff::scale(f.loss, 1.0 / static_cast<double>(batch.size()));
      total += scaled.value().item();
      g.backward(scaled);
    }
    r.loss_trace.push_back(total);
    if (!std::isfinite(total)) fail(ErrorKind::numeric, "train_toy_pipeline: loss is not finite");
    check_finite(model.store, step);
    adam.lr = diff::cosine_lr(cfg.lr, step, cfg.steps);
    diff::adam_step(model.store, model.adam, adam);
  }
  return r;
}

}  // namespace occ4d::optimize
