#include "mba/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <set>

#include "mba/error.hpp"

namespace mba {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Per-block copy of everything the inner loops need, so that rotations are
// materialized once per iteration rather than once per record.
struct BlockFrames {
  Eigen::Matrix3d r_src, r_dst;
  Eigen::Vector3d t_src, t_dst;
  double f_src = 1.0, f_dst = 1.0;
  Eigen::Vector2d c_src, c_dst;
  double alpha = 1.0, beta = 0.0;
};

struct BlockPartial {
  Eigen::Matrix3d g_r_src = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d g_r_dst = Eigen::Matrix3d::Zero();
  Eigen::Vector3d g_t_src = Eigen::Vector3d::Zero();
  Eigen::Vector3d g_t_dst = Eigen::Vector3d::Zero();
  double g_f_src = 0.0, g_f_dst = 0.0, g_log_alpha = 0.0, g_beta = 0.0;
};

struct FrameGradient {
  Eigen::Matrix3d g_r = Eigen::Matrix3d::Zero();
  Eigen::Vector3d g_t = Eigen::Vector3d::Zero();
  double g_f = 0.0, g_log_alpha = 0.0, g_beta = 0.0;
};

// Residual and gradient evaluation over the usable blocks of a data matrix.
class Engine {
 public:
  Engine(const std::map<int, FrameState>& states, const DataMatrix& data, const ParameterLayout& layout,
         const ProjectionOptions& projection, WorkerPool& pool)
      : states_(states), layout_(layout), projection_(projection), pool_(pool) {
    for (const DirectedBlock& b : data.blocks) {
      if (states_.count(b.src) && states_.count(b.dst) && !b.records.empty()) blocks_.push_back(&b);
    }
    frames_.resize(blocks_.size());
    residuals_.resize(blocks_.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) residuals_[b].resize(blocks_[b]->records.size());
  }

  const std::vector<const DirectedBlock*>& blocks() const { return blocks_; }
  const std::vector<std::vector<double>>& residuals() const { return residuals_; }
  const std::map<int, FrameState>& states() const { return states_; }

  void set_params(std::span<const double> params) { layout_.scatter(params, states_); }

  void compute_residuals() {
    refresh_frames();
    pool_.parallel_for(blocks_.size(), [&](std::size_t b) {
      const BlockFrames& f = frames_[b];
      const std::vector<DataRecord>& records = blocks_[b]->records;
      std::vector<double>& out = residuals_[b];
      for (std::size_t k = 0; k < records.size(); ++k) out[k] = residual(f, records[k]);
    });
  }

  // Gradient of sum_k weight(b, k, r) * r_k with respect to the layout's
  // parameters. Partials are reduced in block order so the result does not
  // depend on the worker count.
  template <typename WeightFn>
  std::vector<double> gradient(const WeightFn& weight) {
    std::vector<BlockPartial> partials(blocks_.size());
    pool_.parallel_for(blocks_.size(), [&](std::size_t b) {
      const BlockFrames& f = frames_[b];
      const std::vector<DataRecord>& records = blocks_[b]->records;
      BlockPartial& p = partials[b];
      for (std::size_t k = 0; k < records.size(); ++k) {
        const double r = residuals_[b][k];
        if (!std::isfinite(r) || !(r > 0.0)) continue;
        const double w = weight(b, k, r);
        if (w == 0.0) continue;
        accumulate(f, records[k], w, p);
      }
    });

    std::map<int, FrameGradient> frames;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const BlockPartial& p = partials[b];
      FrameGradient& s = frames[blocks_[b]->src];
      FrameGradient& d = frames[blocks_[b]->dst];
      s.g_r += p.g_r_src;
      s.g_t += p.g_t_src;
      s.g_f += p.g_f_src;
      s.g_log_alpha += p.g_log_alpha;
      s.g_beta += p.g_beta;
      d.g_r += p.g_r_dst;
      d.g_t += p.g_t_dst;
      d.g_f += p.g_f_dst;
    }
    std::vector<double> grad(layout_.size(), 0.0);
    for (const auto& [id, g] : frames) {
      const FrameSlots& slots = layout_.slots(id);
      const FrameState& state = states_.at(id);
      if (slots.rotation >= 0) {
        const Vector6d g6 = rotation_6d_vjp(state.pose.rotation_6d, g.g_r);
        for (int i = 0; i < 6; ++i) grad[slots.rotation + i] += g6[i];
      }
      if (slots.translation >= 0) {
        for (int i = 0; i < 3; ++i) grad[slots.translation + i] += g.g_t[i];
      }
      if (slots.focal >= 0) grad[slots.focal] += g.g_f;
      if (slots.log_alpha >= 0) grad[slots.log_alpha] += g.g_log_alpha;
      if (slots.beta >= 0) grad[slots.beta] += g.g_beta;
    }
    return grad;
  }

 private:
  void refresh_frames() {
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const FrameState& s = states_.at(blocks_[b]->src);
      const FrameState& d = states_.at(blocks_[b]->dst);
      BlockFrames& f = frames_[b];
      f.r_src = s.pose.rotation();
      f.r_dst = d.pose.rotation();
      f.t_src = s.pose.translation;
      f.t_dst = d.pose.translation;
      f.f_src = s.intrinsics.focal;
      f.f_dst = d.intrinsics.focal;
      f.c_src = s.intrinsics.principal_point;
      f.c_dst = d.intrinsics.principal_point;
      f.alpha = s.correction.alpha();
      f.beta = s.correction.beta;
    }
  }

  double residual(const BlockFrames& f, const DataRecord& rec) const {
    const double depth = f.alpha * rec.src_depth + f.beta;
    if (!(depth > projection_.depth_floor)) return kInf;
    const Eigen::Vector2d xy = (rec.src_pixel - f.c_src) / f.f_src;
    const Eigen::Vector3d world = f.r_src.transpose() * (Eigen::Vector3d(depth * xy.x(), depth * xy.y(), depth) - f.t_src);
    const Eigen::Vector3d y = f.r_dst * world + f.t_dst;
    if (!(y.z() > projection_.z_floor)) return kInf;
    return (f.f_dst * y.head<2>() / y.z() + f.c_dst - rec.dst_pixel).norm();
  }

  void accumulate(const BlockFrames& f, const DataRecord& rec, double w, BlockPartial& p) const {
    const double depth = f.alpha * rec.src_depth + f.beta;
    const Eigen::Vector2d xy = (rec.src_pixel - f.c_src) / f.f_src;
    const Eigen::Vector3d ray(xy.x(), xy.y(), 1.0);
    const Eigen::Vector3d v = depth * ray - f.t_src;
    const Eigen::Vector3d world = f.r_src.transpose() * v;
    const Eigen::Vector3d y = f.r_dst * world + f.t_dst;
    const double z = y.z();
    const Eigen::Vector2d e = f.f_dst * y.head<2>() / z + f.c_dst - rec.dst_pixel;
    const double r = e.norm();
    const Eigen::Vector2d u = e / r;
    const Eigen::Vector2d proj = y.head<2>() / z;

    const Eigen::Vector3d gy = (w * f.f_dst / z) * Eigen::Vector3d(u.x(), u.y(), -u.dot(proj));
    p.g_r_dst.noalias() += gy * world.transpose();
    p.g_t_dst += gy;
    p.g_f_dst += w * u.dot(proj);

    const Eigen::Vector3d h = f.r_dst.transpose() * gy;
    p.g_r_src.noalias() += v * h.transpose();
    const Eigen::Vector3d k = f.r_src * h;
    p.g_t_src -= k;
    const double g_depth = k.dot(ray);
    p.g_log_alpha += g_depth * f.alpha * rec.src_depth;
    p.g_beta += g_depth;
    p.g_f_src -= (depth / f.f_src) * (k.x() * xy.x() + k.y() * xy.y());
  }

  std::map<int, FrameState> states_;
  const ParameterLayout& layout_;
  ProjectionOptions projection_;
  WorkerPool& pool_;
  std::vector<const DirectedBlock*> blocks_;
  std::vector<BlockFrames> frames_;
  std::vector<std::vector<double>> residuals_;
};

// Runs `fn` with either the caller's pool or a private one.
template <typename Fn>
auto with_pool(const StageControl& control, int workers, Fn&& fn) {
  if (control.pool) return fn(*control.pool);
  WorkerPool pool(std::max(workers, 1));
  return fn(pool);
}

std::size_t finite_count(const Engine& engine) {
  std::size_t n = 0;
  for (const auto& block : engine.residuals()) {
    for (const double r : block) n += std::isfinite(r) ? 1 : 0;
  }
  return n;
}

ResidualHistogram histogram_of(const Engine& engine, const OptimizerConfig& cfg) {
  ResidualHistogram h(cfg.tau_max_fine, cfg.bin_count);
  for (const auto& block : engine.residuals()) h.add(block);
  return h;
}

// Minus the normalized area under the step CDF: thresholds i * tau / T for
// i = 0..T with T = bin_count, so that #(r < tau_i) is a cumulative count.
double negative_area(const ResidualHistogram& h, std::size_t finite) {
  if (finite == 0) return 0.0;
  double area = 0.0;
  for (int i = 0; i < h.bin_count(); ++i) area += static_cast<double>(h.cumulative()[i]);
  return -area / (static_cast<double>(finite) * (h.bin_count() + 1));
}

double mean_baseline(const Engine& engine, const OptimizerConfig& cfg, std::size_t finite) {
  if (finite == 0) return 0.0;
  double sum = 0.0;
  for (const auto& block : engine.residuals()) {
    for (const double r : block) {
      if (std::isfinite(r)) sum += robust_loss_baseline(r, cfg.loss_kind, cfg.robust_scale).loss;
    }
  }
  return sum / static_cast<double>(finite);
}

// Star membership of each block's undirected edge.
std::vector<std::vector<int>> star_membership(const Engine& engine, std::span<const StarSubgraph> stars) {
  std::map<FramePair, std::vector<int>> by_edge;
  for (std::size_t s = 0; s < stars.size(); ++s) {
    for (const FramePair& e : stars[s].edges) by_edge[{std::min(e.first, e.second), std::max(e.first, e.second)}].push_back(static_cast<int>(s));
  }
  std::vector<std::vector<int>> out;
  for (const DirectedBlock* b : engine.blocks()) {
    const auto it = by_edge.find({std::min(b->src, b->dst), std::max(b->src, b->dst)});
    out.push_back(it == by_edge.end() ? std::vector<int>{} : it->second);
  }
  return out;
}

struct StarStats {
  std::vector<ResidualHistogram> histograms;  // log residuals below tau_bar only
  std::vector<std::size_t> finite;
};

StarStats star_stats(const Engine& engine, const std::vector<std::vector<int>>& membership, std::size_t star_count,
                     const OptimizerConfig& cfg) {
  StarStats s;
  s.histograms.assign(star_count, ResidualHistogram(cfg.tau_bar_max_coarse, cfg.bin_count));
  s.finite.assign(star_count, 0);
  for (std::size_t b = 0; b < engine.blocks().size(); ++b) {
    for (const double r : engine.residuals()[b]) {
      if (!std::isfinite(r)) continue;
      const double lr = std::log1p(r);
      for (const int star : membership[b]) {
        ++s.finite[star];
        if (lr < cfg.tau_bar_max_coarse) s.histograms[star].add(lr);
      }
    }
  }
  return s;
}

int nonempty_stars(const std::vector<ResidualHistogram>& histograms) {
  int n = 0;
  for (const ResidualHistogram& h : histograms) n += h.total() > 0 ? 1 : 0;
  return n;
}

double coarse_objective(const StarStats& s) {
  int n = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < s.histograms.size(); ++i) {
    if (s.histograms[i].total() == 0) continue;
    ++n;
    sum += negative_area(s.histograms[i], s.finite[i]);
  }
  return n ? sum / n : 0.0;
}

double coarse_inlier_fraction(const StarStats& s) {
  std::uint64_t below = 0;
  std::size_t finite = 0;
  for (std::size_t i = 0; i < s.histograms.size(); ++i) {
    below += s.histograms[i].total();
    finite += s.finite[i];
  }
  return finite ? static_cast<double>(below) / static_cast<double>(finite) : 0.0;
}

template <typename PerIteration>
StageReport run_loop(std::map<int, FrameState>& states, const ParameterLayout& layout, Engine& engine,
                     int iterations, const OptimizerConfig& cfg, const StageControl& control,
                     std::string_view stage, PerIteration&& per_iteration) {
  StageReport report;
  std::vector<double> params = layout.gather(states);
  const std::vector<double> rates = layout.learning_rates(cfg);
  AdamState adam(layout.size());
  const int interval = std::max(cfg.progress_interval, 1);

  const auto record = [&](int it, double loss, double inliers) {
    report.trace.emplace_back(it, loss);
    if (control.progress) control.progress(ProgressEvent{stage, it, loss, inliers});
  };

  for (int it = 0; it < iterations; ++it) {
    if (control.cancel && control.cancel->load()) {
      report.cancelled = true;
      break;
    }
    engine.compute_residuals();
    const bool sample = it % interval == 0;
    double loss = 0.0;
    double inliers = 0.0;
    const std::vector<double> grad = per_iteration(it, sample, loss, inliers);
    if (it == 0) report.initial_loss = loss;
    if (sample) record(it, loss, inliers);
    adam.step(params, grad, rates, cfg);
    engine.set_params(params);
    report.iterations_run = it + 1;
  }
  if (report.iterations_run > 0) layout.scatter(params, states);

  engine.compute_residuals();
  double loss = 0.0;
  double inliers = 0.0;
  per_iteration(-1, true, loss, inliers);
  if (report.iterations_run == 0) report.initial_loss = loss;
  report.final_loss = loss;
  record(report.iterations_run, loss, inliers);
  return report;
}

}  // namespace

void OptimizerConfig::validate() const {
  const auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, "optimizer config: " + what); };
  if (iterations_coarse < 0 || iterations_fine < 0) bad("iterations must be non-negative");
  if (!(lr > 0.0)) bad("lr must be positive");
  if (!(intrinsics_lr_multiplier > 0.0)) bad("intrinsics_lr_multiplier must be positive");
  if (!(tau_max_fine > 0.0) || !(tau_bar_max_coarse > 0.0)) bad("tau values must be positive");
  if (bin_count < 1) bad("bin_count must be positive");
  if (!(robust_scale > 0.0)) bad("robust_scale must be positive");
  if (histogram_rebuild_interval < 1) bad("histogram_rebuild_interval must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0)) {
    bad("bad Adam hyperparameters");
  }
}

void AdamState::step(std::span<double> params, std::span<const double> gradient,
                     std::span<const double> learning_rates, const OptimizerConfig& config) {
  ++t;
  const double c1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = gradient[i];
    m[i] = config.adam_beta1 * m[i] + (1.0 - config.adam_beta1) * g;
    v[i] = config.adam_beta2 * v[i] + (1.0 - config.adam_beta2) * g * g;
    params[i] -= learning_rates[i] * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.adam_eps);
  }
}

ParameterLayout::ParameterLayout(const std::map<int, FrameState>& states, bool shared_focal) {
  int shared_slot = -1;
  int next = 0;
  for (const auto& [id, s] : states) {
    FrameSlots slots;
    if (s.trainable.pose) {
      slots.rotation = next;
      slots.translation = next + 6;
      next += 9;
    }
    if (s.trainable.focal) {
      if (shared_focal && shared_slot >= 0) {
        slots.focal = shared_slot;
      } else {
        slots.focal = next++;
        if (shared_focal) shared_slot = slots.focal;
      }
    }
    if (s.trainable.alpha) slots.log_alpha = next++;
    if (s.trainable.beta) slots.beta = next++;
    slots_[id] = slots;
  }
  size_ = static_cast<std::size_t>(next);
  focal_mask_.assign(size_, false);
  for (const auto& [id, slots] : slots_) {
    if (slots.focal >= 0) focal_mask_[slots.focal] = true;
  }
}

std::vector<double> ParameterLayout::gather(const std::map<int, FrameState>& states) const {
  std::vector<double> p(size_, 0.0);
  std::vector<bool> filled(size_, false);
  for (const auto& [id, slots] : slots_) {
    const FrameState& s = states.at(id);
    if (slots.rotation >= 0) {
      for (int i = 0; i < 6; ++i) p[slots.rotation + i] = s.pose.rotation_6d[i];
      for (int i = 0; i < 3; ++i) p[slots.translation + i] = s.pose.translation[i];
    }
    if (slots.focal >= 0 && !filled[slots.focal]) {
      p[slots.focal] = s.intrinsics.focal;
      filled[slots.focal] = true;
    }
    if (slots.log_alpha >= 0) p[slots.log_alpha] = s.correction.log_alpha;
    if (slots.beta >= 0) p[slots.beta] = s.correction.beta;
  }
  return p;
}

void ParameterLayout::scatter(std::span<const double> p, std::map<int, FrameState>& states) const {
  for (const auto& [id, slots] : slots_) {
    FrameState& s = states.at(id);
    if (slots.rotation >= 0) {
      for (int i = 0; i < 6; ++i) s.pose.rotation_6d[i] = p[slots.rotation + i];
      for (int i = 0; i < 3; ++i) s.pose.translation[i] = p[slots.translation + i];
    }
    if (slots.focal >= 0) s.intrinsics.focal = p[slots.focal];
    if (slots.log_alpha >= 0) s.correction.log_alpha = p[slots.log_alpha];
    if (slots.beta >= 0) s.correction.beta = p[slots.beta];
  }
}

std::vector<double> ParameterLayout::learning_rates(const OptimizerConfig& config) const {
  std::vector<double> rates(size_, config.lr);
  for (std::size_t i = 0; i < size_; ++i) {
    if (focal_mask_[i]) rates[i] *= config.intrinsics_lr_multiplier;
  }
  return rates;
}

ResidualHistogram fine_histogram(const std::map<int, FrameState>& states, const DataMatrix& data,
                                 const OptimizerConfig& config) {
  WorkerPool pool(1);
  const ParameterLayout layout(states, config.shared_focal);
  Engine engine(states, data, layout, config.projection, pool);
  engine.compute_residuals();
  return histogram_of(engine, config);
}

LossEvaluation evaluate_fine_loss(const std::map<int, FrameState>& states, const DataMatrix& data,
                                  const ParameterLayout& layout, const OptimizerConfig& config,
                                  const ResidualHistogram* frozen) {
  WorkerPool pool(1);
  Engine engine(states, data, layout, config.projection, pool);
  engine.compute_residuals();
  LossEvaluation out;
  if (config.loss_kind == LossKind::kMba) {
    if (!frozen) throw Error(ErrorCode::kInvalidArgument, "fine loss: MBA needs a histogram");
    const double norm = static_cast<double>(frozen->total());
    for (const auto& block : engine.residuals()) {
      for (const double r : block) {
        if (std::isfinite(r)) out.loss += surrogate_term(*frozen, r).value / norm;
      }
    }
    out.gradient = engine.gradient([&](std::size_t, std::size_t, double r) { return surrogate_term(*frozen, r).slope / norm; });
  } else {
    const double norm = static_cast<double>(finite_count(engine));
    out.loss = mean_baseline(engine, config, finite_count(engine));
    out.gradient = engine.gradient([&](std::size_t, std::size_t, double r) {
      return robust_loss_baseline(r, config.loss_kind, config.robust_scale).derivative / norm;
    });
  }
  return out;
}

std::vector<ResidualHistogram> coarse_histograms(const std::map<int, FrameState>& states, const DataMatrix& data,
                                                 std::span<const StarSubgraph> stars, const OptimizerConfig& config) {
  WorkerPool pool(1);
  const ParameterLayout layout(states, config.shared_focal);
  Engine engine(states, data, layout, config.projection, pool);
  engine.compute_residuals();
  return star_stats(engine, star_membership(engine, stars), stars.size(), config).histograms;
}

LossEvaluation evaluate_coarse_loss(const std::map<int, FrameState>& states, const DataMatrix& data,
                                    std::span<const StarSubgraph> stars, const ParameterLayout& layout,
                                    const OptimizerConfig& config, std::span<const ResidualHistogram> frozen) {
  WorkerPool pool(1);
  Engine engine(states, data, layout, config.projection, pool);
  engine.compute_residuals();
  const auto membership = star_membership(engine, stars);
  const int n = nonempty_stars(std::vector<ResidualHistogram>(frozen.begin(), frozen.end()));
  LossEvaluation out;
  if (n == 0) throw Error(ErrorCode::kAllSubgraphsEmpty, "coarse loss: every subgraph is empty");
  for (std::size_t b = 0; b < engine.blocks().size(); ++b) {
    for (const double r : engine.residuals()[b]) {
      if (!std::isfinite(r)) continue;
      for (const int s : membership[b]) {
        if (frozen[s].total() == 0) continue;
        out.loss += surrogate_term(frozen[s], std::log1p(r)).value / (n * static_cast<double>(frozen[s].total()));
      }
    }
  }
  out.gradient = engine.gradient([&](std::size_t b, std::size_t, double r) {
    double w = 0.0;
    for (const int s : membership[b]) {
      if (frozen[s].total() == 0) continue;
      w += surrogate_term(frozen[s], std::log1p(r)).slope / (n * static_cast<double>(frozen[s].total()));
    }
    return w / (1.0 + r);
  });
  return out;
}

StageReport coarse_stage(std::map<int, FrameState>& states, const DataMatrix& data,
                         std::span<const StarSubgraph> stars, const OptimizerConfig& config,
                         const StageControl& control) {
  config.validate();
  return with_pool(control, config.workers, [&](WorkerPool& pool) {
    const ParameterLayout layout(states, config.shared_focal);
    Engine engine(states, data, layout, config.projection, pool);
    std::vector<std::vector<int>> membership;
    std::vector<ResidualHistogram> active;
    bool have_active = false;

    return run_loop(states, layout, engine, config.iterations_coarse, config, control, "coarse",
                    [&](int it, bool sample, double& loss, double& inliers) -> std::vector<double> {
      if (membership.empty()) membership = star_membership(engine, stars);
      const bool rebuild = it >= 0 && (!have_active || it % config.histogram_rebuild_interval == 0);
      if (config.loss_kind != LossKind::kMba) {
        const std::size_t finite = finite_count(engine);
        if (finite == 0) throw Error(ErrorCode::kAllSubgraphsEmpty, "coarse stage: no finite residual");
        if (sample) {
          loss = mean_baseline(engine, config, finite);
          const ResidualHistogram h = histogram_of(engine, config);
          inliers = static_cast<double>(h.count_below_tau_max()) / static_cast<double>(finite);
        }
        if (it < 0) return {};
        const double norm = static_cast<double>(finite);
        return engine.gradient([&](std::size_t, std::size_t, double r) {
          return robust_loss_baseline(r, config.loss_kind, config.robust_scale).derivative / norm;
        });
      }
      StarStats fresh;
      if (rebuild || sample) fresh = star_stats(engine, membership, stars.size(), config);
      if (sample) {
        loss = coarse_objective(fresh);
        inliers = coarse_inlier_fraction(fresh);
      }
      if (it < 0) return {};
      if (rebuild) {
        active = fresh.histograms;
        have_active = true;
      }
      const int n = nonempty_stars(active);
      if (n == 0) throw Error(ErrorCode::kAllSubgraphsEmpty, "coarse stage: no subgraph has a residual below tau_bar_max");
      return engine.gradient([&](std::size_t b, std::size_t, double r) {
        double w = 0.0;
        const double lr = std::log1p(r);
        for (const int s : membership[b]) {
          const ResidualHistogram& h = active[s];
          if (h.total() == 0) continue;
          w += surrogate_term(h, lr).slope / (n * static_cast<double>(h.total()));
        }
        return w / (1.0 + r);
      });
    });
  });
}

StageReport fine_stage(std::map<int, FrameState>& states, const DataMatrix& data, const OptimizerConfig& config,
                       const StageControl& control) {
  config.validate();
  return with_pool(control, config.workers, [&](WorkerPool& pool) {
    const ParameterLayout layout(states, config.shared_focal);
    Engine engine(states, data, layout, config.projection, pool);
    std::optional<ResidualHistogram> active;

    return run_loop(states, layout, engine, config.iterations_fine, config, control, "fine",
                    [&](int it, bool sample, double& loss, double& inliers) -> std::vector<double> {
      const std::size_t finite = finite_count(engine);
      if (finite == 0) throw Error(ErrorCode::kEmptyResidualSet, "fine stage: no finite residual");
      const bool rebuild = it >= 0 && (!active || it % config.histogram_rebuild_interval == 0);
      std::optional<ResidualHistogram> fresh;
      if (rebuild || sample) fresh = histogram_of(engine, config);
      if (sample) {
        inliers = static_cast<double>(fresh->count_below_tau_max()) / static_cast<double>(finite);
        loss = config.loss_kind == LossKind::kMba ? negative_area(*fresh, finite) : mean_baseline(engine, config, finite);
      }
      if (it < 0) return {};
      if (config.loss_kind != LossKind::kMba) {
        const double norm = static_cast<double>(finite);
        return engine.gradient([&](std::size_t, std::size_t, double r) {
          return robust_loss_baseline(r, config.loss_kind, config.robust_scale).derivative / norm;
        });
      }
      if (rebuild) active = std::move(fresh);
      const ResidualHistogram& h = *active;
      if (h.total() == 0) throw Error(ErrorCode::kEmptyResidualSet, "fine stage: empty histogram");
      const double norm = static_cast<double>(h.total());
      return engine.gradient([&](std::size_t, std::size_t, double r) { return surrogate_term(h, r).slope / norm; });
    });
  });
}

std::map<int, FrameState> initial_frame_states(const SfmInputs& inputs, const SfmConfig& config) {
  std::map<int, FrameState> states;
  std::vector<double> calibrated;
  for (const SfmFrameInput& f : inputs.frames) {
    FrameState s;
    s.frame_id = f.frame_id;
    if (f.intrinsics) {
      s.intrinsics = *f.intrinsics;
      s.intrinsics.width = f.width;
      s.intrinsics.height = f.height;
      s.trainable.focal = false;
    } else if (f.pointmap) {
      CalibrationOptions options = config.calibration;
      options.seed = config.calibration.seed ^ static_cast<std::uint64_t>(f.frame_id);
      const double focal = calibrate_from_pointmap(*f.pointmap, options);
      s.intrinsics = CameraIntrinsics::centered(focal, f.width, f.height);
      calibrated.push_back(focal);
    } else {
      throw Error(ErrorCode::kInvalidArgument,
                  "frame " + std::to_string(f.frame_id) + " has neither intrinsics nor a pointmap");
    }
    states[f.frame_id] = s;
  }
  if (inputs.shared_intrinsics && !calibrated.empty()) {
    const double focal = shared_focal(calibrated);
    for (auto& [id, s] : states) {
      if (s.trainable.focal) s.intrinsics.focal = focal;
    }
  }
  return states;
}

SfmResult run_sfm(const SfmInputs& inputs, const SfmConfig& config, const StageControl& control) {
  config.optimizer.validate();
  SfmResult result;
  OptimizerConfig opt = config.optimizer;
  opt.shared_focal = opt.shared_focal || inputs.shared_intrinsics;

  const std::map<int, FrameState> initial = initial_frame_states(inputs, config);
  std::vector<int> ids;
  std::map<int, FrameSize> sizes;
  std::map<int, DepthMap> depths;
  for (const SfmFrameInput& f : inputs.frames) {
    ids.push_back(f.frame_id);
    sizes[f.frame_id] = {f.width, f.height};
    depths[f.frame_id] = f.depth;
  }

  const PoseGraph full = build_pose_graph(inputs.correspondences, sizes, config.nu, config.chi);
  PoseGraph graph(ids);
  for (const PoseGraph::Edge& e : full.edges()) graph.add_edge(e.a, e.b, e.covisibility);
  const DataMatrix data = sample_data_matrix(graph, inputs.correspondences, depths, config.kappa, config.chi, opt.seed);
  result.warnings = data.warnings;
  const PoseGraph used = graph.without_edges(data.dropped_edges);
  result.edge_count = used.edge_count();
  result.record_count = data.record_count();

  if (ids.empty()) {
    result.errors.push_back("INVALID_ARGUMENT: no frames");
    return result;
  }
  if (used.edge_count() == 0) result.errors.push_back("REGISTRATION_FAILURE: the pose graph has no edges");

  const SpanningTree tree = greedy_spanning_tree(used);
  TwoViewOptions two_view = config.two_view;
  two_view.seed = config.two_view.seed ^ opt.seed;
  RegistrationResult reg = register_spanning_tree(tree, used, data, initial, two_view);
  for (const RegistrationFailure& f : reg.failures) result.errors.push_back(f.message);
  result.root = tree.root();
  result.states = std::move(reg.states);

  PoseGraph registered_graph([&] {
    std::vector<int> r;
    for (const auto& [id, s] : result.states) r.push_back(id);
    return r;
  }());
  for (const PoseGraph::Edge& e : used.edges()) {
    if (result.states.count(e.a) && result.states.count(e.b)) registered_graph.add_edge(e.a, e.b, e.covisibility);
  }
  const std::vector<StarSubgraph> stars = star_decomposition(registered_graph);

  with_pool(control, opt.workers, [&](WorkerPool& pool) {
    StageControl inner = control;
    inner.pool = &pool;
    if (registered_graph.edge_count() > 0) {
      try {
        result.coarse = coarse_stage(result.states, data, stars, opt, inner);
        result.cancelled = result.coarse.cancelled;
        if (!result.cancelled) {
          result.fine = fine_stage(result.states, data, opt, inner);
          result.cancelled = result.fine.cancelled;
        }
      } catch (const Error& e) {
        result.errors.push_back(std::string(error_code_name(e.code())) + ": " + e.what());
      }
      result.final_histogram = fine_histogram(result.states, data, opt);
    }
    return 0;
  });

  for (const int id : ids) {
    (result.states.count(id) ? result.registered : result.unregistered).push_back(id);
  }
  return result;
}

}  // namespace mba
