#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mba/depth_map.hpp"
#include "mba/geometry.hpp"
#include "mba/histogram.hpp"
#include "mba/initialization.hpp"
#include "mba/parallel.hpp"
#include "mba/pose_graph.hpp"

namespace mba {

struct OptimizerConfig {
  int iterations_coarse = 25000;
  int iterations_fine = 25000;
  double lr = 1e-3;
  double intrinsics_lr_multiplier = 50.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double tau_max_fine = 20.0;       // pixels
  double tau_bar_max_coarse = 10.0; // log(1 + pixels)
  int bin_count = 100;
  LossKind loss_kind = LossKind::kMba;
  double robust_scale = 2.0;        // pixels, used by the baseline kernels
  int histogram_rebuild_interval = 1;
  std::uint64_t seed = 0;
  int workers = 1;
  int progress_interval = 100;
  bool shared_focal = false;        // one focal parameter for every frame
  ProjectionOptions projection;

  // Throws InvalidArgument on negative iterations, non-positive lr or taus.
  void validate() const;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;

  explicit AdamState(std::size_t size = 0) : m(size, 0.0), v(size, 0.0) {}
  // params -= lr_k * mhat / (sqrt(vhat) + eps), per parameter.
  void step(std::span<double> params, std::span<const double> gradient, std::span<const double> learning_rates,
            const OptimizerConfig& config);
};

// Indices of each frame's trainable scalars in the flat parameter vector;
// -1 marks a frozen quantity.
struct FrameSlots {
  int rotation = -1;     // six consecutive slots
  int translation = -1;  // three consecutive slots
  int focal = -1;
  int log_alpha = -1;
  int beta = -1;
};

class ParameterLayout {
 public:
  // Frames are laid out in ascending id order. With `shared_focal`, every
  // frame with a trainable focal maps to one slot initialized from the first.
  ParameterLayout(const std::map<int, FrameState>& states, bool shared_focal);

  std::size_t size() const { return size_; }
  const FrameSlots& slots(int frame) const { return slots_.at(frame); }
  bool is_focal(std::size_t index) const { return focal_mask_[index]; }

  std::vector<double> gather(const std::map<int, FrameState>& states) const;
  // Writes trainable slots only; frozen quantities are never touched.
  void scatter(std::span<const double> params, std::map<int, FrameState>& states) const;
  std::vector<double> learning_rates(const OptimizerConfig& config) const;

 private:
  std::map<int, FrameSlots> slots_;
  std::vector<bool> focal_mask_;
  std::size_t size_ = 0;
};

struct ProgressEvent {
  std::string_view stage;
  int iteration = 0;
  double loss = 0.0;
  double inlier_fraction = 0.0;  // finite residuals below the stage threshold
};

using ProgressCallback = std::function<void(const ProgressEvent&)>;

struct StageControl {
  ProgressCallback progress;
  const std::atomic<bool>* cancel = nullptr;
  WorkerPool* pool = nullptr;  // a private pool of config.workers is used when null
};

struct StageReport {
  int iterations_run = 0;
  bool cancelled = false;
  // Reported loss: minus the normalized area under the residual CDF up to the
  // stage threshold (lower is better) for the MBA loss, the mean kernel value
  // for the baseline kernels.
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<std::pair<int, double>> trace;  // (iteration, loss) every progress_interval
};

// Value and analytic gradient of the descent objective with the residual
// distribution held fixed; used by tests to check the gradient chain.
struct LossEvaluation {
  double loss = 0.0;
  std::vector<double> gradient;
};

// Fine objective (1/|R|) sum F(r) [r < tau] for the given frozen histogram,
// with |R| = histogram total. For a baseline loss kind the histogram is
// ignored and the mean kernel value over finite residuals is used.
LossEvaluation evaluate_fine_loss(const std::map<int, FrameState>& states, const DataMatrix& data,
                                  const ParameterLayout& layout, const OptimizerConfig& config,
                                  const ResidualHistogram* frozen);

// Histogram of the current fine residuals (tau_max_fine, bin_count).
ResidualHistogram fine_histogram(const std::map<int, FrameState>& states, const DataMatrix& data,
                                 const OptimizerConfig& config);

// Coarse objective (1/N) sum_i (1/|R_i|) sum F_i(log(1 + r)) with frozen
// per-star histograms (aligned with `stars`; empty ones are skipped).
LossEvaluation evaluate_coarse_loss(const std::map<int, FrameState>& states, const DataMatrix& data,
                                    std::span<const StarSubgraph> stars, const ParameterLayout& layout,
                                    const OptimizerConfig& config, std::span<const ResidualHistogram> frozen);

std::vector<ResidualHistogram> coarse_histograms(const std::map<int, FrameState>& states, const DataMatrix& data,
                                                 std::span<const StarSubgraph> stars, const OptimizerConfig& config);

// Both stages only use blocks whose frames are both present in `states`.
// Throws AllSubgraphsEmpty (coarse) or EmptyResidualSet (fine) when no
// residual is usable at the start of the stage.
StageReport coarse_stage(std::map<int, FrameState>& states, const DataMatrix& data,
                         std::span<const StarSubgraph> stars, const OptimizerConfig& config,
                         const StageControl& control = {});
StageReport fine_stage(std::map<int, FrameState>& states, const DataMatrix& data, const OptimizerConfig& config,
                       const StageControl& control = {});

struct SfmFrameInput {
  int frame_id = 0;
  int width = 0;
  int height = 0;
  DepthMap depth;
  std::optional<PointMap> pointmap;
  std::optional<CameraIntrinsics> intrinsics;  // given intrinsics are kept fixed
};

struct SfmInputs {
  std::vector<SfmFrameInput> frames;
  std::vector<CorrespondenceSet> correspondences;
  bool shared_intrinsics = false;
};

struct SfmConfig {
  OptimizerConfig optimizer;
  int kappa = 200;
  double nu = 0.15;
  double chi = 0.2;
  TwoViewOptions two_view;
  CalibrationOptions calibration;
};

struct SfmResult {
  std::map<int, FrameState> states;  // registered frames
  std::vector<int> registered;
  std::vector<int> unregistered;
  std::optional<int> root;
  std::vector<std::string> warnings;
  std::vector<std::string> errors;   // "CODE: message"
  StageReport coarse;
  StageReport fine;
  std::optional<ResidualHistogram> final_histogram;
  std::size_t edge_count = 0;
  std::size_t record_count = 0;
  bool cancelled = false;
};

// Intrinsics, pose graph, data matrix, spanning-tree registration, then the
// coarse and fine stages. Sub-stage failures are recorded in `errors` and the
// registered subset is still returned.
SfmResult run_sfm(const SfmInputs& inputs, const SfmConfig& config, const StageControl& control = {});

// Initial intrinsics per frame: given ones, else calibrated from the
// pointmap (focal trainable). With shared intrinsics every frame receives the
// lower-median focal.
std::map<int, FrameState> initial_frame_states(const SfmInputs& inputs, const SfmConfig& config);

}  // namespace mba
