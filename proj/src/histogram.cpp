#include "mba/histogram.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mba/error.hpp"

namespace mba {

ResidualHistogram::ResidualHistogram(double tau_max, int bin_count) : tau_max_(tau_max) {
  if (!(tau_max > 0.0) || !std::isfinite(tau_max)) {
    throw Error(ErrorCode::kInvalidArgument, "histogram: tau_max must be positive and finite");
  }
  if (bin_count < 2) throw Error(ErrorCode::kInvalidArgument, "histogram: bin_count must be >= 2");
  counts_.assign(static_cast<std::size_t>(bin_count), 0);
  cumulative_.assign(static_cast<std::size_t>(bin_count), 0);
}

int ResidualHistogram::bin_of(double residual) const {
  const int bins = bin_count();
  const double pos = residual * static_cast<double>(bins) / tau_max_;
  if (!(pos > 0.0)) return 0;
  return std::min(static_cast<int>(pos), bins - 1);
}

void ResidualHistogram::add(double residual) {
  if (!std::isfinite(residual)) return;
  ++total_;
  if (residual < tau_max_) {
    const int b = bin_of(residual);
    ++counts_[b];
    for (std::size_t i = b; i < cumulative_.size(); ++i) ++cumulative_[i];
  }
}

void ResidualHistogram::add(std::span<const double> residuals) {
  for (const double r : residuals) {
    if (!std::isfinite(r)) continue;
    ++total_;
    if (r < tau_max_) ++counts_[bin_of(r)];
  }
  std::partial_sum(counts_.begin(), counts_.end(), cumulative_.begin());
}

void ResidualHistogram::merge(const ResidualHistogram& other) {
  if (other.bin_count() != bin_count() || other.tau_max_ != tau_max_) {
    throw Error(ErrorCode::kInvalidArgument, "histogram merge: binning mismatch");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
  std::partial_sum(counts_.begin(), counts_.end(), cumulative_.begin());
}

ResidualHistogram build_histogram(std::span<const double> residuals, double tau_max, int bin_count) {
  ResidualHistogram h(tau_max, bin_count);
  h.add(residuals);
  if (h.total() == 0) throw Error(ErrorCode::kEmptyResidualSet, "histogram: no finite residual");
  return h;
}

ResidualHistogram build_histogram_chunked(std::span<const double> residuals, double tau_max, int bin_count,
                                          std::size_t chunk_count) {
  chunk_count = std::max<std::size_t>(1, chunk_count);
  ResidualHistogram h(tau_max, bin_count);
  const std::size_t n = residuals.size();
  for (std::size_t c = 0; c < chunk_count; ++c) {
    const std::size_t begin = n * c / chunk_count;
    const std::size_t end = n * (c + 1) / chunk_count;
    ResidualHistogram partial(tau_max, bin_count);
    partial.add(residuals.subspan(begin, end - begin));
    h.merge(partial);
  }
  if (h.total() == 0) throw Error(ErrorCode::kEmptyResidualSet, "histogram: no finite residual");
  return h;
}

double cdf_at(const ResidualHistogram& h, double r) {
  if (h.total() == 0 || !(r > 0.0)) return 0.0;
  const double total = static_cast<double>(h.total());
  if (r >= h.tau_max()) return static_cast<double>(h.count_below_tau_max()) / total;
  const double pos = r * static_cast<double>(h.bin_count()) / h.tau_max();
  const int k = std::min(static_cast<int>(pos), h.bin_count() - 1);
  const double below = k > 0 ? static_cast<double>(h.cumulative()[k - 1]) : 0.0;
  return (below + static_cast<double>(h.counts()[k]) * (pos - k)) / total;
}

double pdf_at(const ResidualHistogram& h, double r) {
  if (h.total() == 0 || !(r < h.tau_max())) return 0.0;
  return static_cast<double>(h.counts()[h.bin_of(r)]) / (static_cast<double>(h.total()) * h.bin_width());
}

std::uint64_t binary_score(std::span<const double> residuals, double tau) {
  return static_cast<std::uint64_t>(
      std::count_if(residuals.begin(), residuals.end(), [tau](double r) { return r < tau; }));
}

std::vector<double> threshold_grid(double tau_max, int threshold_count) {
  if (threshold_count < 1) throw Error(ErrorCode::kInvalidArgument, "threshold count must be >= 1");
  std::vector<double> grid(static_cast<std::size_t>(threshold_count) + 1);
  for (int i = 0; i <= threshold_count; ++i) {
    grid[i] = (static_cast<double>(i) / threshold_count) * tau_max;
  }
  return grid;
}

std::uint64_t marginalized_score(std::span<const double> residuals, std::span<const double> thresholds) {
  // For each residual, the number of thresholds strictly above it.
  std::uint64_t score = 0;
  for (const double r : residuals) {
    if (std::isnan(r)) continue;
    const auto above = std::upper_bound(thresholds.begin(), thresholds.end(), r);
    score += static_cast<std::uint64_t>(thresholds.end() - above);
  }
  return score;
}

std::uint64_t marginalized_score(std::span<const double> residuals, double tau_max, int threshold_count) {
  const std::vector<double> grid = threshold_grid(tau_max, threshold_count);
  return marginalized_score(residuals, grid);
}

SurrogateTerm surrogate_term(const ResidualHistogram& h, double r) {
  if (!(r < h.tau_max())) return {};
  return {cdf_at(h, r), pdf_at(h, r)};
}

SurrogateLoss mba_loss(std::span<const double> residuals, const ResidualHistogram& h) {
  SurrogateLoss out;
  out.gradient.assign(residuals.size(), 0.0);
  if (h.total() == 0) return out;
  const double inv_total = 1.0 / static_cast<double>(h.total());
  for (std::size_t k = 0; k < residuals.size(); ++k) {
    const SurrogateTerm term = surrogate_term(h, residuals[k]);
    if (term.value == 0.0 && term.slope == 0.0) continue;
    out.loss -= term.value * inv_total;
    out.gradient[k] = -term.slope * inv_total;
  }
  return out;
}

std::string_view loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::kMba: return "mba";
    case LossKind::kSoftL1: return "soft_l1";
    case LossKind::kCauchy: return "cauchy";
    case LossKind::kTukey: return "tukey";
    case LossKind::kL2: return "l2";
  }
  return "mba";
}

LossKind parse_loss_kind(std::string_view name) {
  for (LossKind kind : {LossKind::kMba, LossKind::kSoftL1, LossKind::kCauchy, LossKind::kTukey, LossKind::kL2}) {
    if (loss_kind_name(kind) == name) return kind;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown loss kind '" + std::string(name) + "'");
}

RobustLossValue robust_loss_baseline(double residual, LossKind kind, double scale) {
  if (!(scale > 0.0)) throw Error(ErrorCode::kInvalidArgument, "robust loss: scale must be positive");
  const double r = residual;
  const double s2 = scale * scale;
  const double u = (r / scale) * (r / scale);
  switch (kind) {
    case LossKind::kL2:
      return {r * r, 2.0 * r};
    case LossKind::kSoftL1: {
      const double root = std::sqrt(1.0 + u);
      return {2.0 * s2 * (root - 1.0), 2.0 * r / root};
    }
    case LossKind::kCauchy:
      return {s2 * std::log1p(u), 2.0 * r / (1.0 + u)};
    case LossKind::kTukey: {
      if (r > scale) return {s2 / 6.0, 0.0};
      const double w = 1.0 - u;
      return {(s2 / 6.0) * (1.0 - w * w * w), r * w * w};
    }
    case LossKind::kMba:
      break;
  }
  throw Error(ErrorCode::kInvalidArgument, "robust loss: mba is not a per-residual kernel");
}

}  // namespace mba
