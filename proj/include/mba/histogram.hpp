#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace mba {

// Empirical residual distribution on [0, tau_max) with `bin_count` equal bins.
// `total` counts every finite residual offered to the histogram, including
// those at or beyond tau_max; +inf residuals are not counted at all.
class ResidualHistogram {
 public:
  ResidualHistogram(double tau_max, int bin_count);

  void add(double residual);
  void add(std::span<const double> residuals);
  // Exact integer merge of a partial histogram over the same binning.
  void merge(const ResidualHistogram& other);

  double tau_max() const { return tau_max_; }
  int bin_count() const { return static_cast<int>(counts_.size()); }
  double bin_width() const { return tau_max_ / static_cast<double>(counts_.size()); }
  std::uint64_t total() const { return total_; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  // cumulative()[b] = sum of counts[0..b].
  const std::vector<std::uint64_t>& cumulative() const { return cumulative_; }
  std::uint64_t count_below_tau_max() const { return cumulative_.back(); }

  // Bin index of a residual below tau_max.
  int bin_of(double residual) const;

  bool operator==(const ResidualHistogram& other) const = default;

 private:
  double tau_max_;
  std::vector<std::uint64_t> counts_;
  std::vector<std::uint64_t> cumulative_;
  std::uint64_t total_ = 0;
};

ResidualHistogram build_histogram(std::span<const double> residuals, double tau_max, int bin_count = 100);

// Same result as build_histogram, computed as per-chunk partial histograms
// merged in chunk order.
ResidualHistogram build_histogram_chunked(std::span<const double> residuals, double tau_max, int bin_count,
                                          std::size_t chunk_count);

// F(r): linear interpolation of the cumulative counts, normalized by total.
double cdf_at(const ResidualHistogram& h, double r);
// p(r): piecewise-constant bin density; zero at and above tau_max.
double pdf_at(const ResidualHistogram& h, double r);

// Number of residuals strictly below tau.
std::uint64_t binary_score(std::span<const double> residuals, double tau);

// Thresholds tau_i = (i / T) * tau_max for i = 0..T.
std::vector<double> threshold_grid(double tau_max, int threshold_count);

// Sum over i = 0..T of binary_score(residuals, tau_i), computed exactly.
std::uint64_t marginalized_score(std::span<const double> residuals, double tau_max, int threshold_count);
std::uint64_t marginalized_score(std::span<const double> residuals, std::span<const double> thresholds);

struct SurrogateLoss {
  double loss = 0.0;
  std::vector<double> gradient;  // dloss / dr_k
};

// loss = -(1/total) sum_k F(r_k) [r_k < tau_max], gradient -(1/total) p(r_k)
// [r_k < tau_max]. The histogram is a constant of the differentiation.
SurrogateLoss mba_loss(std::span<const double> residuals, const ResidualHistogram& h);

// Single-residual term of mba_loss, before the 1/total normalization.
struct SurrogateTerm {
  double value = 0.0;     // F(r) [r < tau_max]
  double slope = 0.0;     // p(r) [r < tau_max]
};
SurrogateTerm surrogate_term(const ResidualHistogram& h, double r);

enum class LossKind { kMba, kSoftL1, kCauchy, kTukey, kL2 };

std::string_view loss_kind_name(LossKind kind);
LossKind parse_loss_kind(std::string_view name);

struct RobustLossValue {
  double loss = 0.0;
  double derivative = 0.0;
};

// Classical robust kernels on a residual r >= 0 with scale s > 0.
RobustLossValue robust_loss_baseline(double residual, LossKind kind, double scale);

}  // namespace mba
