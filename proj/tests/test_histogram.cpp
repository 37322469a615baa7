#include <algorithm>
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"
#include "mba/error.hpp"
#include "mba/histogram.hpp"

using namespace mba;

namespace {

const std::vector<double> kFive = {1, 3, 5, 7, 19};

// Each residual below tau_max spreads its unit mass uniformly over its own bin.
double ramp_cdf_oracle(const std::vector<double>& residuals, double tau_max, int bins, double r) {
  const double w = tau_max / bins;
  double mass = 0.0;
  int total = 0;
  for (const double x : residuals) {
    if (!std::isfinite(x)) continue;
    ++total;
    if (x >= tau_max) continue;
    const double lo = std::min(std::floor(x / w), bins - 1.0) * w;
    mass += std::clamp((r - lo) / w, 0.0, 1.0);
  }
  return mass / total;
}

std::uint64_t double_sum_oracle(const std::vector<double>& residuals, double tau_max, int t) {
  std::uint64_t s = 0;
  for (int i = 0; i <= t; ++i) {
    const double tau = (static_cast<double>(i) / t) * tau_max;
    for (const double r : residuals) s += r < tau ? 1 : 0;
  }
  return s;
}

}  // namespace

TEST_CASE("build_histogram binning") {
  const ResidualHistogram zeros = build_histogram(std::vector<double>{0, 0, 0}, 20.0, 100);
  CHECK(zeros.counts()[0] == 3);
  CHECK(zeros.total() == 3);

  const ResidualHistogram h = build_histogram(kFive, 20.0, 100);
  CHECK(h.total() == 5);
  for (int b = 0; b < 100; ++b) {
    const bool hit = b == 5 || b == 15 || b == 25 || b == 35 || b == 95;
    CHECK(h.counts()[b] == (hit ? 1u : 0u));
  }

  const ResidualHistogram above = build_histogram(std::vector<double>{25, 30}, 20.0, 100);
  CHECK(above.total() == 2);
  CHECK(above.count_below_tau_max() == 0);

  const double inf = std::numeric_limits<double>::infinity();
  const ResidualHistogram with_inf = build_histogram(std::vector<double>{1.0, inf}, 20.0, 100);
  CHECK(with_inf.total() == 1);
  try {
    build_histogram(std::vector<double>{inf, inf}, 20.0, 100);
    FAIL("expected EmptyResidualSet");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEmptyResidualSet);
  }
}

TEST_CASE("cdf and pdf hand values") {
  const ResidualHistogram h = build_histogram(kFive, 20.0, 100);
  CHECK(cdf_at(h, 4.0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(cdf_at(h, 0.0) == 0.0);
  CHECK(cdf_at(h, 20.0) == 1.0);
  CHECK(pdf_at(h, 1.05) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(pdf_at(h, 20.0) == 0.0);
  CHECK(pdf_at(h, 50.0) == 0.0);
  const double expected[] = {0.0, 0.2, 0.4, 0.6, 0.8};
  for (int k = 0; k < 5; ++k) CHECK(cdf_at(h, kFive[k]) == doctest::Approx(expected[k]).epsilon(1e-14));

  std::vector<double> uniform;
  for (int b = 0; b < 100; ++b) uniform.push_back(0.2 * b + 0.1);
  const ResidualHistogram u = build_histogram(uniform, 20.0, 100);
  for (double r = 0.05; r < 20.0; r += 0.37) CHECK(pdf_at(u, r) == doctest::Approx(1.0 / 20.0).epsilon(1e-14));
}

TEST_CASE("cdf matches the per-residual ramp oracle and is monotone") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> value(0.0, 40.0);
  std::uniform_int_distribution<int> size(1, 500);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> rs(size(rng));
    for (double& r : rs) r = value(rng);
    const ResidualHistogram h = build_histogram(rs, 20.0, 100);
    double prev = 0.0;
    for (double r = 0.0; r <= 25.0; r += 0.013) {
      const double f = cdf_at(h, r);
      CHECK(f >= prev);
      CHECK(f == doctest::Approx(ramp_cdf_oracle(rs, 20.0, 100, r)).epsilon(1e-12));
      prev = f;
    }
    // Integral of the density equals the mass below tau_max.
    double integral = 0.0;
    for (int b = 0; b < 100; ++b) integral += pdf_at(h, (b + 0.5) * h.bin_width()) * h.bin_width();
    CHECK(std::abs(integral - cdf_at(h, 20.0)) < 1e-12);
  }
}

TEST_CASE("pdf is the bin-interior derivative of cdf") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> value(0.0, 30.0);
  std::vector<double> rs(300);
  for (double& r : rs) r = value(rng);
  const ResidualHistogram h = build_histogram(rs, 20.0, 100);
  for (int b = 0; b < 100; ++b) {
    const double mid = (b + 0.5) * h.bin_width();
    const double step = 1e-4;
    const double fd = (cdf_at(h, mid + step) - cdf_at(h, mid - step)) / (2 * step);
    CHECK(fd == doctest::Approx(pdf_at(h, mid)).epsilon(1e-9));
  }
}

TEST_CASE("chunked histogram equals serial histogram") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> value(0.0, 30.0);
  std::vector<double> rs(10007);
  for (double& r : rs) r = value(rng);
  const ResidualHistogram serial = build_histogram(rs, 20.0, 100);
  for (const std::size_t chunks : {1u, 2u, 3u, 7u, 64u}) {
    CHECK(build_histogram_chunked(rs, 20.0, 100, chunks) == serial);
  }
  ResidualHistogram incremental(20.0, 100);
  for (const double r : rs) incremental.add(r);
  CHECK(incremental == serial);
}

TEST_CASE("binary and marginalized scores") {
  CHECK(binary_score(std::vector<double>{1, 3, 5}, 4.0) == 2);
  CHECK(binary_score(kFive, 0.0) == 0);
  CHECK(binary_score(kFive, 20.0) == 5);
  CHECK(marginalized_score(kFive, 20.0, 100) == 325);
  CHECK(marginalized_score(kFive, 20.0, 100) == double_sum_oracle(kFive, 20.0, 100));
  CHECK(marginalized_score(std::vector<double>{}, 20.0, 100) == 0);
  CHECK(marginalized_score(std::vector<double>(5, 0.0), 20.0, 100) == 500);

  // With T = 1 the grid is {0, tau_max}: plain inlier counting.
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> value(0.0, 40.0);
  std::vector<double> rs(1000);
  for (double& r : rs) r = value(rng);
  CHECK(marginalized_score(rs, 20.0, 1) == binary_score(rs, 20.0));
}

TEST_CASE("marginalized score equals the double sum on random sets") {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int> size(1, 300);
  std::uniform_int_distribution<int> grid(1, 120);
  std::uniform_real_distribution<double> value(0.0, 40.0);
  std::bernoulli_distribution on_grid(0.3);
  for (int trial = 0; trial < 300; ++trial) {
    const int t = grid(rng);
    std::vector<double> rs(size(rng));
    for (double& r : rs) {
      r = on_grid(rng) ? (static_cast<double>(std::uniform_int_distribution<int>(0, 2 * t)(rng)) / t) * 20.0
                       : value(rng);
    }
    CHECK(marginalized_score(rs, 20.0, t) == double_sum_oracle(rs, 20.0, t));
  }
}

TEST_CASE("mba_loss forward, gradient and truncation") {
  const ResidualHistogram h = build_histogram(kFive, 20.0, 100);
  const SurrogateLoss l = mba_loss(kFive, h);
  CHECK(l.loss == doctest::Approx(-0.4).epsilon(1e-14));

  const std::vector<double> far = {25.0, std::numeric_limits<double>::infinity()};
  const SurrogateLoss z = mba_loss(far, h);
  CHECK(z.loss == 0.0);
  for (const double g : z.gradient) CHECK(std::signbit(g) == false);
  for (const double g : z.gradient) CHECK(g == 0.0);

  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> value(0.0, 30.0);
  std::vector<double> rs(400);
  for (double& r : rs) r = value(rng);
  const ResidualHistogram hh = build_histogram(rs, 20.0, 100);
  const SurrogateLoss base = mba_loss(rs, hh);
  for (std::size_t k = 0; k < rs.size(); ++k) {
    const double w = hh.bin_width();
    const double pos = rs[k] / w - std::floor(rs[k] / w);
    if (rs[k] >= 20.0) {
      CHECK(base.gradient[k] == 0.0);
      continue;
    }
    if (pos < 0.01 || pos > 0.99) continue;
    std::vector<double> plus = rs, minus = rs;
    plus[k] += 1e-4;
    minus[k] -= 1e-4;
    const double fd = (mba_loss(plus, hh).loss - mba_loss(minus, hh).loss) / 2e-4;
    CHECK(fd == doctest::Approx(base.gradient[k]).epsilon(1e-4));
  }
}

TEST_CASE("surrogate equals the integral of F dF over the same histogram") {
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> value(0.0, 30.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> rs(2000);
    for (double& r : rs) r = value(rng);
    const ResidualHistogram h = build_histogram(rs, 20.0, 100);
    const double direct = -mba_loss(rs, h).loss;
    double integral = 0.0;
    const int steps = 200000;
    const double dr = 20.0 / steps;
    for (int s = 0; s < steps; ++s) {
      const double r = (s + 0.5) * dr;
      integral += cdf_at(h, r) * pdf_at(h, r) * dr;
    }
    // Quadrature error bound: two bins' worth of probability mass.
    const double tolerance = 2.0 * h.bin_width() * (*std::max_element(h.counts().begin(), h.counts().end())) /
                             (static_cast<double>(h.total()) * h.bin_width());
    CHECK(std::abs(direct - integral) <= tolerance);
  }
}

TEST_CASE("robust baselines") {
  for (const LossKind k : {LossKind::kL2, LossKind::kSoftL1, LossKind::kCauchy, LossKind::kTukey}) {
    const RobustLossValue v = robust_loss_baseline(0.0, k, 2.0);
    CHECK(v.loss == 0.0);
    CHECK(v.derivative == 0.0);
    for (double r = 0.05; r < 5.0; r += 0.1) {
      const double fd =
          (robust_loss_baseline(r + 1e-6, k, 2.0).loss - robust_loss_baseline(r - 1e-6, k, 2.0).loss) / 2e-6;
      CHECK(fd == doctest::Approx(robust_loss_baseline(r, k, 2.0).derivative).epsilon(1e-6));
    }
  }
  const RobustLossValue l2 = robust_loss_baseline(3.0, LossKind::kL2, 1.0);
  CHECK(l2.loss == 9.0);
  CHECK(l2.derivative == 6.0);
  const RobustLossValue t = robust_loss_baseline(5.0, LossKind::kTukey, 2.0);
  CHECK(t.loss == doctest::Approx(4.0 / 6.0));
  CHECK(t.derivative == 0.0);
  CHECK_THROWS_AS(robust_loss_baseline(1.0, LossKind::kL2, 0.0), Error);
  CHECK(parse_loss_kind("soft_l1") == LossKind::kSoftL1);
  CHECK_THROWS_AS(parse_loss_kind("huber"), Error);
}
