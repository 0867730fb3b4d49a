#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mpsf/sample.hpp"

using namespace mpsf;

namespace {

// analytic sphere SDF field for coarse_to_fine
struct SphereField {
  double radius = 0.7;
  double sdf(const Vec3& p) const { return norm(p) - radius; }
};

RayPdf bimodal_pdf() {
  RayPdf p;
  int n = 200;
  for (int i = 0; i < n; ++i) {
    double x = 4.0 * i / (n - 1);
    p.knots.push_back(x);
    double d = std::exp(-0.5 * std::pow((x - 1.0) / 0.2, 2)) +
               0.6 * std::exp(-0.5 * std::pow((x - 3.0) / 0.35, 2));
    p.density.push_back(d);
  }
  p.normalize();
  return p;
}

double analytic_cdf(const RayPdf& p, double x) {
  double acc = 0;
  for (size_t i = 0; i + 1 < p.knots.size(); ++i) {
    if (x <= p.knots[i]) break;
    double hi = std::min(x, p.knots[i + 1]);
    double w = (hi - p.knots[i]) / (p.knots[i + 1] - p.knots[i]);
    double d_hi = p.density[i] * (1 - w) + p.density[i + 1] * w;
    acc += 0.5 * (p.density[i] + d_hi) * (hi - p.knots[i]);
  }
  return acc;
}

}  // namespace

TEST_CASE("inverse-CDF sampling: empirical CDF within 0.01 sup-distance at 1e5 draws") {
  RayPdf pdf = bimodal_pdf();
  Pcg32 rng(11);
  const int n = 100000;
  std::vector<double> draws(n);
  for (int i = 0; i < n; ++i) draws[i] = pdf.sample(rng.uniform());
  std::sort(draws.begin(), draws.end());
  double sup = 0;
  for (int i = 0; i < n; i += 97) {
    double emp = (i + 1.0) / n;
    double ana = analytic_cdf(pdf, draws[i]);
    sup = std::max(sup, std::fabs(emp - ana));
  }
  CHECK(sup <= 0.01);
}

TEST_CASE("gaussian prior sigma follows 0.5(1-mu) with a lower clamp") {
  std::vector<double> grid = {0.0, 1.0, 2.0, 3.0};
  SUBCASE("mu=0.8 gives sigma=0.1") {
    DepthPrior prior{1.5, 0.8, true};
    RayPdf p = gaussian_pdf(prior, 1e-3, grid);
    // density ratio between mean and mean+sigma pins sigma
    double at_mean = p.value(1.5);
    double at_sig = p.value(1.5 + 0.1);
    CHECK(at_sig / at_mean == doctest::Approx(std::exp(-0.5)).epsilon(1e-3));
  }
  SUBCASE("mu=1 clamps sigma to sigma_min") {
    DepthPrior prior{1.5, 1.0, true};
    RayPdf p = gaussian_pdf(prior, 1e-3, grid);
    double at_mean = p.value(1.5);
    double at_sig = p.value(1.5 + 1e-3);
    CHECK(at_sig / at_mean == doctest::Approx(std::exp(-0.5)).epsilon(1e-2));
  }
  SUBCASE("mu=0 gives sigma=0.5") {
    DepthPrior prior{1.5, 0.0, true};
    RayPdf p = gaussian_pdf(prior, 1e-3, grid);
    double at_mean = p.value(1.5);
    double at_sig = p.value(2.0);
    CHECK(at_sig / at_mean == doctest::Approx(std::exp(-0.5)).epsilon(1e-3));
  }
  SUBCASE("invalid prior yields the uniform identity PDF") {
    DepthPrior prior{0.0, 0.0, false};
    RayPdf p = gaussian_pdf(prior, 1e-3, grid);
    CHECK(p.is_uniform);
  }
}

TEST_CASE("product_pdf: identity and exact commutativity") {
  RayPdf h = bimodal_pdf();
  SUBCASE("uniform second factor is the identity") {
    RayPdf u = RayPdf::uniform(0.0, 4.0, 200);
    RayPdf g = product_pdf(h, u);
    REQUIRE(g.knots.size() == h.knots.size());
    for (size_t i = 0; i < h.knots.size(); ++i) {
      CHECK(g.knots[i] == h.knots[i]);
      CHECK(g.density[i] == h.density[i]);
    }
  }
  SUBCASE("commutative in both uniform and generic cases") {
    RayPdf u = RayPdf::uniform(0.0, 4.0, 16);
    RayPdf a = product_pdf(h, u);
    RayPdf b = product_pdf(u, h);
    REQUIRE(a.knots.size() == b.knots.size());
    for (size_t i = 0; i < a.knots.size(); ++i) {
      CHECK(a.knots[i] == b.knots[i]);
      CHECK(a.density[i] == b.density[i]);
    }
    DepthPrior prior{2.0, 0.5, true};
    RayPdf n = gaussian_pdf(prior, 1e-3, h.knots);
    RayPdf ab = product_pdf(h, n);
    RayPdf ba = product_pdf(n, h);
    REQUIRE(ab.knots.size() == ba.knots.size());
    for (size_t i = 0; i < ab.knots.size(); ++i) CHECK(ab.density[i] == ba.density[i]);
  }
  SUBCASE("two equal-variance gaussians multiply to a mode at the midpoint") {
    std::vector<double> grid;
    for (int i = 0; i <= 400; ++i) grid.push_back(4.0 * i / 400.0);
    RayPdf na = gaussian_pdf(DepthPrior{1.6, 0.6, true}, 1e-3, grid);  // sigma 0.2
    RayPdf nb = gaussian_pdf(DepthPrior{2.4, 0.6, true}, 1e-3, grid);
    na.is_uniform = nb.is_uniform = false;
    RayPdf g = product_pdf(na, nb);
    double best_x = 0, best_d = -1;
    for (size_t i = 0; i < g.knots.size(); ++i)
      if (g.density[i] > best_d) {
        best_d = g.density[i];
        best_x = g.knots[i];
      }
    CHECK(best_x == doctest::Approx(2.0).epsilon(0.01));
  }
  SUBCASE("vanishing product mass falls back to the prior") {
    // h lives on [0,1.8], prior mass far away at 3.5: disjoint supports
    RayPdf h2;
    for (int i = 0; i <= 50; ++i) {
      double x = 4.0 * i / 50.0;
      h2.knots.push_back(x);
      h2.density.push_back(x < 1.8 ? 1.0 : 0.0);
    }
    h2.normalize();
    h2.is_uniform = false;
    std::vector<double> grid = h2.knots;
    RayPdf n = gaussian_pdf(DepthPrior{3.5, 0.99, true}, 1e-3, grid);
    RayPdf g = product_pdf(h2, n);
    double mode = 0, best = -1;
    for (size_t i = 0; i < g.knots.size(); ++i)
      if (g.density[i] > best) {
        best = g.density[i];
        mode = g.knots[i];
      }
    CHECK(mode == doctest::Approx(3.5).epsilon(0.01));
  }
}

TEST_CASE("product with uniform h draws like the prior (KS < 0.01 on 1e4 draws)") {
  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(4.0 * i / 100.0);
  RayPdf h = RayPdf::uniform(0.0, 4.0, 101);
  DepthPrior prior{2.0, 0.7, true};  // sigma 0.15
  RayPdf n = gaussian_pdf(prior, 1e-3, grid);
  RayPdf g = product_pdf(h, n);

  Pcg32 rng(13);
  const int N = 10000;
  std::vector<double> draws(N);
  for (int i = 0; i < N; ++i) draws[i] = g.sample(rng.uniform());
  std::sort(draws.begin(), draws.end());
  double sup = 0;
  for (int i = 0; i < N; i += 23) {
    double emp = (i + 1.0) / N;
    double ana = analytic_cdf(n, draws[i]);
    sup = std::max(sup, std::fabs(emp - ana));
  }
  CHECK(sup < 0.01);
}

TEST_CASE("resample: split counts, stratification, bounds, ascending") {
  Ray ray{{0, 0, 0}, {0, 0, 1}, 0.5, 4.5};
  SUBCASE("n_new=128 -> 64 + 64") {
    RayPdf g = RayPdf::uniform(ray.t_near, ray.t_far);
    Pcg32 rng(17);
    auto t = resample(g, ray, 128, rng);
    CHECK(t.size() == 128);
    for (size_t i = 1; i < t.size(); ++i) CHECK(t[i] > t[i - 1]);
    CHECK(t.front() >= ray.t_near);
    CHECK(t.back() <= ray.t_far);
  }
  SUBCASE("uniform g: each stratified draw falls in its own bin") {
    RayPdf g = RayPdf::uniform(ray.t_near, ray.t_far);
    Pcg32 rng(19);
    int half = 64;
    std::vector<double> draws;
    for (int j = 0; j < half; ++j) {
      double u = (j + rng.uniform()) / half;
      draws.push_back(g.sample(u));
    }
    double span = ray.t_far - ray.t_near;
    for (int j = 0; j < half; ++j) {
      double lo = ray.t_near + span * j / half;
      double hi = ray.t_near + span * (j + 1) / half;
      CHECK(draws[j] >= lo);
      CHECK(draws[j] <= hi);
    }
  }
  SUBCASE("odd n_new is rejected") {
    RayPdf g = RayPdf::uniform(ray.t_near, ray.t_far);
    Pcg32 rng(23);
    CHECK_THROWS_AS((void)resample(g, ray, 31, rng), std::invalid_argument);
  }
  SUBCASE("narrow prior concentrates >= 60 of 64 guided samples in d +- 5e-3") {
    std::vector<double> grid;
    for (int i = 0; i <= 64; ++i) grid.push_back(ray.t_near + (ray.t_far - ray.t_near) * i / 64.0);
    RayPdf h = RayPdf::uniform(ray.t_near, ray.t_far, 65);
    DepthPrior prior{1.0, 1.0, true};  // sigma clamped to 1e-3
    RayPdf n = gaussian_pdf(prior, 1e-3, grid);
    RayPdf g = product_pdf(h, n);
    Pcg32 rng(29);
    auto t = resample(g, ray, 128, rng);
    // identify the guided half by counting samples near d among all 128;
    // the linear half contributes at most one sample to that window
    int near = 0;
    for (double x : t)
      if (std::fabs(x - 1.0) <= 5e-3) ++near;
    CHECK(near >= 60);
  }
}

TEST_CASE("coarse_to_fine on the analytic sphere finds the intersection") {
  SphereField field;
  Vec3 o = {0, 0, -2};
  Ray ray{o, {0, 0, 1}, 0.2, 4.0};
  Pcg32 rng(31);
  auto res = coarse_to_fine(ray, field, 64, 4, 32.0, rng, 1e-4);
  CHECK(res.points.size() == 64);
  for (size_t i = 1; i < res.points.size(); ++i) CHECK(res.points[i] > res.points[i - 1]);

  double mode_x = 0, mode_d = -1;
  for (size_t i = 0; i < res.pdf.knots.size(); ++i)
    if (res.pdf.density[i] > mode_d) {
      mode_d = res.pdf.density[i];
      mode_x = res.pdf.knots[i];
    }
  double t_true = 2.0 - 0.7;
  CHECK(std::fabs(mode_x - t_true) <= 0.02);
}

TEST_CASE("coarse_to_fine: surface-free ray falls back to uniform") {
  SphereField field;
  field.radius = 0.1;
  Ray ray{{0, 2.0, -2}, {0, 0, 1}, 0.2, 4.0};  // misses the sphere
  Pcg32 rng(37);
  auto res = coarse_to_fine(ray, field, 64, 4, 32.0, rng, 1e-4);
  CHECK(res.pdf.is_uniform);
  CHECK(res.points.size() == 64);
}

TEST_CASE("coarse_to_fine: n_total=256 returns exactly 256 points") {
  SphereField field;
  Ray ray{{0, 0, -2}, {0, 0, 1}, 0.2, 4.0};
  Pcg32 rng(41);
  auto res = coarse_to_fine(ray, field, 256, 4, 32.0, rng, 1e-4);
  CHECK(res.points.size() == 256);
}

TEST_CASE("coarse_to_fine rejects degenerate ROI and bad budgets") {
  SphereField field;
  Pcg32 rng(43);
  Ray degenerate{{0, 0, 0}, {0, 0, 1}, 1.0, 1.0 + 1e-9};
  CHECK_THROWS_AS((void)coarse_to_fine(degenerate, field, 64, 4, 32.0, rng), std::invalid_argument);
  Ray ok{{0, 0, -2}, {0, 0, 1}, 0.2, 4.0};
  CHECK_THROWS_AS((void)coarse_to_fine(ok, field, 63, 4, 32.0, rng), std::invalid_argument);
  CHECK_THROWS_AS((void)coarse_to_fine(ok, field, 4, 1, 32.0, rng), std::invalid_argument);
}

TEST_CASE("pdf floor keeps a confident wrong prior from being vetoed") {
  // h concentrated near 1.0, confident prior at 3.0: the floored h lets the
  // product place its mode at the prior
  SphereField field;
  Ray ray{{0, 0, -2}, {0, 0, 1}, 0.2, 4.0};
  Pcg32 rng(47);
  auto res = coarse_to_fine(ray, field, 64, 4, 32.0, rng, 1e-4);
  DepthPrior prior{3.0, 0.95, true};
  RayPdf n = gaussian_pdf(prior, 1e-3, res.pdf.knots);
  RayPdf g = product_pdf(res.pdf, n);
  double mass_near_prior = 0, total = 0;
  for (size_t i = 0; i + 1 < g.knots.size(); ++i) {
    double m = 0.5 * (g.density[i] + g.density[i + 1]) * (g.knots[i + 1] - g.knots[i]);
    total += m;
    if (g.knots[i] > 2.7 && g.knots[i] < 3.3) mass_near_prior += m;
  }
  CHECK(mass_near_prior / total > 0.5);
}
