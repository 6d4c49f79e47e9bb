#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "fblab/mesh.hpp"

using namespace fblab;

TEST(Grid, IntervalNodesAndSpacing) {
  const Grid g = build_grid(Domain::interval(0.0, 1.0), 4);
  EXPECT_EQ(g.num_nodes(), 5u);
  EXPECT_DOUBLE_EQ(g.h(), 0.25);
  EXPECT_EQ(g.num_elements(), 4u);
  EXPECT_TRUE(g.is_boundary(0));
  EXPECT_TRUE(g.is_boundary(4));
  EXPECT_FALSE(g.is_boundary(2));
}

TEST(Grid, SquareBoundaryCount) {
  const Grid g = build_grid(Domain::rectangle(0.0, 1.0, 0.0, 1.0), 2);
  EXPECT_EQ(g.num_nodes(), 9u);
  const auto mask = g.boundary_mask();
  EXPECT_EQ(std::count(mask.begin(), mask.end(), true), 8);
  EXPECT_FALSE(mask[g.index(1, 1)]);
}

TEST(Grid, RejectsCoarseResolution) {
  try {
    build_grid(Domain::interval(0.0, 1.0), 1);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidResolution);
  }
}

TEST(Grid, RejectsDegenerateDomain) {
  EXPECT_THROW(Domain::interval(1.0, 1.0), Error);
  EXPECT_THROW(Domain::rectangle(0.0, 1.0, 2.0, 1.0), Error);
}

TEST(Grid, NodeElementIncidenceIsConsistent) {
  const Grid g = build_grid(Domain::rectangle(0.0, 2.0, -1.0, 1.0), 5);
  std::vector<int> count(g.num_nodes(), 0);
  for (std::size_t e = 0; e < g.num_elements(); ++e) {
    const Element el = g.element(e);
    for (int k = 0; k < el.count; ++k) ++count[el.vertex[k]];
  }
  std::array<std::size_t, 6> els{};
  for (std::size_t k = 0; k < g.num_nodes(); ++k) {
    const int n = g.elements_of_node(k, els);
    ASSERT_EQ(n, count[k]) << "node " << k;
    for (int t = 0; t < n; ++t) {
      const Element el = g.element(els[t]);
      EXPECT_TRUE(std::find(el.vertex.begin(), el.vertex.begin() + el.count, k) !=
                  el.vertex.begin() + el.count);
    }
  }
  EXPECT_EQ(count[g.index(2, 2)], 6);
}

TEST(CellGradients, ExactOnLinearInterval) {
  for (int n : {2, 7, 64}) {
    const Grid g = build_grid(Domain::interval(0.0, 1.0), n);
    const auto u = DiscreteFunction::sample(g, [](const Point& x) { return x[0]; });
    for (const Vec2& gr : cell_gradients(u)) EXPECT_NEAR(gr[0], 1.0, 1e-12);
  }
}

TEST(CellGradients, ConstantHasZeroGradient) {
  const Grid g = build_grid(Domain::rectangle(0.0, 1.0, 0.0, 1.0), 6);
  const auto u = DiscreteFunction::sample(g, [](const Point&) { return 3.5; });
  for (const Vec2& gr : cell_gradients(u)) {
    EXPECT_EQ(gr[0], 0.0);
    EXPECT_EQ(gr[1], 0.0);
  }
}

TEST(CellGradients, ExactOnAffinePlane) {
  const Grid g = build_grid(Domain::rectangle(-1.0, 1.0, 0.0, 3.0), 9);
  const auto u = DiscreteFunction::sample(g, [](const Point& x) { return x[0] + 2.0 * x[1]; });
  for (const Vec2& gr : cell_gradients(u)) {
    EXPECT_NEAR(gr[0], 1.0, 1e-12);
    EXPECT_NEAR(gr[1], 2.0, 1e-12);
  }
}

TEST(Integrate, MeasureAndMidpointRule) {
  const Grid g = build_grid(Domain::interval(0.0, 1.0), 10);
  std::vector<double> ones(g.num_elements(), 1.0);
  EXPECT_NEAR(integrate(g, ones), 1.0, 1e-14);
  std::vector<double> mid(g.num_elements());
  for (std::size_t e = 0; e < mid.size(); ++e) mid[e] = g.barycenter(e)[0];
  EXPECT_NEAR(integrate(g, mid), 0.5, 1e-14);

  const Grid sq = build_grid(Domain::rectangle(0.0, 1.0, 0.0, 1.0), 4);
  std::vector<double> threes(sq.num_elements(), 3.0);
  EXPECT_NEAR(integrate(sq, threes), 3.0, 1e-14);
}

TEST(Integrate, IsLinear) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  const Grid g = build_grid(Domain::rectangle(0.0, 1.0, 0.0, 2.0), 8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(g.num_elements()), b(g.num_elements()), c(g.num_elements());
    const double s = dist(rng), t = dist(rng);
    for (std::size_t e = 0; e < a.size(); ++e) {
      a[e] = dist(rng);
      b[e] = dist(rng);
      c[e] = s * a[e] + t * b[e];
    }
    EXPECT_NEAR(integrate(g, c), s * integrate(g, a) + t * integrate(g, b), 1e-13);
  }
}

TEST(LqNorm, ConstantAndZero) {
  const Grid g = build_grid(Domain::interval(0.0, 1.0), 16);
  const auto two = DiscreteFunction::sample(g, [](const Point&) { return 2.0; });
  EXPECT_NEAR(lq_norm(two, 3.0), 2.0, 1e-13);
  const DiscreteFunction zero(g);
  EXPECT_EQ(lq_norm(zero, std::numeric_limits<double>::infinity()), 0.0);
}

TEST(LqNorm, SingularPowerConverges) {
  // int_{-1}^{1} |x|^{-1/2} dx = 4, so the L^2 norm of |x|^{-1/4} is 2.
  double prev_err = 1e9;
  for (int n : {101, 1001, 10001, 100001}) {
    const Grid g = build_grid(Domain::interval(-1.0, 1.0), n);
    const auto u =
        DiscreteFunction::sample(g, [](const Point& x) { return std::pow(std::abs(x[0]), -0.25); });
    const double err = std::abs(lq_norm(u, 2.0) - 2.0);
    EXPECT_LT(err, prev_err);
    prev_err = err;
  }
  EXPECT_LT(prev_err, 0.02);
}

TEST(LqNorm, RejectsSmallExponent) {
  const Grid g = build_grid(Domain::interval(0.0, 1.0), 4);
  EXPECT_THROW(lq_norm(DiscreteFunction(g), 0.5), Error);
}

TEST(LqNorm, MonotoneInQForFunctionsBoundedByOne) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  const Grid g = build_grid(Domain::rectangle(0.0, 1.0, 0.0, 1.0), 12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto u = DiscreteFunction::sample(g, [&](const Point&) { return dist(rng); });
    double prev = 0.0;
    for (double q : {1.0, 1.5, 2.0, 4.0, 8.0}) {
      const double v = lq_norm(u, q);
      EXPECT_GE(v, prev - 1e-14);
      prev = v;
    }
  }
}

TEST(BallNodes, Cases) {
  const Grid g = build_grid(Domain::interval(0.0, 1.0), 10);
  const auto one = ball_nodes(g, {0.5, 0.0}, 0.05);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0], 5u);
  EXPECT_EQ(ball_nodes(g, {0.3, 0.0}, 2.0).size(), g.num_nodes());
  EXPECT_TRUE(ball_nodes(g, {5.0, 0.0}, 1e-3).empty());
}

TEST(Csv, WritesHeaderAndRoundTrips) {
  const Grid g = build_grid(Domain::rectangle(0.0, 1.0, 0.0, 0.5), 3);
  const auto u = DiscreteFunction::sample(g, [](const Point& x) { return std::sin(x[0]) * x[1] + 1.0 / 3.0; });
  std::stringstream ss;
  write_csv(ss, u);
  EXPECT_EQ(ss.str().substr(0, 6), "x,y,u\n");
  const DiscreteFunction back = read_csv(ss, g);
  for (std::size_t k = 0; k < u.size(); ++k) EXPECT_EQ(back[k], u[k]);
}

TEST(Csv, RejectsMismatchedGrid) {
  const Grid g = build_grid(Domain::interval(0.0, 1.0), 4);
  std::stringstream ss;
  write_csv(ss, DiscreteFunction(g));
  EXPECT_THROW(read_csv(ss, build_grid(Domain::interval(0.0, 2.0), 4)), Error);
}

TEST(DiscreteFunction, RejectsNonFiniteAndWrongSize) {
  const Grid g = build_grid(Domain::interval(0.0, 1.0), 2);
  EXPECT_THROW(DiscreteFunction(g, {0.0, 1.0}), Error);
  EXPECT_THROW(DiscreteFunction(g, {0.0, NAN, 1.0}), Error);
}
