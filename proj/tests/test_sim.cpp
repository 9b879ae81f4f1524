#include <gtest/gtest.h>

#include <cmath>

#include "avb/sim.hpp"

using namespace avb;

TEST(SimLogreg, ZeroBetaGivesBalancedLabels) {
  const std::size_t n = 10000;
  const auto r = sim_logreg({n, 3, 1, Vector(3, 0.0)});
  double pos = 0.0;
  for (int y : r.data.y) pos += y;
  EXPECT_NEAR(pos / n, 0.5, 3.0 * std::sqrt(0.25 / n));
}

TEST(SimLogreg, ShapesAndFeatureMoments) {
  const auto r = sim_logreg({2000, 4, 2, std::nullopt});
  ASSERT_EQ(r.data.X.rows(), 2000u);
  ASSERT_EQ(r.data.X.cols(), 4u);
  ASSERT_EQ(r.beta.size(), 4u);
  double sum = 0.0, sq = 0.0;
  for (double v : r.data.X.data()) {
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum / 8000.0, 0.0, 0.05);
  EXPECT_NEAR(sq / 8000.0, 1.0, 0.06);
}

TEST(SimLogreg, SameSeedSameData) {
  const auto a = sim_logreg({50, 5, 9, std::nullopt});
  const auto b = sim_logreg({50, 5, 9, std::nullopt});
  const auto c = sim_logreg({50, 5, 10, std::nullopt});
  EXPECT_EQ(a.data.X.data(), b.data.X.data());
  EXPECT_EQ(a.data.y, b.data.y);
  EXPECT_EQ(a.beta, b.beta);
  EXPECT_NE(a.data.X.data(), c.data.X.data());
}

TEST(SimLogreg, RejectsBadSpecs) {
  EXPECT_THROW(sim_logreg({0, 3, 1, std::nullopt}), validation_error);
  EXPECT_THROW(sim_logreg({10, 3, 1, Vector(2, 0.0)}), shape_error);
}

TEST(SimSessions, ZeroPsiGivesUniformItems) {
  const std::size_t p = 10;
  const auto r = sim_sessions({10000, 0, p, 2, 9.0, 3, Matrix(p, 2), std::nullopt});
  Vector counts(p, 0.0);
  double total = 0.0;
  for (const auto& s : r.train.sessions)
    for (std::size_t v : s) {
      counts[v] += 1.0;
      total += 1.0;
    }
  ASSERT_GT(total, 90000.0);
  const double sd = std::sqrt(total * 0.1 * 0.9);
  for (double c : counts) EXPECT_NEAR(c, 0.1 * total, 3.0 * sd);
}

TEST(SimSessions, LengthsAndSplit) {
  const auto r = sim_sessions({300, 100, 50, 3, 4.0, 4, std::nullopt, std::nullopt});
  EXPECT_EQ(r.train.size(), 300u);
  EXPECT_EQ(r.test.size(), 100u);
  EXPECT_EQ(r.test.users.front(), 300);
  double len = 0.0;
  for (const auto& s : r.train.sessions) {
    EXPECT_GE(s.size(), 1u);
    len += static_cast<double>(s.size());
  }
  EXPECT_NEAR(len / 300.0, 5.0, 3.0 * std::sqrt(4.0 / 300.0));
  r.train.validate();
  r.test.validate();
}

TEST(SimSessions, SameSeedSameSessions) {
  const SimSessionSpec spec{20, 5, 30, 2, 3.0, 5, std::nullopt, std::nullopt};
  const auto a = sim_sessions(spec), b = sim_sessions(spec);
  EXPECT_EQ(a.train.sessions, b.train.sessions);
  EXPECT_EQ(a.test.sessions, b.test.sessions);
  EXPECT_EQ(a.psi.data(), b.psi.data());
}

TEST(SimSessions, RhoShiftsPopularity) {
  Vector rho(5, 0.0);
  rho[2] = 3.0;
  const auto r = sim_sessions({500, 0, 5, 1, 5.0, 6, Matrix(5, 1), rho});
  std::size_t hits = 0, total = 0;
  for (const auto& s : r.train.sessions)
    for (std::size_t v : s) {
      hits += v == 2;
      ++total;
    }
  const double expected = std::exp(3.0) / (std::exp(3.0) + 4.0);
  EXPECT_NEAR(static_cast<double>(hits) / total, expected, 0.02);
}
