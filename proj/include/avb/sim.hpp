#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "avb/errors.hpp"
#include "avb/kernels.hpp"
#include "avb/linalg.hpp"
#include "avb/logreg.hpp"
#include "avb/lvm.hpp"
#include "avb/rng.hpp"

namespace avb {

struct SimLogRegSpec {
  std::size_t N = 900;
  std::size_t D = 50;
  std::uint64_t seed = 0;
  std::optional<Vector> beta;  // drawn from N(0, I) when absent
};

struct SimLogRegResult {
  LogRegDataset data;
  Vector beta;
};

// X_nd ~ N(0, 1) iid, y_n ~ Bernoulli(σ(x_nᵀβ*)).
inline SimLogRegResult sim_logreg(const SimLogRegSpec& spec) {
  if (spec.N < 1 || spec.D < 1) throw validation_error("sim_logreg: N and D must be >= 1");
  SeededRng rng(spec.seed);
  SimLogRegResult out;
  if (spec.beta) {
    require_same_size(spec.beta->size(), spec.D, "sim_logreg: beta");
    out.beta = *spec.beta;
  } else {
    out.beta.resize(spec.D);
    for (double& b : out.beta) b = rng.normal();
  }
  out.data.X = Matrix(spec.N, spec.D);
  out.data.y.resize(spec.N);
  for (std::size_t n = 0; n < spec.N; ++n) {
    auto row = out.data.X.row(n);
    for (double& v : row) v = rng.normal();
    out.data.y[n] = rng.bernoulli(sigmoid(dot(row, out.beta))) ? 1 : 0;
  }
  return out;
}

struct SimSessionSpec {
  std::size_t U_train = 200;
  std::size_t U_test = 100;
  std::size_t P = 1000;
  std::size_t K_true = 4;
  double mean_length = 9.0;  // T_u = 1 + Poisson(mean_length)
  std::uint64_t seed = 0;
  std::optional<Matrix> psi;  // P x K_true; drawn when absent
  std::optional<Vector> rho;  // zero when absent
};

struct SimSessionResult {
  SessionDataset train;
  SessionDataset test;
  Matrix psi;
  Vector rho;
};

// Ψ* rows ~ N(0, I/√K), ω_u ~ N(0, I), items iid categorical(softmax(Ψ*ω_u + ρ*)).
// The first U_train users form the training set, the rest the test set.
inline SimSessionResult sim_sessions(const SimSessionSpec& spec) {
  if (spec.P < 1 || spec.K_true < 1 || spec.U_train + spec.U_test < 1)
    throw validation_error("sim_sessions: P, K_true and U must be >= 1");
  if (!(spec.mean_length >= 0.0)) throw validation_error("sim_sessions: mean_length must be >= 0");
  SeededRng rng(spec.seed);
  SimSessionResult out;
  const std::size_t k = spec.K_true;
  if (spec.psi) {
    if (spec.psi->rows() != spec.P || spec.psi->cols() != k)
      throw shape_error("sim_sessions: psi must be P x K_true");
    out.psi = *spec.psi;
  } else {
    out.psi = Matrix(spec.P, k);
    const double sd = std::pow(static_cast<double>(k), -0.25);
    for (double& v : out.psi.data()) v = sd * rng.normal();
  }
  if (spec.rho) {
    require_same_size(spec.rho->size(), spec.P, "sim_sessions: rho");
    out.rho = *spec.rho;
  } else {
    out.rho.assign(spec.P, 0.0);
  }

  out.train.catalog_size = spec.P;
  out.test.catalog_size = spec.P;
  Vector omega(k), logits(spec.P), probs(spec.P);
  for (std::size_t u = 0; u < spec.U_train + spec.U_test; ++u) {
    for (double& w : omega) w = rng.normal();
    for (std::size_t p = 0; p < spec.P; ++p) logits[p] = dot(out.psi.row(p), omega) + out.rho[p];
    const double lse = logsumexp(logits);
    for (std::size_t p = 0; p < spec.P; ++p) probs[p] = std::exp(logits[p] - lse);
    const std::size_t length = 1 + static_cast<std::size_t>(rng.poisson(spec.mean_length));
    Session s(length);
    for (auto& item : s) item = rng.categorical(probs);
    SessionDataset& target = u < spec.U_train ? out.train : out.test;
    target.sessions.push_back(std::move(s));
    target.users.push_back(static_cast<std::int64_t>(u));
  }
  return out;
}

}  // namespace avb
