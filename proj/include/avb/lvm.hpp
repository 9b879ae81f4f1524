#pragma once

// Latent-factor session model
//
//   ω_u ~ N(0, I_K),   v_{u,t} ~ categorical(softmax(Ψ ω_u + ρ))
//
// trained through a linear auto-encoder q(ω_u) = N(μ_u, diag σ²_u) and the
// Bouchard bound on the softmax normalizer, with location a_u from the
// encoder and per-item ξ_{u,p} in closed form. Per session the bound is
//
//   -KL(q_u ‖ N(0, I)) + Σ_t (Ψ_{v_t} μ_u + ρ_{v_t})
//     - T_u [ a_u + Σ_p ( (d_p - ξ_p)/2 + λ(ξ_p)(d_p² + s_p - ξ_p²) + log(1 + e^{ξ_p}) ) ]
//
// with d_p = Ψ_p μ_u + ρ_p - a_u and s_p = Ψ_p diag(σ²_u) Ψ_pᵀ. Sampling S of
// the P items and scaling their sum by P/S gives an unbiased estimate.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "avb/errors.hpp"
#include "avb/kernels.hpp"
#include "avb/linalg.hpp"
#include "avb/optim.hpp"
#include "avb/parallel.hpp"
#include "avb/rng.hpp"

namespace avb {

using Session = std::vector<std::size_t>;

struct SessionDataset {
  std::size_t catalog_size = 0;
  std::vector<Session> sessions;
  std::vector<std::int64_t> users;  // optional, parallel to sessions

  std::size_t size() const { return sessions.size(); }

  std::int64_t user(std::size_t u) const {
    return users.empty() ? static_cast<std::int64_t>(u) : users[u];
  }

  void validate() const {
    if (!users.empty()) require_same_size(users.size(), sessions.size(), "SessionDataset users");
    for (std::size_t u = 0; u < sessions.size(); ++u) {
      if (sessions[u].empty())
        throw validation_error("SessionDataset: session " + std::to_string(u) + " is empty");
      for (std::size_t v : sessions[u])
        if (v >= catalog_size)
          throw validation_error("SessionDataset: item id " + std::to_string(v) +
                                 " outside catalog of size " + std::to_string(catalog_size));
    }
  }
};

// Model and encoder parameters. Encoder weight matrices are stored item-major:
// row i of w_mu is column i of W_μ (K x P), so μ = Σ_i c_i w_mu[i] + b_mu for
// the normalized count vector c.
struct LvmParams {
  std::size_t P = 0;
  std::size_t K = 0;
  Matrix psi;      // P x K
  Vector rho;      // P
  Matrix w_mu;     // P x K
  Vector b_mu;     // K
  Matrix w_sigma;  // P x K
  Vector b_sigma;  // K
  Vector w_a;      // P
  double b_a = 0.0;

  static LvmParams zeros(std::size_t p, std::size_t k) {
    if (p < 1 || k < 1) throw validation_error("LvmParams: P and K must be >= 1");
    LvmParams m;
    m.P = p;
    m.K = k;
    m.psi = Matrix(p, k);
    m.rho.assign(p, 0.0);
    m.w_mu = Matrix(p, k);
    m.b_mu.assign(k, 0.0);
    m.w_sigma = Matrix(p, k);
    m.b_sigma.assign(k, 0.0);
    m.w_a.assign(p, 0.0);
    return m;
  }

  // Ψ ~ N(0, 1/K), ρ = 0, encoder weights ~ N(0, 0.01), biases 0.
  static LvmParams initial(std::size_t p, std::size_t k, SeededRng& rng) {
    LvmParams m = zeros(p, k);
    const double psi_sd = 1.0 / std::sqrt(static_cast<double>(k));
    for (double& v : m.psi.data()) v = psi_sd * rng.normal();
    for (double& v : m.w_mu.data()) v = 0.1 * rng.normal();
    for (double& v : m.w_sigma.data()) v = 0.1 * rng.normal();
    for (double& v : m.w_a) v = 0.1 * rng.normal();
    return m;
  }

  // Flat layout: psi, rho, w_mu, b_mu, w_sigma, b_sigma, w_a, b_a.
  std::size_t flat_size() const { return 3 * P * K + 2 * P + 2 * K + 1; }
  std::size_t off_psi(std::size_t p, std::size_t k) const { return p * K + k; }
  std::size_t off_rho(std::size_t p) const { return P * K + p; }
  std::size_t off_w_mu(std::size_t p, std::size_t k) const { return P * K + P + p * K + k; }
  std::size_t off_b_mu(std::size_t k) const { return 2 * P * K + P + k; }
  std::size_t off_w_sigma(std::size_t p, std::size_t k) const { return 2 * P * K + P + K + p * K + k; }
  std::size_t off_b_sigma(std::size_t k) const { return 3 * P * K + P + K + k; }
  std::size_t off_w_a(std::size_t p) const { return 3 * P * K + P + 2 * K + p; }
  std::size_t off_b_a() const { return 3 * P * K + 2 * P + 2 * K; }

  Vector flatten() const {
    Vector f;
    f.reserve(flat_size());
    auto put = [&](const Vector& v) { f.insert(f.end(), v.begin(), v.end()); };
    put(psi.data());
    put(rho);
    put(w_mu.data());
    put(b_mu);
    put(w_sigma.data());
    put(b_sigma);
    put(w_a);
    f.push_back(b_a);
    return f;
  }

  void assign_flat(std::span<const double> f) {
    require_same_size(f.size(), flat_size(), "LvmParams::assign_flat");
    auto take = [&, pos = std::size_t{0}](Vector& v) mutable {
      std::copy(f.begin() + static_cast<std::ptrdiff_t>(pos),
                f.begin() + static_cast<std::ptrdiff_t>(pos + v.size()), v.begin());
      pos += v.size();
      return pos;
    };
    take(psi.data());
    take(rho);
    take(w_mu.data());
    take(b_mu);
    take(w_sigma.data());
    take(b_sigma);
    const std::size_t pos = take(w_a);
    b_a = f[pos];
  }

  // Access by flat index, for sparse optimizer updates.
  double& at_flat(std::size_t i) {
    const std::size_t pk = P * K;
    if (i < pk) return psi.data()[i];
    i -= pk;
    if (i < P) return rho[i];
    i -= P;
    if (i < pk) return w_mu.data()[i];
    i -= pk;
    if (i < K) return b_mu[i];
    i -= K;
    if (i < pk) return w_sigma.data()[i];
    i -= pk;
    if (i < K) return b_sigma[i];
    i -= K;
    if (i < P) return w_a[i];
    return b_a;
  }

  bool all_finite() const {
    for (double v : flatten())
      if (!std::isfinite(v)) return false;
    return true;
  }
};

struct SessionPosterior {
  Vector mu;      // K
  Vector sigma2;  // K, diagonal variances
  double a = 0.0;
};

namespace detail {

struct Encoded {
  std::vector<std::pair<std::size_t, double>> counts;  // (item, count / T), item ascending
  SessionPosterior post;
  Vector sigma_pre;  // pre-softplus variances
  double a_pre = 0.0;
};

inline Encoded encode_full(std::span<const std::size_t> session, const LvmParams& params) {
  if (session.empty()) throw validation_error("encode: session must be nonempty");
  std::vector<std::size_t> sorted(session.begin(), session.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t v : sorted)
    if (v >= params.P)
      throw validation_error("encode: item id " + std::to_string(v) + " outside catalog of size " +
                             std::to_string(params.P));
  Encoded e;
  const double inv_t = 1.0 / static_cast<double>(session.size());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    e.counts.emplace_back(sorted[i], static_cast<double>(j - i) * inv_t);
    i = j;
  }
  const std::size_t k = params.K;
  e.post.mu = params.b_mu;
  e.sigma_pre = params.b_sigma;
  e.a_pre = params.b_a;
  for (const auto& [item, c] : e.counts) {
    const auto wm = params.w_mu.row(item);
    const auto ws = params.w_sigma.row(item);
    for (std::size_t r = 0; r < k; ++r) {
      e.post.mu[r] += c * wm[r];
      e.sigma_pre[r] += c * ws[r];
    }
    e.a_pre += c * params.w_a[item];
  }
  e.post.sigma2.resize(k);
  for (std::size_t r = 0; r < k; ++r) e.post.sigma2[r] = softplus(e.sigma_pre[r]);
  e.post.a = softplus(e.a_pre);
  return e;
}

// -KL(N(μ, diag σ²) ‖ N(0, I)), written as the cross-entropy plus entropy terms
//   -(K/2)log 2π - ½(μᵀμ + Σσ²) + ½ log|2πe diag σ²|
inline double gaussian_terms(const SessionPosterior& post) {
  constexpr double kLog2Pi = 1.8378770664093454835606594728112;
  const double k = static_cast<double>(post.mu.size());
  double logdet = 0.0;
  double trace = 0.0;
  for (double s : post.sigma2) {
    logdet += std::log(s);
    trace += s;
  }
  return -0.5 * k * kLog2Pi - 0.5 * (squared_norm(post.mu) + trace) +
         0.5 * (k * (kLog2Pi + 1.0) + logdet);
}

struct ItemStats {
  double shifted;  // Ψ_p μ + ρ_p - a
  double var;      // Ψ_p diag(σ²) Ψ_pᵀ
};

inline ItemStats item_stats(const SessionPosterior& post, std::span<const double> psi_p,
                            double rho_p) {
  double x = rho_p;
  double v = 0.0;
  for (std::size_t k = 0; k < psi_p.size(); ++k) {
    x += psi_p[k] * post.mu[k];
    v += psi_p[k] * psi_p[k] * post.sigma2[k];
  }
  return {x - post.a, v};
}

inline void check_negatives(std::span<const std::size_t> negatives, std::size_t p) {
  if (negatives.empty() || negatives.size() > p)
    throw validation_error("noisy_bound: need 1 <= S <= P negatives (S = " +
                           std::to_string(negatives.size()) + ", P = " + std::to_string(p) + ")");
  std::vector<std::size_t> sorted(negatives.begin(), negatives.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] >= p)
      throw validation_error("noisy_bound: negative item " + std::to_string(sorted[i]) +
                             " outside catalog");
    if (i > 0 && sorted[i] == sorted[i - 1])
      throw validation_error("noisy_bound: duplicate negative item " + std::to_string(sorted[i]));
  }
}

}  // namespace detail

// Linear encoder applied to the normalized count vector of the session.
inline SessionPosterior encode(std::span<const std::size_t> session, const LvmParams& params) {
  return detail::encode_full(session, params).post;
}

// ξ = sqrt(Ψ_p Σ_q Ψ_pᵀ + (Ψ_p μ_q + ρ_p - a)²)
inline double xi_closed_form(const SessionPosterior& post, std::span<const double> psi_p,
                             double rho_p) {
  require_same_size(psi_p.size(), post.mu.size(), "xi_closed_form");
  require_same_size(post.sigma2.size(), post.mu.size(), "xi_closed_form");
  const auto st = detail::item_stats(post, psi_p, rho_p);
  return std::sqrt(st.var + st.shifted * st.shifted);
}

// Bouchard partition contribution of one item at an arbitrary ξ.
inline double partition_item_term(const SessionPosterior& post, std::span<const double> psi_p,
                                  double rho_p, double xi) {
  const auto st = detail::item_stats(post, psi_p, rho_p);
  return bouchard_term(st.shifted, st.var, xi);
}

namespace detail {

inline double closed_form_item_term(const SessionPosterior& post, std::span<const double> psi_p,
                                    double rho_p) {
  const auto st = item_stats(post, psi_p, rho_p);
  return bouchard_term(st.shifted, st.var, std::sqrt(st.var + st.shifted * st.shifted));
}

// Components of one session's bound. With `negatives` null the partition runs
// over the whole catalog, otherwise over the given items scaled by P/S.
inline BoundReport session_bound(std::span<const std::size_t> session, const LvmParams& params,
                                 const std::span<const std::size_t>* negatives) {
  const Encoded e = encode_full(session, params);
  BoundReport r;
  r.kl_term = -gaussian_terms(e.post);
  for (std::size_t v : session) {
    r.lik_term += dot(params.psi.row(v), e.post.mu) + params.rho[v];
  }
  double part = 0.0;
  if (negatives == nullptr) {
    for (std::size_t p = 0; p < params.P; ++p)
      part += closed_form_item_term(e.post, params.psi.row(p), params.rho[p]);
  } else {
    for (std::size_t p : *negatives)
      part += closed_form_item_term(e.post, params.psi.row(p), params.rho[p]);
    part *= static_cast<double>(params.P) / static_cast<double>(negatives->size());
  }
  r.partition_term = static_cast<double>(session.size()) * (e.post.a + part);
  r.value = r.lik_term - r.kl_term - r.partition_term;
  return r;
}

}  // namespace detail

// Exact bound summed over all sessions, partition over the full catalog.
inline BoundReport full_bound(const SessionDataset& data, const LvmParams& params) {
  if (data.catalog_size != params.P)
    throw validation_error("full_bound: dataset catalog size " + std::to_string(data.catalog_size) +
                           " != model catalog size " + std::to_string(params.P));
  const std::size_t per_thread = std::max<std::size_t>(1, 20000 / (params.P * params.K + 1));
  const auto parts = ordered_parallel_map(
      data.size(),
      [&](std::size_t u) { return detail::session_bound(data.sessions[u], params, nullptr); },
      per_thread);
  BoundReport total;
  for (const auto& r : parts) {
    total.kl_term += r.kl_term;
    total.lik_term += r.lik_term;
    total.partition_term += r.partition_term;
    total.value += r.value;
  }
  return total;
}

// Per-session estimate with the partition sum over `negatives` scaled by P/S.
// Averaged over uniform S-subsets and uniform sessions, U times this equals
// full_bound.
inline double noisy_bound(std::span<const std::size_t> session,
                          std::span<const std::size_t> negatives, const LvmParams& params) {
  detail::check_negatives(negatives, params.P);
  return detail::session_bound(session, params, &negatives).value;
}

// Sparse gradient of a session bound. Only items that appear in the session
// or in the partition set carry per-item blocks; the layout of a block is
// [psi (K) | rho | w_mu (K) | w_sigma (K) | w_a].
class LvmGradient {
 public:
  LvmGradient() = default;
  LvmGradient(std::size_t p, std::size_t k) { reset(p, k); }

  void reset(std::size_t p, std::size_t k) {
    P_ = p;
    K_ = k;
    slot_.assign(p, -1);
    items_.clear();
    blocks_.clear();
    b_mu.assign(k, 0.0);
    b_sigma.assign(k, 0.0);
    b_a = 0.0;
  }

  void clear() {
    for (std::size_t item : items_) slot_[item] = -1;
    items_.clear();
    blocks_.clear();
    std::fill(b_mu.begin(), b_mu.end(), 0.0);
    std::fill(b_sigma.begin(), b_sigma.end(), 0.0);
    b_a = 0.0;
  }

  std::size_t block_size() const { return 3 * K_ + 2; }
  const std::vector<std::size_t>& items() const { return items_; }

  double* block(std::size_t item) {
    if (slot_[item] < 0) {
      slot_[item] = static_cast<std::ptrdiff_t>(items_.size());
      items_.push_back(item);
      blocks_.resize(blocks_.size() + block_size(), 0.0);
    }
    return blocks_.data() + static_cast<std::size_t>(slot_[item]) * block_size();
  }

  const double* find(std::size_t item) const {
    if (slot_[item] < 0) return nullptr;
    return blocks_.data() + static_cast<std::size_t>(slot_[item]) * block_size();
  }

  // Dense copy in LvmParams::flatten() order.
  Vector to_flat(const LvmParams& shape) const {
    Vector f(shape.flat_size(), 0.0);
    for (std::size_t item : items_) {
      const double* b = find(item);
      for (std::size_t k = 0; k < K_; ++k) {
        f[shape.off_psi(item, k)] = b[k];
        f[shape.off_w_mu(item, k)] = b[K_ + 1 + k];
        f[shape.off_w_sigma(item, k)] = b[2 * K_ + 1 + k];
      }
      f[shape.off_rho(item)] = b[K_];
      f[shape.off_w_a(item)] = b[3 * K_ + 1];
    }
    for (std::size_t k = 0; k < K_; ++k) {
      f[shape.off_b_mu(k)] = b_mu[k];
      f[shape.off_b_sigma(k)] = b_sigma[k];
    }
    f[shape.off_b_a()] = b_a;
    return f;
  }

  // Calls fn(flat_index, gradient) for every stored coordinate.
  template <typename Fn>
  void for_each(const LvmParams& shape, Fn&& fn) const {
    for (std::size_t item : items_) {
      const double* b = find(item);
      for (std::size_t k = 0; k < K_; ++k) fn(shape.off_psi(item, k), b[k]);
      fn(shape.off_rho(item), b[K_]);
      for (std::size_t k = 0; k < K_; ++k) fn(shape.off_w_mu(item, k), b[K_ + 1 + k]);
      for (std::size_t k = 0; k < K_; ++k) fn(shape.off_w_sigma(item, k), b[2 * K_ + 1 + k]);
      fn(shape.off_w_a(item), b[3 * K_ + 1]);
    }
    for (std::size_t k = 0; k < K_; ++k) fn(shape.off_b_mu(k), b_mu[k]);
    for (std::size_t k = 0; k < K_; ++k) fn(shape.off_b_sigma(k), b_sigma[k]);
    fn(shape.off_b_a(), b_a);
  }

  Vector b_mu;
  Vector b_sigma;
  double b_a = 0.0;

 private:
  std::size_t P_ = 0;
  std::size_t K_ = 0;
  std::vector<std::ptrdiff_t> slot_;
  std::vector<std::size_t> items_;
  std::vector<double> blocks_;
};

namespace detail {

// Accumulates the gradient of one session bound into `g` and returns the
// bound value. ξ is held at its closed form; a is differentiated through the
// encoder.
inline double accumulate_session_grad(std::span<const std::size_t> session,
                                      const LvmParams& params,
                                      const std::span<const std::size_t>* negatives,
                                      LvmGradient& g) {
  const std::size_t kdim = params.K;
  const Encoded e = encode_full(session, params);
  const SessionPosterior& post = e.post;
  const double t = static_cast<double>(session.size());

  Vector g_mu(kdim, 0.0);
  Vector g_s2(kdim, 0.0);
  double g_a = -t;

  double value = gaussian_terms(post);
  for (std::size_t k = 0; k < kdim; ++k) {
    g_mu[k] -= post.mu[k];
    g_s2[k] += -0.5 + 0.5 / post.sigma2[k];
  }

  for (std::size_t v : session) {
    const auto psi_v = params.psi.row(v);
    value += dot(psi_v, post.mu) + params.rho[v];
    double* b = g.block(v);
    for (std::size_t k = 0; k < kdim; ++k) {
      b[k] += post.mu[k];
      g_mu[k] += psi_v[k];
    }
    b[kdim] += 1.0;
  }

  const double weight = negatives == nullptr ? 1.0
                                             : static_cast<double>(params.P) /
                                                   static_cast<double>(negatives->size());
  double part = 0.0;
  auto visit = [&](std::size_t p) {
    const auto psi_p = params.psi.row(p);
    const auto st = item_stats(post, psi_p, params.rho[p]);
    const double xi = std::sqrt(st.var + st.shifted * st.shifted);
    const double lam = lambda_jj(xi);
    part += bouchard_term(st.shifted, st.var, xi);
    const double gx = -t * weight * (0.5 + 2.0 * lam * st.shifted);
    const double hs = -t * weight * lam;
    double* b = g.block(p);
    for (std::size_t k = 0; k < kdim; ++k) {
      b[k] += gx * post.mu[k] + 2.0 * hs * psi_p[k] * post.sigma2[k];
      g_mu[k] += gx * psi_p[k];
      g_s2[k] += hs * psi_p[k] * psi_p[k];
    }
    b[kdim] += gx;
    g_a -= gx;
  };
  if (negatives == nullptr) {
    for (std::size_t p = 0; p < params.P; ++p) visit(p);
  } else {
    for (std::size_t p : *negatives) visit(p);
  }
  value -= t * (post.a + weight * part);

  const double g_alpha = g_a * sigmoid(e.a_pre);
  for (std::size_t k = 0; k < kdim; ++k) {
    g_s2[k] *= sigmoid(e.sigma_pre[k]);  // now w.r.t. the pre-softplus value
    g.b_mu[k] += g_mu[k];
    g.b_sigma[k] += g_s2[k];
  }
  g.b_a += g_alpha;
  for (const auto& [item, c] : e.counts) {
    double* b = g.block(item);
    for (std::size_t k = 0; k < kdim; ++k) {
      b[kdim + 1 + k] += c * g_mu[k];
      b[2 * kdim + 1 + k] += c * g_s2[k];
    }
    b[3 * kdim + 1] += c * g_alpha;
  }
  return value;
}

}  // namespace detail

// Gradient of noisy_bound with respect to all parameters.
inline LvmGradient grad_noisy_bound(std::span<const std::size_t> session,
                                    std::span<const std::size_t> negatives,
                                    const LvmParams& params) {
  detail::check_negatives(negatives, params.P);
  LvmGradient g(params.P, params.K);
  detail::accumulate_session_grad(session, params, &negatives, g);
  return g;
}

// Gradient of one session's exact bound (partition over the whole catalog).
inline LvmGradient grad_session_bound(std::span<const std::size_t> session,
                                      const LvmParams& params) {
  LvmGradient g(params.P, params.K);
  detail::accumulate_session_grad(session, params, nullptr, g);
  return g;
}

// Gradient of full_bound, dense in flatten() order.
inline Vector grad_full_bound(const SessionDataset& data, const LvmParams& params) {
  LvmGradient g(params.P, params.K);
  for (const auto& s : data.sessions) detail::accumulate_session_grad(s, params, nullptr, g);
  return g.to_flat(params);
}

// Logits Ψ μ + ρ with μ the encoded posterior mean of the session.
inline Vector score_items(std::span<const std::size_t> session, const LvmParams& params) {
  const SessionPosterior post = encode(session, params);
  Vector scores(params.P);
  for (std::size_t p = 0; p < params.P; ++p) scores[p] = dot(params.psi.row(p), post.mu) + params.rho[p];
  return scores;
}

struct LvmConfig {
  std::size_t K = 8;
  std::size_t negatives = 0;  // 0 or P: full partition
  std::size_t epochs = 50;
  std::size_t batch_sessions = 1;
  double learning_rate = 0.02;
  OptimizerKind optimizer = OptimizerKind::adam;
  double momentum = 0.9;
  double beta2 = 0.999;
  double decay = 0.0;
  std::uint64_t seed = 0;

  void validate(std::size_t p, std::size_t u) const {
    if (K < 1) throw validation_error("K must be >= 1");
    if (negatives > p)
      throw validation_error("negatives must be <= P (" + std::to_string(p) + ")");
    if (epochs < 1) throw validation_error("epochs must be >= 1");
    if (batch_sessions < 1 || batch_sessions > u)
      throw validation_error("batch_sessions must be in [1, U]");
    if (!(learning_rate > 0.0)) throw validation_error("learning_rate must be > 0");
    if (decay < 0.0) throw validation_error("decay must be >= 0");
  }

  bool uses_sampling(std::size_t p) const { return negatives > 0 && negatives < p; }
};

struct LvmTraceRow {
  std::size_t epoch = 0;
  BoundReport full;
  double noisy_bound_mean = 0.0;  // U x mean per-session estimate over the epoch
  double wall_ms = 0.0;           // cumulative time spent in update steps
};

struct LvmFit {
  LvmParams params;
  std::vector<LvmTraceRow> trace;
  std::size_t steps = 0;
  double mean_step_ms = 0.0;
};

// SGD on per-session bounds. Each step draws `batch_sessions` sessions (one
// shuffled pass per epoch) and, when 0 < negatives < P, a fresh uniform
// negative set per session. Trace row e holds the exact full bound.
inline LvmFit fit_lvm(const SessionDataset& data, const LvmConfig& config) {
  data.validate();
  if (data.size() == 0) throw validation_error("fit_lvm: dataset has no sessions");
  config.validate(data.catalog_size, data.size());
  const std::size_t p = data.catalog_size;

  SeededRng rng(config.seed);
  LvmFit fit;
  fit.params = LvmParams::initial(p, config.K, rng);
  Optimizer opt(config.optimizer, fit.params.flat_size(), config.momentum, config.beta2);
  LvmGradient grad(p, config.K);

  fit.trace.push_back({0, full_bound(data, fit.params), 0.0, 0.0});
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const bool sampling = config.uses_sampling(p);
  double step_ms = 0.0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    const double lr = scheduled_rate(config.learning_rate, config.decay, epoch - 1);
    double noisy_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_sessions) {
      const auto start = std::chrono::steady_clock::now();
      const std::size_t end = std::min(order.size(), b + config.batch_sessions);
      grad.clear();
      try {
        for (std::size_t i = b; i < end; ++i) {
          const Session& s = data.sessions[order[i]];
          if (sampling) {
            const auto neg = rng.sample_without_replacement(p, config.negatives);
            const std::span<const std::size_t> view(neg);
            noisy_sum += detail::accumulate_session_grad(s, fit.params, &view, grad);
          } else {
            noisy_sum += detail::accumulate_session_grad(s, fit.params, nullptr, grad);
          }
        }
      } catch (const domain_error& e) {
        throw numerical_error("fit_lvm: parameters diverged at epoch " + std::to_string(epoch) + " (" +
                              e.what() + "); lower the learning rate");
      }
      opt.begin_step();
      grad.for_each(fit.params, [&](std::size_t idx, double gv) {
        opt.update(idx, gv, lr, fit.params.at_flat(idx));
      });
      ++fit.steps;
      step_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                     .count();
    }
    if (!std::isfinite(noisy_sum) || !fit.params.all_finite())
      throw numerical_error("fit_lvm: parameters diverged at epoch " + std::to_string(epoch) +
                            "; lower the learning rate");
    LvmTraceRow row{epoch, full_bound(data, fit.params), noisy_sum, step_ms};
    if (!std::isfinite(row.full.value))
      throw numerical_error("fit_lvm: bound became non-finite at epoch " + std::to_string(epoch));
    fit.trace.push_back(row);
  }
  fit.mean_step_ms = fit.steps > 0 ? step_ms / static_cast<double>(fit.steps) : 0.0;
  return fit;
}

}  // namespace avb
