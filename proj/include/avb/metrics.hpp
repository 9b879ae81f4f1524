#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "avb/errors.hpp"
#include "avb/linalg.hpp"
#include "avb/lvm.hpp"

namespace avb {

using RankedList = std::vector<std::size_t>;

// Maps a context (the session so far) to one score per catalog item.
using Scorer = std::function<Vector(std::span<const std::size_t>)>;

// The k best items by descending score, ties broken by ascending item id.
inline RankedList top_k(std::span<const double> scores, std::size_t k) {
  RankedList ids(scores.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  k = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  ids.resize(k);
  return ids;
}

inline int recall_at_k(std::span<const std::size_t> recommended, std::size_t held_out,
                       std::size_t k) {
  const std::size_t n = std::min(k, recommended.size());
  for (std::size_t r = 0; r < n; ++r)
    if (recommended[r] == held_out) return 1;
  return 0;
}

// 1 / log2(rank + 1) for the held-out item at 1-based rank <= k, else 0.
inline double tdcg_at_k(std::span<const std::size_t> recommended, std::size_t held_out,
                        std::size_t k) {
  const std::size_t n = std::min(k, recommended.size());
  for (std::size_t r = 0; r < n; ++r)
    if (recommended[r] == held_out) return 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return 0.0;
}

// Global item popularity.
class PopBaseline {
 public:
  explicit PopBaseline(const SessionDataset& train) : counts_(train.catalog_size, 0.0) {
    if (train.size() == 0) throw validation_error("pop baseline: empty training set");
    for (const auto& s : train.sessions)
      for (std::size_t v : s) counts_[v] += 1.0;
  }

  const Vector& counts() const { return counts_; }
  Vector score(std::span<const std::size_t>) const { return counts_; }
  Scorer scorer() const {
    return [this](std::span<const std::size_t> ctx) { return score(ctx); };
  }

 private:
  Vector counts_;
};

// Pearson correlation between per-session item occurrence indicators; the
// query is the most recent item of the context, which is itself excluded.
class ItemKnnBaseline {
 public:
  explicit ItemKnnBaseline(const SessionDataset& train)
      : p_(train.catalog_size), corr_(train.catalog_size, train.catalog_size) {
    if (train.size() == 0) throw validation_error("itemknn baseline: empty training set");
    const double u = static_cast<double>(train.size());
    Vector occ(p_, 0.0);
    Matrix co(p_, p_);
    std::vector<std::size_t> distinct;
    for (const auto& s : train.sessions) {
      distinct.assign(s.begin(), s.end());
      std::sort(distinct.begin(), distinct.end());
      distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
      for (std::size_t i : distinct) {
        occ[i] += 1.0;
        for (std::size_t j : distinct) co(i, j) += 1.0;
      }
    }
    for (std::size_t i = 0; i < p_; ++i)
      for (std::size_t j = 0; j < p_; ++j) {
        const double vi = occ[i] * (u - occ[i]);
        const double vj = occ[j] * (u - occ[j]);
        corr_(i, j) = (vi > 0.0 && vj > 0.0) ? (u * co(i, j) - occ[i] * occ[j]) / std::sqrt(vi * vj)
                                             : 0.0;
      }
  }

  const Matrix& correlation() const { return corr_; }

  Vector score(std::span<const std::size_t> context) const {
    if (context.empty()) throw validation_error("itemknn: empty context");
    const std::size_t q = context.back();
    if (q >= p_) throw validation_error("itemknn: item id outside catalog");
    const auto row = corr_.row(q);
    Vector s(row.begin(), row.end());
    s[q] = -std::numeric_limits<double>::infinity();
    return s;
  }

  Scorer scorer() const {
    return [this](std::span<const std::size_t> ctx) { return score(ctx); };
  }

 private:
  std::size_t p_;
  Matrix corr_;
};

inline Scorer lvm_scorer(const LvmParams& params) {
  return [&params](std::span<const std::size_t> ctx) { return score_items(ctx, params); };
}

struct MetricsReport {
  double recall = 0.0;
  double tdcg = 0.0;
  std::size_t events = 0;
  std::size_t skipped = 0;
  std::size_t k = 5;
};

// Leave-last-out: each test session with T >= 2 contributes one event with
// the final item held out and the rest as context. Metrics average per event.
inline MetricsReport evaluate(const Scorer& scorer, const SessionDataset& test, std::size_t k = 5) {
  if (k < 1) throw validation_error("evaluate: k must be >= 1");
  MetricsReport r;
  r.k = k;
  for (const auto& s : test.sessions) {
    if (s.size() < 2) {
      ++r.skipped;
      continue;
    }
    const std::span<const std::size_t> context(s.data(), s.size() - 1);
    const Vector scores = scorer(context);
    require_same_size(scores.size(), test.catalog_size, "evaluate: scorer output");
    const RankedList list = top_k(scores, k);
    r.recall += recall_at_k(list, s.back(), k);
    r.tdcg += tdcg_at_k(list, s.back(), k);
    ++r.events;
  }
  if (r.events > 0) {
    r.recall /= static_cast<double>(r.events);
    r.tdcg /= static_cast<double>(r.events);
  }
  return r;
}

}  // namespace avb
