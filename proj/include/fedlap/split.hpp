// Client data partitioning: homogeneous, nested-Dirichlet heterogeneous, the
// fixed heterogeneous UCI Credit split, and explicit assignments.
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlap/dataset.hpp"
#include "fedlap/rng.hpp"

namespace fedlap {

enum class SplitKind { Homogeneous, Dirichlet, UciCreditFixed, Explicit };

inline std::string to_string(SplitKind k) {
  switch (k) {
    case SplitKind::Homogeneous: return "homogeneous";
    case SplitKind::Dirichlet: return "dirichlet";
    case SplitKind::UciCreditFixed: return "uci-credit-fixed";
    case SplitKind::Explicit: return "explicit";
  }
  return "?";
}

inline SplitKind split_kind_from_string(const std::string& s) {
  if (s == "homogeneous") return SplitKind::Homogeneous;
  if (s == "dirichlet") return SplitKind::Dirichlet;
  if (s == "uci-credit-fixed") return SplitKind::UciCreditFixed;
  if (s == "explicit") return SplitKind::Explicit;
  throw std::invalid_argument("unknown split kind: " + s);
}

struct SplitSpec {
  SplitKind kind = SplitKind::Homogeneous;
  std::size_t clients = 1;
  double alpha1 = 1.0;   // Dirichlet concentration over client sizes
  double alpha2 = 0.5;   // Dirichlet concentration over classes within a client
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> explicit_shards;
};

struct ShardAssignment {
  std::vector<std::vector<std::size_t>> shards;  // disjoint indices into the train set
  Matrix per_class_counts;                       // K x C

  std::size_t client_count() const { return shards.size(); }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& s : shards) n += s.size();
    return n;
  }
};

namespace detail {

inline Matrix count_per_class(const std::vector<std::vector<std::size_t>>& shards,
                              const std::vector<int>& labels, std::size_t class_count) {
  Matrix counts(shards.size(), class_count);
  for (std::size_t k = 0; k < shards.size(); ++k)
    for (std::size_t i : shards[k]) counts(k, labels[i]) += 1.0;
  return counts;
}

// Largest-remainder apportionment of total items proportional to weights.
// Conserves the total exactly; ties go to the lower index.
inline std::vector<std::size_t> largest_remainder(const std::vector<double>& weights,
                                                  std::size_t total) {
  const std::size_t k = weights.size();
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  std::vector<std::size_t> counts(k, 0);
  if (wsum <= 0.0 || total == 0) return counts;
  std::vector<double> frac(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double target = static_cast<double>(total) * weights[i] / wsum;
    counts[i] = static_cast<std::size_t>(std::floor(target));
    frac[i] = target - std::floor(target);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) counts[order[r % k]] += 1;
  return counts;
}

}  // namespace detail

// Deterministic core of the Dirichlet splitter: given already-sampled client
// mass p (length K) and per-client class distributions q (K x C), allocate
// n_{k,c} per class by largest remainder over m_{k,c} = p_k q_{k,c}, then hand
// out shuffled class indices contiguously.
inline ShardAssignment dirichlet_allocate(const std::vector<int>& labels, std::size_t class_count,
                                          const std::vector<double>& p, const Matrix& q,
                                          Rng& shuffle_rng) {
  const std::size_t k = p.size();
  check_dim(q.rows == k && q.cols == class_count, "dirichlet mass shapes");
  ShardAssignment out;
  out.shards.assign(k, {});

  std::vector<std::vector<std::size_t>> by_class(class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count)
      throw std::invalid_argument("label out of range at index " + std::to_string(i));
    by_class[labels[i]].push_back(i);
  }

  for (std::size_t c = 0; c < class_count; ++c) {
    auto& idx = by_class[c];
    shuffle_rng.shuffle(idx);
    std::vector<double> mass(k);
    for (std::size_t j = 0; j < k; ++j) mass[j] = p[j] * q(j, c);
    const auto counts = detail::largest_remainder(mass, idx.size());
    std::size_t pos = 0;
    for (std::size_t j = 0; j < k; ++j) {
      out.shards[j].insert(out.shards[j].end(), idx.begin() + pos, idx.begin() + pos + counts[j]);
      pos += counts[j];
    }
  }
  for (auto& s : out.shards) std::sort(s.begin(), s.end());
  out.per_class_counts = detail::count_per_class(out.shards, labels, class_count);
  return out;
}

// Nested-Dirichlet heterogeneous split: p ~ Dir(alpha1 1_K) over client sizes,
// q_k ~ Dir(alpha2 1_C) over classes within each client. Retries (fresh draws)
// when a client ends up empty.
inline ShardAssignment dirichlet_split(const std::vector<int>& labels, std::size_t class_count,
                                       const SplitSpec& spec) {
  if (spec.kind != SplitKind::Dirichlet) throw std::invalid_argument("spec.kind != dirichlet");
  if (spec.clients < 1 || labels.size() < spec.clients)
    throw std::invalid_argument("need at least one datapoint per client");
  if (spec.alpha1 <= 0.0 || spec.alpha2 <= 0.0)
    throw std::invalid_argument("Dirichlet concentrations must be positive");

  Rng rng(derive_seed(spec.seed, 0xd1a1u));
  for (int attempt = 0; attempt < 20; ++attempt) {
    const auto p = rng.dirichlet(spec.alpha1, spec.clients);
    Matrix q(spec.clients, class_count);
    for (std::size_t j = 0; j < spec.clients; ++j) {
      const auto qr = rng.dirichlet(spec.alpha2, class_count);
      std::copy(qr.begin(), qr.end(), q.row(j));
    }
    auto shards = dirichlet_allocate(labels, class_count, p, q, rng);
    bool ok = true;
    for (const auto& s : shards.shards)
      if (s.empty()) ok = false;
    if (ok) return shards;
  }
  throw std::runtime_error("dirichlet_split: a client received zero points after 20 attempts");
}

// Equal-size homogeneous split of a seeded shuffle (remainder spread over the
// first clients).
inline ShardAssignment homogeneous_split(const std::vector<int>& labels, std::size_t class_count,
                                         const SplitSpec& spec) {
  if (spec.clients < 1 || labels.size() < spec.clients)
    throw std::invalid_argument("need at least one datapoint per client");
  std::vector<std::size_t> idx(labels.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(spec.seed, 0x40303u));
  rng.shuffle(idx);
  ShardAssignment out;
  out.shards.assign(spec.clients, {});
  const std::size_t base = labels.size() / spec.clients;
  const std::size_t extra = labels.size() % spec.clients;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < spec.clients; ++k) {
    const std::size_t take = base + (k < extra ? 1 : 0);
    out.shards[k].assign(idx.begin() + pos, idx.begin() + pos + take);
    std::sort(out.shards[k].begin(), out.shards[k].end());
    pos += take;
  }
  out.per_class_counts = detail::count_per_class(out.shards, labels, class_count);
  return out;
}

// The fixed heterogeneous UCI Credit split: K=10 clients; clients 0-4 hold 36
// points at a 6% positive rate (2 positives each), clients 5-9 hold 67 points
// at 66% (44 positives each). Sampling without replacement under the seed,
// positives assigned before negatives within each client.
inline ShardAssignment uci_credit_fixed_split(const std::vector<int>& labels,
                                              std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);

  const std::size_t small_n = 36, large_n = 67;
  const std::size_t small_pos = 2, large_pos = 44;  // round(0.06*36), round(0.66*67)
  const std::size_t need_pos = 5 * small_pos + 5 * large_pos;
  const std::size_t need_neg = 5 * (small_n - small_pos) + 5 * (large_n - large_pos);
  if (pos.size() < need_pos)
    throw std::runtime_error("uci_credit_fixed_split: need " + std::to_string(need_pos) +
                             " positive points, have " + std::to_string(pos.size()));
  if (neg.size() < need_neg)
    throw std::runtime_error("uci_credit_fixed_split: need " + std::to_string(need_neg) +
                             " negative points, have " + std::to_string(neg.size()));

  Rng rng(derive_seed(seed, 0x0c9edu));
  rng.shuffle(pos);
  rng.shuffle(neg);
  ShardAssignment out;
  out.shards.assign(10, {});
  std::size_t pi = 0, ni = 0;
  for (std::size_t k = 0; k < 10; ++k) {
    const std::size_t np = k < 5 ? small_pos : large_pos;
    const std::size_t ntot = k < 5 ? small_n : large_n;
    for (std::size_t t = 0; t < np; ++t) out.shards[k].push_back(pos[pi++]);
    for (std::size_t t = 0; t < ntot - np; ++t) out.shards[k].push_back(neg[ni++]);
    std::sort(out.shards[k].begin(), out.shards[k].end());
  }
  out.per_class_counts = detail::count_per_class(out.shards, labels, 2);
  return out;
}

inline ShardAssignment make_split(const std::vector<int>& labels, std::size_t class_count,
                                  const SplitSpec& spec) {
  switch (spec.kind) {
    case SplitKind::Homogeneous: return homogeneous_split(labels, class_count, spec);
    case SplitKind::Dirichlet: return dirichlet_split(labels, class_count, spec);
    case SplitKind::UciCreditFixed: return uci_credit_fixed_split(labels, spec.seed);
    case SplitKind::Explicit: {
      ShardAssignment out;
      out.shards = spec.explicit_shards;
      out.per_class_counts = detail::count_per_class(out.shards, labels, class_count);
      return out;
    }
  }
  throw std::invalid_argument("unknown split kind");
}

}  // namespace fedlap
