#include "protohail/prototypes.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>

namespace protohail {

namespace {

void check_width(const Tensor& a, const Tensor& b, const char* what) {
  if (a.cols() != b.cols()) {
    throw ContractViolation(std::string(what) + ": width " + std::to_string(a.cols()) +
                            " vs " + std::to_string(b.cols()));
  }
}

std::size_t argmin_row(const Tensor& rows, std::span<const double> x) {
  std::size_t best = 0;
  double best_d = squared_distance(rows.row_span(0), x);
  for (std::size_t k = 1; k < rows.rows(); ++k) {
    const double d = squared_distance(rows.row_span(k), x);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

}  // namespace

PrototypeSet PrototypeSet::from_experts(const Tensor& expert_embeddings, std::size_t k,
                                        std::uint64_t seed) {
  const std::size_t n = expert_embeddings.rows();
  if (k == 0) throw ContractViolation("prototype count must be positive");
  if (k > n) {
    throw ContractViolation("cannot seed " + std::to_string(k) + " prototypes from " +
                            std::to_string(n) + " expert trajectories");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  PrototypeSet out;
  out.embeddings = Tensor(k, expert_embeddings.cols());
  out.nearest_expert.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  for (std::size_t i = 0; i < k; ++i) {
    auto src = expert_embeddings.row_span(order[i]);
    std::copy(src.begin(), src.end(), out.embeddings.row_span(i).begin());
  }
  out.members.assign(k, {});
  return out;
}

void PrototypeSet::set_assignment(std::span<const std::size_t> assignment) {
  members.assign(count(), {});
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] >= count()) throw ContractViolation("assignment index out of range");
    members[assignment[i]].push_back(i);
  }
}

bool PrototypeSet::is_partition(std::size_t n) const {
  std::vector<int> seen(n, 0);
  for (const auto& m : members) {
    for (std::size_t i : m) {
      if (i >= n || seen[i]++) return false;
    }
  }
  return std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; });
}

std::vector<std::size_t> assign(const Tensor& embeddings, const Tensor& prototypes) {
  if (prototypes.rows() == 0) throw ContractViolation("assign: empty prototype set");
  check_width(embeddings, prototypes, "assign");
  std::vector<std::size_t> out(embeddings.rows());
  for (std::size_t i = 0; i < embeddings.rows(); ++i)
    out[i] = argmin_row(prototypes, embeddings.row_span(i));
  return out;
}

std::vector<std::size_t> nearest_experts(const Tensor& prototypes, const Tensor& experts) {
  if (experts.rows() == 0) throw ContractViolation("nearest_experts: no expert embeddings");
  check_width(prototypes, experts, "nearest_experts");
  std::vector<std::size_t> out(prototypes.rows());
  for (std::size_t k = 0; k < prototypes.rows(); ++k)
    out[k] = argmin_row(experts, prototypes.row_span(k));
  return out;
}

double loss_rep(const Tensor& prototypes, const Tensor& embeddings,
                std::span<const std::size_t> assignment) {
  check_width(embeddings, prototypes, "loss_rep");
  if (assignment.size() != embeddings.rows()) throw ContractViolation("loss_rep: assignment size");
  const std::size_t k = prototypes.rows();
  std::vector<double> sum(k, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    sum[assignment[i]] += squared_distance(prototypes.row_span(assignment[i]), embeddings.row_span(i));
    ++count[assignment[i]];
  }
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c)
    if (count[c] > 0) total += sum[c] / static_cast<double>(count[c]);
  return total / static_cast<double>(k);
}

double loss_div(const Tensor& prototypes) {
  const std::size_t k = prototypes.rows();
  if (k < 2) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j)
      total += squared_distance(prototypes.row_span(i), prototypes.row_span(j));
  return -total / (static_cast<double>(k * (k - 1)) / 2.0);
}

InterpretabilityLoss loss_int(const Tensor& prototypes, const Tensor& expert_embeddings) {
  InterpretabilityLoss out;
  out.nearest = nearest_experts(prototypes, expert_embeddings);
  for (std::size_t k = 0; k < prototypes.rows(); ++k)
    out.value += squared_distance(prototypes.row_span(k), expert_embeddings.row_span(out.nearest[k]));
  out.value /= static_cast<double>(prototypes.rows());
  return out;
}

ad::Var loss_rep(ad::Var prototypes, ad::Var embeddings, std::span<const std::size_t> assignment,
                 std::span<const double> gate) {
  const std::size_t k = prototypes.rows();
  const std::size_t n = embeddings.rows();
  if (assignment.size() != n) throw ContractViolation("loss_rep: assignment size");
  if (!gate.empty() && gate.size() != k) throw ContractViolation("loss_rep: gate size");
  std::vector<std::size_t> count(k, 0);
  for (std::size_t a : assignment) {
    if (a >= k) throw ContractViolation("loss_rep: assignment index out of range");
    ++count[a];
  }
  Tensor w(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = assignment[i];
    w[i] = 1.0 / (static_cast<double>(k) * static_cast<double>(count[c]));
    if (!gate.empty()) w[i] *= gate[c];
  }
  ad::Var assigned = ad::gather_rows(prototypes, {assignment.begin(), assignment.end()});
  ad::Var d = ad::row_sum(ad::square(ad::sub(assigned, embeddings)));
  return ad::sum(ad::mul(d, prototypes.tape->constant(std::move(w))));
}

ad::Var loss_div(ad::Tape& tape, ad::Var prototypes, std::span<const double> gate) {
  const std::size_t k = prototypes.rows();
  if (k < 2) {
    static bool warned = false;
    if (!warned) {
      std::fprintf(stderr, "warning: diversity loss is undefined for a single prototype; using 0\n");
      warned = true;
    }
    return tape.constant(Tensor::scalar(0.0));
  }
  if (!gate.empty() && gate.size() != k * k) throw ContractViolation("loss_div: gate size");
  std::vector<std::size_t> left, right;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      left.push_back(i);
      right.push_back(j);
    }
  const double pairs = static_cast<double>(k * (k - 1)) / 2.0;
  Tensor w(left.size(), 1);
  for (std::size_t p = 0; p < left.size(); ++p) {
    w[p] = -1.0 / pairs;
    if (!gate.empty()) w[p] *= gate[left[p] * k + right[p]];
  }
  ad::Var diff = ad::sub(ad::gather_rows(prototypes, std::move(left)),
                         ad::gather_rows(prototypes, std::move(right)));
  return ad::sum(ad::mul(ad::row_sum(ad::square(diff)), tape.constant(std::move(w))));
}

ad::Var loss_int(ad::Var prototypes, ad::Var expert_embeddings,
                 std::span<const std::size_t> nearest, std::span<const double> gate) {
  const std::size_t k = prototypes.rows();
  if (nearest.size() != k) throw ContractViolation("loss_int: nearest size");
  if (!gate.empty() && gate.size() != k) throw ContractViolation("loss_int: gate size");
  Tensor w(k, 1, 1.0 / static_cast<double>(k));
  if (!gate.empty())
    for (std::size_t c = 0; c < k; ++c) w[c] *= gate[c];
  ad::Var targets = ad::gather_rows(expert_embeddings, {nearest.begin(), nearest.end()});
  ad::Var d = ad::row_sum(ad::square(ad::sub(prototypes, targets)));
  return ad::sum(ad::mul(d, prototypes.tape->constant(std::move(w))));
}

std::vector<const Trajectory*> project_explanations(const PrototypeSet& protos,
                                                    std::span<const Trajectory> experts) {
  std::vector<const Trajectory*> out;
  out.reserve(protos.count());
  for (std::size_t idx : protos.nearest_expert) {
    if (idx >= experts.size()) throw ContractViolation("explanation index out of range");
    out.push_back(&experts[idx]);
  }
  return out;
}

}  // namespace protohail
