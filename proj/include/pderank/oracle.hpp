#pragma once

// Brute-force reference implementations over small, fully enumerated item
// universes. Everything here is plain 64-bit summation with no shortcuts shared
// with the training path, so the results can serve as ground truth in tests.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "pderank/dataset.hpp"
#include "pderank/model.hpp"
#include "pderank/risk.hpp"
#include "pderank/types.hpp"

namespace pderank::oracle {

inline constexpr std::int64_t kMaxItems = 64;
inline constexpr std::int64_t kMaxDualItems = 24;

struct OracleInstance {
  Matrix scores;                              // n_users x n_items, f_u(i)
  std::vector<double> base;                   // p0, sums to one
  std::vector<std::vector<ItemId>> positives; // per user, sorted

  std::int64_t n_users() const { return scores.rows(); }
  std::int64_t n_items() const { return scores.cols(); }
  std::span<const double> user_scores(std::int64_t u) const {
    return {scores.data() + u * scores.cols(), static_cast<std::size_t>(scores.cols())};
  }
};

// Throws std::invalid_argument when n_items > 64, p0 has a negative entry or does
// not sum to one within 1e-12, or a positive id is out of range.
void validate(const OracleInstance& instance);

std::vector<double> uniform_base(std::int64_t n_items);

// log sum_i p0(i) exp(f(i)), max-shifted.
double exact_partition(std::span<const double> scores, std::span<const double> base);
// p0(i) exp(f(i) - A(f)).
std::vector<double> exact_density(std::span<const double> scores, std::span<const double> base);
// sum q log(q / p0) with 0 log 0 = 0; +inf when q puts mass where p0 has none.
double exact_kld(std::span<const double> q, std::span<const double> base);
double expectation(std::span<const double> q, std::span<const double> values);

// Mean over users with positives of  -mean_{I_u+} f + E_{p_f}[f].
double exact_risk(const OracleInstance& instance);
// Penalised negative log-likelihood  E_+[-log p_f] + KLD(p_f || p0)  minus the
// f-independent constant  E_+[-log p0], averaged over users.
double exact_risk_penalised_nll(const OracleInstance& instance);
// exact_risk with p_f and p0 restricted (and renormalised) to I \ I_u+. Users
// whose remainder is empty are skipped.
double exact_wd_risk(const OracleInstance& instance);

// argmax_q  E_q[f] - KLD(q || p0), in closed form.
std::vector<double> optimal_generator(std::span<const double> scores, std::span<const double> base);
double generator_objective(std::span<const double> q, std::span<const double> scores,
                           std::span<const double> base);

// Wasserstein-1 under the 0/1 ground metric: total variation 1/2 |P - Q|_1.
double w1_discrete(std::span<const double> p, std::span<const double> q);
// Dual form by enumerating every indicator function on the support (2^n terms).
double w1_dual_enumeration(std::span<const double> p, std::span<const double> q);

struct PairwiseBound {
  double r_pair = 0.0;     // E_P E_Q softplus(f(i') - f(i))
  double s_mu = 0.0;       // softplus(E_P E_Q [f(i') - f(i)])
  double gap = 0.0;        // r_pair - s_mu
  double lipschitz = 0.0;  // max_{i,i'} |f(i) - f(i')|
  bool holds(double slack = 1e-12) const { return gap >= -slack && gap <= lipschitz + slack; }
};

// P is uniform over `positives`; Q is a distribution over all items.
PairwiseBound pairwise_bound_check(std::span<const double> scores, std::span<const ItemId> positives,
                                   std::span<const double> q);

std::vector<double> sample_dirichlet(std::int64_t n, std::mt19937_64& rng, double alpha = 1.0);

// Full-catalogue instance built from a model's propagated scores, uniform p0.
OracleInstance instance_from_model(const EmbeddingModel& model, const InteractionDataset& ds);

struct DenseGradient {
  Matrix users;
  Matrix items;
};

// Central differences of objective(model) w.r.t. every layer-0 coordinate.
DenseGradient finite_difference_gradient(const EmbeddingModel& model,
                                         const std::function<double(const EmbeddingModel&)>& objective,
                                         double h = 1e-5);

// max over coordinates of |analytic - fd| / max(1, |fd|).
double max_relative_error(const GradientSet& analytic, const DenseGradient& fd);

}  // namespace pderank::oracle
