#include "pderank/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace pderank::oracle {

void validate(const OracleInstance& instance) {
  const std::int64_t n = instance.n_items();
  if (n > kMaxItems) throw std::invalid_argument("oracle instances are limited to 64 items");
  if (static_cast<std::int64_t>(instance.base.size()) != n)
    throw std::invalid_argument("base density size does not match item count");
  double total = 0.0;
  for (double p : instance.base) {
    if (!(p >= 0.0)) throw std::invalid_argument("base density has a negative entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("base density does not sum to one");
  if (!instance.positives.empty() && static_cast<std::int64_t>(instance.positives.size()) != instance.n_users())
    throw std::invalid_argument("positive sets are not aligned with users");
  for (const auto& pos : instance.positives)
    for (ItemId i : pos)
      if (i < 0 || i >= n) throw std::invalid_argument("positive item out of range");
}

std::vector<double> uniform_base(std::int64_t n_items) {
  return std::vector<double>(static_cast<std::size_t>(n_items), 1.0 / static_cast<double>(n_items));
}

double exact_partition(std::span<const double> scores, std::span<const double> base) {
  if (scores.size() != base.size()) throw std::invalid_argument("size mismatch");
  double shift = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (base[i] > 0.0) shift = std::max(shift, scores[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (base[i] > 0.0) sum += base[i] * std::exp(scores[i] - shift);
  return shift + std::log(sum);
}

std::vector<double> exact_density(std::span<const double> scores, std::span<const double> base) {
  const double a = exact_partition(scores, base);
  std::vector<double> p(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) p[i] = base[i] > 0.0 ? base[i] * std::exp(scores[i] - a) : 0.0;
  return p;
}

double exact_kld(std::span<const double> q, std::span<const double> base) {
  if (q.size() != base.size()) throw std::invalid_argument("size mismatch");
  double kld = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] <= 0.0) continue;
    if (base[i] <= 0.0) return std::numeric_limits<double>::infinity();
    kld += q[i] * std::log(q[i] / base[i]);
  }
  return kld;
}

double expectation(std::span<const double> q, std::span<const double> values) {
  if (q.size() != values.size()) throw std::invalid_argument("size mismatch");
  double e = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) e += q[i] * values[i];
  return e;
}

namespace {

double plain_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double positive_mean(std::span<const double> f, const std::vector<ItemId>& pos) {
  double s = 0.0;
  for (ItemId i : pos) s += f[static_cast<std::size_t>(i)];
  return s / static_cast<double>(pos.size());
}

}  // namespace

double exact_risk(const OracleInstance& instance) {
  validate(instance);
  double total = 0.0;
  std::int64_t users = 0;
  for (std::int64_t u = 0; u < instance.n_users(); ++u) {
    const auto& pos = instance.positives[static_cast<std::size_t>(u)];
    if (pos.empty()) continue;
    const auto f = instance.user_scores(u);
    const auto p = exact_density(f, instance.base);
    total += -positive_mean(f, pos) + expectation(p, f);
    ++users;
  }
  return users ? total / static_cast<double>(users) : 0.0;
}

double exact_risk_penalised_nll(const OracleInstance& instance) {
  validate(instance);
  double total = 0.0;
  std::int64_t users = 0;
  for (std::int64_t u = 0; u < instance.n_users(); ++u) {
    const auto& pos = instance.positives[static_cast<std::size_t>(u)];
    if (pos.empty()) continue;
    const auto f = instance.user_scores(u);
    const auto p = exact_density(f, instance.base);
    double nll = 0.0;
    double constant = 0.0;
    for (ItemId i : pos) {
      nll += -std::log(p[static_cast<std::size_t>(i)]);
      constant += -std::log(instance.base[static_cast<std::size_t>(i)]);
    }
    nll /= static_cast<double>(pos.size());
    constant /= static_cast<double>(pos.size());
    total += nll + exact_kld(p, instance.base) - constant;
    ++users;
  }
  return users ? total / static_cast<double>(users) : 0.0;
}

double exact_wd_risk(const OracleInstance& instance) {
  validate(instance);
  double total = 0.0;
  std::int64_t users = 0;
  const auto n = static_cast<std::size_t>(instance.n_items());
  for (std::int64_t u = 0; u < instance.n_users(); ++u) {
    const auto& pos = instance.positives[static_cast<std::size_t>(u)];
    if (pos.empty()) continue;
    std::vector<double> restricted(instance.base);
    for (ItemId i : pos) restricted[static_cast<std::size_t>(i)] = 0.0;
    double mass = 0.0;
    for (double p : restricted) mass += p;
    if (mass <= 0.0) continue;
    for (double& p : restricted) p /= mass;
    const auto f = instance.user_scores(u);
    const auto p = exact_density(f, restricted);
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) e += p[i] * f[i];
    total += -positive_mean(f, pos) + e;
    ++users;
  }
  return users ? total / static_cast<double>(users) : 0.0;
}

std::vector<double> optimal_generator(std::span<const double> scores, std::span<const double> base) {
  return exact_density(scores, base);
}

double generator_objective(std::span<const double> q, std::span<const double> scores,
                           std::span<const double> base) {
  return expectation(q, scores) - exact_kld(q, base);
}

double w1_discrete(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("distributions have different supports");
  double l1 = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) l1 += std::abs(p[i] - q[i]);
  return 0.5 * l1;
}

double w1_dual_enumeration(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("distributions have different supports");
  if (static_cast<std::int64_t>(p.size()) > kMaxDualItems)
    throw std::invalid_argument("dual enumeration is limited to 24 items");
  // Any f with oscillation <= 1 is dominated by an indicator shifted by a
  // constant, and the constant cancels between the two expectations.
  const std::uint64_t patterns = std::uint64_t{1} << p.size();
  double best = 0.0;
  for (std::uint64_t mask = 0; mask < patterns; ++mask) {
    double value = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
      if (mask >> i & 1U) value += p[i] - q[i];
    best = std::max(best, value);
  }
  return best;
}

PairwiseBound pairwise_bound_check(std::span<const double> scores, std::span<const ItemId> positives,
                                   std::span<const double> q) {
  if (scores.size() != q.size()) throw std::invalid_argument("size mismatch");
  if (positives.empty()) throw std::invalid_argument("need at least one positive item");
  PairwiseBound b;
  double mu = 0.0;
  const double w = 1.0 / static_cast<double>(positives.size());
  for (ItemId i : positives)
    for (std::size_t j = 0; j < scores.size(); ++j) {
      const double diff = scores[j] - scores[static_cast<std::size_t>(i)];
      b.r_pair += w * q[j] * plain_softplus(diff);
      mu += w * q[j] * diff;
    }
  b.s_mu = plain_softplus(mu);
  b.gap = b.r_pair - b.s_mu;
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  b.lipschitz = *hi - *lo;
  return b;
}

std::vector<double> sample_dirichlet(std::int64_t n, std::mt19937_64& rng, double alpha) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> x(static_cast<std::size_t>(n));
  double total = 0.0;
  for (double& v : x) {
    v = gamma(rng);
    total += v;
  }
  for (double& v : x) v /= total;
  return x;
}

OracleInstance instance_from_model(const EmbeddingModel& model, const InteractionDataset& ds) {
  const PropagatedEmbeddings prop = propagate(model);
  OracleInstance inst;
  inst.scores = prop.users * prop.items.transpose();
  inst.base = uniform_base(model.n_items());
  inst.positives.resize(static_cast<std::size_t>(model.n_users()));
  for (std::int64_t u = 0; u < std::min(model.n_users(), ds.n_users()); ++u) {
    auto pos = ds.positives(static_cast<UserId>(u));
    inst.positives[static_cast<std::size_t>(u)].assign(pos.begin(), pos.end());
  }
  return inst;
}

DenseGradient finite_difference_gradient(const EmbeddingModel& model,
                                         const std::function<double(const EmbeddingModel&)>& objective,
                                         double h) {
  EmbeddingModel probe = model;
  DenseGradient g{Matrix::Zero(model.n_users(), model.dim()), Matrix::Zero(model.n_items(), model.dim())};
  auto sweep = [&](bool users, Matrix& out) {
    const Eigen::Index rows = users ? model.n_users() : model.n_items();
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < model.dim(); ++c) {
        const double original = users ? model.users()(r, c) : model.items()(r, c);
        auto set = [&](double v) {
          if (users) probe.mutable_users()(r, c) = v;
          else probe.mutable_items()(r, c) = v;
        };
        set(original + h);
        const double plus = objective(probe);
        set(original - h);
        const double minus = objective(probe);
        set(original);
        out(r, c) = (plus - minus) / (2.0 * h);
      }
  };
  sweep(true, g.users);
  sweep(false, g.items);
  return g;
}

double max_relative_error(const GradientSet& analytic, const DenseGradient& fd) {
  const Matrix au = analytic.dense_users(fd.users.rows());
  const Matrix ai = analytic.dense_items(fd.items.rows());
  double worst = 0.0;
  auto scan = [&](const Matrix& a, const Matrix& f) {
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      const double denom = std::max(1.0, std::abs(f.data()[k]));
      worst = std::max(worst, std::abs(a.data()[k] - f.data()[k]) / denom);
    }
  };
  scan(au, fd.users);
  scan(ai, fd.items);
  return worst;
}

}  // namespace pderank::oracle
