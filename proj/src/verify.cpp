#include "pderank/verify.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>

#include "pderank/dataset.hpp"
#include "pderank/model.hpp"
#include "pderank/oracle.hpp"
#include "pderank/risk.hpp"
#include "pderank/sampling.hpp"

namespace pderank {

bool VerifyReport::all_passed() const {
  return std::all_of(rows.begin(), rows.end(), [](const VerifyRow& r) { return r.passed; });
}

namespace {

using oracle::OracleInstance;

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

struct SmallCase {
  InteractionDataset ds;
  EmbeddingModel model;
};

InteractionDataset random_positives(std::mt19937_64& rng, int n_users, int n_items, int max_pos) {
  std::vector<std::vector<ItemId>> lists(static_cast<std::size_t>(n_users));
  std::vector<ItemId> all(static_cast<std::size_t>(n_items));
  std::iota(all.begin(), all.end(), 0);
  for (auto& l : lists) {
    std::shuffle(all.begin(), all.end(), rng);
    const int k = uniform_int(rng, 1, std::min(max_pos, n_items - 1));
    l.assign(all.begin(), all.begin() + k);
  }
  return InteractionDataset::from_lists(n_users, n_items, std::move(lists));
}

SmallCase random_case(std::mt19937_64& rng, Backbone backbone, double scale = 0.5) {
  const int n_users = uniform_int(rng, 2, 8);
  const int n_items = uniform_int(rng, 3, 12);
  const int dim = uniform_int(rng, 2, 6);
  InteractionDataset ds = random_positives(rng, n_users, n_items, 3);
  std::normal_distribution<double> gauss(0.0, scale);
  Matrix users(n_users, dim);
  Matrix items(n_items, dim);
  for (Eigen::Index k = 0; k < users.size(); ++k) users.data()[k] = gauss(rng);
  for (Eigen::Index k = 0; k < items.size(); ++k) items.data()[k] = gauss(rng);
  EmbeddingModel::Options opt;
  opt.backbone = backbone;
  opt.layers = uniform_int(rng, 1, 3);
  EmbeddingModel model = EmbeddingModel::from_tables(std::move(users), std::move(items), opt);
  if (backbone == Backbone::kLGCN) model.attach_graph(std::make_shared<NormalizedGraph>(ds));
  return {std::move(ds), std::move(model)};
}

OracleInstance random_instance(std::mt19937_64& rng, bool uniform) {
  const int n_users = uniform_int(rng, 1, 8);
  const int n_items = uniform_int(rng, 2, 12);
  OracleInstance inst;
  inst.scores.resize(n_users, n_items);
  std::normal_distribution<double> gauss(0.0, 1.5);
  for (Eigen::Index k = 0; k < inst.scores.size(); ++k) inst.scores.data()[k] = gauss(rng);
  if (uniform) {
    inst.base = oracle::uniform_base(n_items);
  } else {
    // Strictly positive so that E_+[-log p0] is finite.
    inst.base = oracle::sample_dirichlet(n_items, rng);
    for (double& p : inst.base) p = 0.5 * p + 0.5 / n_items;
  }
  inst.positives = [&] {
    InteractionDataset ds = random_positives(rng, n_users, n_items, 3);
    std::vector<std::vector<ItemId>> out;
    for (int u = 0; u < n_users; ++u) {
      auto p = ds.positives(u);
      out.emplace_back(p.begin(), p.end());
    }
    return out;
  }();
  return inst;
}

std::vector<ItemId> all_items(std::int64_t n) {
  std::vector<ItemId> items(static_cast<std::size_t>(n));
  std::iota(items.begin(), items.end(), 0);
  return items;
}

std::vector<UserId> all_users(std::int64_t n) {
  std::vector<UserId> users(static_cast<std::size_t>(n));
  std::iota(users.begin(), users.end(), 0);
  return users;
}

VerifyRow kld_identity(const VerifyOptions& opt, std::mt19937_64& rng) {
  VerifyRow row{"kld_identity", true, 0.0, 1e-10, 0};
  for (std::int64_t t = 0; t < opt.trials; ++t) {
    const OracleInstance inst = random_instance(rng, t % 2 == 0);
    for (std::int64_t u = 0; u < inst.n_users(); ++u) {
      const auto f = inst.user_scores(u);
      const auto p = oracle::exact_density(f, inst.base);
      const double lhs = oracle::exact_kld(p, inst.base);
      const double rhs = oracle::expectation(p, f) - oracle::exact_partition(f, inst.base);
      row.max_deviation = std::max(row.max_deviation, std::abs(lhs - rhs));
      ++row.cases;
    }
  }
  row.passed = row.max_deviation <= row.tolerance;
  return row;
}

VerifyRow risk_forms(const VerifyOptions& opt, std::mt19937_64& rng) {
  VerifyRow row{"risk_form_agreement", true, 0.0, 1e-10, 0};
  for (std::int64_t t = 0; t < opt.trials; ++t) {
    const OracleInstance inst = random_instance(rng, t % 2 == 0);
    const double dev = std::abs(oracle::exact_risk(inst) - oracle::exact_risk_penalised_nll(inst));
    row.max_deviation = std::max(row.max_deviation, dev);
    ++row.cases;
  }
  row.passed = row.max_deviation <= row.tolerance;
  return row;
}

VerifyRow generator_optimality(const VerifyOptions& opt, std::mt19937_64& rng) {
  // Deviation reported as the largest amount by which a random q beat q*.
  VerifyRow row{"generator_optimality", true, 0.0, 1e-9, 0};
  for (std::int64_t t = 0; t < opt.trials; ++t) {
    const int n = uniform_int(rng, 2, 8);
    std::normal_distribution<double> gauss(0.0, 1.5);
    std::vector<double> f(static_cast<std::size_t>(n));
    for (double& v : f) v = gauss(rng);
    std::vector<double> base = t % 2 ? oracle::sample_dirichlet(n, rng) : oracle::uniform_base(n);
    const auto q_star = oracle::optimal_generator(f, base);
    const double best = oracle::generator_objective(q_star, f, base);
    for (std::int64_t s = 0; s < opt.dirichlet_samples; ++s) {
      const auto q = oracle::sample_dirichlet(n, rng);
      row.max_deviation = std::max(row.max_deviation, oracle::generator_objective(q, f, base) - best);
      ++row.cases;
    }
  }
  row.passed = row.max_deviation <= row.tolerance;
  return row;
}

VerifyRow w1_duality(const VerifyOptions& opt, std::mt19937_64& rng) {
  VerifyRow row{"w1_primal_dual", true, 0.0, 1e-12, 0};
  for (std::int64_t t = 0; t < opt.trials; ++t) {
    const int n = uniform_int(rng, 1, 6);
    const auto p = oracle::sample_dirichlet(n, rng);
    const auto q = oracle::sample_dirichlet(n, rng);
    row.max_deviation = std::max(row.max_deviation,
                                 std::abs(oracle::w1_discrete(p, q) - oracle::w1_dual_enumeration(p, q)));
    ++row.cases;
  }
  row.passed = row.max_deviation <= row.tolerance;
  return row;
}

VerifyRow estimator_consistency(const VerifyOptions& opt, std::mt19937_64& rng, RiskKind kind) {
  VerifyRow row{kind == RiskKind::kPDE ? "pde_estimator_consistency" : "wd_estimator_consistency", true, 0.0,
                1e-10, 0};
  for (std::int64_t t = 0; t < opt.trials; ++t) {
    SmallCase c = random_case(rng, t % 2 ? Backbone::kLGCN : Backbone::kMF);
    const auto users = all_users(c.ds.n_users());
    const MiniBatch batch = make_minibatch(c.ds, users, all_items(c.ds.n_items()));
    const PropagatedEmbeddings prop = propagate(c.model);
    const OracleInstance inst = oracle::instance_from_model(c.model, c.ds);
    const double got = evaluate_risk(kind, c.model, prop, batch, nullptr).total_risk;
    const double want = kind == RiskKind::kPDE ? oracle::exact_risk(inst) : oracle::exact_wd_risk(inst);
    row.max_deviation = std::max(row.max_deviation, std::abs(got - want));
    ++row.cases;
  }
  row.passed = row.max_deviation <= row.tolerance;
  return row;
}

VerifyRow gradient_check(const VerifyOptions& opt, std::mt19937_64& rng, RiskKind kind, Backbone backbone) {
  VerifyRow row{"gradient_" + std::string(to_string(kind)) + "_" + std::string(to_string(backbone)), true, 0.0,
                1e-4, 0};
  const std::int64_t instances = std::max<std::int64_t>(20, opt.trials / 5);
  for (std::int64_t t = 0; row.cases < instances && t < 50 * instances; ++t) {
    SmallCase c = random_case(rng, backbone);
    const auto users = all_users(c.ds.n_users());
    const MiniBatch batch = kind == RiskKind::kWD ? make_minibatch(c.ds, users, all_items(c.ds.n_items()))
                                                  : make_minibatch(c.ds, users);
    std::vector<std::vector<ItemId>> negatives;
    const auto* neg_ptr = kind == RiskKind::kPairwiseANS ? &negatives : nullptr;
    if (kind == RiskKind::kPairwiseANS) {
      const PropagatedEmbeddings prop = propagate(c.model);
      Rng ans_rng(rng());
      negatives = sample_ans_negatives(c.model, prop, batch, 5, ans_rng);
      if (std::all_of(negatives.begin(), negatives.end(), [](const auto& n) { return n.empty(); })) continue;
    }
    RiskOptions ro;
    ro.lambda = t % 2 ? 0.1 : 0.0;
    GradientSet analytic = risk_and_gradient(kind, c.model, propagate(c.model), batch, neg_ptr, ro).gradient;
    if (opt.corrupt_gradient != 0.0 && analytic.user_grads.size() > 0) analytic.user_grads(0, 0) += opt.corrupt_gradient;
    const auto fd = oracle::finite_difference_gradient(c.model, [&](const EmbeddingModel& m) {
      return evaluate_risk(kind, m, propagate(m), batch, neg_ptr, ro).objective;
    });
    row.max_deviation = std::max(row.max_deviation, oracle::max_relative_error(analytic, fd));
    ++row.cases;
  }
  row.passed = row.cases >= 20 && row.max_deviation <= row.tolerance;
  return row;
}

VerifyRow pairwise_bounds(const VerifyOptions& opt, std::mt19937_64& rng) {
  // Deviation: largest violation of 0 <= gap <= L (0 when none).
  VerifyRow row{"pairwise_jensen_gap_bound", true, 0.0, 1e-12, 0};
  const std::int64_t instances = std::max<std::int64_t>(1000, opt.trials * 10);
  for (std::int64_t t = 0; t < instances; ++t) {
    SmallCase c = random_case(rng, Backbone::kMF, 2.0);
    EmbeddingModel model = c.model;
    EmbeddingModel::Options o = model.options();
    o.clip_bound = std::uniform_real_distribution<double>(0.5, 3.0)(rng);
    model = EmbeddingModel::from_tables(model.users(), model.items(), o);
    apply_clipping(model);
    const PropagatedEmbeddings prop = propagate(model);
    for (std::int64_t u = 0; u < model.n_users(); ++u) {
      const Vector f = prop.items * prop.users.row(u).transpose();
      const std::span<const double> scores(f.data(), static_cast<std::size_t>(f.size()));
      const auto q = t % 2 ? oracle::sample_dirichlet(f.size(), rng) : oracle::exact_density(scores, oracle::uniform_base(f.size()));
      const auto b = oracle::pairwise_bound_check(scores, c.ds.positives(static_cast<UserId>(u)), q);
      const double violation = std::max({0.0, -b.gap, b.gap - b.lipschitz});
      row.max_deviation = std::max(row.max_deviation, violation);
      ++row.cases;
    }
  }
  row.passed = row.max_deviation <= row.tolerance;
  return row;
}

VerifyRow clipping_lipschitz(const VerifyOptions& opt, std::mt19937_64& rng) {
  // Deviation: max score gap minus 2 n^2 (non-positive when the bound holds).
  VerifyRow row{"clipping_score_gap_bound", true, -std::numeric_limits<double>::infinity(), 1e-9, 0};
  for (std::int64_t t = 0; t < opt.trials; ++t) {
    SmallCase c = random_case(rng, Backbone::kMF, 3.0);
    EmbeddingModel::Options o = c.model.options();
    o.clip_bound = std::uniform_real_distribution<double>(0.5, 3.0)(rng);
    EmbeddingModel model = EmbeddingModel::from_tables(c.model.users(), c.model.items(), o);
    apply_clipping(model);
    const Matrix s = model.users() * model.items().transpose();
    for (Eigen::Index u = 0; u < s.rows(); ++u) {
      const double gap = s.row(u).maxCoeff() - s.row(u).minCoeff();
      row.max_deviation = std::max(row.max_deviation, gap - 2.0 * o.clip_bound * o.clip_bound);
    }
    ++row.cases;
  }
  row.passed = row.max_deviation <= row.tolerance;
  return row;
}

VerifyRow softmax_shift(const VerifyOptions& opt, std::mt19937_64& rng) {
  VerifyRow row{"softmax_shift_equivariance", true, 0.0, 1e-10, 0};
  std::normal_distribution<double> gauss(0.0, 3.0);
  for (std::int64_t t = 0; t < opt.trials; ++t) {
    std::vector<double> s(static_cast<std::size_t>(uniform_int(rng, 1, 40)));
    for (double& v : s) v = gauss(rng);
    const double c = gauss(rng) * 10.0;
    std::vector<double> shifted(s);
    for (double& v : shifted) v += c;
    row.max_deviation = std::max(row.max_deviation,
                                 std::abs(softmax_weighted_mean(shifted) - softmax_weighted_mean(s) - c));
    ++row.cases;
  }
  row.passed = row.max_deviation <= row.tolerance;
  return row;
}

}  // namespace

VerifyReport run_verification(const VerifyOptions& options) {
  std::mt19937_64 rng(options.seed);
  VerifyReport report;
  report.rows.push_back(kld_identity(options, rng));
  report.rows.push_back(risk_forms(options, rng));
  report.rows.push_back(generator_optimality(options, rng));
  report.rows.push_back(w1_duality(options, rng));
  report.rows.push_back(estimator_consistency(options, rng, RiskKind::kPDE));
  report.rows.push_back(estimator_consistency(options, rng, RiskKind::kWD));
  for (RiskKind kind : {RiskKind::kPDE, RiskKind::kWD, RiskKind::kPairwiseANS})
    for (Backbone b : {Backbone::kMF, Backbone::kLGCN}) report.rows.push_back(gradient_check(options, rng, kind, b));
  report.rows.push_back(pairwise_bounds(options, rng));
  report.rows.push_back(clipping_lipschitz(options, rng));
  report.rows.push_back(softmax_shift(options, rng));
  return report;
}

void print_report(const VerifyReport& report, std::ostream& out) {
  out << std::left << std::setw(30) << "property" << std::setw(7) << "result" << std::setw(10) << "cases"
      << std::setw(16) << "max_deviation" << "tolerance\n";
  for (const auto& r : report.rows) {
    out << std::left << std::setw(30) << r.name << std::setw(7) << (r.passed ? "PASS" : "FAIL") << std::setw(10)
        << r.cases << std::setw(16) << std::setprecision(6) << r.max_deviation << r.tolerance << '\n';
  }
  out << (report.all_passed() ? "all properties passed\n" : "some properties FAILED\n");
}

}  // namespace pderank
