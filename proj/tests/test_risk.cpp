#include <doctest.h>

#include <cmath>

#include "pderank/errors.hpp"
#include "pderank/oracle.hpp"
#include "pderank/risk.hpp"
#include "pderank/sampling.hpp"
#include "test_support.hpp"

using namespace pderank;
using pderank::testing::random_matrix;

namespace {

EmbeddingModel mf(Matrix users, Matrix items) {
  return EmbeddingModel::from_tables(std::move(users), std::move(items), {});
}

// Rank-1 MF model whose user u scores item i as f[u][i] via one-hot items.
EmbeddingModel scores_model(const std::vector<std::vector<double>>& f) {
  const auto nu = static_cast<Eigen::Index>(f.size());
  const auto ni = static_cast<Eigen::Index>(f[0].size());
  Matrix users(nu, ni), items = Matrix::Identity(ni, ni);
  for (Eigen::Index u = 0; u < nu; ++u)
    for (Eigen::Index i = 0; i < ni; ++i) users(u, i) = f[u][i];
  return mf(users, items);
}

std::vector<UserId> all_users(std::int64_t n) {
  std::vector<UserId> v(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) v[k] = static_cast<UserId>(k);
  return v;
}

std::vector<ItemId> all_items(std::int64_t n) {
  std::vector<ItemId> v(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) v[k] = static_cast<ItemId>(k);
  return v;
}

}  // namespace

TEST_CASE("softmax_weighted_mean examples") {
  const std::vector<double> c{2.5, 2.5, 2.5};
  CHECK(softmax_weighted_mean(c) == doctest::Approx(2.5).epsilon(1e-15));
  const std::vector<double> s{0.0, std::log(3.0)};
  CHECK(std::abs(softmax_weighted_mean(s) - 0.75 * std::log(3.0)) <= 1e-15);
  CHECK(0.75 * std::log(3.0) == doctest::Approx(0.823959).epsilon(1e-6));
  const std::vector<double> one{-4.0};
  CHECK(softmax_weighted_mean(one) == -4.0);
  CHECK_THROWS_AS(softmax_weighted_mean(std::vector<double>{}), std::invalid_argument);
  const std::vector<double> big{1e4, 1e4 + std::log(3.0)};
  CHECK(std::abs(softmax_weighted_mean(big) - (1e4 + 0.75 * std::log(3.0))) <= 1e-10);
}

TEST_CASE("softmax_weighted_mean is shift-equivariant and bounded") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s(1 + t % 11), shifted(s.size());
    for (double& v : s) v = g(rng);
    const double c = g(rng) * 10;
    for (std::size_t k = 0; k < s.size(); ++k) shifted[k] = s[k] + c;
    const double m = softmax_weighted_mean(s);
    CHECK(std::abs(softmax_weighted_mean(shifted) - (m + c)) <= 1e-10);
    CHECK(m >= *std::min_element(s.begin(), s.end()) - 1e-12);
    CHECK(m <= *std::max_element(s.begin(), s.end()) + 1e-12);
  }
}

TEST_CASE("softplus and sigmoid are stable") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(softplus(800.0) == doctest::Approx(800.0));
  CHECK(softplus(-800.0) >= 0.0);
  CHECK(std::isfinite(softplus(-800.0)));
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) == doctest::Approx(0.0));
}

TEST_CASE("PDE risk trivial cases") {
  SUBCASE("one user whose positives are the whole batch") {
    auto m = scores_model({{1.7, -0.4}});
    const auto ds = InteractionDataset::from_lists(1, 2, {{0}});
    const auto batch = make_minibatch(ds, all_users(1));
    CHECK(pde_risk(m, propagate(m), batch).total_risk == 0.0);
  }
  SUBCASE("equal scores give zero for any batch") {
    auto m = scores_model({{0.8, 0.8, 0.8}, {0.8, 0.8, 0.8}});
    const auto ds = InteractionDataset::from_lists(2, 3, {{0}, {1, 2}});
    const auto batch = make_minibatch(ds, all_users(2));
    CHECK(std::abs(pde_risk(m, propagate(m), batch).total_risk) <= 1e-15);
  }
  SUBCASE("empty batch is an argument error") {
    auto m = scores_model({{0.0}});
    CHECK_THROWS_AS(pde_risk(m, propagate(m), MiniBatch{}), std::invalid_argument);
  }
}

TEST_CASE("PDE and WD risks match exact risks with the full catalogue") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto ds = pderank::testing::random_dataset(6, 9, 5, rng);
    auto m = mf(random_matrix(6, 4, rng), random_matrix(9, 4, rng));
    const auto prop = propagate(m);
    const auto batch = make_minibatch(ds, all_users(6), all_items(9));
    const auto inst = oracle::instance_from_model(m, ds);
    CHECK(std::abs(pde_risk(m, prop, batch).total_risk - oracle::exact_risk(inst)) <= 1e-10);
    CHECK(std::abs(wd_risk(m, prop, batch).total_risk - oracle::exact_wd_risk(inst)) <= 1e-10);
  }
}

TEST_CASE("PDE risk is invariant to a per-user score shift") {
  std::mt19937_64 rng(3);
  const auto ds = pderank::testing::random_dataset(5, 8, 4, rng);
  Matrix u = random_matrix(5, 3, rng), i = random_matrix(8, 3, rng);
  Matrix u2(5, 4), i2(8, 4);
  u2 << u, random_matrix(5, 1, rng, 4.0);
  i2 << i, Matrix::Constant(8, 1, 1.3);
  auto a = mf(u, i), b = mf(u2, i2);
  const auto batch = make_minibatch(ds, all_users(5));
  CHECK(std::abs(pde_risk(a, propagate(a), batch).total_risk - pde_risk(b, propagate(b), batch).total_risk) <= 1e-10);
}

TEST_CASE("WD risk examples") {
  SUBCASE("one user with a single unobserved batch item") {
    auto m = scores_model({{1.0, 2.0, -0.5}, {0.0, 0.0, 0.0}});
    const auto ds = InteractionDataset::from_lists(2, 3, {{0, 1}, {2}});
    const auto batch = make_minibatch(ds, std::vector<UserId>{0}, {0, 1, 2});
    const auto r = wd_risk(m, propagate(m), batch);
    CHECK(r.total_risk == doctest::Approx(-1.5 + -0.5));
  }
  SUBCASE("equals PDE when positives miss the batch") {
    std::mt19937_64 rng(4);
    auto m = mf(random_matrix(2, 3, rng), random_matrix(6, 3, rng));
    const auto ds = InteractionDataset::from_lists(2, 6, {{0}, {1}});
    MiniBatch batch = make_minibatch(ds, all_users(2), {2, 3, 4, 5});
    const auto prop = propagate(m);
    CHECK(std::abs(wd_risk(m, prop, batch).total_risk - pde_risk(m, prop, batch).total_risk) <= 1e-14);
  }
  SUBCASE("users covering the batch are skipped, all skipped is degenerate") {
    auto m = scores_model({{1.0, 2.0}, {0.5, 0.1}});
    const auto ds = InteractionDataset::from_lists(2, 2, {{0, 1}, {0}});
    const auto batch = make_minibatch(ds, all_users(2));
    const auto r = wd_risk(m, propagate(m), batch);
    CHECK(r.per_user_skipped == 1);
    CHECK(r.users_evaluated == 1);
    CHECK(r.total_risk == doctest::Approx(-0.5 + 0.1));
    const auto only0 = make_minibatch(ds, std::vector<UserId>{0});
    CHECK_THROWS_AS(wd_risk(m, propagate(m), only0), DegenerateBatchError);
  }
}

TEST_CASE("pairwise risk examples") {
  SUBCASE("equal scores give ln 2") {
    auto m = scores_model({{0.3, 0.3, 0.3}});
    const auto ds = InteractionDataset::from_lists(1, 3, {{0}});
    const auto batch = make_minibatch(ds, all_users(1), {0, 1, 2});
    const std::vector<std::vector<ItemId>> neg{{1, 2, 2}};
    RiskOptions opt;
    opt.lambda = 0.2;
    const auto r = pairwise_ans_risk(m, propagate(m), batch, neg, opt);
    CHECK(r.total_risk == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(r.objective == r.total_risk + 0.2 * r.l2_penalty);
  }
  SUBCASE("one positive, one negative") {
    const double x = 1.25;
    auto m = scores_model({{x, 0.0}});
    const auto ds = InteractionDataset::from_lists(1, 2, {{0}});
    const auto batch = make_minibatch(ds, all_users(1), {0, 1});
    const auto r = pairwise_ans_risk(m, propagate(m), batch, {{1}});
    CHECK(r.total_risk == doctest::Approx(softplus(-x)).epsilon(1e-15));
  }
  SUBCASE("users without negatives are skipped") {
    auto m = scores_model({{1.0, 0.0}, {0.0, 1.0}});
    const auto ds = InteractionDataset::from_lists(2, 2, {{0}, {1}});
    const auto batch = make_minibatch(ds, all_users(2));
    const auto r = pairwise_ans_risk(m, propagate(m), batch, {{1}, {}});
    CHECK(r.per_user_skipped == 1);
    CHECK(r.total_risk == doctest::Approx(softplus(-1.0)));
    CHECK_THROWS_AS(pairwise_ans_risk(m, propagate(m), batch, {{}, {}}), DegenerateBatchError);
  }
}

TEST_CASE("l2 penalty") {
  Matrix u(1, 2), i(2, 2);
  u << 3, 4;
  i << 1, 1, 2, 2;
  auto m = mf(u, i);
  MiniBatch users_only;
  users_only.users = {0};
  users_only.positives = {{}};
  CHECK(l2_penalty(m, users_only) == 12.5);
  auto zero = mf(Matrix::Zero(3, 2), Matrix::Zero(4, 2));
  const auto ds = InteractionDataset::from_lists(3, 4, {{0, 1}, {1}, {3}});
  CHECK(l2_penalty(zero, make_minibatch(ds, all_users(3))) == 0.0);

  std::mt19937_64 rng(5);
  auto r = mf(random_matrix(3, 2, rng), random_matrix(4, 2, rng));
  const auto batch = make_minibatch(ds, all_users(3));
  double loop = 0.0;
  for (UserId uid : batch.users) loop += 0.5 * r.users().row(uid).squaredNorm();
  for (ItemId iid : batch.items) loop += 0.5 * r.items().row(iid).squaredNorm();
  CHECK(std::abs(l2_penalty(r, batch) - loop) <= 1e-12);
}

TEST_CASE("objective equals total risk plus lambda times the penalty") {
  std::mt19937_64 rng(6);
  const auto ds = pderank::testing::random_dataset(5, 7, 4, rng);
  auto m = mf(random_matrix(5, 3, rng), random_matrix(7, 3, rng));
  RiskOptions opt;
  opt.lambda = 0.37;
  const auto r = pde_risk(m, propagate(m), make_minibatch(ds, all_users(5)), opt);
  CHECK(r.objective == r.total_risk + 0.37 * r.l2_penalty);
  CHECK(r.lambda == 0.37);
  CHECK(r.total_risk == doctest::Approx(r.positive_term + r.softmax_term));
}

TEST_CASE("single-item batch has a pure regularisation gradient") {
  Matrix u(1, 2), i(1, 2);
  u << 0.3, -0.2;
  i << 1.1, 0.4;
  auto m = mf(u, i);
  const auto ds = InteractionDataset::from_lists(1, 1, {{0}});
  const auto batch = make_minibatch(ds, all_users(1));
  RiskOptions opt;
  opt.lambda = 0.5;
  const auto g = grad_pde(m, propagate(m), batch, opt);
  CHECK((g.dense_users(1) - 0.5 * u).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((g.dense_items(1) - 0.5 * i).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("analytic gradients match finite differences") {
  std::mt19937_64 rng(7);
  for (Backbone backbone : {Backbone::kMF, Backbone::kLGCN})
    for (RiskKind kind : {RiskKind::kPDE, RiskKind::kWD, RiskKind::kPairwiseANS}) {
      CAPTURE(to_string(kind));
      CAPTURE(to_string(backbone));
      int checked = 0;
      while (checked < 20) {
        std::uniform_int_distribution<int> nu_d(1, 8), ni_d(2, 12), d_d(1, 6);
        const int nu = nu_d(rng), ni = ni_d(rng), d = d_d(rng);
        const auto ds = pderank::testing::random_dataset(nu, ni, std::max(1, ni / 2), rng);
        auto m = EmbeddingModel::from_tables(random_matrix(nu, d, rng), random_matrix(ni, d, rng),
                                             {backbone, 1 + checked % 3, kNoClip});
        if (backbone == Backbone::kLGCN) m.attach_graph(std::make_shared<NormalizedGraph>(ds));
        const auto batch = kind == RiskKind::kWD ? make_minibatch(ds, all_users(nu), all_items(ni))
                                                 : make_minibatch(ds, all_users(nu));
        std::vector<std::vector<ItemId>> neg;
        if (kind == RiskKind::kPairwiseANS) {
          Rng ans(rng());
          neg = sample_ans_negatives(m, propagate(m), batch, 3, ans);
          if (std::all_of(neg.begin(), neg.end(), [](const auto& n) { return n.empty(); })) continue;
        }
        if (kind == RiskKind::kWD) {
          bool any = false;
          for (const auto& p : batch.positives) any = any || p.size() < batch.items.size();
          if (!any) continue;
        }
        RiskOptions opt;
        opt.lambda = checked % 2 ? 0.1 : 0.0;
        const auto* np = kind == RiskKind::kPairwiseANS ? &neg : nullptr;
        const auto analytic = risk_and_gradient(kind, m, propagate(m), batch, np, opt).gradient;
        const auto fd = oracle::finite_difference_gradient(
            m, [&](const EmbeddingModel& x) { return evaluate_risk(kind, x, propagate(x), batch, np, opt).objective; });
        CHECK(oracle::max_relative_error(analytic, fd) <= 1e-4);
        ++checked;
      }
    }
}

TEST_CASE("separate gradient entry points agree with the combined pass") {
  std::mt19937_64 rng(8);
  const auto ds = pderank::testing::random_dataset(6, 10, 5, rng);
  auto m = mf(random_matrix(6, 3, rng), random_matrix(10, 3, rng));
  const auto prop = propagate(m);
  const auto batch = make_minibatch(ds, all_users(6));
  RiskOptions opt;
  opt.lambda = 0.05;
  CHECK(grad_pde(m, prop, batch, opt).dense_items(10) ==
        risk_and_gradient(RiskKind::kPDE, m, prop, batch, nullptr, opt).gradient.dense_items(10));
  CHECK(grad_wd(m, prop, batch, opt).dense_users(6) ==
        risk_and_gradient(RiskKind::kWD, m, prop, batch, nullptr, opt).gradient.dense_users(6));
  Rng ans(3);
  const auto neg = sample_ans_negatives(m, prop, batch, 5, ans);
  CHECK(grad_pairwise(m, prop, batch, neg, opt).dense_users(6) ==
        risk_and_gradient(RiskKind::kPairwiseANS, m, prop, batch, &neg, opt).gradient.dense_users(6));
}

TEST_CASE("thread count does not change risk or gradient bits") {
  std::mt19937_64 rng(9);
  const auto ds = pderank::testing::random_dataset(300, 80, 10, rng);
  auto m = mf(random_matrix(300, 8, rng), random_matrix(80, 8, rng));
  const auto prop = propagate(m);
  const auto batch = make_minibatch(ds, all_users(300));
  RiskOptions one, four;
  four.threads = 4;
  for (RiskKind kind : {RiskKind::kPDE, RiskKind::kWD}) {
    const auto a = risk_and_gradient(kind, m, prop, batch, nullptr, one);
    const auto b = risk_and_gradient(kind, m, prop, batch, nullptr, four);
    CHECK(a.risk.objective == b.risk.objective);
    CHECK(a.gradient.dense_users(300) == b.gradient.dense_users(300));
    CHECK(a.gradient.dense_items(80) == b.gradient.dense_items(80));
  }
}

TEST_CASE("gradient rows are limited to batch entities for MF") {
  std::mt19937_64 rng(10);
  const auto ds = InteractionDataset::from_lists(4, 6, {{0, 1}, {2}, {4}, {5}});
  auto m = mf(random_matrix(4, 2, rng), random_matrix(6, 2, rng));
  const auto batch = make_minibatch(ds, std::vector<UserId>{0, 1});
  const auto g = grad_pde(m, propagate(m), batch);
  CHECK(g.user_ids == std::vector<UserId>{0, 1});
  CHECK(g.item_ids == std::vector<ItemId>{0, 1, 2});
  CHECK(g.all_finite());
}
