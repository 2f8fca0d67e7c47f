#include "pderank/risk.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>
#include <string>

#include "pderank/errors.hpp"
#include "pderank/parallel.hpp"

namespace pderank {

namespace {

constexpr std::size_t kUsersPerChunk = 64;

std::size_t position_of(const std::vector<ItemId>& sorted, ItemId id) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), id);
  return static_cast<std::size_t>(it - sorted.begin());
}

struct BatchPlan {
  std::vector<std::vector<ItemId>> positives;  // sorted copies
  std::vector<char> skipped;
  std::int64_t n_skipped = 0;
  std::vector<ItemId> active;           // I_B ∪ positives ∪ negatives, sorted
  std::vector<std::size_t> batch_slot;  // I_B[j] -> index into active
};

BatchPlan plan_batch(RiskKind kind, const EmbeddingModel& model, const MiniBatch& batch,
                     const std::vector<std::vector<ItemId>>* negatives) {
  if (batch.users.empty()) throw std::invalid_argument("mini-batch has no users");
  if (batch.positives.size() != batch.users.size())
    throw std::invalid_argument("mini-batch positives are not aligned with users");
  if (kind != RiskKind::kPairwiseANS && batch.items.empty())
    throw std::invalid_argument("mini-batch item set is empty");
  if (kind == RiskKind::kPairwiseANS && (negatives == nullptr || negatives->size() != batch.users.size()))
    throw std::invalid_argument("pairwise risk needs one negative list per batch user");
  if (!std::is_sorted(batch.items.begin(), batch.items.end()) ||
      std::adjacent_find(batch.items.begin(), batch.items.end()) != batch.items.end())
    throw std::invalid_argument("mini-batch items must be sorted and unique");

  BatchPlan plan;
  plan.positives = batch.positives;
  plan.skipped.assign(batch.users.size(), 0);
  std::vector<ItemId> active = batch.items;
  for (std::size_t a = 0; a < batch.users.size(); ++a) {
    const UserId u = batch.users[a];
    if (u < 0 || u >= model.n_users()) throw std::out_of_range("batch user id out of range");
    auto& pos = plan.positives[a];
    if (pos.empty()) throw std::invalid_argument("batch user " + std::to_string(u) + " has no positives");
    std::sort(pos.begin(), pos.end());
    pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
    active.insert(active.end(), pos.begin(), pos.end());

    bool skip = false;
    if (kind == RiskKind::kWD) {
      std::size_t shared = 0;
      for (ItemId i : pos) shared += std::binary_search(batch.items.begin(), batch.items.end(), i) ? 1 : 0;
      skip = shared == batch.items.size();
    } else if (kind == RiskKind::kPairwiseANS) {
      const auto& neg = (*negatives)[a];
      skip = neg.empty();
      active.insert(active.end(), neg.begin(), neg.end());
    }
    plan.skipped[a] = skip ? 1 : 0;
    plan.n_skipped += skip ? 1 : 0;
  }
  for (ItemId i : active)
    if (i < 0 || i >= model.n_items()) throw std::out_of_range("batch item id out of range");
  std::sort(active.begin(), active.end());
  active.erase(std::unique(active.begin(), active.end()), active.end());
  plan.active = std::move(active);
  plan.batch_slot.reserve(batch.items.size());
  for (ItemId i : batch.items) plan.batch_slot.push_back(position_of(plan.active, i));

  if (plan.n_skipped == static_cast<std::int64_t>(batch.users.size()))
    throw DegenerateBatchError("every user in the mini-batch was skipped");
  return plan;
}

struct ChunkResult {
  double positive_sum = 0.0;
  double softmax_sum = 0.0;
  double risk_sum = 0.0;
  std::size_t first_user = 0;
  Matrix user_grads;    // rows aligned with the chunk's users
  Matrix active_grads;  // rows aligned with plan.active; empty when no gradient requested
};

// Softmax-family risks (PDE over I_B, WD over I_B \ I_u+).
ChunkResult softmax_chunk(RiskKind kind, const PropagatedEmbeddings& prop, const MiniBatch& batch,
                          const BatchPlan& plan, const Matrix& batch_items, std::size_t first,
                          std::size_t last, double scale, bool want_grad) {
  const auto d = prop.users.cols();
  const auto n_rows = static_cast<Eigen::Index>(last - first);
  const auto n_b = static_cast<Eigen::Index>(batch.items.size());
  ChunkResult out;
  out.first_user = first;

  Matrix user_rows(n_rows, d);
  for (Eigen::Index r = 0; r < n_rows; ++r) user_rows.row(r) = prop.users.row(batch.users[first + static_cast<std::size_t>(r)]);
  const Matrix scores = user_rows * batch_items.transpose();

  Matrix coeff;
  if (want_grad) {
    coeff = Matrix::Zero(n_rows, n_b);
    out.user_grads = Matrix::Zero(n_rows, d);
    out.active_grads = Matrix::Zero(static_cast<Eigen::Index>(plan.active.size()), d);
  }

  std::vector<char> included(static_cast<std::size_t>(n_b));
  std::vector<double> weight(static_cast<std::size_t>(n_b));
  for (Eigen::Index r = 0; r < n_rows; ++r) {
    const std::size_t a = first + static_cast<std::size_t>(r);
    if (plan.skipped[a]) continue;
    const auto& pos = plan.positives[a];

    std::fill(included.begin(), included.end(), 1);
    if (kind == RiskKind::kWD)
      for (ItemId i : pos) {
        auto it = std::lower_bound(batch.items.begin(), batch.items.end(), i);
        if (it != batch.items.end() && *it == i) included[static_cast<std::size_t>(it - batch.items.begin())] = 0;
      }

    double shift = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n_b; ++j)
      if (included[static_cast<std::size_t>(j)]) shift = std::max(shift, scores(r, j));
    double z = 0.0;
    double weighted = 0.0;
    for (Eigen::Index j = 0; j < n_b; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      weight[jj] = included[jj] ? std::exp(scores(r, j) - shift) : 0.0;
      z += weight[jj];
      weighted += weight[jj] * scores(r, j);
    }
    const double soft_mean = weighted / z;

    double pos_mean = 0.0;
    for (ItemId i : pos) pos_mean += prop.items.row(i).dot(user_rows.row(r));
    pos_mean /= static_cast<double>(pos.size());

    out.positive_sum += -pos_mean;
    out.softmax_sum += soft_mean;
    out.risk_sum += -pos_mean + soft_mean;

    if (!want_grad) continue;
    // d T / d s_j = w_j (1 + s_j - T)
    for (Eigen::Index j = 0; j < n_b; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      if (included[jj]) coeff(r, j) = scale * (weight[jj] / z) * (1.0 + scores(r, j) - soft_mean);
    }
    const double pos_coeff = -scale / static_cast<double>(pos.size());
    for (ItemId i : pos) {
      out.user_grads.row(r) += pos_coeff * prop.items.row(i);
      out.active_grads.row(static_cast<Eigen::Index>(position_of(plan.active, i))) += pos_coeff * user_rows.row(r);
    }
  }

  if (want_grad) {
    out.user_grads.noalias() += coeff * batch_items;
    const Matrix item_part = coeff.transpose() * user_rows;
    for (Eigen::Index j = 0; j < n_b; ++j)
      out.active_grads.row(static_cast<Eigen::Index>(plan.batch_slot[static_cast<std::size_t>(j)])) += item_part.row(j);
  }
  return out;
}

ChunkResult pairwise_chunk(const PropagatedEmbeddings& prop, const MiniBatch& batch, const BatchPlan& plan,
                           const std::vector<std::vector<ItemId>>& negatives, std::size_t first,
                           std::size_t last, double scale, bool want_grad) {
  const auto d = prop.users.cols();
  const auto n_rows = static_cast<Eigen::Index>(last - first);
  ChunkResult out;
  out.first_user = first;
  if (want_grad) {
    out.user_grads = Matrix::Zero(n_rows, d);
    out.active_grads = Matrix::Zero(static_cast<Eigen::Index>(plan.active.size()), d);
  }
  std::vector<double> pos_scores;
  std::vector<double> neg_scores;
  for (Eigen::Index r = 0; r < n_rows; ++r) {
    const std::size_t a = first + static_cast<std::size_t>(r);
    if (plan.skipped[a]) continue;
    const auto& pos = plan.positives[a];
    const auto& neg = negatives[a];
    const auto e_u = prop.users.row(batch.users[a]);
    pos_scores.resize(pos.size());
    neg_scores.resize(neg.size());
    for (std::size_t k = 0; k < pos.size(); ++k) pos_scores[k] = prop.items.row(pos[k]).dot(e_u);
    for (std::size_t l = 0; l < neg.size(); ++l) neg_scores[l] = prop.items.row(neg[l]).dot(e_u);

    const double pairs = static_cast<double>(pos.size() * neg.size());
    double loss = 0.0;
    for (double p : pos_scores)
      for (double n : neg_scores) loss += softplus(n - p);
    loss /= pairs;

    double pos_mean = 0.0;
    for (double p : pos_scores) pos_mean += p;
    pos_mean /= static_cast<double>(pos.size());
    double neg_mean = 0.0;
    for (double n : neg_scores) neg_mean += n;
    neg_mean /= static_cast<double>(neg.size());

    out.positive_sum += -pos_mean;
    out.softmax_sum += neg_mean;
    out.risk_sum += loss;

    if (!want_grad) continue;
    for (std::size_t k = 0; k < pos.size(); ++k)
      for (std::size_t l = 0; l < neg.size(); ++l) {
        const double c = scale * sigmoid(neg_scores[l] - pos_scores[k]) / pairs;
        const auto neg_row = static_cast<Eigen::Index>(position_of(plan.active, neg[l]));
        const auto pos_row = static_cast<Eigen::Index>(position_of(plan.active, pos[k]));
        out.user_grads.row(r) += c * (prop.items.row(neg[l]) - prop.items.row(pos[k]));
        out.active_grads.row(neg_row) += c * e_u;
        out.active_grads.row(pos_row) -= c * e_u;
      }
  }
  return out;
}

// Pulls gradients w.r.t. final embeddings back to layer 0.
GradientSet to_layer_zero(const EmbeddingModel& model, const MiniBatch& batch, const BatchPlan& plan,
                          const Matrix& final_user_grads, const Matrix& active_grads) {
  GradientSet g;
  const auto d = static_cast<Eigen::Index>(model.dim());

  // Batch user rows in ascending id order.
  std::vector<std::size_t> order(batch.users.size());
  for (std::size_t a = 0; a < order.size(); ++a) order[a] = a;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return batch.users[x] < batch.users[y]; });

  if (model.backbone() == Backbone::kMF) {
    g.user_ids.reserve(order.size());
    g.user_grads = Matrix::Zero(static_cast<Eigen::Index>(order.size()), d);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const UserId u = batch.users[order[k]];
      if (!g.user_ids.empty() && g.user_ids.back() == u) {
        g.user_grads.row(static_cast<Eigen::Index>(g.user_ids.size() - 1)) += final_user_grads.row(static_cast<Eigen::Index>(order[k]));
        continue;
      }
      g.user_grads.row(static_cast<Eigen::Index>(g.user_ids.size())) = final_user_grads.row(static_cast<Eigen::Index>(order[k]));
      g.user_ids.push_back(u);
    }
    g.user_grads.conservativeResize(static_cast<Eigen::Index>(g.user_ids.size()), d);
    g.item_ids = plan.active;
    g.item_grads = active_grads;
    return g;
  }

  const NormalizedGraph* graph = model.graph();
  if (graph == nullptr) throw std::logic_error("LGCN model has no graph attached");
  const std::int64_t n_users = model.n_users();
  Matrix stacked = Matrix::Zero(graph->n_nodes(), d);
  std::vector<char> reached(static_cast<std::size_t>(graph->n_nodes()), 0);
  std::vector<std::int32_t> frontier;
  for (std::size_t a = 0; a < batch.users.size(); ++a) {
    const UserId u = batch.users[a];
    stacked.row(u) += final_user_grads.row(static_cast<Eigen::Index>(a));
    if (!reached[static_cast<std::size_t>(u)]) {
      reached[static_cast<std::size_t>(u)] = 1;
      frontier.push_back(u);
    }
  }
  for (std::size_t k = 0; k < plan.active.size(); ++k) {
    const auto node = static_cast<std::int32_t>(n_users + plan.active[k]);
    stacked.row(node) += active_grads.row(static_cast<Eigen::Index>(k));
    if (!reached[static_cast<std::size_t>(node)]) {
      reached[static_cast<std::size_t>(node)] = 1;
      frontier.push_back(node);
    }
  }
  for (int hop = 0; hop < model.layers(); ++hop) {
    std::vector<std::int32_t> next;
    for (std::int32_t v : frontier)
      for (std::int32_t w : graph->neighbours()[static_cast<std::size_t>(v)])
        if (!reached[static_cast<std::size_t>(w)]) {
          reached[static_cast<std::size_t>(w)] = 1;
          next.push_back(w);
        }
    frontier.swap(next);
  }
  const Matrix back = lgcn_combine(*graph, stacked, model.layers());
  for (std::int64_t v = 0; v < graph->n_nodes(); ++v) {
    if (!reached[static_cast<std::size_t>(v)]) continue;
    if (v < n_users) g.user_ids.push_back(static_cast<UserId>(v));
    else g.item_ids.push_back(static_cast<ItemId>(v - n_users));
  }
  g.user_grads.resize(static_cast<Eigen::Index>(g.user_ids.size()), d);
  g.item_grads.resize(static_cast<Eigen::Index>(g.item_ids.size()), d);
  for (std::size_t k = 0; k < g.user_ids.size(); ++k) g.user_grads.row(static_cast<Eigen::Index>(k)) = back.row(g.user_ids[k]);
  for (std::size_t k = 0; k < g.item_ids.size(); ++k)
    g.item_grads.row(static_cast<Eigen::Index>(k)) = back.row(static_cast<Eigen::Index>(n_users + g.item_ids[k]));
  return g;
}

void add_l2_gradient(const EmbeddingModel& model, const MiniBatch& batch, double lambda, GradientSet& g) {
  if (lambda == 0.0) return;
  std::vector<UserId> users = batch.users;
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  for (UserId u : users) {
    auto it = std::lower_bound(g.user_ids.begin(), g.user_ids.end(), u);
    g.user_grads.row(it - g.user_ids.begin()) += lambda * model.users().row(u);
  }
  for (ItemId i : batch.items) {
    auto it = std::lower_bound(g.item_ids.begin(), g.item_ids.end(), i);
    g.item_grads.row(it - g.item_ids.begin()) += lambda * model.items().row(i);
  }
}

RiskAndGradient compute(RiskKind kind, const EmbeddingModel& model, const PropagatedEmbeddings& prop,
                        const MiniBatch& batch, const std::vector<std::vector<ItemId>>* negatives,
                        RiskOptions options, bool want_grad) {
  if (prop.source_version != model.version())
    throw std::logic_error("propagated embeddings are stale; re-run propagate()");
  if (!(options.lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  const BatchPlan plan = plan_batch(kind, model, batch, negatives);
  const auto n_users = batch.users.size();
  const auto used = static_cast<std::int64_t>(n_users) - plan.n_skipped;
  const double scale = 1.0 / static_cast<double>(used);
  const auto d = static_cast<Eigen::Index>(model.dim());

  Matrix batch_items;
  if (kind != RiskKind::kPairwiseANS) {
    batch_items.resize(static_cast<Eigen::Index>(batch.items.size()), d);
    for (std::size_t j = 0; j < batch.items.size(); ++j)
      batch_items.row(static_cast<Eigen::Index>(j)) = prop.items.row(batch.items[j]);
  }

  RiskAndGradient result;
  Matrix final_user_grads;
  Matrix active_grads;
  if (want_grad) {
    final_user_grads = Matrix::Zero(static_cast<Eigen::Index>(n_users), d);
    active_grads = Matrix::Zero(static_cast<Eigen::Index>(plan.active.size()), d);
  }
  double positive_sum = 0.0, softmax_sum = 0.0, risk_sum = 0.0;

  const std::size_t n_chunks = (n_users + kUsersPerChunk - 1) / kUsersPerChunk;
  ordered_parallel_chunks(
      n_chunks, options.threads,
      [&](std::size_t c) {
        const std::size_t first = c * kUsersPerChunk;
        const std::size_t last = std::min(n_users, first + kUsersPerChunk);
        if (kind == RiskKind::kPairwiseANS)
          return pairwise_chunk(prop, batch, plan, *negatives, first, last, scale, want_grad);
        return softmax_chunk(kind, prop, batch, plan, batch_items, first, last, scale, want_grad);
      },
      [&](ChunkResult&& part) {
        positive_sum += part.positive_sum;
        softmax_sum += part.softmax_sum;
        risk_sum += part.risk_sum;
        if (want_grad) {
          final_user_grads.middleRows(static_cast<Eigen::Index>(part.first_user), part.user_grads.rows()) = part.user_grads;
          active_grads += part.active_grads;
        }
      });

  RiskBreakdown& r = result.risk;
  r.positive_term = positive_sum * scale;
  r.softmax_term = softmax_sum * scale;
  r.total_risk = risk_sum * scale;
  r.l2_penalty = l2_penalty(model, batch);
  r.lambda = options.lambda;
  r.objective = r.total_risk + options.lambda * r.l2_penalty;
  r.per_user_skipped = plan.n_skipped;
  r.users_evaluated = used;

  if (want_grad) {
    result.gradient = to_layer_zero(model, batch, plan, final_user_grads, active_grads);
    add_l2_gradient(model, batch, options.lambda, result.gradient);
  }
  return result;
}

}  // namespace

Matrix GradientSet::dense_users(std::int64_t n_users) const {
  Matrix out = Matrix::Zero(n_users, user_grads.cols());
  for (std::size_t k = 0; k < user_ids.size(); ++k) out.row(user_ids[k]) = user_grads.row(static_cast<Eigen::Index>(k));
  return out;
}

Matrix GradientSet::dense_items(std::int64_t n_items) const {
  Matrix out = Matrix::Zero(n_items, item_grads.cols());
  for (std::size_t k = 0; k < item_ids.size(); ++k) out.row(item_ids[k]) = item_grads.row(static_cast<Eigen::Index>(k));
  return out;
}

bool GradientSet::all_finite() const {
  return user_grads.allFinite() && item_grads.allFinite();
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softmax_weighted_mean(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("softmax_weighted_mean of an empty score vector");
  const double shift = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  double weighted = 0.0;
  for (double s : scores) {
    const double w = std::exp(s - shift);
    z += w;
    weighted += w * s;
  }
  return weighted / z;
}

double l2_penalty(const EmbeddingModel& model, const MiniBatch& batch) {
  std::vector<UserId> users = batch.users;
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  std::vector<ItemId> items = batch.items;
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  double sum = 0.0;
  for (UserId u : users) sum += model.users().row(u).squaredNorm();
  for (ItemId i : items) sum += model.items().row(i).squaredNorm();
  return 0.5 * sum;
}

RiskAndGradient risk_and_gradient(RiskKind kind, const EmbeddingModel& model,
                                  const PropagatedEmbeddings& prop, const MiniBatch& batch,
                                  const std::vector<std::vector<ItemId>>* negatives,
                                  RiskOptions options) {
  return compute(kind, model, prop, batch, negatives, options, true);
}

RiskBreakdown evaluate_risk(RiskKind kind, const EmbeddingModel& model,
                            const PropagatedEmbeddings& prop, const MiniBatch& batch,
                            const std::vector<std::vector<ItemId>>* negatives,
                            RiskOptions options) {
  return compute(kind, model, prop, batch, negatives, options, false).risk;
}

RiskBreakdown pde_risk(const EmbeddingModel& model, const PropagatedEmbeddings& prop,
                       const MiniBatch& batch, RiskOptions options) {
  return evaluate_risk(RiskKind::kPDE, model, prop, batch, nullptr, options);
}

RiskBreakdown wd_risk(const EmbeddingModel& model, const PropagatedEmbeddings& prop,
                      const MiniBatch& batch, RiskOptions options) {
  return evaluate_risk(RiskKind::kWD, model, prop, batch, nullptr, options);
}

RiskBreakdown pairwise_ans_risk(const EmbeddingModel& model, const PropagatedEmbeddings& prop,
                                const MiniBatch& batch,
                                const std::vector<std::vector<ItemId>>& negatives,
                                RiskOptions options) {
  return evaluate_risk(RiskKind::kPairwiseANS, model, prop, batch, &negatives, options);
}

GradientSet grad_pde(const EmbeddingModel& model, const PropagatedEmbeddings& prop,
                     const MiniBatch& batch, RiskOptions options) {
  return risk_and_gradient(RiskKind::kPDE, model, prop, batch, nullptr, options).gradient;
}

GradientSet grad_wd(const EmbeddingModel& model, const PropagatedEmbeddings& prop,
                    const MiniBatch& batch, RiskOptions options) {
  return risk_and_gradient(RiskKind::kWD, model, prop, batch, nullptr, options).gradient;
}

GradientSet grad_pairwise(const EmbeddingModel& model, const PropagatedEmbeddings& prop,
                          const MiniBatch& batch, const std::vector<std::vector<ItemId>>& negatives,
                          RiskOptions options) {
  return risk_and_gradient(RiskKind::kPairwiseANS, model, prop, batch, &negatives, options).gradient;
}

}  // namespace pderank
