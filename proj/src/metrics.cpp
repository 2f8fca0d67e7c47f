#include "pderank/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pderank/errors.hpp"
#include "pderank/parallel.hpp"

namespace pderank {

std::vector<ItemId> top_k_by_score(std::span<const double> scores, std::span<const ItemId> exclude, int k) {
  if (k < 1) throw std::invalid_argument("cutoff k must be at least 1");
  std::vector<ItemId> candidates;
  candidates.reserve(scores.size());
  auto ex = exclude.begin();
  for (ItemId i = 0; i < static_cast<ItemId>(scores.size()); ++i) {
    while (ex != exclude.end() && *ex < i) ++ex;
    if (ex != exclude.end() && *ex == i) continue;
    candidates.push_back(i);
  }
  const auto keep = std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(k));
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                    [&](ItemId a, ItemId b) {
                      const double sa = scores[static_cast<std::size_t>(a)];
                      const double sb = scores[static_cast<std::size_t>(b)];
                      if (sa != sb) return sa > sb;
                      return a < b;
                    });
  candidates.resize(keep);
  return candidates;
}

std::vector<ItemId> rank_items(const EmbeddingModel& model, const PropagatedEmbeddings& prop, UserId u,
                               std::span<const ItemId> exclude, int k) {
  if (prop.source_version != model.version())
    throw std::logic_error("propagated embeddings are stale; re-run propagate()");
  if (u < 0 || u >= model.n_users()) throw std::out_of_range("user id out of range");
  const Vector scores = prop.items * prop.users.row(u).transpose();
  return top_k_by_score(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), exclude, k);
}

namespace {

std::size_t hits_in_prefix(std::span<const ItemId> ranked, std::span<const ItemId> relevant, int k) {
  std::size_t hits = 0;
  const auto n = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
  for (std::size_t r = 0; r < n; ++r)
    hits += std::binary_search(relevant.begin(), relevant.end(), ranked[r]) ? 1 : 0;
  return hits;
}

}  // namespace

double recall_at_k(std::span<const ItemId> ranked, std::span<const ItemId> relevant, int k) {
  if (relevant.empty()) throw std::invalid_argument("recall undefined for an empty relevant set");
  return static_cast<double>(hits_in_prefix(ranked, relevant, k)) / static_cast<double>(relevant.size());
}

double ndcg_at_k(std::span<const ItemId> ranked, std::span<const ItemId> relevant, int k) {
  if (relevant.empty()) throw std::invalid_argument("nDCG undefined for an empty relevant set");
  double dcg = 0.0;
  const auto n = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
  for (std::size_t r = 0; r < n; ++r)
    if (std::binary_search(relevant.begin(), relevant.end(), ranked[r]))
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  double idcg = 0.0;
  const auto ideal = std::min<std::size_t>(relevant.size(), static_cast<std::size_t>(k));
  for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

MetricsReport evaluate(const EmbeddingModel& model, const InteractionDataset& train,
                       const InteractionDataset& test, int k, int threads) {
  if (k < 1) throw std::invalid_argument("cutoff k must be at least 1");
  if (train.n_items() != test.n_items()) throw DatasetError("train and test splits disagree on n_items");
  if (model.n_items() != test.n_items()) throw DatasetError("model and data disagree on n_items");
  if (test.n_users() > model.n_users()) throw DatasetError("test split has more users than the model");

  const PropagatedEmbeddings prop = propagate(model);
  const std::vector<UserId> users = test.users_with_positives();

  MetricsReport report;
  report.k = k;
  report.per_user.resize(users.size());
  report.n_skipped = test.n_users() - static_cast<std::int64_t>(users.size());

  constexpr std::size_t kChunk = 256;
  const std::size_t n_chunks = (users.size() + kChunk - 1) / kChunk;
  ordered_parallel_chunks(
      n_chunks, threads,
      [&](std::size_t c) {
        const std::size_t last = std::min(users.size(), (c + 1) * kChunk);
        for (std::size_t a = c * kChunk; a < last; ++a) {
          const UserId u = users[a];
          std::span<const ItemId> exclude;
          if (u < train.n_users()) exclude = train.positives(u);
          const auto ranked = rank_items(model, prop, u, exclude, k);
          const auto relevant = test.positives(u);
          report.per_user[a] = {u, recall_at_k(ranked, relevant, k), ndcg_at_k(ranked, relevant, k)};
        }
        return 0;
      },
      [](int) {});

  for (const auto& m : report.per_user) {
    report.recall += m.recall;
    report.ndcg += m.ndcg;
  }
  report.n_evaluated = static_cast<std::int64_t>(users.size());
  if (report.n_evaluated > 0) {
    report.recall /= static_cast<double>(report.n_evaluated);
    report.ndcg /= static_cast<double>(report.n_evaluated);
  }
  return report;
}

EmbeddingModel make_popularity_model(const InteractionDataset& train) {
  const auto pop = train.item_popularity();
  Matrix users = Matrix::Ones(train.n_users(), 1);
  Matrix items(train.n_items(), 1);
  for (std::size_t i = 0; i < pop.size(); ++i) items(static_cast<Eigen::Index>(i), 0) = static_cast<double>(pop[i]);
  return EmbeddingModel::from_tables(std::move(users), std::move(items), {});
}

void write_metrics_json(const MetricsReport& report, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["k"] = report.k;
  j["recall"] = report.recall;
  j["ndcg"] = report.ndcg;
  j["n_evaluated"] = report.n_evaluated;
  j["n_skipped"] = report.n_skipped;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_per_user_csv(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "user,recall,ndcg\n" << std::setprecision(17);
  for (const auto& m : report.per_user) out << m.user << ',' << m.recall << ',' << m.ndcg << '\n';
}

}  // namespace pderank
