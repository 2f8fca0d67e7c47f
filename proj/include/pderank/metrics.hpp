#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pderank/dataset.hpp"
#include "pderank/model.hpp"

namespace pderank {

struct UserMetrics {
  UserId user = 0;
  double recall = 0.0;
  double ndcg = 0.0;
};

struct MetricsReport {
  int k = 20;
  std::vector<UserMetrics> per_user;  // ascending user id
  double recall = 0.0;                // unweighted mean over evaluated users
  double ndcg = 0.0;
  std::int64_t n_evaluated = 0;
  std::int64_t n_skipped = 0;
};

// Top-k items by score over I \ exclude (exclude sorted ascending); ties go to the
// lower item id. Returns fewer than k items when fewer are available.
std::vector<ItemId> rank_items(const EmbeddingModel& model, const PropagatedEmbeddings& prop, UserId u,
                               std::span<const ItemId> exclude, int k);

// Same ranking rule on a raw score vector indexed by item id.
std::vector<ItemId> top_k_by_score(std::span<const double> scores, std::span<const ItemId> exclude, int k);

// |top-k ∩ relevant| / |relevant|. relevant must be sorted and non-empty.
double recall_at_k(std::span<const ItemId> ranked, std::span<const ItemId> relevant, int k);
// Binary-gain nDCG with log2(r + 1) discount and IDCG over min(k, |relevant|) slots.
double ndcg_at_k(std::span<const ItemId> ranked, std::span<const ItemId> relevant, int k);

// Ranks every user with test positives over items not in their train positives.
// Throws DatasetError when the splits or the model disagree on n_items.
MetricsReport evaluate(const EmbeddingModel& model, const InteractionDataset& train,
                       const InteractionDataset& test, int k, int threads = 1);

// User-independent scorer: f_u(i) = train popularity of i, as a d = 1 MF model.
EmbeddingModel make_popularity_model(const InteractionDataset& train);

void write_metrics_json(const MetricsReport& report, const std::filesystem::path& path);
void write_per_user_csv(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace pderank
