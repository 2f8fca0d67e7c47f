#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "pderank/types.hpp"

namespace pderank {

enum class SplitTag { kTrain, kTest };

// Positive-only interactions with contiguous 0-based ids. Immutable once built.
class InteractionDataset {
 public:
  InteractionDataset() = default;
  InteractionDataset(std::int64_t n_users, std::int64_t n_items, SplitTag tag = SplitTag::kTrain);

  // Takes per-user item lists, sorts and deduplicates them. Throws std::out_of_range
  // on any id outside the declared bounds.
  static InteractionDataset from_lists(std::int64_t n_users, std::int64_t n_items,
                                       std::vector<std::vector<ItemId>> positives,
                                       SplitTag tag = SplitTag::kTrain);

  std::int64_t n_users() const noexcept { return n_users_; }
  std::int64_t n_items() const noexcept { return n_items_; }
  SplitTag split_tag() const noexcept { return tag_; }

  std::span<const ItemId> positives(UserId u) const;
  bool contains(UserId u, ItemId i) const;
  std::int64_t interaction_count() const noexcept { return interactions_; }

  // Users with at least one positive, ascending.
  std::vector<UserId> users_with_positives() const;

  // Number of users holding each item.
  std::vector<std::int64_t> item_popularity() const;

  bool operator==(const InteractionDataset&) const = default;

 private:
  std::int64_t n_users_ = 0;
  std::int64_t n_items_ = 0;
  SplitTag tag_ = SplitTag::kTrain;
  std::vector<std::vector<ItemId>> positives_;
  std::int64_t interactions_ = 0;
};

struct StatsReport {
  std::int64_t n_users = 0;
  std::int64_t n_items = 0;
  std::int64_t interactions = 0;
  double density = 0.0;
};

InteractionDataset parse_interactions(std::istream& in, std::int64_t n_users, std::int64_t n_items,
                                      SplitTag tag = SplitTag::kTrain);
InteractionDataset load_interactions(const std::filesystem::path& path, std::int64_t n_users,
                                     std::int64_t n_items, SplitTag tag = SplitTag::kTrain);
void write_interactions(const InteractionDataset& ds, std::ostream& out);
void write_interactions(const InteractionDataset& ds, const std::filesystem::path& path);

// Largest (user id + 1, item id + 1) seen across the given files.
std::pair<std::int64_t, std::int64_t> scan_id_bounds(std::span<const std::filesystem::path> paths);

StatsReport dataset_stats(const InteractionDataset& ds);

// Union of two splits over the same id space; used for train+test statistics.
InteractionDataset merge(const InteractionDataset& a, const InteractionDataset& b);

// Moves round(fraction * |I_u+|) positives of each user (at least one left behind)
// into a validation split. Deterministic for a fixed seed.
std::pair<InteractionDataset, InteractionDataset> carve_holdout(const InteractionDataset& train,
                                                                double fraction,
                                                                std::uint64_t seed);

struct SyntheticGroundTruth {
  Matrix user_embeddings;
  Matrix item_embeddings;
  int dim = 0;

  double score(UserId u, ItemId i) const {
    return user_embeddings.row(u).dot(item_embeddings.row(i));
  }
};

struct SyntheticData {
  InteractionDataset train;
  SyntheticGroundTruth truth;
};

// Planted coordinates ~ N(0, variance 1/sqrt(d)), so true scores have unit variance; each user's positives are drawn
// without replacement from softmax(true scores) by sequential renormalised draws.
SyntheticData generate_synthetic(std::int64_t n_users, std::int64_t n_items, int dim,
                                 std::int64_t positives_per_user, std::uint64_t seed);

// Same sampling scheme with caller-provided embeddings.
InteractionDataset sample_from_ground_truth(const SyntheticGroundTruth& truth,
                                            std::int64_t positives_per_user, std::uint64_t seed);

// Test split whose positives are each user's top_k items by planted score among
// the items not in the user's train positives (ties by ascending id).
InteractionDataset planted_top_items(const SyntheticGroundTruth& truth,
                                     const InteractionDataset& train, std::int64_t top_k);

void write_ground_truth(const SyntheticGroundTruth& truth, const std::filesystem::path& path);
SyntheticGroundTruth read_ground_truth(const std::filesystem::path& path);

}  // namespace pderank
