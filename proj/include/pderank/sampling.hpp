#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "pderank/dataset.hpp"
#include "pderank/model.hpp"
#include "pderank/types.hpp"

namespace pderank {

using Rng = std::mt19937_64;

struct MiniBatch {
  std::vector<UserId> users;
  std::vector<std::vector<ItemId>> positives;  // aligned with users
  std::vector<ItemId> items;                   // sorted, deduplicated
  std::uint64_t rng_tag = 0;
};

// Batch over the given users with I_B = union of their positives. Users without
// positives are dropped.
MiniBatch make_minibatch(const InteractionDataset& ds, std::span<const UserId> users);

// Same, but with an explicit item set (used by oracle comparisons).
MiniBatch make_minibatch(const InteractionDataset& ds, std::span<const UserId> users,
                         std::vector<ItemId> items);

// Uniform draw of batch_users users without replacement among users with
// positives (all of them when batch_users covers everyone). Throws DatasetError
// when no user has positives.
MiniBatch sample_minibatch(const InteractionDataset& ds, std::int64_t batch_users, Rng& rng);

// Epoch-based user sampler: shuffles the trainable users and hands them out
// batch_users at a time; the final batch of an epoch may be shorter.
class EpochSampler {
 public:
  EpochSampler(const InteractionDataset& ds, std::int64_t batch_users, std::uint64_t seed);

  MiniBatch next();
  std::int64_t epoch() const noexcept { return epoch_; }

 private:
  const InteractionDataset* ds_;
  std::int64_t batch_users_;
  Rng rng_;
  std::vector<UserId> order_;
  std::size_t cursor_ = 0;
  std::int64_t epoch_ = 0;
  std::uint64_t draws_ = 0;
};

// m draws with replacement from candidates, P(k) ∝ exp(scores[k]) with scores
// aligned to candidates. Empty candidates yield an empty result (skip the user).
std::vector<ItemId> ans_resample(std::span<const double> scores, std::span<const ItemId> candidates,
                                 std::int64_t m, Rng& rng);

// Per-user negatives for the pairwise risk: candidates are I_B \ I_u+.
std::vector<std::vector<ItemId>> sample_ans_negatives(const EmbeddingModel& model,
                                                      const PropagatedEmbeddings& prop,
                                                      const MiniBatch& batch, std::int64_t m,
                                                      Rng& rng);

}  // namespace pderank
