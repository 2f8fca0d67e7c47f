#include "pderank/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pderank/errors.hpp"

namespace pderank {

MiniBatch make_minibatch(const InteractionDataset& ds, std::span<const UserId> users,
                         std::vector<ItemId> items) {
  MiniBatch batch;
  for (UserId u : users) {
    auto pos = ds.positives(u);
    if (pos.empty()) continue;
    batch.users.push_back(u);
    batch.positives.emplace_back(pos.begin(), pos.end());
  }
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  batch.items = std::move(items);
  return batch;
}

MiniBatch make_minibatch(const InteractionDataset& ds, std::span<const UserId> users) {
  std::vector<ItemId> items;
  for (UserId u : users) {
    auto pos = ds.positives(u);
    items.insert(items.end(), pos.begin(), pos.end());
  }
  return make_minibatch(ds, users, std::move(items));
}

MiniBatch sample_minibatch(const InteractionDataset& ds, std::int64_t batch_users, Rng& rng) {
  std::vector<UserId> pool = ds.users_with_positives();
  if (pool.empty()) throw DatasetError("dataset has no user with positive items");
  if (batch_users <= 0) throw std::invalid_argument("batch_users must be positive");
  const auto take = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(batch_users));
  // Partial Fisher-Yates.
  for (std::size_t k = 0; k < take; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
    std::swap(pool[k], pool[pick(rng)]);
  }
  pool.resize(take);
  std::sort(pool.begin(), pool.end());
  return make_minibatch(ds, pool);
}

EpochSampler::EpochSampler(const InteractionDataset& ds, std::int64_t batch_users, std::uint64_t seed)
    : ds_(&ds), batch_users_(batch_users), rng_(seed), order_(ds.users_with_positives()) {
  if (order_.empty()) throw DatasetError("dataset has no user with positive items");
  if (batch_users <= 0) throw std::invalid_argument("batch_users must be positive");
  cursor_ = order_.size();  // forces a shuffle on the first call
  epoch_ = -1;
}

MiniBatch EpochSampler::next() {
  if (cursor_ >= order_.size()) {
    std::sort(order_.begin(), order_.end());
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
    ++epoch_;
  }
  const auto take = std::min<std::size_t>(order_.size() - cursor_, static_cast<std::size_t>(batch_users_));
  std::vector<UserId> users(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                            order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
  cursor_ += take;
  std::sort(users.begin(), users.end());
  MiniBatch batch = make_minibatch(*ds_, users);
  batch.rng_tag = draws_++;
  return batch;
}

std::vector<ItemId> ans_resample(std::span<const double> scores, std::span<const ItemId> candidates,
                                 std::int64_t m, Rng& rng) {
  if (scores.size() != candidates.size())
    throw std::invalid_argument("scores and candidates must be aligned");
  if (m < 1) throw std::invalid_argument("ans draw count must be at least 1");
  if (candidates.empty()) return {};
  const double shift = *std::max_element(scores.begin(), scores.end());
  std::vector<double> weights(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) weights[k] = std::exp(scores[k] - shift);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::vector<ItemId> out(static_cast<std::size_t>(m));
  for (auto& item : out) item = candidates[pick(rng)];
  return out;
}

std::vector<std::vector<ItemId>> sample_ans_negatives(const EmbeddingModel& model,
                                                      const PropagatedEmbeddings& prop,
                                                      const MiniBatch& batch, std::int64_t m,
                                                      Rng& rng) {
  std::vector<std::vector<ItemId>> negatives(batch.users.size());
  std::vector<ItemId> candidates;
  std::vector<double> scores;
  for (std::size_t a = 0; a < batch.users.size(); ++a) {
    const UserId u = batch.users[a];
    const auto& pos = batch.positives[a];
    candidates.clear();
    std::set_difference(batch.items.begin(), batch.items.end(), pos.begin(), pos.end(),
                        std::back_inserter(candidates));
    Matrix block = score_block(model, prop, std::span<const UserId>(&u, 1), candidates);
    scores.assign(block.data(), block.data() + block.size());
    negatives[a] = ans_resample(scores, candidates, m, rng);
  }
  return negatives;
}

}  // namespace pderank
