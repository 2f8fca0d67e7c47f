#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "pderank/dataset.hpp"
#include "pderank/errors.hpp"
#include "pderank/model.hpp"
#include "pderank/risk.hpp"
#include "pderank/sampling.hpp"

namespace pderank {

struct TrainConfig {
  RiskKind risk = RiskKind::kPDE;
  Backbone backbone = Backbone::kMF;
  int dim = 64;
  int layers = 3;
  double lambda = 0.05;
  double clip_bound = 5.0;
  double learning_rate = 0.05;
  std::int64_t batch_users = 2500;
  std::int64_t max_iterations = 3000;
  std::int64_t eval_every = 100;
  std::int64_t ans_m = 5;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int eval_k = 20;
  int threads = 1;
  // When false, elapsed_s is recorded as 0 so history files are reproducible.
  bool record_wall_clock = true;
};

// Throws std::invalid_argument on an inconsistent configuration (e.g. the WD
// risk without a finite clip bound).
void validate(const TrainConfig& cfg);

struct EvalRecord {
  std::int64_t iteration = 0;
  double objective = 0.0;
  std::optional<double> recall;
  std::optional<double> ndcg;
  double elapsed_s = 0.0;
};

struct TrainHistory {
  int k = 20;
  std::vector<EvalRecord> records;

  // Record with the highest nDCG, if any record carries metrics.
  std::optional<EvalRecord> best() const;
};

void write_history_csv(const TrainHistory& history, std::ostream& out);
void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

// SGD or Adam over the rows present in a GradientSet. Adam keeps dense moment
// tables and a global step count; rows absent from a step are not touched.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::int64_t n_users, std::int64_t n_items, int dim);
  void apply(EmbeddingModel& model, const GradientSet& gradient);
  std::int64_t steps() const noexcept { return step_; }

 private:
  void update_rows(Matrix& table, Matrix& m, Matrix& v, const std::vector<std::int32_t>& ids,
                   const Matrix& grads) const;

  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  Matrix user_m_, user_v_, item_m_, item_v_;
  std::int64_t step_ = 0;
};

// One optimiser update on the selected risk, then clipping when the bound is
// finite. Returns the batch risk evaluated before the update. Throws
// NumericFailure on a non-finite objective or gradient.
RiskBreakdown train_step(EmbeddingModel& model, Optimizer& optimizer, const MiniBatch& batch,
                         const TrainConfig& cfg, Rng& ans_rng, std::int64_t iteration);

struct TrainResult {
  EmbeddingModel model;
  TrainHistory history;
  std::int64_t skipped_steps = 0;  // degenerate batches (WD with I_B ⊆ I_u+)
};

// Numeric failure during training; carries the history recorded so far.
class TrainingFailure : public NumericFailure {
 public:
  TrainingFailure(const NumericFailure& cause, TrainHistory history)
      : NumericFailure(cause), history_(std::move(history)) {}
  const TrainHistory& history() const noexcept { return history_; }

 private:
  TrainHistory history_;
};

using EvalCallback = std::function<void(const EvalRecord&, const EmbeddingModel&)>;

// Runs cfg.max_iterations steps over epoch-shuffled user batches. Every
// eval_every steps (and after the last one) a record is appended; metrics are
// filled in when an evaluation split is given.
TrainResult train(const InteractionDataset& train_split, const TrainConfig& cfg,
                  const InteractionDataset* eval_split = nullptr, const EvalCallback& on_eval = {});

// Independent seeds for initialisation, batch order and ANS draws.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace pderank
