#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pderank/model.hpp"
#include "pderank/sampling.hpp"
#include "pderank/types.hpp"

namespace pderank {

struct RiskBreakdown {
  // Mean over evaluated users of -mean_{I_u+} f_u(i).
  double positive_term = 0.0;
  // Mean over evaluated users of the softmax-weighted mean score. For the
  // pairwise risk: the mean negative score.
  double softmax_term = 0.0;
  double total_risk = 0.0;
  double l2_penalty = 0.0;
  double lambda = 0.0;
  double objective = 0.0;  // total_risk + lambda * l2_penalty
  std::int64_t per_user_skipped = 0;
  std::int64_t users_evaluated = 0;
};

// Gradient of an objective w.r.t. layer-0 rows. Only rows that can carry a
// nonzero value are present; ids are ascending.
struct GradientSet {
  std::vector<UserId> user_ids;
  Matrix user_grads;
  std::vector<ItemId> item_ids;
  Matrix item_grads;

  // Densified copies; absent rows are zero.
  Matrix dense_users(std::int64_t n_users) const;
  Matrix dense_items(std::int64_t n_items) const;
  bool all_finite() const;
};

struct RiskOptions {
  double lambda = 0.0;
  int threads = 1;
};

double softplus(double x);
double sigmoid(double x);

// sum_i softmax(s)_i * s_i, max-shifted. Throws std::invalid_argument on empty input.
double softmax_weighted_mean(std::span<const double> scores);

// Per user: -mean_{I_u+} f + softmax-weighted mean of f over all of I_B.
RiskBreakdown pde_risk(const EmbeddingModel& model, const PropagatedEmbeddings& prop,
                       const MiniBatch& batch, RiskOptions options = {});
// As pde_risk, softmax over I_B \ I_u+; users with an empty remainder are skipped.
RiskBreakdown wd_risk(const EmbeddingModel& model, const PropagatedEmbeddings& prop,
                      const MiniBatch& batch, RiskOptions options = {});
// Per user: mean over (i in I_u+, i' in negatives) of softplus(f(i') - f(i)).
RiskBreakdown pairwise_ans_risk(const EmbeddingModel& model, const PropagatedEmbeddings& prop,
                                const MiniBatch& batch,
                                const std::vector<std::vector<ItemId>>& negatives,
                                RiskOptions options = {});

// 1/2 sum ||e||^2 over layer-0 rows of the batch users and of I_B.
double l2_penalty(const EmbeddingModel& model, const MiniBatch& batch);

GradientSet grad_pde(const EmbeddingModel& model, const PropagatedEmbeddings& prop,
                     const MiniBatch& batch, RiskOptions options = {});
GradientSet grad_wd(const EmbeddingModel& model, const PropagatedEmbeddings& prop,
                    const MiniBatch& batch, RiskOptions options = {});
GradientSet grad_pairwise(const EmbeddingModel& model, const PropagatedEmbeddings& prop,
                          const MiniBatch& batch, const std::vector<std::vector<ItemId>>& negatives,
                          RiskOptions options = {});

struct RiskAndGradient {
  RiskBreakdown risk;
  GradientSet gradient;
};

// Single pass computing both. `negatives` is only read for kPairwiseANS.
RiskAndGradient risk_and_gradient(RiskKind kind, const EmbeddingModel& model,
                                  const PropagatedEmbeddings& prop, const MiniBatch& batch,
                                  const std::vector<std::vector<ItemId>>* negatives,
                                  RiskOptions options = {});

RiskBreakdown evaluate_risk(RiskKind kind, const EmbeddingModel& model,
                            const PropagatedEmbeddings& prop, const MiniBatch& batch,
                            const std::vector<std::vector<ItemId>>* negatives,
                            RiskOptions options = {});

}  // namespace pderank
