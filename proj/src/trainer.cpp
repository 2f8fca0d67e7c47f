#include "pderank/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <ostream>
#include <stdexcept>

#include "pderank/metrics.hpp"

namespace pderank {

void validate(const TrainConfig& cfg) {
  if (cfg.dim <= 0) throw std::invalid_argument("dim must be positive");
  if (cfg.layers < 0) throw std::invalid_argument("layers must be non-negative");
  if (!(cfg.lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  if (!(cfg.clip_bound > 0.0)) throw std::invalid_argument("clip bound must be positive (or inf)");
  if (!(cfg.learning_rate >= 0.0) || std::isinf(cfg.learning_rate))
    throw std::invalid_argument("learning rate must be finite and non-negative");
  if (cfg.batch_users <= 0) throw std::invalid_argument("batch_users must be positive");
  if (cfg.max_iterations < 0) throw std::invalid_argument("max_iterations must be non-negative");
  if (cfg.eval_every <= 0) throw std::invalid_argument("eval_every must be positive");
  if (cfg.ans_m < 1) throw std::invalid_argument("ans_m must be at least 1");
  if (cfg.eval_k < 1) throw std::invalid_argument("eval k must be at least 1");
  if (cfg.threads < 1) throw std::invalid_argument("threads must be at least 1");
  if (cfg.risk == RiskKind::kWD && std::isinf(cfg.clip_bound))
    throw std::invalid_argument("the wd risk requires a finite clip bound");
}

std::optional<EvalRecord> TrainHistory::best() const {
  std::optional<EvalRecord> best;
  for (const auto& r : records)
    if (r.ndcg && (!best || *r.ndcg > *best->ndcg)) best = r;
  return best;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_history_csv(const TrainHistory& history, std::ostream& out) {
  out << "iteration,objective,recall_at_k,ndcg_at_k,elapsed_s\n";
  for (const auto& r : history.records) {
    out << r.iteration << ',' << fmt(r.objective) << ',' << (r.recall ? fmt(*r.recall) : "") << ','
        << (r.ndcg ? fmt(*r.ndcg) : "") << ',' << fmt(r.elapsed_s) << '\n';
  }
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_history_csv(history, out);
}

Optimizer::Optimizer(const TrainConfig& cfg, std::int64_t n_users, std::int64_t n_items, int dim)
    : kind_(cfg.optimizer),
      lr_(cfg.learning_rate),
      beta1_(cfg.adam_beta1),
      beta2_(cfg.adam_beta2),
      eps_(cfg.adam_epsilon) {
  if (kind_ == OptimizerKind::kAdam) {
    user_m_ = Matrix::Zero(n_users, dim);
    user_v_ = Matrix::Zero(n_users, dim);
    item_m_ = Matrix::Zero(n_items, dim);
    item_v_ = Matrix::Zero(n_items, dim);
  }
}

void Optimizer::update_rows(Matrix& table, Matrix& m, Matrix& v, const std::vector<std::int32_t>& ids,
                            const Matrix& grads) const {
  if (kind_ == OptimizerKind::kSGD) {
    for (std::size_t k = 0; k < ids.size(); ++k) table.row(ids[k]) -= lr_ * grads.row(static_cast<Eigen::Index>(k));
    return;
  }
  const double t = static_cast<double>(step_);
  const double bias1 = 1.0 - std::pow(beta1_, t);
  const double bias2 = 1.0 - std::pow(beta2_, t);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const auto g = grads.row(static_cast<Eigen::Index>(k));
    auto mr = m.row(ids[k]);
    auto vr = v.row(ids[k]);
    mr = beta1_ * mr + (1.0 - beta1_) * g;
    vr = beta2_ * vr + (1.0 - beta2_) * g.cwiseProduct(g);
    table.row(ids[k]).array() -=
        lr_ * (mr.array() / bias1) / ((vr.array() / bias2).sqrt() + eps_);
  }
}

void Optimizer::apply(EmbeddingModel& model, const GradientSet& gradient) {
  ++step_;
  if (lr_ == 0.0) return;
  update_rows(model.mutable_users(), user_m_, user_v_, gradient.user_ids, gradient.user_grads);
  update_rows(model.mutable_items(), item_m_, item_v_, gradient.item_ids, gradient.item_grads);
}

RiskBreakdown train_step(EmbeddingModel& model, Optimizer& optimizer, const MiniBatch& batch,
                         const TrainConfig& cfg, Rng& ans_rng, std::int64_t iteration) {
  const PropagatedEmbeddings prop = propagate(model);
  std::vector<std::vector<ItemId>> negatives;
  if (cfg.risk == RiskKind::kPairwiseANS) negatives = sample_ans_negatives(model, prop, batch, cfg.ans_m, ans_rng);

  RiskOptions options;
  options.lambda = cfg.lambda;
  options.threads = cfg.threads;
  RiskAndGradient rg = risk_and_gradient(cfg.risk, model, prop, batch,
                                         cfg.risk == RiskKind::kPairwiseANS ? &negatives : nullptr, options);
  if (!std::isfinite(rg.risk.objective)) throw NumericFailure(iteration, "objective is not finite");
  if (!rg.gradient.all_finite()) throw NumericFailure(iteration, "gradient has a non-finite component");

  optimizer.apply(model, rg.gradient);
  apply_clipping(model);
  return rg.risk;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

TrainResult train(const InteractionDataset& train_split, const TrainConfig& cfg,
                  const InteractionDataset* eval_split, const EvalCallback& on_eval) {
  validate(cfg);
  EmbeddingModel::Options options{cfg.backbone, cfg.layers, cfg.clip_bound};
  EmbeddingModel model = EmbeddingModel::initialise(train_split.n_users(), train_split.n_items(), cfg.dim,
                                                    options, derive_seed(cfg.seed, 0));
  if (cfg.backbone == Backbone::kLGCN) model.attach_graph(std::make_shared<NormalizedGraph>(train_split));
  apply_clipping(model);

  TrainResult result{std::move(model), {}, 0};
  result.history.k = cfg.eval_k;
  if (cfg.max_iterations == 0) return result;

  EpochSampler sampler(train_split, cfg.batch_users, derive_seed(cfg.seed, 1));
  Rng ans_rng(derive_seed(cfg.seed, 2));
  Optimizer optimizer(cfg, train_split.n_users(), train_split.n_items(), cfg.dim);
  const auto start = std::chrono::steady_clock::now();

  double last_objective = 0.0;
  for (std::int64_t it = 1; it <= cfg.max_iterations; ++it) {
    const MiniBatch batch = sampler.next();
    try {
      last_objective = train_step(result.model, optimizer, batch, cfg, ans_rng, it).objective;
    } catch (const DegenerateBatchError&) {
      ++result.skipped_steps;
    } catch (const NumericFailure& e) {
      throw TrainingFailure(e, result.history);
    }

    if (it % cfg.eval_every != 0 && it != cfg.max_iterations) continue;
    EvalRecord record;
    record.iteration = it;
    record.objective = last_objective;
    if (eval_split != nullptr) {
      const MetricsReport report = evaluate(result.model, train_split, *eval_split, cfg.eval_k, cfg.threads);
      record.recall = report.recall;
      record.ndcg = report.ndcg;
    }
    if (cfg.record_wall_clock)
      record.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.records.push_back(record);
    if (on_eval) on_eval(record, result.model);
  }
  return result;
}

}  // namespace pderank
