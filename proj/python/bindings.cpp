#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <filesystem>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pderank/dataset.hpp"
#include "pderank/errors.hpp"
#include "pderank/metrics.hpp"
#include "pderank/model.hpp"
#include "pderank/oracle.hpp"
#include "pderank/risk.hpp"
#include "pderank/sampling.hpp"
#include "pderank/trainer.hpp"
#include "pderank/types.hpp"
#include "pderank/verify.hpp"

namespace py = pybind11;
using namespace pderank;

namespace {

std::vector<ItemId> to_vector(std::span<const ItemId> s) { return {s.begin(), s.end()}; }

// Propagation needs the training graph for LightGCN; attach it on demand.
void ensure_graph(EmbeddingModel& model, const InteractionDataset* train) {
  if (model.backbone() != Backbone::kLGCN || model.graph() != nullptr) return;
  if (train == nullptr) throw std::invalid_argument("lgcn model needs a training split to propagate");
  model.attach_graph(std::make_shared<const NormalizedGraph>(*train));
}

oracle::OracleInstance make_instance(Matrix scores, std::vector<double> base,
                                     std::vector<std::vector<ItemId>> positives) {
  if (base.empty()) base = oracle::uniform_base(scores.cols());
  oracle::OracleInstance inst{std::move(scores), std::move(base), std::move(positives)};
  oracle::validate(inst);
  return inst;
}

std::string repr_risk(const RiskBreakdown& r) {
  std::ostringstream os;
  os << "RiskBreakdown(total_risk=" << r.total_risk << ", objective=" << r.objective
     << ", users_evaluated=" << r.users_evaluated << ")";
  return os.str();
}

}  // namespace

PYBIND11_MODULE(_pderank, m) {
  m.doc() = "Density-estimation ranking risks with MF and LightGCN backbones.";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<DatasetError>(m, "DatasetError", PyExc_ValueError);
  auto format_error = py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<UnsupportedVersionError>(m, "UnsupportedVersionError", format_error.ptr());
  py::register_exception<DegenerateBatchError>(m, "DegenerateBatchError", PyExc_RuntimeError);
  py::register_exception<NumericFailure>(m, "NumericFailure", PyExc_ArithmeticError);

  py::enum_<Backbone>(m, "Backbone").value("MF", Backbone::kMF).value("LGCN", Backbone::kLGCN);
  py::enum_<RiskKind>(m, "RiskKind")
      .value("PDE", RiskKind::kPDE)
      .value("WD", RiskKind::kWD)
      .value("PAIRWISE_ANS", RiskKind::kPairwiseANS);
  py::enum_<OptimizerKind>(m, "OptimizerKind").value("SGD", OptimizerKind::kSGD).value("ADAM", OptimizerKind::kAdam);
  m.def("parse_backbone", [](const std::string& s) { return parse_backbone(s); });
  m.def("parse_risk", [](const std::string& s) { return parse_risk(s); });
  m.def("parse_optimizer", [](const std::string& s) { return parse_optimizer(s); });

  // dataset
  py::class_<InteractionDataset>(m, "InteractionDataset")
      .def(py::init([](std::int64_t n_users, std::int64_t n_items, std::vector<std::vector<ItemId>> positives) {
             return InteractionDataset::from_lists(n_users, n_items, std::move(positives));
           }),
           py::arg("n_users"), py::arg("n_items"), py::arg("positives"))
      .def_property_readonly("n_users", &InteractionDataset::n_users)
      .def_property_readonly("n_items", &InteractionDataset::n_items)
      .def_property_readonly("interaction_count", &InteractionDataset::interaction_count)
      .def("positives", [](const InteractionDataset& ds, UserId u) { return to_vector(ds.positives(u)); })
      .def("contains", &InteractionDataset::contains)
      .def("users_with_positives", &InteractionDataset::users_with_positives)
      .def("item_popularity", &InteractionDataset::item_popularity)
      .def("to_lists",
           [](const InteractionDataset& ds) {
             std::vector<std::vector<ItemId>> out;
             for (UserId u = 0; u < ds.n_users(); ++u) out.push_back(to_vector(ds.positives(u)));
             return out;
           })
      .def(py::self == py::self)
      .def("__repr__", [](const InteractionDataset& ds) {
        return "InteractionDataset(n_users=" + std::to_string(ds.n_users()) + ", n_items=" +
               std::to_string(ds.n_items()) + ", interactions=" + std::to_string(ds.interaction_count()) + ")";
      });

  py::class_<StatsReport>(m, "StatsReport")
      .def_readonly("n_users", &StatsReport::n_users)
      .def_readonly("n_items", &StatsReport::n_items)
      .def_readonly("interactions", &StatsReport::interactions)
      .def_readonly("density", &StatsReport::density);

  m.def("load_interactions",
        [](const std::filesystem::path& path, std::int64_t n_users, std::int64_t n_items) {
          return load_interactions(path, n_users, n_items);
        },
        py::arg("path"), py::arg("n_users"), py::arg("n_items"));
  m.def("write_interactions",
        [](const InteractionDataset& ds, const std::filesystem::path& path) { write_interactions(ds, path); },
        py::arg("dataset"), py::arg("path"));
  m.def("scan_id_bounds", [](const std::vector<std::filesystem::path>& paths) { return scan_id_bounds(paths); },
        py::arg("paths"));
  m.def("dataset_stats", &dataset_stats, py::arg("dataset"));
  m.def("merge", &merge, py::arg("a"), py::arg("b"));
  m.def("carve_holdout", &carve_holdout, py::arg("train"), py::arg("fraction"), py::arg("seed"));

  py::class_<SyntheticGroundTruth>(m, "SyntheticGroundTruth")
      .def_readonly("user_embeddings", &SyntheticGroundTruth::user_embeddings)
      .def_readonly("item_embeddings", &SyntheticGroundTruth::item_embeddings)
      .def_readonly("dim", &SyntheticGroundTruth::dim)
      .def("score", &SyntheticGroundTruth::score);
  m.def("generate_synthetic",
        [](std::int64_t n_users, std::int64_t n_items, int dim, std::int64_t positives_per_user, std::uint64_t seed) {
          auto data = generate_synthetic(n_users, n_items, dim, positives_per_user, seed);
          return py::make_tuple(std::move(data.train), std::move(data.truth));
        },
        py::arg("n_users"), py::arg("n_items"), py::arg("dim"), py::arg("positives_per_user"), py::arg("seed"));
  m.def("planted_top_items", &planted_top_items, py::arg("truth"), py::arg("train"), py::arg("top_k"));

  // model
  py::class_<EmbeddingModel>(m, "EmbeddingModel")
      .def_static(
          "initialise",
          [](std::int64_t n_users, std::int64_t n_items, int dim, Backbone backbone, int layers, double clip_bound,
             std::uint64_t seed) {
            return EmbeddingModel::initialise(n_users, n_items, dim, {backbone, layers, clip_bound}, seed);
          },
          py::arg("n_users"), py::arg("n_items"), py::arg("dim"), py::arg("backbone") = Backbone::kMF,
          py::arg("layers") = 3, py::arg("clip_bound") = kNoClip, py::arg("seed") = 0)
      .def_static(
          "from_tables",
          [](Matrix users, Matrix items, Backbone backbone, int layers, double clip_bound) {
            return EmbeddingModel::from_tables(std::move(users), std::move(items), {backbone, layers, clip_bound});
          },
          py::arg("users"), py::arg("items"), py::arg("backbone") = Backbone::kMF, py::arg("layers") = 3,
          py::arg("clip_bound") = kNoClip)
      .def_property_readonly("n_users", &EmbeddingModel::n_users)
      .def_property_readonly("n_items", &EmbeddingModel::n_items)
      .def_property_readonly("dim", &EmbeddingModel::dim)
      .def_property_readonly("backbone", &EmbeddingModel::backbone)
      .def_property_readonly("layers", &EmbeddingModel::layers)
      .def_property_readonly("clip_bound", &EmbeddingModel::clip_bound)
      .def_property_readonly("users", [](const EmbeddingModel& mdl) { return mdl.users(); })
      .def_property_readonly("items", [](const EmbeddingModel& mdl) { return mdl.items(); })
      .def("attach_graph",
           [](EmbeddingModel& mdl, const InteractionDataset& train) {
             mdl.attach_graph(std::make_shared<const NormalizedGraph>(train));
           },
           py::arg("train"))
      .def("apply_clipping", [](EmbeddingModel& mdl) { return apply_clipping(mdl); });

  py::class_<PropagatedEmbeddings>(m, "PropagatedEmbeddings")
      .def_readonly("users", &PropagatedEmbeddings::users)
      .def_readonly("items", &PropagatedEmbeddings::items);
  m.def("propagate",
        [](EmbeddingModel& model, const InteractionDataset* train) {
          ensure_graph(model, train);
          return propagate(model);
        },
        py::arg("model"), py::arg("train") = nullptr);
  m.def("lgcn_combine",
        [](const InteractionDataset& train, const Matrix& stacked, int layers) {
          return lgcn_combine(NormalizedGraph(train), stacked, layers);
        },
        py::arg("train"), py::arg("stacked"), py::arg("layers"));
  m.def("score_block",
        [](const EmbeddingModel& model, const PropagatedEmbeddings& prop, const std::vector<UserId>& users,
           const std::vector<ItemId>& items) { return score_block(model, prop, users, items); },
        py::arg("model"), py::arg("prop"), py::arg("users"), py::arg("items"));
  m.def("clip_norm", &clip_norm, py::arg("v"), py::arg("bound"));
  m.def("save_checkpoint",
        [](const EmbeddingModel& model, const std::filesystem::path& path) { save_checkpoint(model, path); },
        py::arg("model"), py::arg("path"));
  m.def("load_checkpoint", [](const std::filesystem::path& path) { return load_checkpoint(path); }, py::arg("path"));

  // sampling and risks
  py::class_<MiniBatch>(m, "MiniBatch")
      .def_readonly("users", &MiniBatch::users)
      .def_readonly("positives", &MiniBatch::positives)
      .def_readonly("items", &MiniBatch::items);
  m.def("make_minibatch",
        [](const InteractionDataset& ds, const std::vector<UserId>& users, std::optional<std::vector<ItemId>> items) {
          return items ? make_minibatch(ds, users, std::move(*items)) : make_minibatch(ds, users);
        },
        py::arg("dataset"), py::arg("users"), py::arg("items") = std::nullopt);
  m.def("sample_ans_negatives",
        [](const EmbeddingModel& model, const PropagatedEmbeddings& prop, const MiniBatch& batch, std::int64_t m,
           std::uint64_t seed) {
          Rng rng(seed);
          return sample_ans_negatives(model, prop, batch, m, rng);
        },
        py::arg("model"), py::arg("prop"), py::arg("batch"), py::arg("m"), py::arg("seed"));

  py::class_<RiskBreakdown>(m, "RiskBreakdown")
      .def_readonly("positive_term", &RiskBreakdown::positive_term)
      .def_readonly("softmax_term", &RiskBreakdown::softmax_term)
      .def_readonly("total_risk", &RiskBreakdown::total_risk)
      .def_readonly("l2_penalty", &RiskBreakdown::l2_penalty)
      .def_readonly("lambda_", &RiskBreakdown::lambda)
      .def_readonly("objective", &RiskBreakdown::objective)
      .def_readonly("per_user_skipped", &RiskBreakdown::per_user_skipped)
      .def_readonly("users_evaluated", &RiskBreakdown::users_evaluated)
      .def("__repr__", &repr_risk);

  py::class_<GradientSet>(m, "GradientSet")
      .def_readonly("user_ids", &GradientSet::user_ids)
      .def_readonly("user_grads", &GradientSet::user_grads)
      .def_readonly("item_ids", &GradientSet::item_ids)
      .def_readonly("item_grads", &GradientSet::item_grads)
      .def("dense_users", &GradientSet::dense_users)
      .def("dense_items", &GradientSet::dense_items)
      .def("all_finite", &GradientSet::all_finite);

  m.def("evaluate_risk",
        [](RiskKind kind, const EmbeddingModel& model, const PropagatedEmbeddings& prop, const MiniBatch& batch,
           std::optional<std::vector<std::vector<ItemId>>> negatives, double lambda, int threads) {
          return evaluate_risk(kind, model, prop, batch, negatives ? &*negatives : nullptr, {lambda, threads});
        },
        py::arg("kind"), py::arg("model"), py::arg("prop"), py::arg("batch"), py::arg("negatives") = std::nullopt,
        py::arg("lambda_") = 0.0, py::arg("threads") = 1);
  m.def("risk_and_gradient",
        [](RiskKind kind, const EmbeddingModel& model, const PropagatedEmbeddings& prop, const MiniBatch& batch,
           std::optional<std::vector<std::vector<ItemId>>> negatives, double lambda, int threads) {
          auto r = risk_and_gradient(kind, model, prop, batch, negatives ? &*negatives : nullptr, {lambda, threads});
          return py::make_tuple(std::move(r.risk), std::move(r.gradient));
        },
        py::arg("kind"), py::arg("model"), py::arg("prop"), py::arg("batch"), py::arg("negatives") = std::nullopt,
        py::arg("lambda_") = 0.0, py::arg("threads") = 1);
  m.def("softplus", &softplus);
  m.def("sigmoid", &sigmoid);

  // trainer
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("risk", &TrainConfig::risk)
      .def_readwrite("backbone", &TrainConfig::backbone)
      .def_readwrite("dim", &TrainConfig::dim)
      .def_readwrite("layers", &TrainConfig::layers)
      .def_readwrite("lambda_", &TrainConfig::lambda)
      .def_readwrite("clip_bound", &TrainConfig::clip_bound)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("batch_users", &TrainConfig::batch_users)
      .def_readwrite("max_iterations", &TrainConfig::max_iterations)
      .def_readwrite("eval_every", &TrainConfig::eval_every)
      .def_readwrite("ans_m", &TrainConfig::ans_m)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("optimizer", &TrainConfig::optimizer)
      .def_readwrite("eval_k", &TrainConfig::eval_k)
      .def_readwrite("threads", &TrainConfig::threads)
      .def_readwrite("record_wall_clock", &TrainConfig::record_wall_clock)
      .def("validate", [](const TrainConfig& cfg) { validate(cfg); });

  py::class_<EvalRecord>(m, "EvalRecord")
      .def_readonly("iteration", &EvalRecord::iteration)
      .def_readonly("objective", &EvalRecord::objective)
      .def_readonly("recall", &EvalRecord::recall)
      .def_readonly("ndcg", &EvalRecord::ndcg)
      .def_readonly("elapsed_s", &EvalRecord::elapsed_s);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("model", &TrainResult::model)
      .def_property_readonly("history", [](const TrainResult& r) { return r.history.records; })
      .def_property_readonly("best", [](const TrainResult& r) { return r.history.best(); })
      .def_readonly("skipped_steps", &TrainResult::skipped_steps);

  m.def("train",
        [](const InteractionDataset& train_split, const TrainConfig& cfg, const InteractionDataset* eval_split) {
          py::gil_scoped_release release;
          return train(train_split, cfg, eval_split);
        },
        py::arg("train"), py::arg("config"), py::arg("eval") = nullptr);

  // metrics
  py::class_<UserMetrics>(m, "UserMetrics")
      .def_readonly("user", &UserMetrics::user)
      .def_readonly("recall", &UserMetrics::recall)
      .def_readonly("ndcg", &UserMetrics::ndcg);
  py::class_<MetricsReport>(m, "MetricsReport")
      .def_readonly("k", &MetricsReport::k)
      .def_readonly("per_user", &MetricsReport::per_user)
      .def_readonly("recall", &MetricsReport::recall)
      .def_readonly("ndcg", &MetricsReport::ndcg)
      .def_readonly("n_evaluated", &MetricsReport::n_evaluated)
      .def_readonly("n_skipped", &MetricsReport::n_skipped);

  m.def("evaluate",
        [](EmbeddingModel& model, const InteractionDataset& train, const InteractionDataset& test, int k, int threads) {
          ensure_graph(model, &train);
          py::gil_scoped_release release;
          return evaluate(model, train, test, k, threads);
        },
        py::arg("model"), py::arg("train"), py::arg("test"), py::arg("k") = 20, py::arg("threads") = 1);
  m.def("rank_items",
        [](const EmbeddingModel& model, const PropagatedEmbeddings& prop, UserId u, const std::vector<ItemId>& exclude,
           int k) { return rank_items(model, prop, u, exclude, k); },
        py::arg("model"), py::arg("prop"), py::arg("user"), py::arg("exclude"), py::arg("k"));
  m.def("recall_at_k",
        [](const std::vector<ItemId>& ranked, const std::vector<ItemId>& relevant, int k) {
          return recall_at_k(ranked, relevant, k);
        },
        py::arg("ranked"), py::arg("relevant"), py::arg("k"));
  m.def("ndcg_at_k",
        [](const std::vector<ItemId>& ranked, const std::vector<ItemId>& relevant, int k) {
          return ndcg_at_k(ranked, relevant, k);
        },
        py::arg("ranked"), py::arg("relevant"), py::arg("k"));
  m.def("make_popularity_model", &make_popularity_model, py::arg("train"));

  // verification suite
  py::class_<VerifyRow>(m, "VerifyRow")
      .def_readonly("name", &VerifyRow::name)
      .def_readonly("passed", &VerifyRow::passed)
      .def_readonly("max_deviation", &VerifyRow::max_deviation)
      .def_readonly("tolerance", &VerifyRow::tolerance)
      .def_readonly("cases", &VerifyRow::cases);
  m.def("run_verification",
        [](std::int64_t trials, std::uint64_t seed, std::int64_t dirichlet_samples) {
          py::gil_scoped_release release;
          return run_verification({trials, seed, dirichlet_samples, 0.0}).rows;
        },
        py::arg("trials") = 100, py::arg("seed") = 7, py::arg("dirichlet_samples") = 10000);

  // exact oracles
  auto o = m.def_submodule("oracle", "Closed-form references on small instances.");
  o.def("uniform_base", &oracle::uniform_base, py::arg("n_items"));
  o.def("exact_partition",
        [](const std::vector<double>& f, const std::vector<double>& base) { return oracle::exact_partition(f, base); },
        py::arg("scores"), py::arg("base"));
  o.def("exact_density",
        [](const std::vector<double>& f, const std::vector<double>& base) { return oracle::exact_density(f, base); },
        py::arg("scores"), py::arg("base"));
  o.def("exact_kld",
        [](const std::vector<double>& q, const std::vector<double>& base) { return oracle::exact_kld(q, base); },
        py::arg("q"), py::arg("base"));
  o.def("optimal_generator",
        [](const std::vector<double>& f, const std::vector<double>& base) {
          return oracle::optimal_generator(f, base);
        },
        py::arg("scores"), py::arg("base"));
  o.def("generator_objective",
        [](const std::vector<double>& q, const std::vector<double>& f, const std::vector<double>& base) {
          return oracle::generator_objective(q, f, base);
        },
        py::arg("q"), py::arg("scores"), py::arg("base"));
  o.def("w1_discrete",
        [](const std::vector<double>& p, const std::vector<double>& q) { return oracle::w1_discrete(p, q); },
        py::arg("p"), py::arg("q"));
  o.def("w1_dual_enumeration",
        [](const std::vector<double>& p, const std::vector<double>& q) { return oracle::w1_dual_enumeration(p, q); },
        py::arg("p"), py::arg("q"));

  py::class_<oracle::PairwiseBound>(o, "PairwiseBound")
      .def_readonly("r_pair", &oracle::PairwiseBound::r_pair)
      .def_readonly("s_mu", &oracle::PairwiseBound::s_mu)
      .def_readonly("gap", &oracle::PairwiseBound::gap)
      .def_readonly("lipschitz", &oracle::PairwiseBound::lipschitz)
      .def("holds", &oracle::PairwiseBound::holds, py::arg("slack") = 1e-12);
  o.def("pairwise_bound_check",
        [](const std::vector<double>& f, const std::vector<ItemId>& positives, const std::vector<double>& q) {
          return oracle::pairwise_bound_check(f, positives, q);
        },
        py::arg("scores"), py::arg("positives"), py::arg("q"));

  o.def("exact_risk",
        [](Matrix scores, std::vector<std::vector<ItemId>> positives, std::vector<double> base) {
          return oracle::exact_risk(make_instance(std::move(scores), std::move(base), std::move(positives)));
        },
        py::arg("scores"), py::arg("positives"), py::arg("base") = std::vector<double>{});
  o.def("exact_risk_penalised_nll",
        [](Matrix scores, std::vector<std::vector<ItemId>> positives, std::vector<double> base) {
          return oracle::exact_risk_penalised_nll(
              make_instance(std::move(scores), std::move(base), std::move(positives)));
        },
        py::arg("scores"), py::arg("positives"), py::arg("base") = std::vector<double>{});
  o.def("exact_wd_risk",
        [](Matrix scores, std::vector<std::vector<ItemId>> positives, std::vector<double> base) {
          return oracle::exact_wd_risk(make_instance(std::move(scores), std::move(base), std::move(positives)));
        },
        py::arg("scores"), py::arg("positives"), py::arg("base") = std::vector<double>{});
  o.def("finite_difference_gradient",
        [](const EmbeddingModel& model, RiskKind kind, const MiniBatch& batch,
           std::optional<std::vector<std::vector<ItemId>>> negatives, double lambda, double h) {
          const auto* neg = negatives ? &*negatives : nullptr;
          auto fd = oracle::finite_difference_gradient(
              model,
              [&](const EmbeddingModel& m) {
                return evaluate_risk(kind, m, propagate(m), batch, neg, {lambda, 1}).objective;
              },
              h);
          return py::make_tuple(std::move(fd.users), std::move(fd.items));
        },
        py::arg("model"), py::arg("kind"), py::arg("batch"), py::arg("negatives") = std::nullopt,
        py::arg("lambda_") = 0.0, py::arg("h") = 1e-5);
}
