#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>

#include <Eigen/SparseCore>

#include "pderank/dataset.hpp"
#include "pderank/types.hpp"

namespace pderank {

// Symmetric-degree-normalised bipartite adjacency over the stacked node set
// [users | items]: weight(u, i) = 1 / sqrt(deg(u) * deg(i)).
class NormalizedGraph {
 public:
  using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

  explicit NormalizedGraph(const InteractionDataset& train);

  std::int64_t n_users() const noexcept { return n_users_; }
  std::int64_t n_items() const noexcept { return n_items_; }
  std::int64_t n_nodes() const noexcept { return n_users_ + n_items_; }
  const SparseMatrix& adjacency() const noexcept { return adj_; }
  const std::vector<std::vector<std::int32_t>>& neighbours() const noexcept { return neighbours_; }

 private:
  std::int64_t n_users_;
  std::int64_t n_items_;
  SparseMatrix adj_;
  std::vector<std::vector<std::int32_t>> neighbours_;
};

// mean(X, ÂX, ..., Â^K X). Â is symmetric, so this operator is self-adjoint and
// also maps gradients w.r.t. final embeddings back onto layer 0.
Matrix lgcn_combine(const NormalizedGraph& graph, const Matrix& stacked, int layers);

class EmbeddingModel {
 public:
  struct Options {
    Backbone backbone = Backbone::kMF;
    int layers = 3;
    double clip_bound = kNoClip;
  };

  // Gaussian init, mean 0, sd 0.1/sqrt(d).
  static EmbeddingModel initialise(std::int64_t n_users, std::int64_t n_items, int dim,
                                   Options options, std::uint64_t seed);
  static EmbeddingModel from_tables(Matrix users, Matrix items, Options options);

  std::int64_t n_users() const noexcept { return users_.rows(); }
  std::int64_t n_items() const noexcept { return items_.rows(); }
  int dim() const noexcept { return static_cast<int>(users_.cols()); }
  Backbone backbone() const noexcept { return options_.backbone; }
  int layers() const noexcept { return options_.layers; }
  double clip_bound() const noexcept { return options_.clip_bound; }
  const Options& options() const noexcept { return options_; }

  const Matrix& users() const noexcept { return users_; }
  const Matrix& items() const noexcept { return items_; }
  // Mutable access invalidates any PropagatedEmbeddings taken earlier.
  Matrix& mutable_users() noexcept { ++version_; return users_; }
  Matrix& mutable_items() noexcept { ++version_; return items_; }
  std::uint64_t version() const noexcept { return version_; }

  // Required before propagating an LGCN model; built from the training split.
  void attach_graph(std::shared_ptr<const NormalizedGraph> graph);
  const NormalizedGraph* graph() const noexcept { return graph_.get(); }
  std::shared_ptr<const NormalizedGraph> shared_graph() const noexcept { return graph_; }

 private:
  EmbeddingModel(Matrix users, Matrix items, Options options);

  Matrix users_;
  Matrix items_;
  Options options_;
  std::shared_ptr<const NormalizedGraph> graph_;
  std::uint64_t version_ = 0;
};

struct PropagatedEmbeddings {
  Matrix users;
  Matrix items;
  std::uint64_t source_version = 0;
};

// MF: copies layer 0. LGCN: propagate_lgcn.
PropagatedEmbeddings propagate(const EmbeddingModel& model);
// Throws std::logic_error for an MF model or a missing graph.
PropagatedEmbeddings propagate_lgcn(const EmbeddingModel& model);

double score(const EmbeddingModel& model, const PropagatedEmbeddings& prop, UserId u, ItemId i);
Matrix score_block(const EmbeddingModel& model, const PropagatedEmbeddings& prop,
                   std::span<const UserId> users, std::span<const ItemId> items);

Vector clip_norm(const Vector& v, double bound);

// Projects every layer-0 row onto the ball of radius clip_bound. Rows already
// inside are left untouched. Returns the number of rows rescaled.
std::int64_t apply_clipping(EmbeddingModel& model);

double max_row_norm(const Matrix& m);

// Text checkpoint: "PDERANK 1 <backbone> <n_users> <n_items> <d> <K> <clip>" then
// one tab-separated row per user, then per item, 17 significant digits.
void save_checkpoint(const EmbeddingModel& model, std::ostream& out);
void save_checkpoint(const EmbeddingModel& model, const std::filesystem::path& path);
EmbeddingModel load_checkpoint(std::istream& in);
EmbeddingModel load_checkpoint(const std::filesystem::path& path);

}  // namespace pderank
