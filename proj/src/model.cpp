#include "pderank/model.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "pderank/errors.hpp"

namespace pderank {

NormalizedGraph::NormalizedGraph(const InteractionDataset& train)
    : n_users_(train.n_users()), n_items_(train.n_items()) {
  const auto n = static_cast<Eigen::Index>(n_nodes());
  std::vector<double> degree(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t u = 0; u < n_users_; ++u)
    for (ItemId i : train.positives(static_cast<UserId>(u))) {
      degree[static_cast<std::size_t>(u)] += 1.0;
      degree[static_cast<std::size_t>(n_users_ + i)] += 1.0;
    }

  neighbours_.resize(static_cast<std::size_t>(n));
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(2 * train.interaction_count()));
  for (std::int64_t u = 0; u < n_users_; ++u)
    for (ItemId i : train.positives(static_cast<UserId>(u))) {
      const auto item_node = static_cast<std::int32_t>(n_users_ + i);
      const double w = 1.0 / std::sqrt(degree[static_cast<std::size_t>(u)] *
                                       degree[static_cast<std::size_t>(item_node)]);
      triplets.emplace_back(static_cast<Eigen::Index>(u), item_node, w);
      triplets.emplace_back(item_node, static_cast<Eigen::Index>(u), w);
      neighbours_[static_cast<std::size_t>(u)].push_back(item_node);
      neighbours_[static_cast<std::size_t>(item_node)].push_back(static_cast<std::int32_t>(u));
    }
  adj_.resize(n, n);
  adj_.setFromTriplets(triplets.begin(), triplets.end());
}

Matrix lgcn_combine(const NormalizedGraph& graph, const Matrix& stacked, int layers) {
  if (stacked.rows() != graph.n_nodes())
    throw std::invalid_argument("stacked embedding rows do not match graph size");
  if (layers < 0) throw std::invalid_argument("layer count must be non-negative");
  Matrix sum = stacked;
  Matrix layer = stacked;
  for (int k = 0; k < layers; ++k) {
    Matrix next = graph.adjacency() * layer;
    layer.swap(next);
    sum += layer;
  }
  sum /= static_cast<double>(layers + 1);
  return sum;
}

EmbeddingModel::EmbeddingModel(Matrix users, Matrix items, Options options)
    : users_(std::move(users)), items_(std::move(items)), options_(options) {
  if (users_.cols() != items_.cols()) throw std::invalid_argument("user/item dimensions differ");
  if (!(options_.clip_bound > 0.0)) throw std::invalid_argument("clip bound must be positive");
  if (options_.layers < 0) throw std::invalid_argument("layer count must be non-negative");
}

EmbeddingModel EmbeddingModel::initialise(std::int64_t n_users, std::int64_t n_items, int dim,
                                          Options options, std::uint64_t seed) {
  if (dim <= 0) throw std::invalid_argument("dimension must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.1 / std::sqrt(static_cast<double>(dim)));
  Matrix users(n_users, dim);
  Matrix items(n_items, dim);
  for (Eigen::Index k = 0; k < users.size(); ++k) users.data()[k] = gauss(rng);
  for (Eigen::Index k = 0; k < items.size(); ++k) items.data()[k] = gauss(rng);
  return EmbeddingModel(std::move(users), std::move(items), options);
}

EmbeddingModel EmbeddingModel::from_tables(Matrix users, Matrix items, Options options) {
  return EmbeddingModel(std::move(users), std::move(items), options);
}

void EmbeddingModel::attach_graph(std::shared_ptr<const NormalizedGraph> graph) {
  if (graph && (graph->n_users() != n_users() || graph->n_items() != n_items()))
    throw DatasetError("graph id space does not match model tables");
  graph_ = std::move(graph);
  ++version_;
}

PropagatedEmbeddings propagate_lgcn(const EmbeddingModel& model) {
  if (model.backbone() != Backbone::kLGCN)
    throw std::logic_error("propagate_lgcn called on a non-LGCN model");
  if (model.graph() == nullptr) throw std::logic_error("LGCN model has no graph attached");
  Matrix stacked(model.n_users() + model.n_items(), model.dim());
  stacked.topRows(model.n_users()) = model.users();
  stacked.bottomRows(model.n_items()) = model.items();
  Matrix combined = lgcn_combine(*model.graph(), stacked, model.layers());
  PropagatedEmbeddings prop;
  prop.users = combined.topRows(model.n_users());
  prop.items = combined.bottomRows(model.n_items());
  prop.source_version = model.version();
  return prop;
}

PropagatedEmbeddings propagate(const EmbeddingModel& model) {
  if (model.backbone() == Backbone::kLGCN) return propagate_lgcn(model);
  return {model.users(), model.items(), model.version()};
}

namespace {

void check_current(const EmbeddingModel& model, const PropagatedEmbeddings& prop) {
  if (prop.source_version != model.version())
    throw std::logic_error("propagated embeddings are stale; re-run propagate()");
}

void check_user(const EmbeddingModel& model, UserId u) {
  if (u < 0 || u >= model.n_users())
    throw std::out_of_range("user id " + std::to_string(u) + " out of range");
}

void check_item(const EmbeddingModel& model, ItemId i) {
  if (i < 0 || i >= model.n_items())
    throw std::out_of_range("item id " + std::to_string(i) + " out of range");
}

}  // namespace

double score(const EmbeddingModel& model, const PropagatedEmbeddings& prop, UserId u, ItemId i) {
  check_current(model, prop);
  check_user(model, u);
  check_item(model, i);
  return prop.users.row(u).dot(prop.items.row(i));
}

Matrix score_block(const EmbeddingModel& model, const PropagatedEmbeddings& prop,
                   std::span<const UserId> users, std::span<const ItemId> items) {
  check_current(model, prop);
  for (UserId u : users) check_user(model, u);
  for (ItemId i : items) check_item(model, i);
  const auto d = static_cast<Eigen::Index>(model.dim());
  Matrix u_rows(static_cast<Eigen::Index>(users.size()), d);
  Matrix i_rows(static_cast<Eigen::Index>(items.size()), d);
  for (std::size_t a = 0; a < users.size(); ++a) u_rows.row(static_cast<Eigen::Index>(a)) = prop.users.row(users[a]);
  for (std::size_t b = 0; b < items.size(); ++b) i_rows.row(static_cast<Eigen::Index>(b)) = prop.items.row(items[b]);
  return u_rows * i_rows.transpose();
}

Vector clip_norm(const Vector& v, double bound) {
  if (!(bound > 0.0)) throw std::invalid_argument("clip bound must be positive");
  const double norm = v.norm();
  if (norm <= bound) return v;
  return (bound / norm) * v;
}

namespace {

std::int64_t clip_rows(Matrix& m, double bound) {
  std::int64_t clipped = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double norm = m.row(r).norm();
    if (norm > bound) {
      m.row(r) *= bound / norm;
      ++clipped;
    }
  }
  return clipped;
}

bool any_row_above(const Matrix& m, double bound) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    if (m.row(r).norm() > bound) return true;
  return false;
}

}  // namespace

std::int64_t apply_clipping(EmbeddingModel& model) {
  const double bound = model.clip_bound();
  if (std::isinf(bound)) return 0;
  std::int64_t clipped = 0;
  // Skip the mutable accessor (and the version bump) when nothing moves.
  if (any_row_above(model.users(), bound)) clipped += clip_rows(model.mutable_users(), bound);
  if (any_row_above(model.items(), bound)) clipped += clip_rows(model.mutable_items(), bound);
  return clipped;
}

double max_row_norm(const Matrix& m) {
  double best = 0.0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) best = std::max(best, m.row(r).norm());
  return best;
}

namespace {

constexpr const char* kMagic = "PDERANK";
constexpr int kCheckpointVersion = 1;

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& tok, const std::string& where) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || end != tok.c_str() + tok.size() || errno == ERANGE)
    throw FormatError(where + ": bad number '" + tok + "'");
  return v;
}

void write_rows(const Matrix& m, std::ostream& out) {
  std::string line;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    line.clear();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) line += '\t';
      line += format_double(m(r, c));
    }
    line += '\n';
    out << line;
  }
}

void read_rows(std::istream& in, Matrix& m, const char* what) {
  std::string line;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (!std::getline(in, line))
      throw FormatError(std::string("checkpoint truncated in ") + what + " rows at row " + std::to_string(r));
    std::istringstream fields(line);
    std::string tok;
    Eigen::Index c = 0;
    while (std::getline(fields, tok, '\t')) {
      if (c >= m.cols()) throw FormatError(std::string(what) + " row " + std::to_string(r) + " has too many values");
      m(r, c++) = parse_double(tok, std::string(what) + " row " + std::to_string(r));
    }
    if (c != m.cols()) throw FormatError(std::string(what) + " row " + std::to_string(r) + " has too few values");
  }
}

}  // namespace

void save_checkpoint(const EmbeddingModel& model, std::ostream& out) {
  out << kMagic << ' ' << kCheckpointVersion << ' ' << to_string(model.backbone()) << ' '
      << model.n_users() << ' ' << model.n_items() << ' ' << model.dim() << ' ' << model.layers()
      << ' ' << format_double(model.clip_bound()) << '\n';
  write_rows(model.users(), out);
  write_rows(model.items(), out);
}

void save_checkpoint(const EmbeddingModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  save_checkpoint(model, out);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

EmbeddingModel load_checkpoint(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError("checkpoint is empty");
  std::istringstream h(header);
  std::string magic, backbone, clip;
  long long version = 0, n_users = -1, n_items = -1, dim = -1, layers = -1;
  if (!(h >> magic) || magic != kMagic) throw FormatError("not a checkpoint (bad magic)");
  if (!(h >> version)) throw FormatError("checkpoint header missing version");
  if (version != kCheckpointVersion)
    throw UnsupportedVersionError("unsupported checkpoint version " + std::to_string(version));
  if (!(h >> backbone >> n_users >> n_items >> dim >> layers >> clip))
    throw FormatError("checkpoint header incomplete");
  std::string extra;
  if (h >> extra) throw FormatError("checkpoint header has trailing fields");
  if (n_users < 0 || n_items < 0 || dim <= 0 || layers < 0) throw FormatError("checkpoint header has bad sizes");

  EmbeddingModel::Options options;
  try {
    options.backbone = parse_backbone(backbone);
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  options.layers = static_cast<int>(layers);
  options.clip_bound = clip == "inf" ? kNoClip : parse_double(clip, "header clip bound");
  if (!(options.clip_bound > 0.0)) throw FormatError("checkpoint clip bound must be positive");

  Matrix users(n_users, dim);
  Matrix items(n_items, dim);
  read_rows(in, users, "user");
  read_rows(in, items, "item");
  std::string rest;
  while (std::getline(in, rest))
    if (!rest.empty()) throw FormatError("checkpoint has trailing data");
  return EmbeddingModel::from_tables(std::move(users), std::move(items), options);
}

EmbeddingModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace pderank
