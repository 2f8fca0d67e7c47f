#include "pderank/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "pderank/errors.hpp"

namespace pderank {

namespace {

void check_bounds(std::int64_t n_users, std::int64_t n_items) {
  if (n_users < 0 || n_items < 0) throw std::invalid_argument("dataset bounds must be non-negative");
  if (n_users > std::numeric_limits<UserId>::max() || n_items > std::numeric_limits<ItemId>::max())
    throw std::invalid_argument("dataset bounds exceed 32-bit id range");
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

template <typename Fn>
void for_each_token(std::string_view line, Fn&& fn) {
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && is_space(line[pos])) ++pos;
    std::size_t end = pos;
    while (end < line.size() && !is_space(line[end])) ++end;
    if (end > pos) fn(line.substr(pos, end - pos));
    pos = end;
  }
}

std::int64_t parse_id(std::string_view tok, std::size_t line_no) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError(line_no, "malformed token '" + std::string(tok) + "'");
  return v;
}

// Sequential renormalised softmax draws without replacement.
std::vector<ItemId> draw_without_replacement(std::span<const double> scores, std::int64_t count,
                                             std::mt19937_64& rng) {
  const std::size_t n = scores.size();
  const double shift = *std::max_element(scores.begin(), scores.end());
  std::vector<double> weight(n);
  for (std::size_t i = 0; i < n; ++i) weight[i] = std::exp(scores[i] - shift);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<ItemId> picked;
  picked.reserve(static_cast<std::size_t>(count));
  for (std::int64_t draw = 0; draw < count; ++draw) {
    double total = 0.0;
    for (double w : weight) total += w;
    const double target = unif(rng) * total;
    double acc = 0.0;
    std::size_t chosen = n;
    std::size_t last_live = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (weight[i] <= 0.0) continue;
      last_live = i;
      acc += weight[i];
      if (target < acc) {
        chosen = i;
        break;
      }
    }
    if (chosen == n) chosen = last_live;  // rounding at the top end
    picked.push_back(static_cast<ItemId>(chosen));
    weight[chosen] = 0.0;
  }
  return picked;
}

}  // namespace

InteractionDataset::InteractionDataset(std::int64_t n_users, std::int64_t n_items, SplitTag tag)
    : n_users_(n_users), n_items_(n_items), tag_(tag) {
  check_bounds(n_users, n_items);
  positives_.resize(static_cast<std::size_t>(n_users));
}

InteractionDataset InteractionDataset::from_lists(std::int64_t n_users, std::int64_t n_items,
                                                  std::vector<std::vector<ItemId>> positives,
                                                  SplitTag tag) {
  InteractionDataset ds(n_users, n_items, tag);
  if (static_cast<std::int64_t>(positives.size()) > n_users)
    throw std::out_of_range("more user lists than declared users");
  positives.resize(static_cast<std::size_t>(n_users));
  for (auto& items : positives) {
    for (ItemId i : items)
      if (i < 0 || i >= n_items)
        throw std::out_of_range("item id " + std::to_string(i) + " outside [0, " +
                                std::to_string(n_items) + ")");
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    ds.interactions_ += static_cast<std::int64_t>(items.size());
  }
  ds.positives_ = std::move(positives);
  return ds;
}

std::span<const ItemId> InteractionDataset::positives(UserId u) const {
  if (u < 0 || u >= n_users_) throw std::out_of_range("user id " + std::to_string(u) + " out of range");
  return positives_[static_cast<std::size_t>(u)];
}

bool InteractionDataset::contains(UserId u, ItemId i) const {
  auto items = positives(u);
  return std::binary_search(items.begin(), items.end(), i);
}

std::vector<UserId> InteractionDataset::users_with_positives() const {
  std::vector<UserId> users;
  for (std::int64_t u = 0; u < n_users_; ++u)
    if (!positives_[static_cast<std::size_t>(u)].empty()) users.push_back(static_cast<UserId>(u));
  return users;
}

std::vector<std::int64_t> InteractionDataset::item_popularity() const {
  std::vector<std::int64_t> pop(static_cast<std::size_t>(n_items_), 0);
  for (const auto& items : positives_)
    for (ItemId i : items) ++pop[static_cast<std::size_t>(i)];
  return pop;
}

InteractionDataset parse_interactions(std::istream& in, std::int64_t n_users, std::int64_t n_items,
                                      SplitTag tag) {
  check_bounds(n_users, n_items);
  std::vector<std::vector<ItemId>> lists(static_cast<std::size_t>(n_users));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    bool first = true;
    std::vector<ItemId>* target = nullptr;
    for_each_token(line, [&](std::string_view tok) {
      const std::int64_t id = parse_id(tok, line_no);
      if (first) {
        if (id < 0 || id >= n_users)
          throw std::out_of_range("line " + std::to_string(line_no) + ": user id " +
                                  std::to_string(id) + " outside [0, " + std::to_string(n_users) + ")");
        target = &lists[static_cast<std::size_t>(id)];
        first = false;
      } else {
        if (id < 0 || id >= n_items)
          throw std::out_of_range("line " + std::to_string(line_no) + ": item id " +
                                  std::to_string(id) + " outside [0, " + std::to_string(n_items) + ")");
        target->push_back(static_cast<ItemId>(id));
      }
    });
  }
  return InteractionDataset::from_lists(n_users, n_items, std::move(lists), tag);
}

InteractionDataset load_interactions(const std::filesystem::path& path, std::int64_t n_users,
                                     std::int64_t n_items, SplitTag tag) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_interactions(in, n_users, n_items, tag);
}

void write_interactions(const InteractionDataset& ds, std::ostream& out) {
  for (std::int64_t u = 0; u < ds.n_users(); ++u) {
    auto items = ds.positives(static_cast<UserId>(u));
    if (items.empty()) continue;
    out << u;
    for (ItemId i : items) out << ' ' << i;
    out << '\n';
  }
}

void write_interactions(const InteractionDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_interactions(ds, out);
}

std::pair<std::int64_t, std::int64_t> scan_id_bounds(std::span<const std::filesystem::path> paths) {
  std::int64_t max_user = -1;
  std::int64_t max_item = -1;
  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      bool first = true;
      for_each_token(line, [&](std::string_view tok) {
        const std::int64_t id = parse_id(tok, line_no);
        if (first) {
          max_user = std::max(max_user, id);
          first = false;
        } else {
          max_item = std::max(max_item, id);
        }
      });
    }
  }
  return {max_user + 1, max_item + 1};
}

StatsReport dataset_stats(const InteractionDataset& ds) {
  StatsReport r;
  r.n_users = ds.n_users();
  r.n_items = ds.n_items();
  r.interactions = ds.interaction_count();
  const double cells = static_cast<double>(r.n_users) * static_cast<double>(r.n_items);
  r.density = cells > 0 ? static_cast<double>(r.interactions) / cells : 0.0;
  return r;
}

InteractionDataset merge(const InteractionDataset& a, const InteractionDataset& b) {
  const std::int64_t nu = std::max(a.n_users(), b.n_users());
  const std::int64_t ni = std::max(a.n_items(), b.n_items());
  std::vector<std::vector<ItemId>> lists(static_cast<std::size_t>(nu));
  for (const auto* ds : {&a, &b})
    for (std::int64_t u = 0; u < ds->n_users(); ++u) {
      auto items = ds->positives(static_cast<UserId>(u));
      auto& dst = lists[static_cast<std::size_t>(u)];
      dst.insert(dst.end(), items.begin(), items.end());
    }
  return InteractionDataset::from_lists(nu, ni, std::move(lists), a.split_tag());
}

std::pair<InteractionDataset, InteractionDataset> carve_holdout(const InteractionDataset& train,
                                                                double fraction,
                                                                std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw std::invalid_argument("holdout fraction must lie in [0, 1)");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<ItemId>> kept(static_cast<std::size_t>(train.n_users()));
  std::vector<std::vector<ItemId>> held(static_cast<std::size_t>(train.n_users()));
  for (std::int64_t u = 0; u < train.n_users(); ++u) {
    auto items = train.positives(static_cast<UserId>(u));
    std::vector<ItemId> shuffled(items.begin(), items.end());
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto n_held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(shuffled.size())));
    if (!shuffled.empty()) n_held = std::min(n_held, shuffled.size() - 1);
    held[static_cast<std::size_t>(u)].assign(shuffled.begin(), shuffled.begin() + n_held);
    kept[static_cast<std::size_t>(u)].assign(shuffled.begin() + n_held, shuffled.end());
  }
  return {InteractionDataset::from_lists(train.n_users(), train.n_items(), std::move(kept), SplitTag::kTrain),
          InteractionDataset::from_lists(train.n_users(), train.n_items(), std::move(held), SplitTag::kTest)};
}

InteractionDataset sample_from_ground_truth(const SyntheticGroundTruth& truth,
                                            std::int64_t positives_per_user, std::uint64_t seed) {
  const std::int64_t n_users = truth.user_embeddings.rows();
  const std::int64_t n_items = truth.item_embeddings.rows();
  if (positives_per_user < 0 || positives_per_user > n_items)
    throw std::invalid_argument("positives_per_user must lie in [0, n_items]");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<ItemId>> lists(static_cast<std::size_t>(n_users));
  Vector scores(n_items);
  for (std::int64_t u = 0; u < n_users; ++u) {
    scores.noalias() = truth.item_embeddings * truth.user_embeddings.row(u).transpose();
    if (n_items > 0)
      lists[static_cast<std::size_t>(u)] = draw_without_replacement(
          std::span<const double>(scores.data(), static_cast<std::size_t>(n_items)), positives_per_user, rng);
  }
  return InteractionDataset::from_lists(n_users, n_items, std::move(lists), SplitTag::kTrain);
}

SyntheticData generate_synthetic(std::int64_t n_users, std::int64_t n_items, int dim,
                                 std::int64_t positives_per_user, std::uint64_t seed) {
  check_bounds(n_users, n_items);
  if (dim <= 0) throw std::invalid_argument("dimension must be positive");
  if (positives_per_user < 0 || positives_per_user > n_items)
    throw std::invalid_argument("positives_per_user must lie in [0, n_items]");

  std::mt19937_64 rng(seed);
  // Variance 1/sqrt(d) per coordinate gives true scores of unit variance.
  std::normal_distribution<double> gauss(0.0, std::pow(static_cast<double>(dim), -0.25));
  SyntheticGroundTruth truth;
  truth.dim = dim;
  truth.user_embeddings.resize(n_users, dim);
  truth.item_embeddings.resize(n_items, dim);
  for (Eigen::Index r = 0; r < truth.user_embeddings.rows(); ++r)
    for (int c = 0; c < dim; ++c) truth.user_embeddings(r, c) = gauss(rng);
  for (Eigen::Index r = 0; r < truth.item_embeddings.rows(); ++r)
    for (int c = 0; c < dim; ++c) truth.item_embeddings(r, c) = gauss(rng);

  // Separate stream for interaction draws, derived from the same seed.
  InteractionDataset train = sample_from_ground_truth(truth, positives_per_user, rng());
  return {std::move(train), std::move(truth)};
}

InteractionDataset planted_top_items(const SyntheticGroundTruth& truth,
                                     const InteractionDataset& train, std::int64_t top_k) {
  const std::int64_t n_users = truth.user_embeddings.rows();
  const std::int64_t n_items = truth.item_embeddings.rows();
  if (train.n_users() != n_users || train.n_items() != n_items)
    throw DatasetError("ground truth and train split disagree on id space");
  std::vector<std::vector<ItemId>> lists(static_cast<std::size_t>(n_users));
  Vector scores(n_items);
  for (std::int64_t u = 0; u < n_users; ++u) {
    scores.noalias() = truth.item_embeddings * truth.user_embeddings.row(u).transpose();
    std::vector<ItemId> candidates;
    for (ItemId i = 0; i < n_items; ++i)
      if (!train.contains(static_cast<UserId>(u), i)) candidates.push_back(i);
    const auto keep = std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(top_k));
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), [&](ItemId a, ItemId b) {
                        if (scores[a] != scores[b]) return scores[a] > scores[b];
                        return a < b;
                      });
    candidates.resize(keep);
    lists[static_cast<std::size_t>(u)] = std::move(candidates);
  }
  return InteractionDataset::from_lists(n_users, n_items, std::move(lists), SplitTag::kTest);
}

void write_ground_truth(const SyntheticGroundTruth& truth, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  auto emit = [&](const char* kind, const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      out << kind << '\t' << r;
      for (Eigen::Index c = 0; c < m.cols(); ++c) out << '\t' << m(r, c);
      out << '\n';
    }
  };
  emit("user", truth.user_embeddings);
  emit("item", truth.item_embeddings);
}

SyntheticGroundTruth read_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::vector<double>> users;
  std::vector<std::vector<double>> items;
  std::string line;
  std::size_t line_no = 0;
  int dim = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string kind;
    std::int64_t id = -1;
    if (!(fields >> kind >> id)) throw FormatError("ground truth line " + std::to_string(line_no) + " malformed");
    std::vector<double> row;
    double v = 0.0;
    while (fields >> v) row.push_back(v);
    if (dim < 0) dim = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != dim || dim == 0)
      throw FormatError("ground truth line " + std::to_string(line_no) + " has wrong dimension");
    auto& table = kind == "user" ? users : kind == "item" ? items : throw FormatError("unknown kind " + kind);
    if (id != static_cast<std::int64_t>(table.size()))
      throw FormatError("ground truth ids must be contiguous (line " + std::to_string(line_no) + ")");
    table.push_back(std::move(row));
  }
  SyntheticGroundTruth truth;
  truth.dim = std::max(dim, 0);
  auto fill = [&](Matrix& m, const std::vector<std::vector<double>>& rows) {
    m.resize(static_cast<Eigen::Index>(rows.size()), truth.dim);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (int c = 0; c < truth.dim; ++c) m(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  };
  fill(truth.user_embeddings, users);
  fill(truth.item_embeddings, items);
  return truth;
}

}  // namespace pderank
