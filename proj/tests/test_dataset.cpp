#include <doctest.h>

#include <cmath>
#include <sstream>

#include "pderank/dataset.hpp"
#include "pderank/errors.hpp"
#include "test_support.hpp"

using namespace pderank;
using pderank::testing::TempDir;

namespace {

InteractionDataset parse(const std::string& text, std::int64_t nu, std::int64_t ni) {
  std::istringstream in(text);
  return parse_interactions(in, nu, ni);
}

}  // namespace

TEST_CASE("two lines parse into sorted positive sets") {
  const auto ds = parse("0 1 2\n1 2\n", 2, 3);
  CHECK(ds.interaction_count() == 3);
  CHECK(std::vector<ItemId>(ds.positives(0).begin(), ds.positives(0).end()) == std::vector<ItemId>{1, 2});
  CHECK(std::vector<ItemId>(ds.positives(1).begin(), ds.positives(1).end()) == std::vector<ItemId>{2});
}

TEST_CASE("empty input gives an empty dataset") {
  const auto ds = parse("", 4, 5);
  CHECK(ds.interaction_count() == 0);
  CHECK(ds.users_with_positives().empty());
  for (UserId u = 0; u < 4; ++u) CHECK(ds.positives(u).empty());
  CHECK(dataset_stats(ds).density == 0.0);
}

TEST_CASE("duplicates collapse, blank lines and repeated spaces are tolerated") {
  const auto ds = parse("0  3 1 3\n\n2\t1   1\r\n", 3, 4);
  CHECK(ds.interaction_count() == 3);
  CHECK(ds.contains(0, 1));
  CHECK(ds.contains(0, 3));
  CHECK(ds.contains(2, 1));
  CHECK_FALSE(ds.contains(1, 1));
}

TEST_CASE("malformed token reports its line") {
  try {
    parse("0 1\n1 x2\n", 2, 3);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse("0 -1\n", 1, 3), std::out_of_range);
  CHECK_THROWS_AS(parse("0 1.5\n", 1, 3), ParseError);
}

TEST_CASE("ids at or beyond the declared bound are range errors") {
  CHECK_THROWS_AS(parse("0 3\n", 1, 3), std::out_of_range);
  CHECK_THROWS_AS(parse("2 0\n", 2, 3), std::out_of_range);
  try {
    parse("0 1\n0 9\n", 1, 3);
    FAIL("expected out_of_range");
  } catch (const std::out_of_range& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("missing file is an error") {
  TempDir dir;
  CHECK_THROWS(load_interactions(dir / "nope.txt", 1, 1));
}

TEST_CASE("write then load round-trips") {
  std::mt19937_64 rng(3);
  const auto ds = pderank::testing::random_dataset(30, 40, 6, rng);
  TempDir dir;
  write_interactions(ds, dir / "train.txt");
  CHECK(load_interactions(dir / "train.txt", 30, 40) == ds);
}

TEST_CASE("interaction count equals the sum of set sizes") {
  std::mt19937_64 rng(5);
  const auto ds = pderank::testing::random_dataset(50, 20, 8, rng);
  std::int64_t total = 0;
  for (UserId u = 0; u < 50; ++u) total += static_cast<std::int64_t>(ds.positives(u).size());
  CHECK(total == ds.interaction_count());
  const auto pop = ds.item_popularity();
  std::int64_t pop_total = 0;
  for (auto p : pop) pop_total += p;
  CHECK(pop_total == total);
}

TEST_CASE("stats and id-bound scan") {
  TempDir dir;
  pderank::testing::spit(dir / "train.txt", "0 1 2\n3 4\n");
  pderank::testing::spit(dir / "test.txt", "1 7\n");
  const std::vector<std::filesystem::path> files{dir / "train.txt", dir / "test.txt"};
  const auto [nu, ni] = scan_id_bounds(files);
  CHECK(nu == 4);
  CHECK(ni == 8);
  const auto all = merge(load_interactions(files[0], nu, ni), load_interactions(files[1], nu, ni, SplitTag::kTest));
  const auto s = dataset_stats(all);
  CHECK(s.interactions == 4);
  CHECK(s.density == doctest::Approx(4.0 / 32.0));
}

TEST_CASE("holdout keeps at least one train item per user") {
  std::mt19937_64 rng(8);
  const auto ds = pderank::testing::random_dataset(40, 30, 10, rng);
  const auto [kept, held] = carve_holdout(ds, 0.5, 11);
  CHECK(kept.interaction_count() + held.interaction_count() == ds.interaction_count());
  for (UserId u = 0; u < 40; ++u) {
    CHECK_FALSE(kept.positives(u).empty());
    for (ItemId i : held.positives(u)) {
      CHECK(ds.contains(u, i));
      CHECK_FALSE(kept.contains(u, i));
    }
  }
  CHECK(carve_holdout(ds, 0.5, 11).second == held);
}

TEST_CASE("synthetic generator is deterministic and rejects impossible requests") {
  const auto a = generate_synthetic(20, 30, 4, 5, 9);
  const auto b = generate_synthetic(20, 30, 4, 5, 9);
  CHECK(a.train == b.train);
  CHECK(a.truth.user_embeddings == b.truth.user_embeddings);
  CHECK(a.train.interaction_count() == 100);
  CHECK_FALSE(generate_synthetic(20, 30, 4, 5, 10).train == a.train);
  CHECK_THROWS_AS(generate_synthetic(2, 3, 2, 4, 0), std::invalid_argument);
}

TEST_CASE("equal true scores give uniform sampling") {
  SyntheticGroundTruth truth;
  truth.dim = 2;
  truth.user_embeddings = Matrix::Ones(20000, 2);
  truth.item_embeddings = Matrix::Ones(4, 2);
  const auto ds = sample_from_ground_truth(truth, 1, 42);
  const auto pop = ds.item_popularity();
  const double sd = std::sqrt(20000 * 0.25 * 0.75);
  for (auto c : pop) CHECK(std::abs(static_cast<double>(c) - 5000.0) <= 4 * sd);
}

TEST_CASE("first sampled item follows the planted softmax (chi-square, 10 items, 100k users)") {
  SyntheticGroundTruth truth;
  truth.dim = 1;
  truth.user_embeddings = Matrix::Ones(100000, 1);
  truth.item_embeddings.resize(10, 1);
  for (int i = 0; i < 10; ++i) truth.item_embeddings(i, 0) = 0.2 * i - 0.9;
  // One positive per user: the stored item is the first draw.
  const auto ds = sample_from_ground_truth(truth, 1, 2024);
  const auto observed = ds.item_popularity();
  double z = 0.0;
  for (int i = 0; i < 10; ++i) z += std::exp(truth.item_embeddings(i, 0));
  double chi2 = 0.0;
  for (int i = 0; i < 10; ++i) {
    const double expected = 100000.0 * std::exp(truth.item_embeddings(i, 0)) / z;
    chi2 += std::pow(static_cast<double>(observed[i]) - expected, 2) / expected;
  }
  // 99th percentile of chi-square with 9 degrees of freedom.
  CHECK(chi2 < 21.666);
}

TEST_CASE("sampling without replacement yields distinct positives") {
  const auto data = generate_synthetic(10, 12, 3, 12, 4);
  for (UserId u = 0; u < 10; ++u) CHECK(data.train.positives(u).size() == 12);
}

TEST_CASE("planted top items exclude train positives and follow true scores") {
  const auto data = generate_synthetic(15, 40, 4, 5, 2);
  const auto test = planted_top_items(data.truth, data.train, 10);
  for (UserId u = 0; u < 15; ++u) {
    const auto top = test.positives(u);
    REQUIRE(top.size() == 10);
    double worst_in = 1e300;
    for (ItemId i : top) {
      CHECK_FALSE(data.train.contains(u, i));
      worst_in = std::min(worst_in, data.truth.score(u, i));
    }
    for (ItemId i = 0; i < 40; ++i)
      if (!data.train.contains(u, i) && !test.contains(u, i)) CHECK(data.truth.score(u, i) <= worst_in);
  }
}

TEST_CASE("ground truth file round-trips") {
  const auto data = generate_synthetic(5, 7, 3, 2, 6);
  TempDir dir;
  write_ground_truth(data.truth, dir / "gt.tsv");
  const auto back = read_ground_truth(dir / "gt.tsv");
  CHECK(back.dim == 3);
  CHECK(back.user_embeddings == data.truth.user_embeddings);
  CHECK(back.item_embeddings == data.truth.item_embeddings);
}
