#include <gtest/gtest.h>

#include <numeric>

#include "oracles.hpp"
#include "scratch_dir.hpp"
#include "toap/retrieval.hpp"
#include "toap/tensor_container.hpp"

namespace {

TEST(Hamming, HandCases) {
  std::mt19937_64 rng(1);
  const auto c = oracle::to_tensor({oracle::random_code(64, rng)})[0];
  EXPECT_EQ(toap::hamming_distance(c, c), 0.0);
  EXPECT_EQ(toap::hamming_distance(c, -c), 64.0);
  auto half = c.clone();
  half.slice(0, 0, 32).neg_();
  EXPECT_EQ(toap::hamming_distance(c, half), 32.0);
}

TEST(Hamming, MatchesPopcountSymmetricAndTriangle) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 300; ++i) {
    const auto a = oracle::random_code(48, rng), b = oracle::random_code(48, rng), c = oracle::random_code(48, rng);
    const auto t = oracle::to_tensor({a, b, c});
    const double ab = toap::hamming_distance(t[0], t[1]), bc = toap::hamming_distance(t[1], t[2]),
                 ac = toap::hamming_distance(t[0], t[2]);
    EXPECT_EQ(ab, oracle::popcount_distance(a, b));
    EXPECT_EQ(ab, toap::hamming_distance(t[1], t[0]));
    EXPECT_LE(ac, ab + bc);
  }
}

TEST(Hamming, MatrixAgreesWithPairwise) {
  std::mt19937_64 rng(3);
  const auto q = oracle::random_codes(4, 32, rng), db = oracle::random_codes(9, 32, rng);
  const auto m = toap::hamming_matrix(oracle::to_tensor(q), oracle::to_tensor(db));
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 9; ++j) EXPECT_EQ(m[i][j].item<double>(), oracle::popcount_distance(q[i], db[j]));
  }
}

TEST(Rank, TiesBrokenByIndex) {
  // distances 5, 0, 5
  auto q = torch::ones({8});
  auto far = q.clone();
  far.slice(0, 0, 5).neg_();
  const auto db = torch::stack({far, q, far});
  const auto r = toap::rank_database(q, db);
  EXPECT_EQ(r.order, (std::vector<int64_t>{1, 0, 2}));
  EXPECT_EQ(r.distances, (std::vector<double>{0, 5, 5}));
}

TEST(Rank, ExactCodeRankedFirst) {
  std::mt19937_64 rng(4);
  auto db = oracle::random_codes(20, 32, rng);
  db[13] = db[6];
  const auto r = toap::rank_database(oracle::to_tensor({db[6]})[0], oracle::to_tensor(db));
  EXPECT_EQ(r.order[0], 6);
  EXPECT_EQ(r.order[1], 13);
}

TEST(Rank, MatchesBruteForceSort) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto db = oracle::random_codes(100, 32, rng);
    const auto q = oracle::random_code(32, rng);
    const auto r = toap::rank_database(oracle::to_tensor({q})[0], oracle::to_tensor(db));
    const auto expect = oracle::brute_force_ranking(q, db);
    ASSERT_EQ(r.order.size(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(r.order[i], expect[i]);
    EXPECT_TRUE(std::is_sorted(r.distances.begin(), r.distances.end()));
  }
}

TEST(AveragePrecision, HandCases) {
  const bool ranks13[] = {true, false, true, false, false};
  EXPECT_NEAR(toap::average_precision(ranks13), 0.8333333333, 1e-9);
  const bool none[] = {false, false};
  EXPECT_EQ(toap::average_precision(none), 0.0);
  const bool all[] = {true, true, true};
  EXPECT_EQ(toap::average_precision(all), 1.0);
}

TEST(MeanAveragePrecision, HandCaseQueryWithHitsAtOneAndThree) {
  // query code all +1; database codes at distances 0, 1, 2, 3, 4 with labels 7, 0, 7, 0, 0
  auto q = torch::ones({1, 8});
  std::vector<torch::Tensor> rows;
  for (int d = 0; d < 5; ++d) {
    auto r = torch::ones({8});
    r.slice(0, 0, d).neg_();
    rows.push_back(r);
  }
  const std::vector<int> ql = {7}, dl = {7, 0, 7, 0, 0};
  EXPECT_NEAR(toap::mean_average_precision(q, ql, torch::stack(rows), dl, 5), 0.833333, 1e-6);
}

TEST(MeanAveragePrecision, PerfectRetrievalIsOne) {
  std::mt19937_64 rng(6);
  const auto a = oracle::random_code(16, rng), b = oracle::random_code(16, rng);
  const auto db = oracle::to_tensor({a, b, a, b, a, b});
  const std::vector<int> dl = {0, 1, 0, 1, 0, 1};
  EXPECT_EQ(toap::mean_average_precision(oracle::to_tensor({a, b}), std::vector<int>{0, 1}, db, dl, 3), 1.0);
}

TEST(MeanAveragePrecision, MatchesBruteForceAndStaysInRange) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> label(0, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = oracle::random_codes(5, 32, rng), db = oracle::random_codes(30, 32, rng);
    std::vector<int> ql(5), dl(30);
    for (auto& l : ql) l = label(rng);
    for (auto& l : dl) l = label(rng);
    const double got = toap::mean_average_precision(oracle::to_tensor(q), ql, oracle::to_tensor(db), dl, 10);
    EXPECT_NEAR(got, oracle::brute_force_map(q, ql, db, dl, 10), 1e-9);
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 1.0);
  }
}

TEST(MeanAveragePrecision, KClampedToDatabaseSize) {
  std::mt19937_64 rng(8);
  const auto q = oracle::random_codes(3, 16, rng), db = oracle::random_codes(12, 16, rng);
  const std::vector<int> ql = {0, 1, 0}, dl = {0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  const auto qt = oracle::to_tensor(q), dt = oracle::to_tensor(db);
  EXPECT_EQ(toap::mean_average_precision(qt, ql, dt, dl, 500), toap::mean_average_precision(qt, ql, dt, dl, 12));
}

TEST(MeanAveragePrecision, InvariantUnderDatabasePermutationWithoutTies) {
  // Distinct distances 0..39 to the query: every permutation keeps the ranked label sequence.
  std::mt19937_64 rng(9);
  const auto q = oracle::random_code(64, rng);
  std::vector<oracle::Code> db;
  std::vector<int> dl;
  for (int d = 0; d < 40; ++d) {
    auto c = q;
    for (int j = 0; j < d; ++j) c[j] = -c[j];
    db.push_back(c);
    dl.push_back(d % 3 == 0 ? 1 : 0);
  }
  const std::vector<int> ql = {1};
  const double base = toap::mean_average_precision(oracle::to_tensor({q}), ql, oracle::to_tensor(db), dl, 15);
  std::vector<int> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<oracle::Code> pdb;
    std::vector<int> pdl;
    for (int i : perm) pdb.push_back(db[i]), pdl.push_back(dl[i]);
    EXPECT_EQ(toap::mean_average_precision(oracle::to_tensor({q}), ql, oracle::to_tensor(pdb), pdl, 15), base);
  }
}

class ProtocolTest : public ::testing::Test {
 protected:
  void SetUp() override {
    splits = toap::make_splits(toap::generate_synthetic(3, 8, 32, 1), 3, 2, 0);
    torch::manual_seed(0);
    model = toap::HashModel("convA", 16, 32);
    model->freeze();
  }
  toap::DatasetSplits splits;
  toap::HashModel model{nullptr};
};

TEST_F(ProtocolTest, ZeroDeltaGivesEqualColumns) {
  const auto ops = toap::default_ops();
  const auto r = toap::evaluate_protocol(model, splits, torch::zeros({3, 32, 32}), ops, 300, "m");
  ASSERT_EQ(r.rows.size(), 6u);
  EXPECT_EQ(r.rows[0].op, "N/A");
  EXPECT_EQ(r.k, 9);
  for (const auto& row : r.rows) EXPECT_EQ(row.original, row.adversarial) << row.op;
  const auto none = toap::evaluate_protocol(model, splits, std::nullopt, ops);
  for (std::size_t i = 0; i < r.rows.size(); ++i) EXPECT_EQ(none.rows[i].original, r.rows[i].original);
}

TEST_F(ProtocolTest, ReportCsvHeaderAndRows) {
  const auto ops = toap::default_ops();
  const auto r = toap::evaluate_protocol(model, splits, torch::full({3, 32, 32}, 0.05f), ops);
  const auto csv = toap::report_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "op,O,A,PO,PA,delta");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_NE(csv.find("\njpeg:60,"), std::string::npos);
  oracle::ScratchDir dir("report");
  toap::write_report_csv(r, dir.path() / "r.csv");
  EXPECT_EQ(toap::read_text_file(dir.path() / "r.csv"), csv);
}

TEST(ApplyPerturbation, ClipsAndBroadcasts) {
  const auto x = torch::tensor({0.0f, 0.5f, 0.99f}).view({1, 3, 1, 1}).expand({2, 3, 1, 1});
  const auto d = torch::tensor({-0.1f, 0.1f, 0.1f}).view({3, 1, 1});
  const auto y = toap::apply_perturbation(x, d);
  EXPECT_TRUE(torch::allclose(y[1].flatten(), torch::tensor({0.0f, 0.6f, 1.0f})));
  EXPECT_TRUE(torch::equal(y[0], y[1]));
}

}  // namespace
