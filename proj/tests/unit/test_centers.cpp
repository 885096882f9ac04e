#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.hpp"
#include "scratch_dir.hpp"
#include "toap/centers.hpp"

namespace {

using oracle::Code;

TEST(ClusterCenters, MajorityHandCase) {
  const auto codes = torch::tensor({{1.f, -1.f}, {1.f, 1.f}, {1.f, -1.f}});
  const std::vector<int> labels = {0, 0, 0};
  EXPECT_TRUE(torch::equal(toap::vote_cluster_centers(codes, labels, 1), torch::tensor({{1.f, -1.f}})));
}

TEST(ClusterCenters, SingleCodePerIdentityIsItsOwnCenter) {
  std::mt19937_64 rng(1);
  const auto codes = oracle::to_tensor(oracle::random_codes(5, 24, rng));
  const std::vector<int> labels = {0, 1, 2, 3, 4};
  EXPECT_TRUE(torch::equal(toap::vote_cluster_centers(codes, labels, 5), codes));
}

TEST(ClusterCenters, MatchesBruteForceMajority) {
  std::mt19937_64 rng(2);
  const auto codes = oracle::random_codes(50, 16, rng);
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) labels.push_back(i % 5);
  const auto got = oracle::from_tensor(toap::vote_cluster_centers(oracle::to_tensor(codes), labels, 5));
  for (int p = 0; p < 5; ++p) {
    std::vector<Code> rows;
    for (int i = 0; i < 50; ++i) {
      if (labels[i] == p) rows.push_back(codes[i]);
    }
    EXPECT_EQ(got[p], oracle::majority(rows));
  }
}

TEST(SubCenters, SingleVoterCopiesAClusterCenter) {
  std::mt19937_64 rng(3);
  const auto clusters = oracle::random_codes(6, 16, rng);
  const auto [subs, members] = toap::vote_sub_centers(oracle::to_tensor(clusters), 5, 1, 9);
  const auto got = oracle::from_tensor(subs);
  for (int s = 0; s < 5; ++s) {
    ASSERT_EQ(members[s].size(), 1u);
    EXPECT_EQ(got[s], clusters[members[s][0]]);
  }
}

TEST(SubCenters, FullVoteEqualsOverallCenter) {
  std::mt19937_64 rng(4);
  const auto clusters = oracle::to_tensor(oracle::random_codes(7, 20, rng));
  const auto overall = toap::vote_overall_center(clusters);
  const auto [subs, members] = toap::vote_sub_centers(clusters, 3, 7, 1);
  for (int s = 0; s < 3; ++s) EXPECT_TRUE(torch::equal(subs[s], overall));
}

TEST(SubCenters, MatchRecomputationFromMemberships) {
  std::mt19937_64 rng(5);
  const auto clusters = oracle::random_codes(6, 32, rng);
  const auto [subs, members] = toap::vote_sub_centers(oracle::to_tensor(clusters), 4, 3, 17);
  const auto got = oracle::from_tensor(subs);
  for (int s = 0; s < 4; ++s) {
    ASSERT_EQ(members[s].size(), 3u);
    EXPECT_TRUE(std::is_sorted(members[s].begin(), members[s].end()));
    EXPECT_EQ(std::adjacent_find(members[s].begin(), members[s].end()), members[s].end());
    std::vector<Code> rows;
    for (int p : members[s]) rows.push_back(clusters[p]);
    EXPECT_EQ(got[s], oracle::majority(rows));
  }
  const auto [again, members_again] = toap::vote_sub_centers(oracle::to_tensor(clusters), 4, 3, 17);
  EXPECT_TRUE(torch::equal(subs, again));
  EXPECT_EQ(members, members_again);
}

TEST(OverallCenter, HandCases) {
  std::mt19937_64 rng(6);
  const auto one = oracle::to_tensor(oracle::random_codes(1, 12, rng));
  EXPECT_TRUE(torch::equal(toap::vote_overall_center(one), one[0]));
  const auto both = torch::cat({one, -one});
  EXPECT_TRUE(torch::equal(toap::vote_overall_center(both), torch::ones({12})));
}

TEST(OverallCenter, MatchesBruteForceMajority) {
  std::mt19937_64 rng(7);
  const auto clusters = oracle::random_codes(7, 32, rng);
  EXPECT_EQ(oracle::from_tensor(toap::vote_overall_center(oracle::to_tensor(clusters)).unsqueeze(0))[0],
            oracle::majority(clusters));
}

TEST(Voting, PermutationInvariantAndNegationEquivariant) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto codes = oracle::random_codes(7, 32, rng);  // odd row count: no ties
    const auto base = toap::vote_overall_center(oracle::to_tensor(codes));
    std::shuffle(codes.begin(), codes.end(), rng);
    const auto t = oracle::to_tensor(codes);
    EXPECT_TRUE(torch::equal(toap::vote_overall_center(t), base));
    EXPECT_TRUE(torch::equal(toap::vote_overall_center(-t), -base));
  }
}

TEST(CenterSet, DefaultVotersAndRoundTrip) {
  std::mt19937_64 rng(9);
  const auto codes = oracle::to_tensor(oracle::random_codes(30, 16, rng));
  std::vector<int> labels;
  for (int i = 0; i < 30; ++i) labels.push_back(i % 5);
  const auto set = toap::build_center_set(codes, labels, 5, 4, 0, 3);
  for (const auto& m : set.memberships) EXPECT_EQ(m.size(), 3u);
  oracle::ScratchDir dir("centers");
  toap::save_center_set(set, dir.path() / "c.bin");
  const auto back = toap::load_center_set(dir.path() / "c.bin");
  EXPECT_TRUE(torch::equal(back.cluster_centers, set.cluster_centers));
  EXPECT_TRUE(torch::equal(back.sub_centers, set.sub_centers));
  EXPECT_TRUE(torch::equal(back.overall, set.overall));
  EXPECT_EQ(back.memberships, set.memberships);
}

}  // namespace
