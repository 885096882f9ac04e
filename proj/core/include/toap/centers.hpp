#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <torch/types.h>

namespace toap {

/// Hash centers voted from training-set codes. All matrices hold +-1 floats.
struct CenterSet {
  torch::Tensor cluster_centers;  // [P, K]     h_p
  torch::Tensor sub_centers;      // [N_s, K]   h_s
  std::vector<std::vector<int>> memberships;  // per sub center: the n voting clusters, ascending
  torch::Tensor overall;          // [K]        h_o
  std::uint64_t seed = 0;

  int identities() const { return static_cast<int>(cluster_centers.size(0)); }
  int code_bits() const { return static_cast<int>(cluster_centers.size(1)); }
};

/// Row p = sign(sum of the codes labelled p), ties -> +1.
torch::Tensor vote_cluster_centers(const torch::Tensor& codes, std::span<const int> labels, int identities);

/// N_s sub centers, each the sign-vote of n distinct clusters drawn with a seeded generator.
std::pair<torch::Tensor, std::vector<std::vector<int>>> vote_sub_centers(const torch::Tensor& cluster_centers,
                                                                         int count, int voters,
                                                                         std::uint64_t seed);

/// sign(sum_p h_p), ties -> +1.
torch::Tensor vote_overall_center(const torch::Tensor& cluster_centers);

/// voters <= 0 selects ceil(P / 2).
CenterSet build_center_set(const torch::Tensor& codes, std::span<const int> labels, int identities,
                           int sub_count, int voters, std::uint64_t seed);

/// Memberships are stored as an [N_s, n] float tensor of cluster indices.
void save_center_set(const CenterSet& centers, const std::filesystem::path& path);
CenterSet load_center_set(const std::filesystem::path& path);

}  // namespace toap
