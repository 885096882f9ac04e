#include "toap/centers.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "toap/hash_model.hpp"
#include "toap/tensor_container.hpp"

namespace toap {

torch::Tensor vote_cluster_centers(const torch::Tensor& codes, std::span<const int> labels, int identities) {
  if (codes.dim() != 2) throw std::invalid_argument("codes must be an [M, K] matrix");
  if (codes.size(0) != static_cast<int64_t>(labels.size())) {
    throw std::invalid_argument("codes and labels differ in length");
  }
  const auto k = codes.size(1);
  auto sums = torch::zeros({identities, k}, codes.options());
  std::vector<int> counts(identities, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = labels[i];
    if (p < 0 || p >= identities) throw std::invalid_argument("label out of range: " + std::to_string(p));
    sums[p] += codes[static_cast<int64_t>(i)];
    ++counts[p];
  }
  for (int p = 0; p < identities; ++p) {
    if (counts[p] == 0) throw std::invalid_argument("identity " + std::to_string(p) + " has no codes to vote");
  }
  return sign_pos(sums);
}

std::pair<torch::Tensor, std::vector<std::vector<int>>> vote_sub_centers(const torch::Tensor& cluster_centers,
                                                                         int count, int voters,
                                                                         std::uint64_t seed) {
  const int p = static_cast<int>(cluster_centers.size(0));
  if (voters < 1 || voters > p) {
    throw std::invalid_argument("sub-center voters n must satisfy 1 <= n <= P (n=" + std::to_string(voters) +
                                ", P=" + std::to_string(p) + ")");
  }
  if (count < 1) throw std::invalid_argument("sub-center count must be >= 1");

  std::mt19937_64 rng(seed);
  std::vector<std::vector<int>> memberships;
  std::vector<torch::Tensor> rows;
  std::vector<int> pool(p);
  for (int s = 0; s < count; ++s) {
    std::iota(pool.begin(), pool.end(), 0);
    // Partial Fisher-Yates: the first `voters` slots are a uniform draw without replacement.
    for (int i = 0; i < voters; ++i) {
      std::uniform_int_distribution<int> pick(i, p - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    std::vector<int> chosen(pool.begin(), pool.begin() + voters);
    std::sort(chosen.begin(), chosen.end());
    auto idx = torch::tensor(std::vector<int64_t>(chosen.begin(), chosen.end()), torch::kInt64);
    rows.push_back(sign_pos(cluster_centers.index_select(0, idx).sum(0)));
    memberships.push_back(std::move(chosen));
  }
  return {torch::stack(rows), std::move(memberships)};
}

torch::Tensor vote_overall_center(const torch::Tensor& cluster_centers) {
  if (cluster_centers.dim() != 2 || cluster_centers.size(0) < 1) {
    throw std::invalid_argument("overall vote needs at least one cluster center");
  }
  return sign_pos(cluster_centers.sum(0));
}

CenterSet build_center_set(const torch::Tensor& codes, std::span<const int> labels, int identities,
                           int sub_count, int voters, std::uint64_t seed) {
  CenterSet c;
  c.seed = seed;
  c.cluster_centers = vote_cluster_centers(codes, labels, identities);
  if (voters <= 0) voters = (identities + 1) / 2;
  std::tie(c.sub_centers, c.memberships) = vote_sub_centers(c.cluster_centers, sub_count, voters, seed);
  c.overall = vote_overall_center(c.cluster_centers);
  return c;
}

void save_center_set(const CenterSet& centers, const std::filesystem::path& path) {
  TensorContainer c;
  c.add("cluster_centers", centers.cluster_centers);
  c.add("sub_centers", centers.sub_centers);
  c.add("overall", centers.overall);
  const auto n = centers.memberships.empty() ? 0 : centers.memberships.front().size();
  auto m = torch::empty({static_cast<int64_t>(centers.memberships.size()), static_cast<int64_t>(n)});
  for (std::size_t i = 0; i < centers.memberships.size(); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      m[static_cast<int64_t>(i)][static_cast<int64_t>(j)] = centers.memberships[i][j];
    }
  }
  c.add("memberships", m);
  c.save(path);
  auto meta = path;
  meta += ".json";
  write_file_atomic(meta, nlohmann::json{{"kind", "center_set"},
                                         {"seed", centers.seed},
                                         {"P", centers.identities()},
                                         {"N_s", centers.sub_centers.size(0)},
                                         {"n", n}}
                              .dump(2) + "\n");
}

CenterSet load_center_set(const std::filesystem::path& path) {
  const auto c = TensorContainer::load(path);
  CenterSet out;
  out.cluster_centers = c.at("cluster_centers");
  out.sub_centers = c.at("sub_centers");
  out.overall = c.at("overall");
  const auto m = c.at("memberships");
  for (int64_t i = 0; i < m.size(0); ++i) {
    std::vector<int> row;
    for (int64_t j = 0; j < m.size(1); ++j) row.push_back(static_cast<int>(m[i][j].item<float>()));
    out.memberships.push_back(std::move(row));
  }
  auto meta = path;
  meta += ".json";
  if (std::filesystem::exists(meta)) {
    out.seed = nlohmann::json::parse(read_text_file(meta)).at("seed").get<std::uint64_t>();
  }
  return out;
}

}  // namespace toap
