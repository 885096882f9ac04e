#pragma once

// Independent reference implementations used by the unit and acceptance tests.
// They work on plain std containers and never call into the library code they check.

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <torch/torch.h>

namespace oracle {

using Code = std::vector<int>;  // entries +-1

/// Random +-1 code.
Code random_code(int bits, std::mt19937_64& rng);
std::vector<Code> random_codes(int count, int bits, std::mt19937_64& rng);
torch::Tensor to_tensor(const std::vector<Code>& codes);
std::vector<Code> from_tensor(const torch::Tensor& codes);

/// Number of differing bits, computed on packed 64-bit words with popcount.
int popcount_distance(const Code& a, const Code& b);

/// Column-wise majority with ties going to +1.
Code majority(const std::vector<Code>& rows);

/// Database indices sorted by (bit-difference count, index).
std::vector<int> brute_force_ranking(const Code& query, const std::vector<Code>& db);

/// Mean over queries of (1/c) * sum_j j / rank_j over the c correct hits in the top k (0 if c == 0).
double brute_force_map(const std::vector<Code>& queries, const std::vector<int>& query_labels,
                       const std::vector<Code>& db, const std::vector<int>& db_labels, int k);

/// Per-pixel accumulate / count merge of [B, C, w, w] patches placed at (row, col).
torch::Tensor accumulate_merge(const std::vector<torch::Tensor>& patches, const std::vector<std::pair<int, int>>& offsets,
                               int height, int width);

/// Index of the code nearest to `target` in bit-difference count, lowest index on ties.
int nearest_code(const Code& target, const std::vector<Code>& candidates);

/// Leave-nothing-out nearest-centroid classification accuracy in pixel space.
double nearest_centroid_accuracy(const torch::Tensor& images, const std::vector<int>& labels);

/// (f(x + h e_i) - f(x - h e_i)) / 2h for a scalar function of a float64 tensor.
double central_difference(const std::function<double(const torch::Tensor&)>& f, const torch::Tensor& x, int64_t flat_index,
                          double step);

/// Baseline libjpeg round trip, 4:4:4, IJG quality scaling, float DCT.
/// Input / output: [3, H, W] float in [0, 1].
torch::Tensor reference_jpeg(const torch::Tensor& image, int quality);

double psnr(const torch::Tensor& a, const torch::Tensor& b);

/// Smooth images with 1/f-like spectra: sums of random low-frequency sinusoids plus a little noise.
torch::Tensor natural_like_images(int count, int size, std::uint64_t seed);

}  // namespace oracle
