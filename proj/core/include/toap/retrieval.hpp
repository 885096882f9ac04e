#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <torch/types.h>

#include "toap/dataset.hpp"
#include "toap/hash_model.hpp"
#include "toap/postproc.hpp"

namespace toap {

/// Default top-k cut-off; clamped to the database size.
inline constexpr int kDefaultTopK = 300;

/// (K - c_q . c_i) / 2 for +-1 codes of equal length.
double hamming_distance(const torch::Tensor& query, const torch::Tensor& item);

/// [Q, K] x [N, K] -> [Q, N] float64 Hamming distances.
torch::Tensor hamming_matrix(const torch::Tensor& queries, const torch::Tensor& database);

struct RankedResult {
  int64_t query_index = 0;
  std::vector<int64_t> order;      // database indices, best first
  std::vector<double> distances;   // distance of each entry of `order`
};

/// Full ascending-distance ranking; ties broken by ascending database index.
RankedResult rank_database(const torch::Tensor& query_code, const torch::Tensor& db_codes,
                           int64_t query_index = 0);

/// mAP@k. Per query, the top-k ranked entries are scanned; with c correct
/// entries at 1-based ranks a_1 < ... < a_c the AP is (1/c) sum_j j / a_j,
/// and 0 when c = 0. k is clamped to the database size.
double mean_average_precision(const torch::Tensor& query_codes, std::span<const int> query_labels,
                              const torch::Tensor& db_codes, std::span<const int> db_labels, int k);

/// AP of one ranked list of correctness flags (already cut to top-k).
double average_precision(std::span<const bool> correct);

struct OpResult {
  std::string op;  // "N/A" for the unprocessed row
  double original = 0;     // O or PO
  double adversarial = 0;  // A or PA
  double delta() const { return original - adversarial; }
};

struct EvalReport {
  std::string model_id;
  int k = 0;
  int64_t queries = 0;
  int64_t database = 0;
  std::vector<OpResult> rows;  // rows[0] is "N/A"

  double O() const { return rows.at(0).original; }
  double A() const { return rows.at(0).adversarial; }
  const OpResult& row(const std::string& op) const;
};

/// Database codes come from the clean database split. Queries are the test
/// split, perturbed as clip(x + delta, 0, 1) when a delta is given, then
/// post-processed by each op. Without a delta A equals O and PA equals PO.
EvalReport evaluate_protocol(HashModel& model, const DatasetSplits& splits,
                             const std::optional<torch::Tensor>& delta, std::span<const PostProcOp> ops,
                             int k = kDefaultTopK, std::string model_id = "");

/// Tensor form used by sweeps: codes for `db_images` are computed once per call.
EvalReport evaluate_protocol(HashModel& model, const torch::Tensor& query_images, std::span<const int> query_labels,
                             const torch::Tensor& db_images, std::span<const int> db_labels,
                             const std::optional<torch::Tensor>& delta, std::span<const PostProcOp> ops,
                             int k = kDefaultTopK, std::string model_id = "");

/// clip(images + delta, 0, 1); delta is [3, H, W] and broadcasts over the batch.
torch::Tensor apply_perturbation(const torch::Tensor& images, const torch::Tensor& delta);

inline constexpr const char* kReportCsvHeader = "op,O,A,PO,PA,delta";

/// One line per row: op, O, A, PO, PA, PO - PA. The "N/A" row repeats O/A as PO/PA.
std::string report_csv(const EvalReport& report);
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);

}  // namespace toap
