#include "toap/retrieval.hpp"

#include <algorithm>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <torch/torch.h>

#include "toap/tensor_container.hpp"

namespace toap {
namespace {

void check_codes(const torch::Tensor& codes, const char* what) {
  if (codes.dim() != 2) throw std::invalid_argument(std::string(what) + " must be an [N, K] code matrix");
}

}  // namespace

double hamming_distance(const torch::Tensor& query, const torch::Tensor& item) {
  if (query.dim() != 1 || item.dim() != 1 || query.size(0) != item.size(0)) {
    throw std::invalid_argument("hamming_distance needs two codes of equal length, got " + c10::str(query.sizes()) +
                                " and " + c10::str(item.sizes()));
  }
  const auto k = static_cast<double>(query.size(0));
  const double dot = torch::dot(query.to(torch::kFloat64), item.to(torch::kFloat64)).item<double>();
  return (k - dot) / 2.0;
}

torch::Tensor hamming_matrix(const torch::Tensor& queries, const torch::Tensor& database) {
  check_codes(queries, "query codes");
  check_codes(database, "database codes");
  if (queries.size(1) != database.size(1)) throw std::invalid_argument("query and database code lengths differ");
  const auto k = static_cast<double>(queries.size(1));
  return (k - torch::matmul(queries.to(torch::kFloat64), database.to(torch::kFloat64).t())) / 2.0;
}

RankedResult rank_database(const torch::Tensor& query_code, const torch::Tensor& db_codes, int64_t query_index) {
  check_codes(db_codes, "database codes");
  if (db_codes.size(0) == 0) throw std::invalid_argument("cannot rank an empty database");
  const auto d = hamming_matrix(query_code.view({1, -1}), db_codes)[0].contiguous();
  const auto* dist = d.data_ptr<double>();
  RankedResult r;
  r.query_index = query_index;
  r.order.resize(static_cast<std::size_t>(db_codes.size(0)));
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(), [&](int64_t a, int64_t b) { return dist[a] < dist[b]; });
  r.distances.reserve(r.order.size());
  for (const auto i : r.order) r.distances.push_back(dist[i]);
  return r;
}

double average_precision(std::span<const bool> correct) {
  double sum = 0.0;
  int hits = 0;
  for (std::size_t rank = 0; rank < correct.size(); ++rank) {
    if (!correct[rank]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  return hits == 0 ? 0.0 : sum / hits;
}

double mean_average_precision(const torch::Tensor& query_codes, std::span<const int> query_labels,
                              const torch::Tensor& db_codes, std::span<const int> db_labels, int k) {
  check_codes(query_codes, "query codes");
  check_codes(db_codes, "database codes");
  if (query_codes.size(0) == 0) throw std::invalid_argument("mAP needs at least one query");
  if (k < 1) throw std::invalid_argument("mAP cut-off k must be >= 1");
  if (static_cast<int64_t>(query_labels.size()) != query_codes.size(0) ||
      static_cast<int64_t>(db_labels.size()) != db_codes.size(0)) {
    throw std::invalid_argument("labels are not aligned with codes");
  }
  const auto n = static_cast<std::size_t>(db_codes.size(0));
  const auto top = std::min<std::size_t>(static_cast<std::size_t>(k), n);
  const auto dist = hamming_matrix(query_codes, db_codes).contiguous();
  const auto* d = dist.data_ptr<double>();

  std::vector<int64_t> order(n);
  const auto correct = std::make_unique<bool[]>(top);
  double total = 0.0;
  for (std::size_t q = 0; q < query_labels.size(); ++q) {
    const double* row = d + q * n;
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                      [&](int64_t a, int64_t b) { return row[a] < row[b] || (row[a] == row[b] && a < b); });
    for (std::size_t j = 0; j < top; ++j) correct[j] = db_labels[static_cast<std::size_t>(order[j])] == query_labels[q];
    total += average_precision(std::span<const bool>(correct.get(), top));
  }
  return total / static_cast<double>(query_labels.size());
}

const OpResult& EvalReport::row(const std::string& op) const {
  for (const auto& r : rows) {
    if (r.op == op) return r;
  }
  throw std::out_of_range("report has no row for op '" + op + "'");
}

torch::Tensor apply_perturbation(const torch::Tensor& images, const torch::Tensor& delta) {
  if (delta.dim() != 3 || delta.sizes() != images.sizes().slice(1)) {
    throw std::invalid_argument("perturbation shape " + c10::str(delta.sizes()) + " does not match images " +
                                c10::str(images.sizes()));
  }
  return (images + delta.to(images.scalar_type()).unsqueeze(0)).clamp(0.0, 1.0);
}

EvalReport evaluate_protocol(HashModel& model, const torch::Tensor& query_images, std::span<const int> query_labels,
                             const torch::Tensor& db_images, std::span<const int> db_labels,
                             const std::optional<torch::Tensor>& delta, std::span<const PostProcOp> ops, int k,
                             std::string model_id) {
  if (query_images.size(0) == 0) throw std::invalid_argument("evaluation needs at least one query image");
  if (db_images.size(0) == 0) throw std::invalid_argument("evaluation needs a non-empty database");
  EvalReport report;
  report.model_id = std::move(model_id);
  report.k = static_cast<int>(std::min<int64_t>(k, db_images.size(0)));
  report.queries = query_images.size(0);
  report.database = db_images.size(0);

  const auto db_codes = encode(model, db_images);
  auto map_of = [&](const torch::Tensor& queries) {
    return mean_average_precision(encode(model, queries), query_labels, db_codes, db_labels, report.k);
  };
  const auto adversarial = delta ? apply_perturbation(query_images, *delta) : query_images;
  const double o = map_of(query_images);
  const double a = delta ? map_of(adversarial) : o;
  report.rows.push_back({"N/A", o, a});
  for (const auto& op : ops) {
    const double po = map_of(apply_op(op, query_images));
    const double pa = delta ? map_of(apply_op(op, adversarial)) : po;
    report.rows.push_back({to_string(op), po, pa});
  }
  return report;
}

EvalReport evaluate_protocol(HashModel& model, const DatasetSplits& splits, const std::optional<torch::Tensor>& delta,
                             std::span<const PostProcOp> ops, int k, std::string model_id) {
  const auto query_labels = labels_of(splits.test);
  const auto db_labels = labels_of(splits.database);
  return evaluate_protocol(model, stack_pixels(splits.test), query_labels, stack_pixels(splits.database), db_labels,
                           delta, ops, k, std::move(model_id));
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << kReportCsvHeader << "\n" << std::setprecision(6) << std::fixed;
  for (const auto& r : report.rows) {
    out << r.op << "," << report.O() << "," << report.A() << "," << r.original << "," << r.adversarial << ","
        << r.delta() << "\n";
  }
  return out.str();
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  write_file_atomic(path, report_csv(report));
}

}  // namespace toap
