#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <torch/types.h>

namespace toap {

/// Named float32 tensor as stored in a container file.
struct NamedTensor {
  std::string name;
  torch::Tensor tensor;
};

/// Portable tensor file.
///
/// Layout (all integers little-endian):
///   magic "TOAP" | version u32 | entry count u32
///   per entry: name length u16 | UTF-8 name | dtype u8 (0 = float32) |
///              rank u8 | dims u64 x rank | row-major payload
class TensorContainer {
 public:
  static constexpr char kMagic[4] = {'T', 'O', 'A', 'P'};
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::uint8_t kFloat32 = 0;

  TensorContainer() = default;
  explicit TensorContainer(std::vector<NamedTensor> entries);

  /// Adds a copy of `tensor` converted to contiguous float32 on CPU.
  void add(std::string name, const torch::Tensor& tensor);

  bool contains(std::string_view name) const;
  /// Throws std::out_of_range naming the missing entry.
  const torch::Tensor& at(std::string_view name) const;

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<std::uint8_t> serialize() const;
  static TensorContainer deserialize(const std::vector<std::uint8_t>& bytes);

  /// Atomic: writes a sibling temp file and renames it over `path`.
  void save(const std::filesystem::path& path) const;
  static TensorContainer load(const std::filesystem::path& path);

 private:
  std::vector<NamedTensor> entries_;
};

/// Writes `contents` to `path` through a temp file + rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace toap
