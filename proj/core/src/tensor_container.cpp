#include "toap/tensor_container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <torch/torch.h>

namespace toap {
namespace {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian hosts are not supported");

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  const std::uint8_t* take(std::size_t n) {
    need(n);
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) {
      throw std::runtime_error("tensor container truncated at byte " + std::to_string(pos_));
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t float_bits_le(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof(u));
  return u;
}

}  // namespace

TensorContainer::TensorContainer(std::vector<NamedTensor> entries) {
  for (auto& e : entries) add(std::move(e.name), e.tensor);
}

void TensorContainer::add(std::string name, const torch::Tensor& tensor) {
  if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw std::invalid_argument("tensor name too long: " + name.substr(0, 32) + "...");
  }
  if (tensor.dim() > std::numeric_limits<std::uint8_t>::max()) {
    throw std::invalid_argument("tensor rank too large for entry " + name);
  }
  if (contains(name)) throw std::invalid_argument("duplicate tensor entry " + name);
  auto copy = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous().clone();
  entries_.push_back({std::move(name), std::move(copy)});
}

bool TensorContainer::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const NamedTensor& e) { return e.name == name; });
}

const torch::Tensor& TensorContainer::at(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw std::out_of_range("tensor container has no entry '" + std::string(name) + "'");
}

std::vector<std::uint8_t> TensorContainer::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(kFloat32);
    out.push_back(static_cast<std::uint8_t>(e.tensor.dim()));
    for (auto d : e.tensor.sizes()) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    const float* data = e.tensor.data_ptr<float>();
    const auto n = static_cast<std::size_t>(e.tensor.numel());
    out.reserve(out.size() + 4 * n);
    for (std::size_t i = 0; i < n; ++i) put_le<std::uint32_t>(out, float_bits_le(data[i]));
  }
  return out;
}

TensorContainer TensorContainer::deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const std::uint8_t* magic = r.take(4);
  if (!std::equal(magic, magic + 4, std::begin(kMagic))) {
    throw std::runtime_error("not a tensor container (bad magic)");
  }
  const auto version = r.get_le<std::uint32_t>();
  if (version != kVersion) {
    throw std::runtime_error("unsupported tensor container version " + std::to_string(version));
  }
  const auto count = r.get_le<std::uint32_t>();
  TensorContainer c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get_le<std::uint16_t>();
    const auto* name_bytes = r.take(name_len);
    std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
    const auto dtype = r.get_le<std::uint8_t>();
    if (dtype != kFloat32) {
      throw std::runtime_error("entry '" + name + "' has unsupported dtype code " + std::to_string(dtype));
    }
    const auto rank = r.get_le<std::uint8_t>();
    std::vector<std::int64_t> dims(rank);
    std::uint64_t numel = 1;
    for (auto& d : dims) {
      const auto v = r.get_le<std::uint64_t>();
      if (v > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
        throw std::runtime_error("entry '" + name + "' has an out-of-range dimension");
      }
      d = static_cast<std::int64_t>(v);
      numel *= v;
    }
    auto t = torch::empty(dims, torch::kFloat32);
    const auto* payload = r.take(static_cast<std::size_t>(numel) * 4);
    float* dst = t.data_ptr<float>();
    for (std::uint64_t k = 0; k < numel; ++k) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(payload[4 * k + b]) << (8 * b);
      std::memcpy(&dst[k], &u, sizeof(u));
    }
    c.entries_.push_back({std::move(name), std::move(t)});
  }
  if (!r.done()) throw std::runtime_error("trailing bytes after tensor container entries");
  return c;
}

void TensorContainer::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

TensorContainer TensorContainer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open tensor container " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize(bytes);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace toap
