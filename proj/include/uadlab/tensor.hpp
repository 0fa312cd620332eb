#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace uadlab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major array of doubles. A rank-0 tensor holds one scalar.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double item() const {
    if (data_.size() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    }
    return data_[0];
  }

  // Row view of a rank-2 tensor.
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * shape_[1], shape_[1]);
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(data_).subspan(r * shape_[1], shape_[1]);
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  bool operator==(const Tensor& other) const = default;

 private:
  static std::size_t checked_size(const Shape& shape) {
    for (std::size_t e : shape) {
      if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
    }
    return shape_size(shape);
  }

  Shape shape_;
  std::vector<double> data_;
};

// Stacks equally shaped tensors into rows of a [n, size] matrix.
inline Tensor stack_rows(std::span<const Tensor* const> items) {
  if (items.empty()) throw ShapeError("stack_rows of zero tensors");
  const std::size_t width = items.front()->size();
  std::vector<double> out;
  out.reserve(items.size() * width);
  for (const Tensor* t : items) {
    if (t->size() != width) {
      throw ShapeError("stack_rows: mismatched sizes " + shape_str(items.front()->shape()) +
                       " and " + shape_str(t->shape()));
    }
    out.insert(out.end(), t->data().begin(), t->data().end());
  }
  return Tensor::matrix(items.size(), width, std::move(out));
}

// ---------------------------------------------------------------------------
// TNSR binary format:
//   "TNSR" | u8 version | u8 rank | rank x u64 LE extents | size x f64 LE data
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kTensorMagic{'T', 'N', 'S', 'R'};
inline constexpr std::uint8_t kTensorFormatVersion = 1;

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint64_t get_u64_le(std::string_view in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace detail

inline std::string encode_tensor(const Tensor& t) {
  if (t.rank() > 255) throw ShapeError("TNSR supports rank <= 255");
  std::string out(kTensorMagic.begin(), kTensorMagic.end());
  out.push_back(static_cast<char>(kTensorFormatVersion));
  out.push_back(static_cast<char>(t.rank()));
  for (std::size_t e : t.shape()) detail::put_u64_le(out, e);
  for (double v : t.data()) detail::put_u64_le(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline Tensor decode_tensor(std::string_view bytes) {
  constexpr std::size_t header = 6;
  if (bytes.size() < header || !std::equal(kTensorMagic.begin(), kTensorMagic.end(), bytes.begin())) {
    throw DataError("not a TNSR stream (bad magic)");
  }
  const auto version = static_cast<std::uint8_t>(bytes[4]);
  if (version != kTensorFormatVersion) {
    throw DataError("unsupported TNSR version " + std::to_string(version));
  }
  const std::size_t rank = static_cast<unsigned char>(bytes[5]);
  if (bytes.size() < header + 8 * rank) throw DataError("truncated TNSR header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = detail::get_u64_le(bytes, header + 8 * i);
    if (shape[i] == 0) throw DataError("TNSR extent is zero");
  }
  const std::size_t n = shape_size(shape);
  const std::size_t data_pos = header + 8 * rank;
  if (bytes.size() != data_pos + 8 * n) {
    throw DataError("TNSR payload length mismatch for shape " + shape_str(shape));
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = std::bit_cast<double>(detail::get_u64_le(bytes, data_pos + 8 * i));
  }
  return Tensor(std::move(shape), std::move(data));
}

inline void write_tensor_file(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  const std::string bytes = encode_tensor(t);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path);
}

inline Tensor read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace uadlab
