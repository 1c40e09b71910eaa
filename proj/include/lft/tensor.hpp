#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lft/error.hpp"

namespace lft {

static_assert(std::endian::native == std::endian::little,
              "LFT1 I/O assumes a little-endian host");

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    out << (i ? "x" : "") << shape[i];
  }
  out << ']';
  return out.str();
}

// Dense row-major f64 array. A rank-0 tensor is a scalar.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw dimension_error("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor(Shape{rows, cols}, fill);
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  // Rank-2 views; rank-1 tensors are treated as a single row.
  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 1); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const {
    if (size() != 1) {
      throw contract_error("item() on a tensor with " + std::to_string(size()) + " elements");
    }
    return data_[0];
  }

  bool has_grad() const { return grad_.has_value(); }
  std::vector<double>& grad() {
    if (!grad_) {
      grad_.emplace(data_.size(), 0.0);
    }
    return *grad_;
  }
  const std::vector<double>& grad() const {
    if (!grad_) {
      throw contract_error("tensor has no gradient buffer");
    }
    return *grad_;
  }
  void zero_grad() {
    if (grad_) {
      std::fill(grad_->begin(), grad_->end(), 0.0);
    }
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

// ---------------------------------------------------------------------------
// LFT1 on-disk format: "LFT1", u8 dtype (0=f32, 1=f64), u8 rank,
// rank x u64 dims, raw little-endian data.

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

inline void write_tensor(std::ostream& out, const Tensor& t, Dtype dtype = Dtype::f64) {
  if (t.rank() > 255) {
    throw dimension_error("LFT1 supports rank <= 255");
  }
  out.write("LFT1", 4);
  const auto code = static_cast<std::uint8_t>(dtype);
  const auto rank = static_cast<std::uint8_t>(t.rank());
  out.put(static_cast<char>(code));
  out.put(static_cast<char>(rank));
  for (std::size_t d : t.shape()) {
    const auto dim = static_cast<std::uint64_t>(d);
    out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
  }
  if (dtype == Dtype::f64) {
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  } else {
    std::vector<float> narrow(t.data().begin(), t.data().end());
    out.write(reinterpret_cast<const char*>(narrow.data()),
              static_cast<std::streamsize>(narrow.size() * sizeof(float)));
  }
  if (!out) {
    throw io_error("failed writing LFT1 tensor");
  }
}

inline Tensor read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "LFT1", 4) != 0) {
    throw io_error("bad LFT1 magic");
  }
  const int code = in.get();
  const int rank = in.get();
  if (!in || (code != 0 && code != 1)) {
    throw io_error("bad LFT1 dtype code");
  }
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& d : shape) {
    std::uint64_t dim = 0;
    in.read(reinterpret_cast<char*>(&dim), sizeof dim);
    d = static_cast<std::size_t>(dim);
  }
  const std::size_t n = shape_size(shape);
  std::vector<double> data(n);
  if (code == static_cast<int>(Dtype::f64)) {
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)));
  } else {
    std::vector<float> narrow(n);
    in.read(reinterpret_cast<char*>(narrow.data()), static_cast<std::streamsize>(n * sizeof(float)));
    std::copy(narrow.begin(), narrow.end(), data.begin());
  }
  if (!in) {
    throw io_error("truncated LFT1 tensor");
  }
  return Tensor(std::move(shape), std::move(data));
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t, Dtype dtype = Dtype::f64) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw io_error("cannot open " + path.string() + " for writing");
  }
  write_tensor(out, t, dtype);
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw io_error("cannot open " + path.string());
  }
  return read_tensor(in);
}

}  // namespace lft
