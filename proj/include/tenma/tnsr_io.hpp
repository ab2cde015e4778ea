#pragma once

// TNSR container: "TNSR", u32 version, u32 D, D x u64 dims, then
// prod(dims) little-endian float64 values, first index fastest. A stack of
// n observations of shape (p_1..p_D) is stored with dims (n, p_1, ..., p_D)
// and observations contiguous.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tenma/cp_fit.hpp"
#include "tenma/errors.hpp"
#include "tenma/tensor.hpp"

namespace tenma {

inline constexpr std::array<char, 4> kTnsrMagic{'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kTnsrVersion = 1;

struct RawTensor {
  std::vector<std::size_t> dims;
  std::vector<double> values;
};

namespace detail {

template <typename T>
T to_little_endian(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void put(std::ostream& os, T v) {
  const T le = to_little_endian(v);
  os.write(reinterpret_cast<const char*>(&le), sizeof le);
}

class ByteReader {
public:
  ByteReader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {}

  void read(void* dst, std::size_t bytes, const char* what) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    const auto got = static_cast<std::size_t>(is_.gcount());
    if (got != bytes)
      throw InputError(source_ + ": truncated " + what + " at byte " + std::to_string(offset_ + got) +
                       ": expected " + std::to_string(bytes) + " bytes, found " + std::to_string(got));
    offset_ += bytes;
  }

  template <typename T>
  T get(const char* what) {
    T v;
    read(&v, sizeof v, what);
    return to_little_endian(v);
  }

  [[nodiscard]] std::uint64_t offset() const noexcept { return offset_; }
  [[nodiscard]] const std::string& source() const noexcept { return source_; }

private:
  std::istream& is_;
  std::string source_;
  std::uint64_t offset_ = 0;
};

}  // namespace detail

inline void write_tnsr(std::ostream& os, std::span<const std::size_t> dims, std::span<const double> values) {
  if (dims.empty()) throw InputError("TNSR needs at least one dimension");
  std::size_t total = 1;
  for (std::size_t d : dims) {
    if (d == 0) throw InputError("TNSR dimensions must be positive (empty tensors are not stored)");
    total *= d;
  }
  if (total != values.size())
    throw InputError("TNSR dims hold " + std::to_string(total) + " values, got " + std::to_string(values.size()));
  os.write(kTnsrMagic.data(), 4);
  detail::put<std::uint32_t>(os, kTnsrVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(dims.size()));
  for (std::size_t d : dims) detail::put<std::uint64_t>(os, d);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) detail::put<double>(os, v);
  }
  if (!os) throw InputError("failed writing TNSR data");
}

/// Reads one TNSR record from the current stream position. The stream may
/// continue after the record.
inline RawTensor read_tnsr(std::istream& is, const std::string& source = "TNSR stream") {
  detail::ByteReader in(is, source);
  std::array<char, 4> magic{};
  in.read(magic.data(), 4, "magic");
  if (magic != kTnsrMagic) throw InputError(source + ": bad magic at byte 0 (expected \"TNSR\")");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kTnsrVersion)
    throw InputError(source + ": unsupported TNSR version " + std::to_string(version) + " at byte 4");
  const auto order = in.get<std::uint32_t>("dimension count");
  if (order == 0 || order > 64)
    throw InputError(source + ": implausible dimension count " + std::to_string(order) + " at byte 8");
  RawTensor out;
  std::size_t total = 1;
  for (std::uint32_t d = 0; d < order; ++d) {
    const std::uint64_t where = in.offset();
    const auto p = in.get<std::uint64_t>("dimension");
    if (p == 0) throw InputError(source + ": dimension " + std::to_string(d + 1) + " is zero at byte " + std::to_string(where));
    if (total > std::numeric_limits<std::size_t>::max() / sizeof(double) / p)
      throw InputError(source + ": dimensions overflow at byte " + std::to_string(where));
    total *= p;
    out.dims.push_back(static_cast<std::size_t>(p));
  }
  out.values.resize(total);
  in.read(out.values.data(), total * sizeof(double), "data");
  if constexpr (std::endian::native == std::endian::big)
    for (double& v : out.values) v = detail::to_little_endian(v);
  return out;
}

inline RawTensor read_tnsr_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string());
  RawTensor t = read_tnsr(is, path.string());
  if (is.peek() != std::char_traits<char>::eof())
    throw InputError(path.string() + ": trailing bytes after TNSR data");
  return t;
}

inline void write_tnsr_file(const std::filesystem::path& path, std::span<const std::size_t> dims,
                            std::span<const double> values) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot create " + path.string());
  write_tnsr(os, dims, values);
}

inline void write_tensor(const std::filesystem::path& path, const DenseTensor& t) {
  write_tnsr_file(path, t.shape().dims(), t.values());
}

inline DenseTensor read_tensor(const std::filesystem::path& path) {
  RawTensor raw = read_tnsr_file(path);
  return DenseTensor(Shape(raw.dims), std::move(raw.values));
}

inline void write_stack(std::ostream& os, const TensorStack& stack) {
  std::vector<std::size_t> dims{stack.count()};
  dims.insert(dims.end(), stack.shape().dims().begin(), stack.shape().dims().end());
  write_tnsr(os, dims, stack.values());
}

inline void write_stack(const std::filesystem::path& path, const TensorStack& stack) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot create " + path.string());
  write_stack(os, stack);
}

inline TensorStack stack_from_raw(RawTensor raw, const std::string& source) {
  if (raw.dims.size() < 2)
    throw InputError(source + ": a covariate stack needs dims (n, p_1, ..., p_D) with D >= 1");
  const std::size_t n = raw.dims[0];
  std::vector<std::size_t> shape(raw.dims.begin() + 1, raw.dims.end());
  return TensorStack(Shape(std::move(shape)), n, std::move(raw.values));
}

inline TensorStack read_stack(const std::filesystem::path& path) {
  return stack_from_raw(read_tnsr_file(path), path.string());
}

}  // namespace tenma
