#include "secap/rten.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace secap {

namespace le {

namespace {

template <class U>
void put_uint(std::ostream& out, U v) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <class U>
U get_uint(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw IoError("unexpected end of file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes[i]) << (8 * i));
  return v;
}

template <class T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

}  // namespace

void put_u8(std::ostream& out, std::uint8_t v) { put_uint(out, v); }
void put_u16(std::ostream& out, std::uint16_t v) { put_uint(out, v); }
void put_u32(std::ostream& out, std::uint32_t v) { put_uint(out, v); }
void put_u64(std::ostream& out, std::uint64_t v) { put_uint(out, v); }
std::uint8_t get_u8(std::istream& in) { return get_uint<std::uint8_t>(in); }
std::uint16_t get_u16(std::istream& in) { return get_uint<std::uint16_t>(in); }
std::uint32_t get_u32(std::istream& in) { return get_uint<std::uint32_t>(in); }
std::uint64_t get_u64(std::istream& in) { return get_uint<std::uint64_t>(in); }

template <class T>
void put_values(std::ostream& out, const T* values, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values), static_cast<std::streamsize>(n * sizeof(T)));
  } else {
    for (std::size_t i = 0; i < n; ++i) put_uint(out, std::bit_cast<Bits<T>>(values[i]));
  }
}

template <class T>
void get_values(std::istream& in, T* values, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!in.read(reinterpret_cast<char*>(values), static_cast<std::streamsize>(n * sizeof(T))))
      throw IoError("truncated tensor payload");
  } else {
    for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<T>(get_uint<Bits<T>>(in));
  }
}

template void put_values<float>(std::ostream&, const float*, std::size_t);
template void put_values<double>(std::ostream&, const double*, std::size_t);
template void get_values<float>(std::istream&, float*, std::size_t);
template void get_values<double>(std::istream&, double*, std::size_t);

}  // namespace le

template <class T>
void write_rten(std::ostream& out, const Tensor<T>& tensor) {
  out.write("RTEN", 4);
  le::put_u8(out, 1);
  le::put_u8(out, static_cast<std::uint8_t>(dtype_of<T>()));
  le::put_u8(out, static_cast<std::uint8_t>(tensor.rank()));
  for (auto d : tensor.shape()) le::put_u64(out, d);
  le::put_values(out, tensor.data().data(), tensor.numel());
}

template <class T>
void write_rten(const std::filesystem::path& path, const Tensor<T>& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_rten(out, tensor);
  if (!out) throw IoError("failed writing " + path.string());
}

template <class T>
Tensor<T> read_rten(std::istream& in, RtenHeader* header) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "RTEN", 4) != 0) throw IoError("missing RTEN magic");
  const auto version = le::get_u8(in);
  if (version != 1) throw IoError("unsupported RTEN version " + std::to_string(version));
  const auto code = le::get_u8(in);
  if (code > 1) throw IoError("unknown RTEN dtype code " + std::to_string(code));
  const auto rank = le::get_u8(in);
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(le::get_u64(in));
  const std::size_t n = shape_numel(shape);
  std::vector<T> values(n);
  if (static_cast<DType>(code) == dtype_of<T>()) {
    le::get_values(in, values.data(), n);
  } else if (code == 0) {
    std::vector<float> raw(n);
    le::get_values(in, raw.data(), n);
    std::copy(raw.begin(), raw.end(), values.begin());
  } else {
    std::vector<double> raw(n);
    le::get_values(in, raw.data(), n);
    for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<T>(raw[i]);
  }
  if (header) *header = RtenHeader{static_cast<DType>(code), shape};
  return Tensor<T>(std::move(shape), std::move(values));
}

template <class T>
Tensor<T> read_rten(const std::filesystem::path& path, RtenHeader* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_rten<T>(in, header);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

template void write_rten<float>(std::ostream&, const Tensor<float>&);
template void write_rten<double>(std::ostream&, const Tensor<double>&);
template void write_rten<float>(const std::filesystem::path&, const Tensor<float>&);
template void write_rten<double>(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> read_rten<float>(std::istream&, RtenHeader*);
template Tensor<double> read_rten<double>(std::istream&, RtenHeader*);
template Tensor<float> read_rten<float>(const std::filesystem::path&, RtenHeader*);
template Tensor<double> read_rten<double>(const std::filesystem::path&, RtenHeader*);

}  // namespace secap
