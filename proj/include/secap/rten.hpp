#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "secap/tensor.hpp"

// Raw tensor files: "RTEN", u8 version (1), u8 dtype (0 = f32, 1 = f64),
// u8 rank, rank x u64 dims, then the payload. All little-endian.
namespace secap {

struct RtenHeader {
  DType dtype = DType::F32;
  Shape shape;
};

template <class T>
void write_rten(std::ostream& out, const Tensor<T>& tensor);
template <class T>
void write_rten(const std::filesystem::path& path, const Tensor<T>& tensor);

// Reads either dtype and converts to T.
template <class T>
Tensor<T> read_rten(std::istream& in, RtenHeader* header = nullptr);
template <class T>
Tensor<T> read_rten(const std::filesystem::path& path, RtenHeader* header = nullptr);

// Little-endian primitives shared with the checkpoint format.
namespace le {
void put_u8(std::ostream& out, std::uint8_t v);
void put_u16(std::ostream& out, std::uint16_t v);
void put_u32(std::ostream& out, std::uint32_t v);
void put_u64(std::ostream& out, std::uint64_t v);
std::uint8_t get_u8(std::istream& in);
std::uint16_t get_u16(std::istream& in);
std::uint32_t get_u32(std::istream& in);
std::uint64_t get_u64(std::istream& in);
template <class T>
void put_values(std::ostream& out, const T* values, std::size_t n);
template <class T>
void get_values(std::istream& in, T* values, std::size_t n);
}  // namespace le

}  // namespace secap
