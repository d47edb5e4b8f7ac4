#include "explab/binary_io.hpp"

#include <array>
#include <bit>
#include <stdexcept>
#include <string>

namespace explab::io {
namespace {

template <std::size_t N>
void put(std::ostream& out, std::uint64_t v) {
  std::array<char, N> buf{};
  for (std::size_t i = 0; i < N; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
  out.write(buf.data(), N);
}

template <std::size_t N>
std::uint64_t get(std::istream& in) {
  std::array<unsigned char, N> buf{};
  in.read(reinterpret_cast<char*>(buf.data()), N);
  if (!in) throw std::runtime_error("snapshot truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < N; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { put<4>(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { put<8>(out, v); }
void write_f64(std::ostream& out, double v) { put<8>(out, std::bit_cast<std::uint64_t>(v)); }
void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

std::uint32_t read_u32(std::istream& in) { return static_cast<std::uint32_t>(get<4>(in)); }
std::uint64_t read_u64(std::istream& in) { return get<8>(in); }
double read_f64(std::istream& in) { return std::bit_cast<double>(get<8>(in)); }

void expect_magic(std::istream& in, std::string_view magic) {
  std::string buf(magic.size(), '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!in || buf != magic) {
    throw std::runtime_error("bad snapshot header, expected " + std::string(magic));
  }
}

}  // namespace explab::io
