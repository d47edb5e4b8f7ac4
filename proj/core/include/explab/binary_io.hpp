#pragma once

// Little-endian primitives shared by the snapshot formats.

#include <cstdint>
#include <istream>
#include <ostream>
#include <string_view>

namespace explab::io {

void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
void write_magic(std::ostream& out, std::string_view magic);

std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);
/// Throws std::runtime_error when the next bytes do not match.
void expect_magic(std::istream& in, std::string_view magic);

}  // namespace explab::io
