#pragma once

// Little-endian scalar streams and the "key = value" text headers shared by the
// checkpoint and volume containers.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dlmbir/errors.hpp"

namespace dlmbir::detail {

inline constexpr const char* kEndHeader = "end_header";

template <typename Stored, typename T>
void write_le(std::ostream& os, const T* values, std::size_t count) {
  static_assert(sizeof(Stored) == 4 || sizeof(Stored) == 8);
  std::vector<char> buf(count * sizeof(Stored));
  for (std::size_t i = 0; i < count; ++i) {
    const Stored v = static_cast<Stored>(values[i]);
    char bytes[sizeof(Stored)];
    std::memcpy(bytes, &v, sizeof(Stored));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(Stored));
    std::memcpy(buf.data() + i * sizeof(Stored), bytes, sizeof(Stored));
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

/// Reads exactly `count` scalars; returns false (and leaves `out` untouched
/// past what was read) when the stream ends early.
template <typename Stored, typename T>
bool read_le(std::istream& is, T* out, std::size_t count) {
  std::vector<char> buf(count * sizeof(Stored));
  is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size()) return false;
  for (std::size_t i = 0; i < count; ++i) {
    char bytes[sizeof(Stored)];
    std::memcpy(bytes, buf.data() + i * sizeof(Stored), sizeof(Stored));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(Stored));
    Stored v;
    std::memcpy(&v, bytes, sizeof(Stored));
    out[i] = static_cast<T>(v);
  }
  return true;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

using HeaderEntries = std::vector<std::pair<std::string, std::string>>;

/// Parses "key = value" lines after a magic first line up to kEndHeader.
inline HeaderEntries read_text_header(std::istream& is, const std::string& magic, const std::string& what) {
  std::string line;
  if (!std::getline(is, line) || trim(line) != magic)
    throw FormatError(FormatError::Kind::corrupt_header, what + ": missing '" + magic + "' signature");
  HeaderEntries entries;
  while (std::getline(is, line)) {
    line = trim(line);
    if (line == kEndHeader) return entries;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError(FormatError::Kind::corrupt_header, what + ": malformed header line '" + line + "'");
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  throw FormatError(FormatError::Kind::corrupt_header, what + ": header is not terminated by '" + kEndHeader + "'");
}

}  // namespace dlmbir::detail
