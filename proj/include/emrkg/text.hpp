#pragma once

// UTF-8 <-> code point conversion and the small string helpers shared by the
// pipeline stages. All offsets in this library count code points.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "emrkg/error.hpp"

namespace emrkg {

/// Reserved code point standing in for the "[MASK]" vocabulary token. One
/// masked character occupies exactly one position.
inline constexpr char32_t kMaskChar = U'\uE000';
inline constexpr std::string_view kMaskToken = "[MASK]";

namespace utf8 {

inline std::u32string decode(std::string_view bytes) {
  std::u32string out;
  out.reserve(bytes.size());
  std::size_t i = 0;
  // Skip a leading byte-order mark.
  if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xEF &&
      static_cast<unsigned char>(bytes[1]) == 0xBB && static_cast<unsigned char>(bytes[2]) == 0xBF) {
    i = 3;
  }
  while (i < bytes.size()) {
    const auto lead = static_cast<unsigned char>(bytes[i]);
    std::size_t extra = 0;
    char32_t cp = 0;
    if (lead < 0x80) {
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      extra = 1;
      cp = lead & 0x1F;
    } else if ((lead & 0xF0) == 0xE0) {
      extra = 2;
      cp = lead & 0x0F;
    } else if ((lead & 0xF8) == 0xF0) {
      extra = 3;
      cp = lead & 0x07;
    } else {
      throw Error(Errc::InvalidEncoding, "text", "invalid UTF-8 lead byte at " + std::to_string(i));
    }
    if (extra > 0 && i + extra >= bytes.size()) {
      throw Error(Errc::InvalidEncoding, "text", "truncated UTF-8 sequence at " + std::to_string(i));
    }
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cont = static_cast<unsigned char>(bytes[i + k]);
      if ((cont & 0xC0) != 0x80) {
        throw Error(Errc::InvalidEncoding, "text",
                    "invalid UTF-8 continuation byte at " + std::to_string(i + k));
      }
      cp = (cp << 6) | (cont & 0x3F);
    }
    const bool overlong = (extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) ||
                          (extra == 3 && cp < 0x10000);
    if (overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      throw Error(Errc::InvalidEncoding, "text", "invalid code point at " + std::to_string(i));
    }
    out.push_back(cp);
    i += extra + 1;
  }
  return out;
}

inline void append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline std::string encode(std::u32string_view text) {
  std::string out;
  out.reserve(text.size() * 3);
  for (char32_t cp : text) append(out, cp);
  return out;
}

inline std::string encode(char32_t cp) {
  std::string out;
  append(out, cp);
  return out;
}

/// Like encode(), but renders the mask code point as "[MASK]".
inline std::string to_display(std::u32string_view text) {
  std::string out;
  for (char32_t cp : text) {
    if (cp == kMaskChar) {
      out += kMaskToken;
    } else {
      append(out, cp);
    }
  }
  return out;
}

}  // namespace utf8

inline bool is_space(char32_t c) {
  return c == U' ' || c == U'\t' || c == U'\r' || c == U'\n' || c == U'\u3000' || c == U'\u00A0';
}

/// Trim plus full-width to half-width unification (U+FF01..U+FF5E, U+3000).
/// This is the identity key for graph nodes and the input to TF-IDF terms.
inline std::u32string normalize_name(std::u32string_view name) {
  std::u32string out;
  out.reserve(name.size());
  for (char32_t c : name) {
    if (c >= U'\uFF01' && c <= U'\uFF5E') {
      out.push_back(c - 0xFEE0);
    } else if (c == U'\u3000') {
      out.push_back(U' ');
    } else {
      out.push_back(c);
    }
  }
  std::size_t b = 0;
  std::size_t e = out.size();
  while (b < e && is_space(out[b])) ++b;
  while (e > b && is_space(out[e - 1])) --e;
  return out.substr(b, e - b);
}

inline std::string normalize_name(std::string_view name) {
  return utf8::encode(normalize_name(utf8::decode(name)));
}

inline std::vector<std::string> split(std::string_view s, char delim) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(delim, start);
    if (pos == std::string_view::npos) {
      parts.emplace_back(s.substr(start));
      break;
    }
    parts.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return parts;
}

inline std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "io", "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "io", "cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(Errc::IoError, "io", "write failed for " + path);
}

/// Collects warnings when the caller wants them; otherwise they go to stderr.
struct Diagnostics {
  std::vector<std::string> warnings;
};

inline void warn(Diagnostics* diag, std::string message) {
  if (diag != nullptr) {
    diag->warnings.push_back(std::move(message));
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

}  // namespace emrkg
