// Copyright 2026 The playcont Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Little-endian framing shared by the model files: 4-byte magic, u32
// header length, key=value header text, f64 payload, trailing CRC-32.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <span>
#include <string>
#include <string_view>

#include "playcont/common.hpp"

namespace playcont {

using HeaderFields = std::map<std::string, std::string>;

class ByteWriter {
 public:
  void put_bytes(std::string_view s) { buf_.append(s); }

  void put_u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  void put_f64(double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }

  void put_f64s(std::span<const double> values) {
    for (double v : values) put_f64(v);
  }

  void put_header(const HeaderFields& fields) {
    std::string text;
    for (const auto& [k, v] : fields) text += k + "=" + v + "\n";
    put_u32(static_cast<std::uint32_t>(text.size()));
    put_bytes(text);
  }

  // Appends the CRC-32 of everything written so far.
  std::string finish() {
    put_u32(crc32(buf_));
    return std::move(buf_);
  }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::size_t remaining() const { return data_.size() - pos_; }

  std::string_view get_bytes(std::size_t n) {
    if (remaining() < n) throw FormatError("truncated file");
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t get_u32() {
    auto b = get_bytes(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }

  double get_f64() {
    auto b = get_bytes(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return std::bit_cast<double>(bits);
  }

  void get_f64s(std::span<double> out) {
    for (double& v : out) v = get_f64();
  }

  HeaderFields get_header() {
    std::uint32_t len = get_u32();
    std::string_view text = get_bytes(len);
    HeaderFields fields;
    std::size_t start = 0;
    while (start < text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string_view::npos) throw FormatError("unterminated header line");
      auto line = text.substr(start, end - start);
      auto eq = line.find('=');
      if (eq == std::string_view::npos) throw FormatError("bad header line '" + std::string(line) + "'");
      fields.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
      start = end + 1;
    }
    return fields;
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

struct Frame {
  HeaderFields header;
  std::string_view payload;  // bytes between header and checksum
  std::string_view body;     // everything the checksum covers
  std::uint32_t stored_crc = 0;
};

// Splits a framed file. Checksum verification is left to the caller so that
// size problems can be reported as truncation first.
inline Frame read_frame(std::string_view data, std::string_view magic) {
  if (data.size() < magic.size() || data.substr(0, magic.size()) != magic) {
    throw VersionError("bad magic: expected '" + std::string(magic) + "'");
  }
  ByteReader reader(data.substr(magic.size()));
  Frame frame;
  frame.header = reader.get_header();
  if (reader.remaining() < 4) throw FormatError("truncated file");
  std::size_t payload_start = data.size() - reader.remaining();
  frame.payload = data.substr(payload_start, data.size() - 4 - payload_start);
  frame.body = data.substr(0, data.size() - 4);
  ByteReader tail(data.substr(data.size() - 4));
  frame.stored_crc = tail.get_u32();
  return frame;
}

inline void verify_checksum(const Frame& frame) {
  if (crc32(frame.body) != frame.stored_crc) throw ChecksumError("checksum mismatch");
}

inline const std::string& header_value(const HeaderFields& h, const std::string& key) {
  auto it = h.find(key);
  if (it == h.end()) throw FormatError("header lacks '" + key + "'");
  return it->second;
}

inline std::size_t header_size(const HeaderFields& h, const std::string& key) {
  const auto& v = header_value(h, key);
  std::size_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw FormatError("header field '" + key + "' is not an integer");
  }
  return out;
}

inline double header_double(const HeaderFields& h, const std::string& key) {
  try {
    return parse_double(header_value(h, key));
  } catch (const FormatError&) {
    throw;
  } catch (const InputError&) {
    throw FormatError("header field '" + key + "' is not a number");
  }
}

}  // namespace playcont
