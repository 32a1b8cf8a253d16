// Wire protocol: 4-byte big-endian payload length, then a payload of
//   1 byte  message kind (0 = global, 1 = client)
//   u32 LE  round
//   u32 LE  sender id (0xFFFFFFFF for the server)
//   fields: 1-byte tag, u32 LE element count, count IEEE-754 LE doubles.
// decode(encode(m)) is bit-exact.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlap/strategies.hpp"

namespace fedlap {

using Bytes = std::vector<std::uint8_t>;

constexpr std::uint32_t kServerId = 0xFFFFFFFFu;

enum FieldTag : std::uint8_t {
  kTagWg = 0x01,
  kTagSg = 0x02,
  kTagSoftIds = 0x03,
  kTagSoftRows = 0x04,
  kTagV = 0x11,
  kTagBigV = 0x12,
  kTagNk = 0x13,
  kTagW = 0x14,
};

struct WireMsg {
  std::uint8_t kind = 0;  // 0 global, 1 client
  std::uint32_t round = 0;
  GlobalMsg global;
  ClientMsg client;

  bool operator==(const WireMsg&) const = default;
};

namespace detail {

inline void put_u32_le(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
}

inline void put_doubles(Bytes& out, const Vector& v) {
  for (double x : v) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
    for (int s = 0; s < 64; s += 8) out.push_back(static_cast<std::uint8_t>((bits >> s) & 0xFF));
  }
}

inline void put_field(Bytes& out, FieldTag tag, const Vector& v) {
  out.push_back(tag);
  put_u32_le(out, static_cast<std::uint32_t>(v.size()));
  put_doubles(out, v);
}

inline void put_soft_labels(Bytes& out, const std::map<std::uint32_t, Vector>& labels) {
  if (labels.empty()) return;
  Vector ids, rows;
  for (const auto& [id, row] : labels) {
    ids.push_back(static_cast<double>(id));
    rows.insert(rows.end(), row.begin(), row.end());
  }
  put_field(out, kTagSoftIds, ids);
  put_field(out, kTagSoftRows, rows);
}

struct Reader {
  const std::uint8_t* p;
  const std::uint8_t* end;

  std::uint8_t u8() {
    if (p >= end) throw std::runtime_error("wire: truncated message");
    return *p++;
  }
  std::uint32_t u32_le() {
    if (end - p < 4) throw std::runtime_error("wire: truncated message");
    std::uint32_t v = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
                      (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
    p += 4;
    return v;
  }
  Vector doubles(std::uint32_t count) {
    if (static_cast<std::size_t>(end - p) < 8ull * count)
      throw std::runtime_error("wire: truncated field");
    Vector out(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      std::uint64_t bits = 0;
      for (int s = 0; s < 64; s += 8) bits |= std::uint64_t(*p++) << s;
      out[i] = std::bit_cast<double>(bits);
    }
    return out;
  }
};

}  // namespace detail

inline Bytes encode_msg(const GlobalMsg& msg) {
  Bytes out;
  out.push_back(0);
  detail::put_u32_le(out, msg.round);
  detail::put_u32_le(out, kServerId);
  detail::put_field(out, kTagWg, msg.w_g);
  if (msg.s_g) detail::put_field(out, kTagSg, *msg.s_g);
  detail::put_soft_labels(out, msg.global_soft_labels);
  return out;
}

inline Bytes encode_msg(const ClientMsg& msg, std::uint32_t round = 0) {
  Bytes out;
  out.push_back(1);
  detail::put_u32_le(out, round);
  detail::put_u32_le(out, msg.client_id);
  if (!msg.v.empty()) detail::put_field(out, kTagV, msg.v);
  if (msg.big_v) detail::put_field(out, kTagBigV, *msg.big_v);
  detail::put_soft_labels(out, msg.client_soft_labels);
  if (msg.w) detail::put_field(out, kTagW, *msg.w);
  if (msg.n_k != 0) detail::put_field(out, kTagNk, {static_cast<double>(msg.n_k)});
  return out;
}

inline WireMsg decode_msg(const Bytes& payload) {
  detail::Reader r{payload.data(), payload.data() + payload.size()};
  WireMsg out;
  out.kind = r.u8();
  if (out.kind > 1) throw std::runtime_error("wire: unknown message kind");
  out.round = r.u32_le();
  const std::uint32_t sender = r.u32_le();
  if (out.kind == 0)
    out.global.round = out.round;
  else
    out.client.client_id = sender;

  Vector soft_ids, soft_rows;
  bool have_ids = false, have_rows = false;
  while (r.p < r.end) {
    const std::uint8_t tag = r.u8();
    const std::uint32_t count = r.u32_le();
    Vector data = r.doubles(count);
    switch (tag) {
      case kTagWg: out.global.w_g = std::move(data); break;
      case kTagSg: out.global.s_g = std::move(data); break;
      case kTagV: out.client.v = std::move(data); break;
      case kTagBigV: out.client.big_v = std::move(data); break;
      case kTagW: out.client.w = std::move(data); break;
      case kTagNk:
        if (count != 1) throw std::runtime_error("wire: malformed n_k field");
        out.client.n_k = static_cast<std::uint64_t>(data[0]);
        break;
      case kTagSoftIds:
        soft_ids = std::move(data);
        have_ids = true;
        break;
      case kTagSoftRows:
        soft_rows = std::move(data);
        have_rows = true;
        break;
      default:
        throw std::runtime_error("wire: unknown field tag " + std::to_string(tag));
    }
  }
  if (have_ids != have_rows) throw std::runtime_error("wire: soft label fields incomplete");
  if (have_ids) {
    if (soft_ids.empty() || soft_rows.size() % soft_ids.size() != 0)
      throw std::runtime_error("wire: soft label shape mismatch");
    const std::size_t c = soft_rows.size() / soft_ids.size();
    auto& dst = out.kind == 0 ? out.global.global_soft_labels : out.client.client_soft_labels;
    for (std::size_t i = 0; i < soft_ids.size(); ++i)
      dst[static_cast<std::uint32_t>(soft_ids[i])] =
          Vector(soft_rows.begin() + i * c, soft_rows.begin() + (i + 1) * c);
  }
  return out;
}

// 4-byte big-endian length prefix.
inline Bytes frame(const Bytes& payload) {
  if (payload.size() > 0x7FFFFFFFull) throw std::runtime_error("wire: payload length overflow");
  Bytes out;
  const std::uint32_t n = static_cast<std::uint32_t>(payload.size());
  out.push_back(static_cast<std::uint8_t>((n >> 24) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((n >> 16) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((n >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>(n & 0xFF));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

}  // namespace fedlap
