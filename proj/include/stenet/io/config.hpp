#pragma once

#include <charconv>
#include <filesystem>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "stenet/io/atomic_file.hpp"
#include "stenet/network.hpp"

// Line-oriented `key = value` model configuration; '#' starts a comment.
// List values are comma separated, e.g. `channels = 32, 64, 128, 256`.

namespace stenet::io {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_uint(std::string_view s, const std::string& key, std::size_t line) {
  s = trim(s);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("line " + std::to_string(line) + ": '" + key + "' expects a non-negative integer, got '" +
                      std::string(s) + "'");
  }
  return v;
}

inline std::array<std::size_t, network::kStages> parse_stage_list(std::string_view s, const std::string& key,
                                                                  std::size_t line) {
  std::array<std::size_t, network::kStages> out{};
  std::size_t n = 0;
  while (true) {
    const auto comma = s.find(',');
    if (n == network::kStages) {
      throw ConfigError("line " + std::to_string(line) + ": '" + key + "' needs exactly 4 values");
    }
    out[n++] = parse_uint<std::size_t>(s.substr(0, comma), key, line);
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  if (n != network::kStages) {
    throw ConfigError("line " + std::to_string(line) + ": '" + key + "' needs exactly 4 values");
  }
  return out;
}

inline std::string join(const std::array<std::size_t, network::kStages>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s;
}

}  // namespace detail

/// Keys absent from the text keep their defaults. Unknown or repeated keys
/// and values the model rejects raise ConfigError.
inline network::ModelConfig parse_config(const std::string& text) {
  network::ModelConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key(detail::trim(line.substr(0, eq)));
    const auto value = line.substr(eq + 1);
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");

    if (key == "input_size") cfg.input_size = detail::parse_uint<std::size_t>(value, key, line_no);
    else if (key == "channels") cfg.channels = detail::parse_stage_list(value, key, line_no);
    else if (key == "cells") cfg.cells = detail::parse_stage_list(value, key, line_no);
    else if (key == "mask_radius") cfg.mask_radius = detail::parse_uint<std::size_t>(value, key, line_no);
    else if (key == "iters") cfg.iters = detail::parse_uint<std::size_t>(value, key, line_no);
    else if (key == "salrm_k") cfg.salrm_k = detail::parse_uint<std::size_t>(value, key, line_no);
    else if (key == "seed") cfg.seed = detail::parse_uint<std::uint64_t>(value, key, line_no);
    else throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline std::string serialize_config(const network::ModelConfig& cfg) {
  std::ostringstream out;
  out << "input_size = " << cfg.input_size << "\n"
      << "channels = " << detail::join(cfg.channels) << "\n"
      << "cells = " << detail::join(cfg.cells) << "\n"
      << "mask_radius = " << cfg.mask_radius << "\n"
      << "iters = " << cfg.iters << "\n"
      << "salrm_k = " << cfg.salrm_k << "\n"
      << "seed = " << cfg.seed << "\n";
  return out.str();
}

inline network::ModelConfig load_config(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_bytes(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

}  // namespace stenet::io
