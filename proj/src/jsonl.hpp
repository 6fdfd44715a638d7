#pragma once

// Line-delimited JSON helpers shared by the corpus and CTR data files.

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmrep/errors.hpp"

namespace mmrep::jsonl {

using ordered_json = nlohmann::ordered_json;

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCategory::kIo, "cannot write " + path);
  for (const auto& l : lines) out << l << '\n';
  if (!out) fail(ErrorCategory::kIo, "write failed: " + path);
}

// Parse errors become kIntegrity with the offending line number.
template <typename Fn>
void read_lines(const std::string& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::kIo, "cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      fn(ordered_json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCategory::kIntegrity, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace mmrep::jsonl
