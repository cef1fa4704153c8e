#pragma once

// Append-only JSONL records and the on-disk layout of experiment outputs.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbs/core/errors.hpp"

namespace dbs::harness {

namespace fs = std::filesystem;

inline constexpr const char* kOutputRootEnv = "DBS_OUTPUT_ROOT";

/// Explicit setting first, then $DBS_OUTPUT_ROOT, then "out".
inline fs::path output_root(const std::string& configured = {}) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return "out";
}

inline fs::path run_dir(const fs::path& root, const std::string& benchmark, const std::string& method) {
  return root / "runs" / benchmark / method;
}

inline fs::path run_path(const fs::path& root, const std::string& benchmark, const std::string& method,
                         std::uint64_t seed) {
  return run_dir(root, benchmark, method) / (std::to_string(seed) + ".jsonl");
}

/// One record file. Opening an existing file keeps its longest prefix of
/// complete, parseable lines and cuts off anything after it, so a run
/// killed mid-write can be continued.
class JsonlLog {
 public:
  explicit JsonlLog(fs::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    if (fs::exists(path_)) recover();
    out_.open(path_, std::ios::binary | std::ios::app);
    if (!out_) throw ConfigError("cannot open record for writing: " + path_.string());
  }

  const fs::path& path() const noexcept { return path_; }
  const std::vector<nlohmann::json>& existing() const noexcept { return lines_; }

  void append(const nlohmann::json& line) {
    out_ << line.dump() << '\n';
    out_.flush();
    if (!out_) throw ConfigError("write failed: " + path_.string());
  }

 private:
  void recover() {
    std::ifstream in(path_, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    std::size_t keep = 0;
    while (keep < text.size()) {
      const auto nl = text.find('\n', keep);
      if (nl == std::string::npos) break;
      auto j = nlohmann::json::parse(text.begin() + static_cast<std::ptrdiff_t>(keep),
                                     text.begin() + static_cast<std::ptrdiff_t>(nl), nullptr, false);
      if (j.is_discarded()) break;
      lines_.push_back(std::move(j));
      keep = nl + 1;
    }
    in.close();
    if (keep != text.size()) fs::resize_file(path_, keep);
  }

  fs::path path_;
  std::vector<nlohmann::json> lines_;
  std::ofstream out_;
};

inline std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) break;
    out.push_back(std::move(j));
  }
  return out;
}

/// Shortest round-trip text for a double; NaN becomes "nan".
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  return nlohmann::json(v).dump();
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

}  // namespace dbs::harness
