#pragma once

// Append-only JSONL record of one run: a "run" header line, one line per
// SampleBatch in ingest order, and a closing "finish" line.

#include <filesystem>
#include <fstream>
#include <istream>
#include <mutex>
#include <optional>
#include <string>
#include <variant>

#include "infdbg/wire.hpp"

namespace infdbg {

struct RunRecord {
  ModelDescriptor descriptor;
  RunMetadata metadata;
};

struct FinishRecord {
  RunStatus outcome = RunStatus::finished;
};

using LogRecord = std::variant<RunRecord, SampleBatch, FinishRecord>;

inline std::string encode_record(const RunRecord& r) {
  auto j = wire::run_create_payload(r.descriptor, r.metadata);
  j["record"] = "run";
  j["run_id"] = r.metadata.run_id;
  return j.dump();
}

inline std::string encode_record(const SampleBatch& b) {
  auto j = wire::to_json(b);
  j["record"] = "batch";
  return j.dump();
}

inline std::string encode_record(const std::string& run_id, const FinishRecord& f) {
  return wire::json{{"record", "finish"}, {"run_id", run_id}, {"outcome", to_string(f.outcome)}}.dump();
}

/// Parses one log line; errors carry the 1-based line number.
inline LogRecord decode_record(const std::string& line, std::size_t lineno) {
  const std::string where = "line " + std::to_string(lineno);
  try {
    auto j = wire::parse_body(line);
    const auto kind = wire::detail::as_string(wire::detail::field(j, "record", "$"), "$.record");
    if (kind == "run")
      return RunRecord{wire::descriptor_from_json(wire::detail::field(j, "descriptor", "$"), "$.descriptor"),
                       wire::metadata_from_json(wire::detail::field(j, "metadata", "$"), "$.metadata")};
    if (kind == "batch") return wire::batch_from_json(j, "$");
    if (kind == "finish") {
      auto o = wire::detail::as_string(wire::detail::field(j, "outcome", "$"), "$.outcome");
      if (o == "finished") return FinishRecord{RunStatus::finished};
      if (o == "aborted") return FinishRecord{RunStatus::aborted};
      wire::detail::fail("$.outcome", "expected finished or aborted");
    }
    wire::detail::fail("$.record", "unknown record type \"" + kind + "\"");
  } catch (const Error& e) {
    throw Error(e.code(), where + ": " + e.what());
  }
}

/// Thread-safe JSONL writer for one run.
class BatchLogWriter {
 public:
  explicit BatchLogWriter(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw Error(ErrorCode::invalid_argument, "cannot open spill file " + path.string());
  }

  void write(const std::string& line) {
    std::lock_guard lock(mutex_);
    out_ << line << '\n';
    out_.flush();
  }

 private:
  std::mutex mutex_;
  std::ofstream out_;
};

}  // namespace infdbg
