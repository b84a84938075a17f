#pragma once

#include <istream>
#include <string>

#include "infdbg/batch_log.hpp"
#include "infdbg/engine.hpp"

namespace infdbg {

/// Feeds a recorded JSONL log into `engine` and returns the new run id.
/// With an inline_cadence engine the evaluation sequence, and so the final
/// report, depends only on the log contents. A log without a finish record
/// gets one final evaluation on the still-running run.
inline std::string replay_log(Engine& engine, std::istream& in) {
  std::string line, run_id;
  std::size_t lineno = 0;
  bool finished = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto record = decode_record(line, lineno);
    try {
      if (auto* run = std::get_if<RunRecord>(&record)) {
        if (!run_id.empty()) throw Error(ErrorCode::invalid_argument, "second run record");
        run_id = engine.create_run(run->descriptor, run->metadata);
      } else if (auto* batch = std::get_if<SampleBatch>(&record)) {
        if (run_id.empty()) throw Error(ErrorCode::invalid_argument, "batch before run record");
        if (finished) throw Error(ErrorCode::run_finished, "batch after finish record");
        batch->run_id = run_id;
        engine.append_batch(std::move(*batch));
      } else if (auto* fin = std::get_if<FinishRecord>(&record)) {
        if (run_id.empty()) throw Error(ErrorCode::invalid_argument, "finish before run record");
        engine.finish_run(run_id, fin->outcome);
        finished = true;
      }
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(lineno) + ": " + e.what(), e.expected());
    }
  }
  if (run_id.empty()) throw Error(ErrorCode::invalid_argument, "log contains no run record");
  if (!finished) engine.analyze_now(run_id);
  return run_id;
}

}  // namespace infdbg
