#pragma once

#include <chrono>
#include <string>
#include <vector>

namespace sid {

struct ProcessResult {
  int exit_code = -1;
  std::string out;
  std::string err;
  bool timed_out = false;
};

/// Run argv[0] (resolved via PATH) with `input` on stdin and capture both
/// output streams. A zero timeout means no limit.
ProcessResult run_process(const std::vector<std::string>& argv, const std::string& input = {},
                          std::chrono::seconds timeout = std::chrono::seconds{0});

}  // namespace sid
