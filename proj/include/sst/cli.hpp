#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace sst::cli {

/// Exit codes: 0 success, 1 invalid config or failed stage, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

std::string usage();

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// kernel after every batch. Call once at process start.
void keep_heap_resident();

}  // namespace sst::cli
