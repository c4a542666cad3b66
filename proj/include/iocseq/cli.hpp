#pragma once

#include <string>
#include <vector>

namespace iocseq::cli {

// Exit codes: 0 success, 1 usage error, 2 runtime error. All randomness
// derives from --seed (default 0, env IOCSEQ_SEED as fallback); repeated
// invocations with equal inputs reproduce outputs byte for byte.
int dispatch(const std::vector<std::string>& args);
int dispatch(int argc, char** argv);

inline constexpr const char* kVersion = "0.1.0";

}  // namespace iocseq::cli
