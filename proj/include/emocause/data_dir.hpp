#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#ifndef EMOCAUSE_DEFAULT_DATA_DIR
#define EMOCAUSE_DEFAULT_DATA_DIR "data"
#endif

namespace emocause {

/// Directory holding the bundled data files (taxonomy, stopwords).
/// EMOCAUSE_DATA_DIR in the environment overrides the build-time default.
inline std::filesystem::path data_dir() {
  if (const char* env = std::getenv("EMOCAUSE_DATA_DIR"); env != nullptr && *env != '\0') {
    return std::filesystem::path(env);
  }
  return std::filesystem::path(EMOCAUSE_DEFAULT_DATA_DIR);
}

}  // namespace emocause
