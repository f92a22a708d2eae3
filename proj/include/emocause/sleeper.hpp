#pragma once

#include <chrono>
#include <functional>
#include <thread>

namespace emocause {

/// Injected wherever the library waits, so tests can record delays.
using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline Sleeper real_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

}  // namespace emocause
