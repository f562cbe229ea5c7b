#pragma once

#include <chrono>
#include <cstdint>
#include <functional>

namespace threadloom {

// Milliseconds since the epoch; injectable so tests control time.
using Clock = std::function<std::int64_t()>;

inline std::int64_t system_clock_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

// Always 0, so stored timestamps become a plain 1, 2, 3... sequence.
inline std::int64_t logical_clock() { return 0; }

}  // namespace threadloom
