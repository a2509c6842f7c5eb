/*
   Copyright 2026 The topolabel Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace topolabel {

/// Input or configuration problem the caller can fix (CLI exit code 1).
class ValidationError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Failure while computing (CLI exit code 2).
class RuntimeError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

inline constexpr float kNoData = std::numeric_limits<float>::quiet_NaN();

inline bool is_no_data(float v) { return std::isnan(v); }

static_assert(std::endian::native == std::endian::little, "topolabel file formats assume a little-endian host");

// FNV-1a, used for config hashes and seed derivation.
inline uint64_t fnv1a64(std::string_view s, uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Deterministic child seed: splitmix64(parent ^ fnv1a64(tag)).
inline uint64_t derive_seed(uint64_t parent, std::string_view tag) { return splitmix64(parent ^ fnv1a64(tag)); }

inline uint64_t derive_seed(uint64_t parent, std::string_view tag, uint64_t index) {
    return splitmix64(derive_seed(parent, tag) + index);
}

inline std::string hex64(uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

/// Runs fn(i) for i in [0, n) across hardware threads. Each index must write
/// only its own outputs, so results never depend on the schedule.
inline void parallel_for(size_t n, const std::function<void(size_t)>& fn, unsigned max_threads = 0) {
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    unsigned threads = max_threads ? std::min(max_threads, hw) : hw;
    threads = static_cast<unsigned>(std::min<size_t>(threads, n));
    if (threads <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (size_t i = t; i < n; i += threads) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

/// Lower median of the first n values (partially reorders them).
template <typename T>
T lower_median(T* values, size_t n) {
    size_t k = (n - 1) / 2;
    std::nth_element(values, values + k, values + n);
    return values[k];
}

}  // namespace topolabel
