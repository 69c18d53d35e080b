#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace entcell {

// Error taxonomy mirrored by CLI exit codes.
struct config_error : std::runtime_error { using std::runtime_error::runtime_error; };
struct data_error   : std::runtime_error { using std::runtime_error::runtime_error; };
struct numeric_error : std::runtime_error { using std::runtime_error::runtime_error; };

inline uint64_t fnv1a64(const void * data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto * p = static_cast<const uint8_t *>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string & s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Shortest decimal form that round-trips a double. Used everywhere a float
// lands in a CSV or JSON report so replays are byte-identical.
inline std::string fmt_g17(double v) {
    char buf[40];
    snprintf(buf, sizeof(buf), "%.17g", v);
    double back = 0.0;
    sscanf(buf, "%lg", &back);
    if (back == v) {
        for (int prec = 1; prec <= 16; ++prec) {
            char shorter[40];
            snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
            sscanf(shorter, "%lg", &back);
            if (back == v) return shorter;
        }
    }
    return buf;
}

// Deterministic parallel map: results land in index order no matter the
// thread count. n_threads <= 1 runs inline.
inline void parallel_for(size_t n, int n_threads, const std::function<void(size_t)> & fn) {
    if (n_threads <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    size_t workers = std::min<size_t>(static_cast<size_t>(n_threads), n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto & t : pool) t.join();
}

} // namespace entcell
