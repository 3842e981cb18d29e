// SPDX-License-Identifier: Apache-2.0
//
// Shared plumbing: error taxonomy (mapped to CLI exit codes), a portable
// deterministic RNG, UTF-8 helpers for German text, number formatting and
// small file utilities.

#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#if defined(__SSE2__)
#include <immintrin.h>
#endif

namespace edscore {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts unsupported");

// Flush subnormals to zero: softmax tails otherwise produce denormal floats
// whose microcoded arithmetic dominates training time on x86.
inline void enable_flush_to_zero() {
#if defined(__SSE2__)
    _mm_setcsr(_mm_getcsr() | 0x8040);  // FTZ | DAZ
#endif
}

// ---------------------------------------------------------------------------
// errors: exit code 1 = usage, 2 = data, 3 = numeric
// ---------------------------------------------------------------------------

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// deterministic RNG
//
// splitmix64 core with hand-rolled distributions. std::mt19937 is pinned by
// the standard but the std distributions are not; every sampled value here
// must be bit-identical across platforms and library versions.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Mixes stream identifiers into a seed so that independent substreams
// (per record, per step, per purpose) never share state.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
    std::uint64_t s = seed;
    splitmix64(s);
    s ^= 0x632be59bd9b4e019ull + a;
    splitmix64(s);
    s ^= 0x9e6c63d0876a9a63ull + b;
    splitmix64(s);
    s ^= 0xc2b2ae3d27d4eb4full + c;
    splitmix64(s);
    return s;
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // decorrelate trivially related seeds
        splitmix64(state_);
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [lo, hi] inclusive
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

    bool bernoulli(double p) { return next_unit() < p; }

    // Box-Muller, one value per call (spare discarded to keep replay simple)
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = next_unit();
        double u2 = next_unit();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586 * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

  private:
    std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// UTF-8 helpers (enough Unicode for German: ASCII + Latin-1 letters)
// ---------------------------------------------------------------------------

inline std::vector<char32_t> utf8_decode(std::string_view s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size();) {
        const unsigned char b = static_cast<unsigned char>(s[i]);
        char32_t cp = 0;
        std::size_t len = 1;
        if (b < 0x80) {
            cp = b;
        } else if ((b >> 5) == 0x6 && i + 1 < s.size()) {
            cp = static_cast<char32_t>(b & 0x1f) << 6 |
                 (static_cast<unsigned char>(s[i + 1]) & 0x3f);
            len = 2;
        } else if ((b >> 4) == 0xe && i + 2 < s.size()) {
            cp = static_cast<char32_t>(b & 0x0f) << 12 |
                 (static_cast<char32_t>(static_cast<unsigned char>(s[i + 1]) & 0x3f) << 6) |
                 (static_cast<unsigned char>(s[i + 2]) & 0x3f);
            len = 3;
        } else if ((b >> 3) == 0x1e && i + 3 < s.size()) {
            cp = static_cast<char32_t>(b & 0x07) << 18 |
                 (static_cast<char32_t>(static_cast<unsigned char>(s[i + 1]) & 0x3f) << 12) |
                 (static_cast<char32_t>(static_cast<unsigned char>(s[i + 2]) & 0x3f) << 6) |
                 (static_cast<unsigned char>(s[i + 3]) & 0x3f);
            len = 4;
        } else {
            cp = 0xfffd;  // stray byte
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

inline void utf8_append(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
        out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
}

inline std::string utf8_encode(const std::vector<char32_t>& cps) {
    std::string out;
    out.reserve(cps.size());
    for (char32_t cp : cps) utf8_append(out, cp);
    return out;
}

inline char32_t to_lower_cp(char32_t cp) {
    if (cp >= U'A' && cp <= U'Z') return cp + 32;
    // Latin-1 uppercase letters incl. Ä Ö Ü (0xD7 is the multiplication sign)
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
    return cp;
}

inline char32_t to_upper_cp(char32_t cp) {
    if (cp >= U'a' && cp <= U'z') return cp - 32;
    if (cp >= 0xE0 && cp <= 0xFE && cp != 0xF7 && cp != 0xFF) return cp - 32;
    return cp;
}

inline bool is_letter_cp(char32_t cp) {
    if ((cp >= U'a' && cp <= U'z') || (cp >= U'A' && cp <= U'Z')) return true;
    if (cp >= 0xC0 && cp <= 0xFF && cp != 0xD7 && cp != 0xF7) return true;
    return false;
}

inline bool is_digit_cp(char32_t cp) { return cp >= U'0' && cp <= U'9'; }

inline bool is_upper_cp(char32_t cp) { return to_lower_cp(cp) != cp; }

inline std::string lowercase(std::string_view s) {
    auto cps = utf8_decode(s);
    for (auto& cp : cps) cp = to_lower_cp(cp);
    return utf8_encode(cps);
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\r'))
            ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\n' && s[j] != '\r') ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

inline std::vector<std::string> split_on(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

inline std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r' || s[a] == '\n')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r' || s[b - 1] == '\n'))
        --b;
    return std::string(s.substr(a, b - a));
}

// ---------------------------------------------------------------------------
// deterministic number formatting (shortest round-trip form)
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::string_view what) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw DataError("cannot parse number '" + std::string(s) + "' for " + std::string(what));
    return v;
}

inline long parse_long(std::string_view s, std::string_view what) {
    long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw DataError("cannot parse integer '" + std::string(s) + "' for " + std::string(what));
    return v;
}

// ---------------------------------------------------------------------------
// FNV-1a, used for config hashes
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// ---------------------------------------------------------------------------
// file helpers
// ---------------------------------------------------------------------------

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

// File lines with line numbers (1-based), trailing '\r' stripped.
inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::string text = read_text_file(path);
    std::vector<std::string> lines;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        if (i == text.size() || text[i] == '\n') {
            std::string line = text.substr(start, i - start);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            lines.push_back(std::move(line));
            start = i + 1;
        }
    }
    if (!lines.empty() && lines.back().empty()) lines.pop_back();
    return lines;
}

}  // namespace edscore
