#ifndef GENHOWTO_COMMON_HPP
#define GENHOWTO_COMMON_HPP

#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace genhowto {

inline constexpr const char* kVersion = "0.1.0";

// Configuration / parameter problems map to CLI exit code 2,
// missing upstream artifacts to exit code 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string strf(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    char buf[1024];
    vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    return std::string(buf);
}

// ----------------------------------------------------------------------------
// Deterministic RNG. std::normal_distribution is implementation-defined, so
// normals go through an explicit Box-Muller transform on top of mt19937_64.
// ----------------------------------------------------------------------------
struct Rng {
    std::mt19937_64 gen;
    bool has_spare = false;
    double spare   = 0.0;

    explicit Rng(uint64_t seed = 0) : gen(seed) {}

    void reseed(uint64_t seed) {
        gen.seed(seed);
        has_spare = false;
    }

    // uniform in [0, 1)
    double uniform() {
        return (gen() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(gen() % span);
    }

    double normal() {
        if (has_spare) {
            has_spare = false;
            return spare;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2    = uniform();
        double r     = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare        = r * std::sin(theta);
        has_spare    = true;
        return r * std::cos(theta);
    }

    bool bernoulli(double p) { return uniform() < p; }
};

// Derive a stream seed from a base seed and a few tags; used so that every
// video / tuple / sample gets an independent reproducible stream.
inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c = 0, uint64_t d = 0) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (uint64_t x : {a, b, c, d}) {
        for (int i = 0; i < 8; ++i) {
            h ^= (x >> (8 * i)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

// FNV-1a over raw bytes; used for manifest/parameter-group fingerprints.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

// ----------------------------------------------------------------------------
// Threads
// ----------------------------------------------------------------------------
inline int& thread_count_ref() {
    static int n = 0;
    return n;
}

inline void set_threads(int n) {
    if (n <= 0) {
#ifdef _OPENMP
        n = omp_get_max_threads();
#else
        n = 1;
#endif
    }
    thread_count_ref() = n;
#ifdef _OPENMP
    omp_set_num_threads(n);
#endif
}

inline int threads() {
    if (thread_count_ref() == 0) set_threads(0);
    return thread_count_ref();
}

// ----------------------------------------------------------------------------
// Small string / file helpers
// ----------------------------------------------------------------------------
inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(tolower(static_cast<unsigned char>(c)));
    return s;
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("cannot read " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline bool file_exists(const std::filesystem::path& p) {
    return std::filesystem::exists(p);
}

}  // namespace genhowto

#endif
