#pragma once

// Shared test helpers: temp directories, synthetic data, random recipes, CLI runner.

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include "ood_sentinel/ood_sentinel.hpp"

namespace ood::testing {

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("ood_sentinel_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Isotropic Gaussian cluster around `center` with per-coordinate stddev `sigma`.
inline EmbeddingSet gaussian_cluster(std::size_t count, const std::vector<double>& center,
                                     double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    std::vector<float> flat;
    flat.reserve(count * center.size());
    for (std::size_t i = 0; i < count; ++i) {
        for (double c : center) flat.push_back(static_cast<float>(c + noise(rng)));
    }
    return EmbeddingSet(count, center.size(), std::move(flat));
}

/// `radius` * (cos a, sin a, 0, ..., 0) in `dim` dimensions.
inline std::vector<double> planar_direction(std::size_t dim, double radius, double angle_rad) {
    std::vector<double> c(dim, 0.0);
    c[0] = radius * std::cos(angle_rad);
    c[1] = radius * std::sin(angle_rad);
    return c;
}

inline EmbeddingSet random_set(std::size_t count, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-3.0f, 3.0f);
    std::vector<float> flat(count * dim);
    for (float& x : flat) x = u(rng);
    return EmbeddingSet(count, dim, std::move(flat));
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                                         double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

/// Random valid recipe AST (depth <= 2, factors in [1, max_factor]).
inline Recipe random_recipe(std::mt19937_64& rng, std::uint32_t max_factor = 12) {
    auto pick = [&](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
    auto term = [&] {
        static constexpr std::array kinds = {TermKind::V, TermKind::Pi, TermKind::PiBar};
        const auto factor = std::uniform_int_distribution<std::uint32_t>(1, max_factor)(rng);
        return Term{kinds[static_cast<std::size_t>(pick(3))], factor};
    };
    auto add = [&] {
        Add a;
        const int n = 2 + pick(3);
        for (int i = 0; i < n; ++i) a.terms.push_back(term());
        return a;
    };
    switch (pick(3)) {
        case 0: return term();
        case 1: return add();
        default: {
            Append ap;
            const int n = 2 + pick(4);
            for (int i = 0; i < n; ++i) {
                if (pick(2)) ap.children.emplace_back(term());
                else ap.children.emplace_back(add());
            }
            return ap;
        }
    }
}

/// Failure class thrown by `f`, or nullopt if it returns normally.
template <typename F>
std::optional<ErrorKind> kind_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    return std::nullopt;
}

struct CommandResult {
    int exit_code = -1;
    std::string out;
};

/// Runs a shell command, capturing stdout. Stderr is discarded, or captured instead of
/// stdout with `stderr_only`.
inline CommandResult run_command(const std::string& cmd, bool stderr_only = false) {
    CommandResult r;
    FILE* pipe = ::popen((cmd + (stderr_only ? " 2>&1 >/dev/null" : " 2>/dev/null")).c_str(), "r");
    if (!pipe) return r;
    std::array<char, 4096> buf;
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
    const int status = ::pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

inline std::string quote(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

inline std::string slurp(const std::filesystem::path& p) {
    const auto bytes = read_file_bytes(p);
    return {bytes.begin(), bytes.end()};
}

}  // namespace ood::testing
