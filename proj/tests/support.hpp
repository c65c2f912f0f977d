#pragma once
// Shared fixtures for the test suites: seeded generators, scratch
// directories and small image builders.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include <cellcat/cellcat.hpp>

namespace testing_support {

namespace fs = std::filesystem;

class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    double normal(double mu, double sigma) { return std::normal_distribution<double>(mu, sigma)(rng_); }
    bool coin(double p) { return uniform(0.0, 1.0) < p; }
    std::mt19937_64& engine() { return rng_; }

    cellcat::IntensityPlane plane(std::size_t w, std::size_t h, int lo = 0, int hi = 65535) {
        cellcat::IntensityPlane p(w, h);
        for (auto& v : p.data) v = static_cast<std::uint16_t>(integer(lo, hi));
        return p;
    }

    cellcat::BinaryMask binary(std::size_t w, std::size_t h, double density) {
        cellcat::BinaryMask b(w, h);
        for (auto& v : b.data) v = coin(density) ? 1 : 0;
        return b;
    }

private:
    std::mt19937_64 rng_;
};

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path_ = fs::temp_directory_path() /
                ("cellcat_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

inline void paint_disk(cellcat::IntensityPlane& p, double cx, double cy, double r, std::uint16_t value) {
    for (std::size_t y = 0; y < p.height; ++y)
        for (std::size_t x = 0; x < p.width; ++x)
            if (std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy) <= r) p(x, y) = value;
}

inline void paint_annulus(cellcat::IntensityPlane& p, double cx, double cy, double inner, double outer,
                          std::uint16_t value) {
    for (std::size_t y = 0; y < p.height; ++y)
        for (std::size_t x = 0; x < p.width; ++x) {
            const double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
            if (d > inner && d <= outer) p(x, y) = value;
        }
}

inline cellcat::IntensityPlane noise_plane(Gen& g, std::size_t w, std::size_t h, double mean, double sigma) {
    cellcat::IntensityPlane p(w, h);
    for (auto& v : p.data) v = static_cast<std::uint16_t>(std::clamp(std::round(g.normal(mean, sigma)), 0.0, 65535.0));
    return p;
}

/// Adds Gaussian noise to every pixel, clamped to the 16-bit range.
inline void add_noise(cellcat::IntensityPlane& p, Gen& g, double sigma) {
    for (auto& v : p.data) v = static_cast<std::uint16_t>(std::clamp(std::round(v + g.normal(0.0, sigma)), 0.0, 65535.0));
}

/// A small synthetic cohort spec that runs in well under a second.
inline cellcat::SynthSpec small_spec(std::uint64_t seed = 11) {
    cellcat::SynthSpec s;
    s.n_images = 2;
    s.width = 160;
    s.height = 160;
    s.cell_count = 60;
    s.classes = {{"CD3", 0.2}, {"CD20", 0.15}, {"Negative", 0.65}};
    s.seed = seed;
    return s;
}

inline std::string slurp(const fs::path& p) { return cellcat::read_file(p); }

}  // namespace testing_support
