#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace advmem {

// Row-major so that each sample of a batch is one contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Labels = std::vector<int>;
using SampleIds = std::vector<std::int64_t>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message)
{
    if (!condition) {
        throw Error(message);
    }
}

/// Per-sample input shape. Images are stored height x width x channels,
/// flattened in that order (channels fastest).
struct InputShape {
    std::vector<std::size_t> dims;

    [[nodiscard]] std::size_t size() const
    {
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
    }
    [[nodiscard]] bool is_image() const { return dims.size() == 3; }
    [[nodiscard]] std::size_t height() const { return is_image() ? dims[0] : 1; }
    [[nodiscard]] std::size_t width() const { return is_image() ? dims[1] : 1; }
    [[nodiscard]] std::size_t channels() const { return is_image() ? dims[2] : size(); }

    static InputShape flat(std::size_t d) { return InputShape{{d}}; }
    static InputShape image(std::size_t h, std::size_t w, std::size_t c) { return InputShape{{h, w, c}}; }

    friend bool operator==(const InputShape&, const InputShape&) = default;
};

// ---------------------------------------------------------------------------
// Randomness. Every stochastic routine takes an explicit seed; streams are
// split from a root seed with splitmix64 so runs reproduce bitwise. The
// distributions are written out here instead of using <random>'s, whose
// algorithms are implementation-defined.

[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derive a child seed from a root and a path of stream tags/indices.
[[nodiscard]] inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path)
{
    std::uint64_t s = splitmix64(root);
    for (auto p : path) {
        s = splitmix64(s ^ splitmix64(p + 0x632be59bd9b4e019ULL));
    }
    return s;
}

// Stream tags used with derive_seed.
namespace stream {
inline constexpr std::uint64_t shuffle = 1;
inline constexpr std::uint64_t augment = 2;
inline constexpr std::uint64_t attack = 3;
inline constexpr std::uint64_t init = 4;
inline constexpr std::uint64_t eval_attack = 5;
inline constexpr std::uint64_t direction = 6;
inline constexpr std::uint64_t corruption = 7;
inline constexpr std::uint64_t synthetic = 8;
inline constexpr std::uint64_t sample = 9;
}  // namespace stream

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), unbiased by rejection.
    std::uint64_t below(std::uint64_t n)
    {
        if (n == 0) {
            throw Error("Rng::below: empty range");
        }
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t v = engine_();
        while (v >= limit) {
            v = engine_();
        }
        return v % n;
    }

    /// Standard normal via Box-Muller (both variates used).
    double normal()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * M_PI * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& values)
    {
        for (std::size_t i = values.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

[[nodiscard]] inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace advmem
