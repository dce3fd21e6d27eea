#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ecor/errors.hpp"

namespace ecor {

// Deterministic random source. mt19937_64 is bit-exact per the standard;
// the distribution transforms are written out here so that identical seeds
// produce identical streams regardless of the standard library in use.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    // [0, 1) with 53 bits of precision.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Box-Muller without a cached spare, two uniforms per draw.
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) {
        return mean + stddev * normal();
    }

    // Uniform integer in [0, n) by rejection.
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) {
            throw contract_error("uniform_int: n must be positive");
        }
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n), in draw order.
    std::vector<size_t> sample_without_replacement(size_t n, size_t k) {
        if (k > n) {
            throw contract_error("sample_without_replacement: k > n");
        }
        std::vector<size_t> pool(n);
        for (size_t i = 0; i < n; ++i) pool[i] = i;
        std::vector<size_t> out;
        out.reserve(k);
        for (size_t i = 0; i < k; ++i) {
            const size_t j = i + static_cast<size_t>(uniform_int(n - i));
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
        return out;
    }

    std::string serialize() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void deserialize(const std::string& state) {
        std::istringstream is(state);
        is >> gen_;
        if (is.fail()) {
            throw io_error("rng state string is not a valid mt19937_64 state");
        }
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace ecor
