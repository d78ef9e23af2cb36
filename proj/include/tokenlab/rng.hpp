#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace tokenlab {

// Philox4x32-10 counter-based generator. (seed, stream) select an
// independent sequence; the position inside it is a plain counter, so
// any sample can be regenerated without replaying the ones before it.
class Philox {
public:
    using result_type = std::uint64_t;

    Philox(std::uint64_t seed = 0, std::uint64_t stream = 0);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()();

    void seek(std::uint64_t block);
    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key);

private:
    void refill();

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> buf_{};
    int used_ = 2;
};

std::uint64_t splitmix64(std::uint64_t x);
// Order-sensitive hash used to derive per-trial streams.
std::uint64_t hash_combine(std::initializer_list<std::uint64_t> parts);
std::uint64_t hash_double(double v);

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) : eng_(seed, stream) {}

    double normal() { return normal_(eng_); }
    double uniform() { return std::generate_canonical<double, 53>(eng_); }
    bool bernoulli(double p) { return uniform() < p; }
    std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(eng_); }
    Philox& engine() { return eng_; }

private:
    Philox eng_;
    std::normal_distribution<double> normal_;
};

}  // namespace tokenlab
