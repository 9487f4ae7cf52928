#pragma once

#include <cstdint>
#include <vector>

#include <boost/random/mersenne_twister.hpp>

namespace pairsurf {

// Boost's engine and distributions give identical streams on every platform,
// which the reproducibility contract of the bootstrap and simulation needs.
using RandomEngine = boost::random::mt19937_64;

// Stream tags keep independent consumers of one (seed, index) pair apart.
enum class StreamTag : std::uint64_t {
  Simulation = 0x51,
  Bootstrap = 0xB0,
  WildMultipliers = 0x3D,
};

std::uint64_t splitmix64(std::uint64_t x);

// Seed for replicate `index` of a run with master seed `seed`; a pure function
// so replicates can be generated in any order or on any worker.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index, StreamTag tag);

RandomEngine make_stream(std::uint64_t seed, std::uint64_t index, StreamTag tag);

// Deterministic Rademacher (+1/-1 with probability 1/2 each) stream.
std::vector<double> wild_multiplier_stream(std::uint64_t seed, std::size_t count);

// Draws `count` Rademacher signs from an existing engine, one bit per sign.
void fill_rademacher(RandomEngine& engine, double* out, std::size_t count);

double standard_normal(RandomEngine& engine);
double uniform01(RandomEngine& engine);

}  // namespace pairsurf
