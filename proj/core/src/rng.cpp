#include "pairsurf/rng.hpp"

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

namespace pairsurf {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index, StreamTag tag) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(tag));
  return splitmix64(h ^ splitmix64(index + 1));
}

RandomEngine make_stream(std::uint64_t seed, std::uint64_t index, StreamTag tag) {
  return RandomEngine(stream_seed(seed, index, tag));
}

void fill_rademacher(RandomEngine& engine, double* out, std::size_t count) {
  std::size_t i = 0;
  while (i < count) {
    std::uint64_t bits = engine();
    for (int b = 0; b < 64 && i < count; ++b, ++i) {
      out[i] = (bits & 1U) ? 1.0 : -1.0;
      bits >>= 1;
    }
  }
}

std::vector<double> wild_multiplier_stream(std::uint64_t seed, std::size_t count) {
  std::vector<double> out(count);
  auto engine = make_stream(seed, 0, StreamTag::WildMultipliers);
  fill_rademacher(engine, out.data(), count);
  return out;
}

double standard_normal(RandomEngine& engine) {
  boost::random::normal_distribution<double> dist(0.0, 1.0);
  return dist(engine);
}

double uniform01(RandomEngine& engine) {
  boost::random::uniform_01<double> dist;
  return dist(engine);
}

}  // namespace pairsurf
