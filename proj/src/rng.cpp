#include "mp2m/rng.hpp"

#include <sstream>
#include <vector>

#include "mp2m/errors.hpp"

namespace mp2m {

Rng Rng::stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (auto k : keys) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  Rng r;
  r.engine_.seed(seq);
  return r;
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

Rng Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  Rng r;
  is >> r.engine_;
  if (is.fail()) throw FormatError("corrupt generator state");
  return r;
}

}  // namespace mp2m
