#include "mmrep/random.hpp"

#include <algorithm>

namespace mmrep {

WeightedSampler::WeightedSampler(std::span<const double> weights) {
  cumulative_.reserve(weights.size());
  double total = 0.0;
  for (double w : weights) {
    require(w >= 0.0 && std::isfinite(w), "sampler weights must be finite and non-negative");
    total += w;
    cumulative_.push_back(total);
  }
  require(total > 0.0, "sampler weights sum to zero");
}

std::size_t WeightedSampler::sample(Rng& rng) const {
  const double target = rng.uniform() * cumulative_.back();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), target);
  return std::min(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
}

}  // namespace mmrep
