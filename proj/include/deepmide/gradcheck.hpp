#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "deepmide/model.hpp"

namespace deepmide::train {

struct CompositeCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t instances = 0;
  // Group name ("omega", "theta" or a network block) -> max error.
  std::vector<std::pair<std::string, double>> per_group;
  bool passed = false;  // max_rel_error <= 1e-3
};

// Central differences of the filter negative log-likelihood against its
// analytic gradient on random small instances (2-3 sites, 2 heights, a few
// steps, small rasters): statistical parameters, advection vectors, and
// network coordinates through the extractor.
CompositeCheckReport composite_gradient_check(std::uint64_t seed, std::size_t instances = 5,
                                              std::size_t phi_coords_per_instance = 40);

}  // namespace deepmide::train
