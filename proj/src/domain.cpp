#include "deepmide/domain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace deepmide {

SiteSet::SiteSet(std::vector<Site> sites) : sites_(std::move(sites)) {
  std::set<std::string> seen;
  for (const auto& s : sites_) {
    if (!seen.insert(s.id).second) {
      throw ConfigError("duplicate site id '" + s.id + "'");
    }
    if (!s.coords.allFinite()) {
      throw ConfigError("site '" + s.id + "' has non-finite coordinates");
    }
  }
}

std::vector<Vec2> SiteSet::coords() const {
  std::vector<Vec2> out;
  out.reserve(sites_.size());
  for (const auto& s : sites_) out.push_back(s.coords);
  return out;
}

int SiteSet::find(const std::string& id) const {
  for (std::size_t i = 0; i < sites_.size(); ++i) {
    if (sites_[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

HeightLevels::HeightLevels(std::vector<double> heights_m) : heights_(std::move(heights_m)) {
  if (heights_.empty()) throw ConfigError("height list is empty");
  for (std::size_t p = 1; p < heights_.size(); ++p) {
    if (!(heights_[p] > heights_[p - 1])) {
      throw ConfigError("heights must be strictly increasing");
    }
  }
}

int HeightLevels::find(double height_m) const {
  for (std::size_t p = 0; p < heights_.size(); ++p) {
    if (std::abs(heights_[p] - height_m) < 1e-9) return static_cast<int>(p);
  }
  return -1;
}

LatentIndexer::LatentIndexer(std::size_t n_sites, std::size_t n_heights)
    : n_(n_sites), p_(n_heights) {
  if (n_ == 0 || p_ == 0) throw ConfigError("indexer needs at least one site and one height");
}

std::size_t LatentIndexer::flat(std::size_t height, std::size_t site) const {
  return height * n_ + site;
}

std::pair<std::size_t, std::size_t> LatentIndexer::inverse(std::size_t flat_index) const {
  return {flat_index / n_, flat_index % n_};
}

LatentIndexer build_indexer(const SiteSet& sites, const HeightLevels& heights) {
  if (sites.empty()) throw ConfigError("site set is empty");
  if (heights.size() == 0) throw ConfigError("height list is empty");
  return LatentIndexer(sites.size(), heights.size());
}

Mat pairwise_distances(const SiteSet& sites) {
  const auto n = static_cast<Eigen::Index>(sites.size());
  Mat d = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = (sites[i].coords - sites[j].coords).norm();
    }
  }
  return d;
}

ObservationPanel::ObservationPanel(std::vector<UnixSeconds> times, std::int64_t step_seconds,
                                   std::size_t n_sites, std::size_t n_heights)
    : times_(std::move(times)),
      step_(step_seconds),
      n_sites_(n_sites),
      n_heights_(n_heights),
      values_(times_.size() * n_sites * n_heights, std::numeric_limits<double>::quiet_NaN()),
      mask_(times_.size() * n_sites * n_heights, 0) {
  if (step_ <= 0) throw PreconditionError("time step must be positive");
}

void ObservationPanel::set(std::size_t t, std::size_t site, std::size_t height, double v) {
  const auto k = offset(t, site, height);
  values_[k] = v;
  mask_[k] = 1;
}

void ObservationPanel::set_missing(std::size_t t, std::size_t site, std::size_t height) {
  const auto k = offset(t, site, height);
  values_[k] = std::numeric_limits<double>::quiet_NaN();
  mask_[k] = 0;
}

Vec ObservationPanel::observed_vector(std::size_t t) const {
  std::vector<double> out;
  for (std::size_t p = 0; p < n_heights_; ++p) {
    for (std::size_t j = 0; j < n_sites_; ++j) {
      if (observed(t, j, p)) out.push_back(value(t, j, p));
    }
  }
  return Eigen::Map<const Vec>(out.data(), static_cast<Eigen::Index>(out.size()));
}

std::vector<std::uint8_t> ObservationPanel::mask_at(std::size_t t) const {
  const auto begin = mask_.begin() + static_cast<std::ptrdiff_t>(offset(t, 0, 0));
  return {begin, begin + static_cast<std::ptrdiff_t>(n_sites_ * n_heights_)};
}

ObservationPanel ObservationPanel::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, times_.size());
  begin = std::min(begin, end);
  ObservationPanel out({times_.begin() + static_cast<std::ptrdiff_t>(begin),
                        times_.begin() + static_cast<std::ptrdiff_t>(end)},
                       step_, n_sites_, n_heights_);
  const auto stride = n_sites_ * n_heights_;
  std::copy(values_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
            values_.begin() + static_cast<std::ptrdiff_t>(end * stride), out.values_.begin());
  std::copy(mask_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
            mask_.begin() + static_cast<std::ptrdiff_t>(end * stride), out.mask_.begin());
  return out;
}

void ObservationPanel::validate() const {
  for (std::size_t t = 1; t < times_.size(); ++t) {
    if (times_[t] - times_[t - 1] != step_) {
      throw PreconditionError("irregular time step at row " + std::to_string(t));
    }
  }
  for (std::size_t k = 0; k < values_.size(); ++k) {
    if (mask_[k] && !(values_[k] >= 0.0)) {
      throw PreconditionError("negative or non-finite wind speed in panel");
    }
  }
}

ObservationMap observation_map(std::span<const std::uint8_t> mask, const LatentIndexer& indexer) {
  const auto n = indexer.n_sites();
  const auto P = indexer.n_heights();
  if (mask.size() != n * P) throw PreconditionError("mask shape does not match indexer");
  ObservationMap out;
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t j = 0; j < n; ++j) {
      if (mask[j * P + p]) out.columns.push_back(indexer.flat(p, j));
    }
  }
  out.matrix = Mat::Zero(static_cast<Eigen::Index>(out.columns.size()),
                         static_cast<Eigen::Index>(indexer.dim()));
  for (std::size_t r = 0; r < out.columns.size(); ++r) {
    out.matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(out.columns[r])) = 1.0;
  }
  return out;
}

}  // namespace deepmide
