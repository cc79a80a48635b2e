#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "deepmide/error.hpp"

namespace deepmide {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2d;

// Seconds since 1970-01-01T00:00:00Z.
using UnixSeconds = std::int64_t;

struct Site {
  std::string id;
  Vec2 coords = Vec2::Zero();  // planar km, (east, north)
};

// Ordered site collection with unique ids and finite coordinates.
class SiteSet {
 public:
  SiteSet() = default;
  explicit SiteSet(std::vector<Site> sites);

  std::size_t size() const { return sites_.size(); }
  bool empty() const { return sites_.empty(); }
  const Site& operator[](std::size_t i) const { return sites_[i]; }
  const std::vector<Site>& sites() const { return sites_; }
  std::vector<Vec2> coords() const;
  // Index of a site id, or -1.
  int find(const std::string& id) const;

 private:
  std::vector<Site> sites_;
};

class HeightLevels {
 public:
  HeightLevels() = default;
  explicit HeightLevels(std::vector<double> heights_m);

  std::size_t size() const { return heights_.size(); }
  double operator[](std::size_t p) const { return heights_[p]; }
  const std::vector<double>& values() const { return heights_; }
  int find(double height_m) const;

 private:
  std::vector<double> heights_;
};

// Flat latent index. Height-major blocks, site-minor within a block:
// flat(p, j) = p * n + j with zero-based p and j.
class LatentIndexer {
 public:
  LatentIndexer() = default;
  LatentIndexer(std::size_t n_sites, std::size_t n_heights);

  std::size_t n_sites() const { return n_; }
  std::size_t n_heights() const { return p_; }
  std::size_t dim() const { return n_ * p_; }

  std::size_t flat(std::size_t height, std::size_t site) const;
  std::pair<std::size_t, std::size_t> inverse(std::size_t flat_index) const;

 private:
  std::size_t n_ = 0;
  std::size_t p_ = 0;
};

LatentIndexer build_indexer(const SiteSet& sites, const HeightLevels& heights);

Mat pairwise_distances(const SiteSet& sites);

// Wind speeds indexed (t, site, height) on a uniform time grid. The mask is
// true where a value was observed.
class ObservationPanel {
 public:
  ObservationPanel() = default;
  ObservationPanel(std::vector<UnixSeconds> times, std::int64_t step_seconds,
                   std::size_t n_sites, std::size_t n_heights);

  std::size_t n_times() const { return times_.size(); }
  std::size_t n_sites() const { return n_sites_; }
  std::size_t n_heights() const { return n_heights_; }
  std::int64_t step_seconds() const { return step_; }
  const std::vector<UnixSeconds>& times() const { return times_; }
  UnixSeconds time(std::size_t t) const { return times_[t]; }

  double value(std::size_t t, std::size_t site, std::size_t height) const {
    return values_[offset(t, site, height)];
  }
  bool observed(std::size_t t, std::size_t site, std::size_t height) const {
    return mask_[offset(t, site, height)] != 0;
  }
  void set(std::size_t t, std::size_t site, std::size_t height, double v);
  void set_missing(std::size_t t, std::size_t site, std::size_t height);

  // Observed entries at time t, stacked in latent order (height-major).
  Vec observed_vector(std::size_t t) const;
  // Mask slice at time t as (site, height) -> observed, row-major by site.
  std::vector<std::uint8_t> mask_at(std::size_t t) const;
  // Rows [begin, end).
  ObservationPanel slice(std::size_t begin, std::size_t end) const;
  // Throws PreconditionError if a negative observed value or an irregular
  // time step is present.
  void validate() const;

 private:
  std::size_t offset(std::size_t t, std::size_t site, std::size_t height) const {
    return (t * n_sites_ + site) * n_heights_ + height;
  }

  std::vector<UnixSeconds> times_;
  std::int64_t step_ = 600;
  std::size_t n_sites_ = 0;
  std::size_t n_heights_ = 0;
  std::vector<double> values_;
  std::vector<std::uint8_t> mask_;
};

struct GaussianBelief {
  Vec mean;
  Mat cov;
};

// Selection matrix H_t. Row r picks latent entry columns[r].
struct ObservationMap {
  Mat matrix;
  std::vector<std::size_t> columns;

  std::size_t rows() const { return columns.size(); }
  bool empty() const { return columns.empty(); }
};

// mask is (site, height) row-major by site, as returned by
// ObservationPanel::mask_at. Rows follow latent (height-major) order.
ObservationMap observation_map(std::span<const std::uint8_t> mask,
                               const LatentIndexer& indexer);

}  // namespace deepmide
