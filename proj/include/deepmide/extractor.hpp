#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deepmide/domain.hpp"

namespace deepmide::extractor {

// Shared geometry of a weather map stream.
struct StreamMeta {
  std::vector<std::string> channels;
  std::size_t width = 0;
  std::size_t height = 0;
  std::array<double, 4> bbox{};  // x0, y0, x1, y1 in planar km
  std::int64_t step_seconds = 3600;

  std::size_t values_per_map() const { return channels.size() * width * height; }
};

// One C x H x W raster, channel-major then row-major.
struct WeatherMap {
  UnixSeconds time = 0;
  std::vector<float> data;
};

// Uniformly spaced map sequence. A map serves every observation step in
// [time, time + step_seconds).
class MapStream {
 public:
  MapStream() = default;
  MapStream(StreamMeta meta, std::vector<WeatherMap> maps);

  const StreamMeta& meta() const { return meta_; }
  std::size_t size() const { return maps_.size(); }
  const WeatherMap& operator[](std::size_t i) const { return maps_[i]; }
  const std::vector<WeatherMap>& maps() const { return maps_; }
  // Index of the map covering `t`, or nullopt if outside the stream.
  std::optional<std::size_t> index_at(UnixSeconds t) const;

 private:
  StreamMeta meta_;
  std::vector<WeatherMap> maps_;
};

// Per-channel standardization, estimated on offline maps and stored with the
// model.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  static ChannelStats estimate(const MapStream& stream, std::size_t first, std::size_t last);
  std::vector<double> apply(const StreamMeta& meta, std::span<const float> raw) const;
};

// Compact conv + attention network: conv(3x3, stride 2) -> ReLU -> conv ->
// ReLU -> global average pool -> linear (F features) per map, single-head
// attention over L feature vectors with the latest as query, and a tanh
// head emitting one 2-vector per height scaled to +-theta_max.
struct ExtractorConfig {
  std::size_t in_channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t features = 32;
  std::size_t context = 6;
  std::size_t n_heights = 3;
  double theta_max = 30.0;

  std::size_t conv1_height() const { return (height - kernel) / stride + 1; }
  std::size_t conv1_width() const { return (width - kernel) / stride + 1; }
  std::size_t conv2_height() const { return (conv1_height() - kernel) / stride + 1; }
  std::size_t conv2_width() const { return (conv1_width() - kernel) / stride + 1; }
  void validate() const;
};

// Offsets of each tensor inside the flat parameter vector.
struct ParamLayout {
  struct Block {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    bool bias = false;
  };
  std::vector<Block> blocks;
  std::size_t total = 0;

  explicit ParamLayout(const ExtractorConfig& config);
  const Block& block(const std::string& name) const;
};

struct NetworkParams {
  ExtractorConfig config;
  std::vector<double> values;
};

// Glorot-uniform weights, zero biases.
NetworkParams init_params(const ExtractorConfig& config, std::uint64_t seed);

// Intermediate activations of one map's encoding, kept for backward.
struct EncodeCache {
  std::vector<double> input;
  std::vector<double> pre1;
  std::vector<double> pre2;
  Vec pooled;
  Vec features;
};

struct AttentionCache {
  std::vector<Vec> embedded;  // features + positional encoding
  std::vector<Vec> keys;
  std::vector<Vec> values;
  Vec query;
  Vec weights;  // softmax output, sums to one
  Vec context;
  Vec output;
  Vec raw;  // pre-tanh head output
};

// theta layout: [theta^1_x, theta^1_y, theta^2_x, ...].
class PhysicsExtractor {
 public:
  explicit PhysicsExtractor(ExtractorConfig config);

  const ExtractorConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }

  // `input` holds C*H*W standardized values.
  Vec encode(std::span<const double> input, std::span<const double> phi,
             EncodeCache* cache = nullptr) const;
  // `window` holds L feature vectors, oldest first.
  Vec predict(std::span<const Vec> window, std::span<const double> phi,
              AttentionCache* cache = nullptr) const;

  // Accumulates dL/dphi into phi_bar and returns dL/d(feature) per window slot.
  std::vector<Vec> predict_backward(const AttentionCache& cache, std::span<const double> phi,
                                    const Vec& theta_bar, std::span<double> phi_bar) const;
  // Accumulates dL/dphi; returns dL/dinput when `want_input_grad`.
  std::vector<double> encode_backward(const EncodeCache& cache, std::span<const double> phi,
                                      const Vec& features_bar, std::span<double> phi_bar,
                                      bool want_input_grad = false) const;

  Vec positional_encoding(std::size_t age) const;

 private:
  ExtractorConfig config_;
  ParamLayout layout_;
};

// Forward and backward over one window of raw inputs, for tests and checks.
Vec predict_advection(const PhysicsExtractor& net, std::span<const std::vector<double>> window,
                      std::span<const double> phi);
struct WindowGradient {
  std::vector<double> phi_bar;
  std::vector<std::vector<double>> input_bar;
};
WindowGradient backward(const PhysicsExtractor& net, std::span<const std::vector<double>> window,
                        std::span<const double> phi, const Vec& theta_bar, bool want_input_grad);

// Scalar probe of the advection output; returns the loss and writes dL/dtheta.
using LossProbe = std::function<double(const Vec& theta, Vec& theta_bar)>;

struct GradientCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::vector<std::pair<std::string, double>> per_layer;  // block name -> max error
  bool passed = false;
};

// Compares analytic and central-difference gradients on `n_coords` random
// parameter coordinates (step 1e-4 * max(1, |phi_k|)). `gradient_scale`
// multiplies the analytic gradient of one block, to exercise the check.
GradientCheckReport gradient_check(const PhysicsExtractor& net,
                                   std::span<const std::vector<double>> window,
                                   std::span<const double> phi, const LossProbe& probe,
                                   std::size_t n_coords, std::uint64_t seed,
                                   const std::string& perturb_block = {},
                                   double gradient_scale = 1.0);

// Relative error used by every gradient comparison in the project.
double relative_error(double analytic, double numeric);

}  // namespace deepmide::extractor
