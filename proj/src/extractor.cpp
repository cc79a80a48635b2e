#include "deepmide/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace deepmide::extractor {

MapStream::MapStream(StreamMeta meta, std::vector<WeatherMap> maps)
    : meta_(std::move(meta)), maps_(std::move(maps)) {
  if (meta_.step_seconds <= 0) throw PreconditionError("map stream step must be positive");
  const auto expected = meta_.values_per_map();
  for (std::size_t i = 0; i < maps_.size(); ++i) {
    if (maps_[i].data.size() != expected) {
      throw PreconditionError("map " + std::to_string(i) + " has " +
                              std::to_string(maps_[i].data.size()) + " values, expected " +
                              std::to_string(expected));
    }
    if (i > 0 && maps_[i].time - maps_[i - 1].time != meta_.step_seconds) {
      throw PreconditionError("map stream is not uniformly spaced at map " + std::to_string(i));
    }
    for (float v : maps_[i].data) {
      if (!std::isfinite(v)) throw PreconditionError("non-finite value in map " + std::to_string(i));
    }
  }
}

std::optional<std::size_t> MapStream::index_at(UnixSeconds t) const {
  if (maps_.empty() || t < maps_.front().time) return std::nullopt;
  const auto idx = static_cast<std::size_t>((t - maps_.front().time) / meta_.step_seconds);
  if (idx >= maps_.size()) return std::nullopt;
  return idx;
}

ChannelStats ChannelStats::estimate(const MapStream& stream, std::size_t first, std::size_t last) {
  const auto& meta = stream.meta();
  const auto C = meta.channels.size();
  const auto plane = meta.width * meta.height;
  last = std::min(last, stream.size());
  ChannelStats out;
  out.mean.assign(C, 0.0);
  out.stddev.assign(C, 1.0);
  if (first >= last) return out;
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    double sum2 = 0.0;
    for (std::size_t i = first; i < last; ++i) {
      const float* d = stream[i].data.data() + c * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum += d[k];
        sum2 += static_cast<double>(d[k]) * d[k];
      }
    }
    const double n = static_cast<double>((last - first) * plane);
    out.mean[c] = sum / n;
    const double var = std::max(0.0, sum2 / n - out.mean[c] * out.mean[c]);
    out.stddev[c] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return out;
}

std::vector<double> ChannelStats::apply(const StreamMeta& meta, std::span<const float> raw) const {
  const auto plane = meta.width * meta.height;
  std::vector<double> out(raw.size());
  for (std::size_t c = 0; c < meta.channels.size(); ++c) {
    for (std::size_t k = 0; k < plane; ++k) {
      out[c * plane + k] = (raw[c * plane + k] - mean[c]) / stddev[c];
    }
  }
  return out;
}

void ExtractorConfig::validate() const {
  if (context < 1) throw ConfigError("extractor.context must be >= 1");
  if (n_heights < 1) throw ConfigError("extractor needs at least one height");
  if (height < kernel || width < kernel || conv1_height() < kernel || conv1_width() < kernel) {
    throw ConfigError("extractor raster is too small for two strided convolutions");
  }
  if (!(theta_max > 0.0)) throw ConfigError("theta_max must be positive");
  if (in_channels == 0 || features == 0 || stride == 0) throw ConfigError("extractor sizes must be positive");
}

ParamLayout::ParamLayout(const ExtractorConfig& c) {
  const auto k2 = c.kernel * c.kernel;
  const auto F = c.features;
  const auto add = [this](std::string name, std::size_t size, std::size_t fan_in,
                          std::size_t fan_out, bool bias) {
    blocks.push_back({std::move(name), total, size, fan_in, fan_out, bias});
    total += size;
  };
  add("conv1.w", c.conv1_channels * c.in_channels * k2, c.in_channels * k2, c.conv1_channels * k2, false);
  add("conv1.b", c.conv1_channels, 0, 0, true);
  add("conv2.w", c.conv2_channels * c.conv1_channels * k2, c.conv1_channels * k2, c.conv2_channels * k2, false);
  add("conv2.b", c.conv2_channels, 0, 0, true);
  add("fc.w", F * c.conv2_channels, c.conv2_channels, F, false);
  add("fc.b", F, 0, 0, true);
  add("attn.q", F * F, F, F, false);
  add("attn.k", F * F, F, F, false);
  add("attn.v", F * F, F, F, false);
  add("attn.o", F * F, F, F, false);
  add("attn.o.b", F, 0, 0, true);
  add("head.w", 2 * c.n_heights * F, F, 2 * c.n_heights, false);
  add("head.b", 2 * c.n_heights, 0, 0, true);
}

const ParamLayout::Block& ParamLayout::block(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return b;
  }
  throw ConfigError("unknown parameter block '" + name + "'");
}

NetworkParams init_params(const ExtractorConfig& config, std::uint64_t seed) {
  config.validate();
  ParamLayout layout(config);
  NetworkParams out{config, std::vector<double>(layout.total, 0.0)};
  std::mt19937_64 rng(seed);
  for (const auto& b : layout.blocks) {
    if (b.bias) continue;
    double bound = std::sqrt(6.0 / static_cast<double>(b.fan_in + b.fan_out));
    // A small head keeps the initial advection well inside the tanh range.
    if (b.name == "head.w") bound *= 0.1;
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t k = 0; k < b.size; ++k) out.values[b.offset + k] = dist(rng);
  }
  return out;
}

namespace {

using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

ConstMatMap weights(std::span<const double> phi, const ParamLayout::Block& b, std::size_t rows,
                    std::size_t cols) {
  return ConstMatMap(phi.data() + b.offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatMap weights_bar(std::span<double> phi_bar, const ParamLayout::Block& b, std::size_t rows,
                   std::size_t cols) {
  return MatMap(phi_bar.data() + b.offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Eigen::Map<const Vec> bias(std::span<const double> phi, const ParamLayout::Block& b) {
  return Eigen::Map<const Vec>(phi.data() + b.offset, static_cast<Eigen::Index>(b.size));
}

Eigen::Map<Vec> bias_bar(std::span<double> phi_bar, const ParamLayout::Block& b) {
  return Eigen::Map<Vec>(phi_bar.data() + b.offset, static_cast<Eigen::Index>(b.size));
}

// Valid (unpadded) strided convolution; output[co][y][x].
void conv_forward(const double* in, std::size_t cin, std::size_t h, std::size_t w, const double* wt,
                  const double* b, std::size_t cout, std::size_t k, std::size_t stride, double* out) {
  const auto ho = (h - k) / stride + 1;
  const auto wo = (w - k) / stride + 1;
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < wo; ++x) {
        double acc = b[co];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double* kw = wt + ((co * cin + ci) * k) * k;
          const double* src = in + ci * h * w;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const double* row = src + (y * stride + ky) * w + x * stride;
            for (std::size_t kx = 0; kx < k; ++kx) acc += kw[ky * k + kx] * row[kx];
          }
        }
        out[(co * ho + y) * wo + x] = acc;
      }
    }
  }
}

// Accumulates weight, bias and (optionally) input adjoints.
void conv_backward(const double* in, std::size_t cin, std::size_t h, std::size_t w, const double* wt,
                   std::size_t cout, std::size_t k, std::size_t stride, const double* out_bar,
                   double* wt_bar, double* b_bar, double* in_bar) {
  const auto ho = (h - k) / stride + 1;
  const auto wo = (w - k) / stride + 1;
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < wo; ++x) {
        const double g = out_bar[(co * ho + y) * wo + x];
        if (g == 0.0) continue;
        b_bar[co] += g;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const std::size_t kbase = ((co * cin + ci) * k) * k;
          const std::size_t ibase = ci * h * w;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::size_t irow = ibase + (y * stride + ky) * w + x * stride;
            for (std::size_t kx = 0; kx < k; ++kx) {
              wt_bar[kbase + ky * k + kx] += g * in[irow + kx];
              if (in_bar) in_bar[irow + kx] += g * wt[kbase + ky * k + kx];
            }
          }
        }
      }
    }
  }
}

}  // namespace

PhysicsExtractor::PhysicsExtractor(ExtractorConfig config)
    : config_(config), layout_((config.validate(), config)) {}

Vec PhysicsExtractor::encode(std::span<const double> input, std::span<const double> phi,
                             EncodeCache* cache) const {
  const auto& c = config_;
  if (input.size() != c.in_channels * c.height * c.width) {
    throw PreconditionError("map has " + std::to_string(input.size()) + " values, extractor expects " +
                            std::to_string(c.in_channels * c.height * c.width));
  }
  if (phi.size() != layout_.total) throw PreconditionError("parameter vector has the wrong length");
  const auto h1 = c.conv1_height(), w1 = c.conv1_width();
  const auto h2 = c.conv2_height(), w2 = c.conv2_width();

  std::vector<double> pre1(c.conv1_channels * h1 * w1);
  conv_forward(input.data(), c.in_channels, c.height, c.width, phi.data() + layout_.block("conv1.w").offset,
               phi.data() + layout_.block("conv1.b").offset, c.conv1_channels, c.kernel, c.stride, pre1.data());
  std::vector<double> act1(pre1.size());
  std::transform(pre1.begin(), pre1.end(), act1.begin(), [](double v) { return v > 0.0 ? v : 0.0; });

  std::vector<double> pre2(c.conv2_channels * h2 * w2);
  conv_forward(act1.data(), c.conv1_channels, h1, w1, phi.data() + layout_.block("conv2.w").offset,
               phi.data() + layout_.block("conv2.b").offset, c.conv2_channels, c.kernel, c.stride, pre2.data());

  Vec pooled = Vec::Zero(static_cast<Eigen::Index>(c.conv2_channels));
  const auto plane = h2 * w2;
  for (std::size_t ch = 0; ch < c.conv2_channels; ++ch) {
    double s = 0.0;
    for (std::size_t k = 0; k < plane; ++k) s += std::max(0.0, pre2[ch * plane + k]);
    pooled(static_cast<Eigen::Index>(ch)) = s / static_cast<double>(plane);
  }
  Vec features = weights(phi, layout_.block("fc.w"), c.features, c.conv2_channels) * pooled +
                 bias(phi, layout_.block("fc.b"));
  if (cache) {
    cache->input.assign(input.begin(), input.end());
    cache->pre1 = std::move(pre1);
    cache->pre2 = std::move(pre2);
    cache->pooled = pooled;
    cache->features = features;
  }
  return features;
}

Vec PhysicsExtractor::positional_encoding(std::size_t age) const {
  const auto F = config_.features;
  Vec pe(static_cast<Eigen::Index>(F));
  for (std::size_t m = 0; m < F; ++m) {
    const double freq = std::pow(10000.0, -static_cast<double>(2 * (m / 2)) / static_cast<double>(F));
    const double angle = static_cast<double>(age) * freq;
    pe(static_cast<Eigen::Index>(m)) = (m % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return pe;
}

Vec PhysicsExtractor::predict(std::span<const Vec> window, std::span<const double> phi,
                              AttentionCache* cache) const {
  const auto& c = config_;
  const auto L = window.size();
  if (L != c.context) {
    throw PreconditionError("attention window has " + std::to_string(L) + " features, expected " +
                            std::to_string(c.context));
  }
  const auto F = c.features;
  const auto Wq = weights(phi, layout_.block("attn.q"), F, F);
  const auto Wk = weights(phi, layout_.block("attn.k"), F, F);
  const auto Wv = weights(phi, layout_.block("attn.v"), F, F);
  const auto Wo = weights(phi, layout_.block("attn.o"), F, F);
  const auto Wh = weights(phi, layout_.block("head.w"), 2 * c.n_heights, F);

  AttentionCache local;
  AttentionCache& ac = cache ? *cache : local;
  ac.embedded.resize(L);
  ac.keys.resize(L);
  ac.values.resize(L);
  for (std::size_t i = 0; i < L; ++i) {
    ac.embedded[i] = window[i] + positional_encoding(L - 1 - i);
    ac.keys[i] = Wk * ac.embedded[i];
    ac.values[i] = Wv * ac.embedded[i];
  }
  const Vec& last = ac.embedded[L - 1];
  ac.query = Wq * last;
  const double scale = 1.0 / std::sqrt(static_cast<double>(F));
  Vec scores(static_cast<Eigen::Index>(L));
  for (std::size_t i = 0; i < L; ++i) scores(static_cast<Eigen::Index>(i)) = ac.query.dot(ac.keys[i]) * scale;
  const double mx = scores.maxCoeff();
  ac.weights = (scores.array() - mx).exp();
  ac.weights /= ac.weights.sum();
  ac.context = Vec::Zero(static_cast<Eigen::Index>(F));
  for (std::size_t i = 0; i < L; ++i) ac.context += ac.weights(static_cast<Eigen::Index>(i)) * ac.values[i];
  ac.output = last + Wo * ac.context + bias(phi, layout_.block("attn.o.b"));
  ac.raw = Wh * ac.output + bias(phi, layout_.block("head.b"));
  return c.theta_max * ac.raw.array().tanh().matrix();
}

std::vector<Vec> PhysicsExtractor::predict_backward(const AttentionCache& ac, std::span<const double> phi,
                                                    const Vec& theta_bar, std::span<double> phi_bar) const {
  const auto& c = config_;
  const auto F = c.features;
  const auto L = ac.embedded.size();
  const auto& bq = layout_.block("attn.q");
  const auto& bk = layout_.block("attn.k");
  const auto& bv = layout_.block("attn.v");
  const auto& bo = layout_.block("attn.o");
  const auto& bh = layout_.block("head.w");

  const Vec t = ac.raw.array().tanh().matrix();
  const Vec raw_bar = (theta_bar.array() * c.theta_max * (1.0 - t.array().square())).matrix();
  weights_bar(phi_bar, bh, 2 * c.n_heights, F) += raw_bar * ac.output.transpose();
  bias_bar(phi_bar, layout_.block("head.b")) += raw_bar;
  const Vec out_bar = weights(phi, bh, 2 * c.n_heights, F).transpose() * raw_bar;

  std::vector<Vec> emb_bar(L, Vec::Zero(static_cast<Eigen::Index>(F)));
  emb_bar[L - 1] += out_bar;
  weights_bar(phi_bar, bo, F, F) += out_bar * ac.context.transpose();
  bias_bar(phi_bar, layout_.block("attn.o.b")) += out_bar;
  const Vec ctx_bar = weights(phi, bo, F, F).transpose() * out_bar;

  Vec w_bar(static_cast<Eigen::Index>(L));
  for (std::size_t i = 0; i < L; ++i) w_bar(static_cast<Eigen::Index>(i)) = ctx_bar.dot(ac.values[i]);
  const double mean_bar = ac.weights.dot(w_bar);
  const Vec score_bar = (ac.weights.array() * (w_bar.array() - mean_bar)).matrix();
  const double scale = 1.0 / std::sqrt(static_cast<double>(F));

  const auto Wk = weights(phi, bk, F, F);
  const auto Wv = weights(phi, bv, F, F);
  Vec query_bar = Vec::Zero(static_cast<Eigen::Index>(F));
  auto Wk_bar = weights_bar(phi_bar, bk, F, F);
  auto Wv_bar = weights_bar(phi_bar, bv, F, F);
  for (std::size_t i = 0; i < L; ++i) {
    const double sb = score_bar(static_cast<Eigen::Index>(i)) * scale;
    query_bar += sb * ac.keys[i];
    const Vec key_bar = sb * ac.query;
    const Vec value_bar = ac.weights(static_cast<Eigen::Index>(i)) * ctx_bar;
    Wk_bar += key_bar * ac.embedded[i].transpose();
    Wv_bar += value_bar * ac.embedded[i].transpose();
    emb_bar[i] += Wk.transpose() * key_bar + Wv.transpose() * value_bar;
  }
  weights_bar(phi_bar, bq, F, F) += query_bar * ac.embedded[L - 1].transpose();
  emb_bar[L - 1] += weights(phi, bq, F, F).transpose() * query_bar;
  return emb_bar;
}

std::vector<double> PhysicsExtractor::encode_backward(const EncodeCache& cache, std::span<const double> phi,
                                                      const Vec& features_bar, std::span<double> phi_bar,
                                                      bool want_input_grad) const {
  const auto& c = config_;
  const auto h1 = c.conv1_height(), w1 = c.conv1_width();
  const auto h2 = c.conv2_height(), w2 = c.conv2_width();
  const auto& bfc = layout_.block("fc.w");

  weights_bar(phi_bar, bfc, c.features, c.conv2_channels) += features_bar * cache.pooled.transpose();
  bias_bar(phi_bar, layout_.block("fc.b")) += features_bar;
  const Vec pooled_bar = weights(phi, bfc, c.features, c.conv2_channels).transpose() * features_bar;

  const auto plane2 = h2 * w2;
  std::vector<double> pre2_bar(cache.pre2.size(), 0.0);
  for (std::size_t ch = 0; ch < c.conv2_channels; ++ch) {
    const double g = pooled_bar(static_cast<Eigen::Index>(ch)) / static_cast<double>(plane2);
    for (std::size_t k = 0; k < plane2; ++k) {
      if (cache.pre2[ch * plane2 + k] > 0.0) pre2_bar[ch * plane2 + k] = g;
    }
  }

  std::vector<double> act1(cache.pre1.size());
  std::transform(cache.pre1.begin(), cache.pre1.end(), act1.begin(), [](double v) { return v > 0.0 ? v : 0.0; });
  std::vector<double> act1_bar(act1.size(), 0.0);
  const auto& bw2 = layout_.block("conv2.w");
  conv_backward(act1.data(), c.conv1_channels, h1, w1, phi.data() + bw2.offset, c.conv2_channels, c.kernel,
                c.stride, pre2_bar.data(), phi_bar.data() + bw2.offset,
                phi_bar.data() + layout_.block("conv2.b").offset, act1_bar.data());
  for (std::size_t k = 0; k < act1_bar.size(); ++k) {
    if (!(cache.pre1[k] > 0.0)) act1_bar[k] = 0.0;
  }

  std::vector<double> input_bar;
  if (want_input_grad) input_bar.assign(cache.input.size(), 0.0);
  const auto& bw1 = layout_.block("conv1.w");
  conv_backward(cache.input.data(), c.in_channels, c.height, c.width, phi.data() + bw1.offset, c.conv1_channels,
                c.kernel, c.stride, act1_bar.data(), phi_bar.data() + bw1.offset,
                phi_bar.data() + layout_.block("conv1.b").offset, want_input_grad ? input_bar.data() : nullptr);
  return input_bar;
}

Vec predict_advection(const PhysicsExtractor& net, std::span<const std::vector<double>> window,
                      std::span<const double> phi) {
  std::vector<Vec> features;
  features.reserve(window.size());
  for (const auto& x : window) features.push_back(net.encode(x, phi));
  return net.predict(features, phi);
}

WindowGradient backward(const PhysicsExtractor& net, std::span<const std::vector<double>> window,
                        std::span<const double> phi, const Vec& theta_bar, bool want_input_grad) {
  std::vector<EncodeCache> caches(window.size());
  std::vector<Vec> features;
  for (std::size_t i = 0; i < window.size(); ++i) features.push_back(net.encode(window[i], phi, &caches[i]));
  AttentionCache ac;
  net.predict(features, phi, &ac);
  WindowGradient out;
  out.phi_bar.assign(phi.size(), 0.0);
  const auto feat_bar = net.predict_backward(ac, phi, theta_bar, out.phi_bar);
  for (std::size_t i = 0; i < window.size(); ++i) {
    auto xb = net.encode_backward(caches[i], phi, feat_bar[i], out.phi_bar, want_input_grad);
    if (want_input_grad) out.input_bar.push_back(std::move(xb));
  }
  return out;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

GradientCheckReport gradient_check(const PhysicsExtractor& net, std::span<const std::vector<double>> window,
                                   std::span<const double> phi, const LossProbe& probe, std::size_t n_coords,
                                   std::uint64_t seed, const std::string& perturb_block, double gradient_scale) {
  const auto loss_at = [&](std::span<const double> p) {
    Vec theta = predict_advection(net, window, p);
    Vec unused(theta.size());
    return probe(theta, unused);
  };
  Vec theta = predict_advection(net, window, phi);
  Vec theta_bar(theta.size());
  probe(theta, theta_bar);
  auto grad = backward(net, window, phi, theta_bar, false).phi_bar;
  if (!perturb_block.empty()) {
    const auto& b = net.layout().block(perturb_block);
    for (std::size_t k = 0; k < b.size; ++k) grad[b.offset + k] *= gradient_scale;
  }

  GradientCheckReport report;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> coords(phi.size());
  for (std::size_t k = 0; k < coords.size(); ++k) coords[k] = k;
  // Every block is represented: its first coordinate, then a random subset.
  std::vector<std::size_t> chosen;
  for (const auto& b : net.layout().blocks) chosen.push_back(b.offset);
  std::shuffle(coords.begin(), coords.end(), rng);
  for (std::size_t k = 0; k < coords.size() && chosen.size() < n_coords; ++k) {
    if (std::find(chosen.begin(), chosen.end(), coords[k]) == chosen.end()) chosen.push_back(coords[k]);
  }

  std::vector<double> work(phi.begin(), phi.end());
  for (const auto& b : net.layout().blocks) report.per_layer.emplace_back(b.name, 0.0);
  for (std::size_t k : chosen) {
    const double h = 1e-4 * std::max(1.0, std::abs(phi[k]));
    work[k] = phi[k] + h;
    const double up = loss_at(work);
    work[k] = phi[k] - h;
    const double down = loss_at(work);
    work[k] = phi[k];
    const double numeric = (up - down) / (2.0 * h);
    const double err = relative_error(grad[k], numeric);
    report.max_rel_error = std::max(report.max_rel_error, err);
    for (std::size_t bi = 0; bi < net.layout().blocks.size(); ++bi) {
      const auto& b = net.layout().blocks[bi];
      if (k >= b.offset && k < b.offset + b.size) {
        report.per_layer[bi].second = std::max(report.per_layer[bi].second, err);
      }
    }
  }
  report.coordinates = chosen.size();
  report.passed = report.max_rel_error <= 1e-3;
  return report;
}

}  // namespace deepmide::extractor
