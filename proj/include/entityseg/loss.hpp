// Copyright 2026 The Entityseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Numeric references for the mask-head losses: Dice path losses of the
// global kernel bank, representative-kernel averaging, the overlap
// suppression loss and the total loss, with analytic gradients and a
// central-difference checker. Everything is 64-bit and single-threaded.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "entityseg/error.hpp"
#include "entityseg/json_io.hpp"
#include "entityseg/mask.hpp"

namespace entityseg {

constexpr double kDiceEpsilon = 1e-5;
constexpr int kNumPaths = 7;

using PathWeights = std::array<double, kNumPaths>;

// Height x width x channels, row-major with channels innermost.
class DenseMap {
 public:
  DenseMap(int height, int width, int channels)
      : DenseMap(height, width, channels,
                 std::vector<double>(static_cast<std::size_t>(std::max(height, 0)) *
                                         std::max(width, 0) * std::max(channels, 0),
                                     0.0)) {}

  DenseMap(int height, int width, int channels, std::vector<double> values)
      : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
    if (height < 1 || width < 1 || channels < 1) {
      throw ShapeError("dense map dimensions must be positive");
    }
    if (values_.size() != static_cast<std::size_t>(height) * width * channels) {
      throw ShapeError("dense map holds " + std::to_string(values_.size()) + " values, expected " +
                       std::to_string(static_cast<std::size_t>(height) * width * channels));
    }
    for (double v : values_) {
      if (!std::isfinite(v)) throw DomainError("dense map values must be finite");
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return values_.size(); }

  double at(std::size_t pixel, int c) const { return values_[pixel * channels_ + c]; }
  double& at(std::size_t pixel, int c) { return values_[pixel * channels_ + c]; }
  double at(int row, int col, int c) const {
    return at(static_cast<std::size_t>(row) * width_ + col, c);
  }

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& mutable_values() { return values_; }

  friend bool operator==(const DenseMap&, const DenseMap&) = default;

 private:
  int height_;
  int width_;
  int channels_;
  std::vector<double> values_;
};

inline Json tensor_to_json(const DenseMap& m) {
  Json j;
  j["shape"] = Json::array({m.height(), m.width(), m.channels()});
  j["data"] = m.values();
  return j;
}

inline DenseMap tensor_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("shape") || !j.contains("data")) {
    throw FormatError("tensor needs \"shape\" and \"data\"");
  }
  const auto shape = j.at("shape").get<std::vector<int>>();
  if (shape.size() < 2 || shape.size() > 3) {
    throw FormatError("tensor shape must be [height, width] or [height, width, channels]");
  }
  try {
    return DenseMap(shape[0], shape[1], shape.size() == 3 ? shape[2] : 1,
                    j.at("data").get<std::vector<double>>());
  } catch (const ShapeError& e) {
    throw FormatError(e.what());
  }
}

// Appends two channels holding (row - center_row) / height and
// (col - center_col) / width.
inline DenseMap append_relative_coordinates(const DenseMap& features, double center_row,
                                            double center_col) {
  const int c_in = features.channels();
  DenseMap out(features.height(), features.width(), c_in + 2);
  for (int r = 0; r < features.height(); ++r) {
    for (int c = 0; c < features.width(); ++c) {
      const std::size_t p = static_cast<std::size_t>(r) * features.width() + c;
      for (int k = 0; k < c_in; ++k) out.at(p, k) = features.at(p, k);
      out.at(p, c_in) = (r - center_row) / features.height();
      out.at(p, c_in + 1) = (c - center_col) / features.width();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mask head.

// One 1x1 convolution: out = W * in + b per pixel, W is out x in row-major.
struct LayerWeights {
  int out = 0;
  int in = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  static LayerWeights zeros(int out, int in) {
    return {out, in, std::vector<double>(static_cast<std::size_t>(out) * in, 0.0),
            std::vector<double>(static_cast<std::size_t>(out), 0.0)};
  }

  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

using HeadWeights = std::array<LayerWeights, 3>;

// Packs layers as [W0, b0, W1, b1, W2, b2].
inline std::vector<double> flatten_head(const HeadWeights& head) {
  std::vector<double> flat;
  for (const auto& l : head) {
    flat.insert(flat.end(), l.weight.begin(), l.weight.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

inline HeadWeights unflatten_head(std::span<const double> flat, int in_channels, int hidden1,
                                  int hidden2) {
  const std::array<std::pair<int, int>, 3> shapes{
      {{hidden1, in_channels}, {hidden2, hidden1}, {1, hidden2}}};
  HeadWeights head;
  std::size_t pos = 0;
  for (int l = 0; l < 3; ++l) {
    head[l] = LayerWeights::zeros(shapes[l].first, shapes[l].second);
    const std::size_t need = head[l].parameter_count();
    if (pos + need > flat.size()) throw ShapeError("flat kernel too short for the head shape");
    std::copy_n(flat.begin() + pos, head[l].weight.size(), head[l].weight.begin());
    pos += head[l].weight.size();
    std::copy_n(flat.begin() + pos, head[l].bias.size(), head[l].bias.begin());
    pos += head[l].bias.size();
  }
  if (pos != flat.size()) throw ShapeError("flat kernel too long for the head shape");
  return head;
}

// Path r in 1..7 uses layer code 8 - r read as three bits, first layer most
// significant; a set bit selects the dynamic weights. Path 1 is "111" (all
// dynamic), path 4 is "100", path 7 is "001". The all-static "000" path is
// not part of the bank.
struct PathSpec {
  int index = 1;
  std::array<bool, 3> dynamic{true, true, true};
  double weight = 1.0;

  static PathSpec from_index(int r, double weight = 1.0) {
    if (r < 1 || r > kNumPaths) throw DomainError("path index must lie in 1..7");
    const int code = 8 - r;
    return {r, {(code & 4) != 0, (code & 2) != 0, (code & 1) != 0}, weight};
  }

  static PathSpec from_code(const std::string& code, double weight = 1.0) {
    if (code.size() != 3 || code.find_first_not_of("01") != std::string::npos || code == "000") {
      throw DomainError("path code must be three binary digits other than 000");
    }
    const int value = (code[0] - '0') * 4 + (code[1] - '0') * 2 + (code[2] - '0');
    return from_index(8 - value, weight);
  }

  std::string code() const {
    std::string s;
    for (bool d : dynamic) s += d ? '1' : '0';
    return s;
  }
};

inline PathWeights default_path_weights() { return {1.0, 1.0, 1.0, 0.25, 0.25, 0.25, 0.25}; }

// Reads {"path_weights": [w1, ..., w7]} (path 1 first).
inline PathWeights load_path_weights(const std::filesystem::path& path) {
  const Json doc = read_json_file(path);
  if (!doc.contains("path_weights") || !doc.at("path_weights").is_array() ||
      doc.at("path_weights").size() != kNumPaths) {
    throw ConfigError(path.string() + ": \"path_weights\" must list 7 numbers");
  }
  PathWeights w{};
  for (int r = 0; r < kNumPaths; ++r) {
    const Json& v = doc.at("path_weights")[r];
    if (!v.is_number() || !(v.get<double>() >= 0.0) || !std::isfinite(v.get<double>())) {
      throw ConfigError(path.string() + ": path weights must be finite and non-negative");
    }
    w[r] = v.get<double>();
  }
  return w;
}

namespace detail {

inline void check_layer(const LayerWeights& l, int expected_in, int index) {
  const std::string who = "mask head layer " + std::to_string(index);
  if (l.in != expected_in) {
    throw ShapeError(who + " expects " + std::to_string(l.in) + " inputs, got " +
                     std::to_string(expected_in));
  }
  if (l.weight.size() != static_cast<std::size_t>(l.out) * l.in ||
      l.bias.size() != static_cast<std::size_t>(l.out) || l.out < 1) {
    throw ShapeError(who + " has inconsistent weight/bias sizes");
  }
}

}  // namespace detail

// Three 1x1 layers with ReLU after the first two; single-channel logits out.
inline DenseMap mask_head_forward(const DenseMap& features, const HeadWeights& dynamic,
                                  const HeadWeights& fixed, const PathSpec& path) {
  std::array<const LayerWeights*, 3> layers{};
  int in = features.channels();
  for (int l = 0; l < 3; ++l) {
    layers[l] = path.dynamic[l] ? &dynamic[l] : &fixed[l];
    detail::check_layer(*layers[l], in, l);
    in = layers[l]->out;
  }
  if (in != 1) throw ShapeError("mask head must end in a single channel");

  DenseMap out(features.height(), features.width(), 1);
  std::vector<double> a, b;
  for (std::size_t p = 0; p < features.pixels(); ++p) {
    a.assign(features.values().begin() + static_cast<std::ptrdiff_t>(p * features.channels()),
             features.values().begin() + static_cast<std::ptrdiff_t>((p + 1) * features.channels()));
    for (int l = 0; l < 3; ++l) {
      const LayerWeights& w = *layers[l];
      b.assign(static_cast<std::size_t>(w.out), 0.0);
      for (int o = 0; o < w.out; ++o) {
        double acc = w.bias[o];
        for (int i = 0; i < w.in; ++i) acc += w.weight[static_cast<std::size_t>(o) * w.in + i] * a[i];
        b[o] = l < 2 ? std::max(acc, 0.0) : acc;
      }
      std::swap(a, b);
    }
    out.at(p, 0) = a[0];
  }
  return out;
}

inline double logistic(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline DenseMap logistic(const DenseMap& logits) {
  DenseMap out = logits;
  for (double& v : out.mutable_values()) v = logistic(v);
  return out;
}

// ---------------------------------------------------------------------------
// Dice.

namespace detail {

inline void check_single_channel(const DenseMap& probs, const BinaryMask& target) {
  if (probs.channels() != 1) throw ShapeError("dice expects a single-channel map");
  if (probs.height() != target.height() || probs.width() != target.width()) {
    throw ShapeError("dice probability map and target differ in size");
  }
}

inline void check_probabilities(const DenseMap& probs) {
  for (double v : probs.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("dice probabilities must lie in [0, 1]");
  }
}

struct DiceTerms {
  double overlap = 0.0;   // sum p*y
  double pred_sq = 0.0;   // sum p^2
  double target_sq = 0.0; // sum y^2

  double loss(double eps) const {
    return 1.0 - (2.0 * overlap + eps) / (pred_sq + target_sq + eps);
  }
  // d loss / d p_i given y_i.
  double grad(double p, double y, double eps) const {
    const double num = 2.0 * overlap + eps;
    const double den = pred_sq + target_sq + eps;
    return -(2.0 * y * den - num * 2.0 * p) / (den * den);
  }
};

}  // namespace detail

// 1 - (2 sum p*y + eps) / (sum p^2 + sum y^2 + eps)
inline double dice_loss(const DenseMap& probs, const BinaryMask& target,
                        double eps = kDiceEpsilon) {
  detail::check_single_channel(probs, target);
  detail::check_probabilities(probs);
  if (!(eps > 0.0)) throw DomainError("dice epsilon must be positive");
  detail::DiceTerms t;
  const auto y = target.bits();
  for (std::size_t i = 0; i < probs.pixels(); ++i) {
    const double p = probs.at(i, 0);
    t.overlap += p * y[i];
    t.pred_sq += p * p;
    t.target_sq += y[i];
  }
  return t.loss(eps);
}

inline DenseMap dice_loss_gradient(const DenseMap& probs, const BinaryMask& target,
                                   double eps = kDiceEpsilon) {
  detail::check_single_channel(probs, target);
  if (!(eps > 0.0)) throw DomainError("dice epsilon must be positive");
  detail::DiceTerms t;
  const auto y = target.bits();
  for (std::size_t i = 0; i < probs.pixels(); ++i) {
    const double p = probs.at(i, 0);
    t.overlap += p * y[i];
    t.pred_sq += p * p;
    t.target_sq += y[i];
  }
  DenseMap g(probs.height(), probs.width(), 1);
  for (std::size_t i = 0; i < probs.pixels(); ++i) g.at(i, 0) = t.grad(probs.at(i, 0), y[i], eps);
  return g;
}

// ---------------------------------------------------------------------------
// Global kernel bank.

struct KernelBankLoss {
  double total = 0.0;
  PathWeights dice{};     // unweighted Dice per path (0 when skipped)
  PathWeights weighted{}; // lambda_r * dice_r
};

inline double single_path_loss(const DenseMap& features, const HeadWeights& dynamic,
                               const HeadWeights& fixed, const BinaryMask& target, int r,
                               double eps = kDiceEpsilon) {
  return dice_loss(logistic(mask_head_forward(features, dynamic, fixed, PathSpec::from_index(r))),
                   target, eps);
}

// sum_r lambda_r * Dice(sigmoid(head_r(features)), target); paths with a
// zero weight are not evaluated.
inline KernelBankLoss kernel_bank_loss(const DenseMap& features, const HeadWeights& dynamic,
                                       const HeadWeights& fixed, const BinaryMask& target,
                                       const PathWeights& weights = default_path_weights(),
                                       double eps = kDiceEpsilon) {
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("path weights must be non-negative");
  }
  KernelBankLoss out;
  for (int r = 1; r <= kNumPaths; ++r) {
    const double w = weights[r - 1];
    if (w == 0.0) continue;
    out.dice[r - 1] = single_path_loss(features, dynamic, fixed, target, r, eps);
    out.weighted[r - 1] = w * out.dice[r - 1];
    out.total += out.weighted[r - 1];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Representative kernels.

struct KernelSet {
  std::vector<std::vector<double>> kernels;
  std::vector<EntityId> assignment;  // kernel index -> entity in 1..num_entities
  std::size_t num_entities = 0;
};

// Mean of the kernels assigned to each entity; element n-1 belongs to entity n.
inline std::vector<std::vector<double>> representative_kernels(const KernelSet& set) {
  if (set.assignment.size() != set.kernels.size()) {
    throw AssignmentError("every kernel needs exactly one entity assignment");
  }
  const std::size_t dim = set.kernels.empty() ? 0 : set.kernels.front().size();
  std::vector<std::vector<double>> sums(set.num_entities, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> counts(set.num_entities, 0);
  for (std::size_t m = 0; m < set.kernels.size(); ++m) {
    const EntityId n = set.assignment[m];
    if (n < 1 || n > set.num_entities) {
      throw AssignmentError("kernel " + std::to_string(m) + " assigned to unknown entity " +
                            std::to_string(n));
    }
    if (set.kernels[m].size() != dim) throw ShapeError("kernels differ in length");
    for (std::size_t d = 0; d < dim; ++d) sums[n - 1][d] += set.kernels[m][d];
    ++counts[n - 1];
  }
  for (std::size_t n = 0; n < set.num_entities; ++n) {
    if (counts[n] == 0) {
      throw AssignmentError("entity " + std::to_string(n + 1) + " has no kernels");
    }
    for (double& v : sums[n]) v /= static_cast<double>(counts[n]);
  }
  return sums;
}

// Stacks the all-dynamic head output of each representative kernel into one
// channel per entity.
inline DenseMap representative_logits(const DenseMap& features,
                                      std::span<const std::vector<double>> representatives,
                                      int hidden1, int hidden2) {
  if (representatives.empty()) throw ShapeError("no representative kernels");
  DenseMap out(features.height(), features.width(), static_cast<int>(representatives.size()));
  for (std::size_t n = 0; n < representatives.size(); ++n) {
    const HeadWeights head =
        unflatten_head(representatives[n], features.channels(), hidden1, hidden2);
    const DenseMap logits = mask_head_forward(features, head, head, PathSpec::from_index(1));
    for (std::size_t p = 0; p < features.pixels(); ++p) out.at(p, static_cast<int>(n)) = logits.at(p, 0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Overlap suppression.

enum class Squash { kSoftmax, kSigmoid, kMixed };

inline Squash parse_squash(const std::string& name) {
  if (name == "softmax") return Squash::kSoftmax;
  if (name == "sigmoid") return Squash::kSigmoid;
  if (name == "mixed") return Squash::kMixed;
  throw ConfigError("unknown squashing \"" + name + "\"");
}

// Per-pixel softmax across channels.
inline DenseMap softmax_channels(const DenseMap& logits) {
  DenseMap out = logits;
  const int n = logits.channels();
  for (std::size_t p = 0; p < logits.pixels(); ++p) {
    double mx = logits.at(p, 0);
    for (int k = 1; k < n; ++k) mx = std::max(mx, logits.at(p, k));
    double sum = 0.0;
    for (int k = 0; k < n; ++k) sum += (out.at(p, k) = std::exp(logits.at(p, k) - mx));
    for (int k = 0; k < n; ++k) out.at(p, k) /= sum;
  }
  return out;
}

struct LossWithGradient {
  double loss = 0.0;
  DenseMap gradient{1, 1, 1};
};

namespace detail {

// Mean over channels of the channel Dice, restricted to non-void pixels,
// with the gradient w.r.t. the squashed probabilities.
inline LossWithGradient masked_channel_dice(const DenseMap& probs, const EntityMap& target,
                                            std::span<const EntityId> ids, double eps) {
  const int n = probs.channels();
  const auto t = target.ids();
  std::vector<DiceTerms> terms(static_cast<std::size_t>(n));
  for (std::size_t p = 0; p < probs.pixels(); ++p) {
    if (t[p] == 0) continue;
    for (int k = 0; k < n; ++k) {
      const double s = probs.at(p, k);
      const double y = t[p] == ids[k] ? 1.0 : 0.0;
      terms[k].overlap += s * y;
      terms[k].pred_sq += s * s;
      terms[k].target_sq += y;
    }
  }
  LossWithGradient out{0.0, DenseMap(probs.height(), probs.width(), n)};
  for (int k = 0; k < n; ++k) out.loss += terms[k].loss(eps);
  out.loss /= n;
  for (std::size_t p = 0; p < probs.pixels(); ++p) {
    if (t[p] == 0) continue;
    for (int k = 0; k < n; ++k) {
      const double y = t[p] == ids[k] ? 1.0 : 0.0;
      out.gradient.at(p, k) = terms[k].grad(probs.at(p, k), y, eps) / n;
    }
  }
  return out;
}

inline LossWithGradient squashed_loss(const DenseMap& logits, const EntityMap& target,
                                      std::span<const EntityId> ids, Squash squash, double eps) {
  const int n = logits.channels();
  if (squash == Squash::kSoftmax) {
    const DenseMap s = softmax_channels(logits);
    LossWithGradient r = masked_channel_dice(s, target, ids, eps);
    for (std::size_t p = 0; p < s.pixels(); ++p) {
      double dot = 0.0;
      for (int k = 0; k < n; ++k) dot += r.gradient.at(p, k) * s.at(p, k);
      for (int k = 0; k < n; ++k) r.gradient.at(p, k) = s.at(p, k) * (r.gradient.at(p, k) - dot);
    }
    return r;
  }
  const DenseMap s = logistic(logits);
  LossWithGradient r = masked_channel_dice(s, target, ids, eps);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double v = s.values()[i];
    r.gradient.mutable_values()[i] *= v * (1.0 - v);
  }
  return r;
}

}  // namespace detail

// Loss over a per-entity logit stack (channel k belongs to the k-th
// smallest ground-truth id). Void pixels (id 0) are excluded from every
// sum; a fully void target gives zero loss and zero gradient.
inline LossWithGradient overlap_suppression_loss_with_gradient(const DenseMap& logits,
                                                               const EntityMap& target,
                                                               Squash squash = Squash::kSoftmax,
                                                               double eps = kDiceEpsilon) {
  if (logits.height() != target.height() || logits.width() != target.width()) {
    throw ShapeError("logit stack and target differ in size");
  }
  const std::vector<EntityId> ids = target.entity_ids();
  LossWithGradient out{0.0, DenseMap(logits.height(), logits.width(), logits.channels())};
  if (ids.empty()) return out;
  if (static_cast<std::size_t>(logits.channels()) != ids.size()) {
    throw ShapeError("logit stack has " + std::to_string(logits.channels()) +
                     " channels for " + std::to_string(ids.size()) + " ground-truth entities");
  }
  if (squash != Squash::kMixed) return detail::squashed_loss(logits, target, ids, squash, eps);
  const auto a = detail::squashed_loss(logits, target, ids, Squash::kSoftmax, eps);
  const auto b = detail::squashed_loss(logits, target, ids, Squash::kSigmoid, eps);
  out.loss = 0.5 * a.loss + 0.5 * b.loss;
  for (std::size_t i = 0; i < out.gradient.size(); ++i) {
    out.gradient.mutable_values()[i] =
        0.5 * a.gradient.values()[i] + 0.5 * b.gradient.values()[i];
  }
  return out;
}

inline double overlap_suppression_loss(const DenseMap& logits, const EntityMap& target,
                                       Squash squash = Squash::kSoftmax,
                                       double eps = kDiceEpsilon) {
  return overlap_suppression_loss_with_gradient(logits, target, squash, eps).loss;
}

// Detection loss is an opaque input.
inline double total_loss(double det_loss, double overlap_loss, double bank_loss) {
  if (!std::isfinite(det_loss) || !std::isfinite(overlap_loss) || !std::isfinite(bank_loss)) {
    throw DomainError("loss terms must be finite");
  }
  return det_loss + overlap_loss + bank_loss;
}

// ---------------------------------------------------------------------------
// Gradient checking.

// Largest per-coordinate |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// with central differences of the given step.
inline double grad_check(const std::function<double(const DenseMap&)>& loss,
                         const std::function<DenseMap(const DenseMap&)>& gradient,
                         const DenseMap& point, double step) {
  if (!(step > 0.0)) throw DomainError("finite-difference step must be positive");
  const DenseMap analytic = gradient(point);
  if (analytic.size() != point.size()) throw ShapeError("gradient shape differs from the point");
  DenseMap probe = point;
  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x = point.values()[i];
    probe.mutable_values()[i] = x + step;
    const double up = loss(probe);
    probe.mutable_values()[i] = x - step;
    const double down = loss(probe);
    probe.mutable_values()[i] = x;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic.values()[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace entityseg
