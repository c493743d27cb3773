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

// Randomized self-checks for the loss references: analytic gradients
// against central differences, kernel-bank decomposition, softmax
// normalization and representative-kernel invariants.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "entityseg/loss.hpp"
#include "entityseg/prng.hpp"

namespace entityseg {

struct LossCheckRow {
  std::string name;
  std::size_t fixtures = 0;
  double worst = 0.0;
  double tolerance = 0.0;
  bool passed() const { return worst <= tolerance; }
};

struct LossFixture {
  DenseMap probs{1, 1, 1};      // dice point, values in [0.05, 0.95]
  BinaryMask dice_target{1, 1};
  DenseMap logits{1, 1, 1};     // one channel per target entity
  EntityMap target{1, 1};       // entity ids 1..n plus void
};

inline LossFixture make_loss_fixture(std::uint64_t seed, std::size_t index) {
  Pcg32 rng(seed, index);
  const int h = rng.range(2, 6);
  const int w = rng.range(2, 6);
  LossFixture f;
  f.probs = DenseMap(h, w, 1);
  f.dice_target = BinaryMask(h, w);
  for (std::size_t p = 0; p < f.probs.pixels(); ++p) {
    f.probs.at(p, 0) = rng.uniform(0.05, 0.95);
    f.dice_target.mutable_bits()[p] = rng.bounded(2) ? 1 : 0;
  }
  const int n = rng.range(1, 4);
  f.target = EntityMap(h, w);
  auto ids = f.target.mutable_ids();
  // Each entity gets one guaranteed pixel, the rest are random or void.
  for (std::size_t p = 0; p < ids.size(); ++p) {
    ids[p] = rng.uniform() < 0.2 ? 0 : 1 + rng.bounded(static_cast<std::uint32_t>(n));
  }
  for (int k = 0; k < n && static_cast<std::size_t>(k) < ids.size(); ++k) {
    ids[static_cast<std::size_t>(k)] = static_cast<EntityId>(k + 1);
  }
  const int channels = static_cast<int>(f.target.entity_ids().size());
  f.logits = DenseMap(h, w, channels);
  for (double& v : f.logits.mutable_values()) v = rng.uniform(-2.0, 2.0);
  return f;
}

inline HeadWeights random_head(Pcg32& rng, int in, int hidden1, int hidden2) {
  HeadWeights head{LayerWeights::zeros(hidden1, in), LayerWeights::zeros(hidden2, hidden1),
                   LayerWeights::zeros(1, hidden2)};
  for (auto& l : head) {
    for (double& v : l.weight) v = rng.uniform(-1.0, 1.0);
    for (double& v : l.bias) v = rng.uniform(-0.5, 0.5);
  }
  return head;
}

inline std::vector<LossCheckRow> run_loss_checks(std::uint64_t seed, std::size_t fixtures,
                                                 const PathWeights& weights, double step = 1e-6) {
  LossCheckRow dice{"dice_loss gradient", fixtures, 0.0, 1e-4};
  LossCheckRow soft{"overlap_suppression gradient (softmax)", fixtures, 0.0, 1e-4};
  LossCheckRow sig{"overlap_suppression gradient (sigmoid)", fixtures, 0.0, 1e-4};
  LossCheckRow mix{"overlap_suppression gradient (mixed)", fixtures, 0.0, 1e-4};
  LossCheckRow norm{"softmax channel sums at non-void pixels", fixtures, 0.0, 1e-12};
  LossCheckRow bank{"kernel_bank_loss decomposition", fixtures, 0.0, 1e-12};
  LossCheckRow reps{"representative_kernels permutation invariance", fixtures, 0.0, 1e-12};

  for (std::size_t i = 0; i < fixtures; ++i) {
    const LossFixture f = make_loss_fixture(seed, i);
    dice.worst = std::max(
        dice.worst,
        grad_check([&](const DenseMap& p) { return dice_loss(p, f.dice_target); },
                   [&](const DenseMap& p) { return dice_loss_gradient(p, f.dice_target); },
                   f.probs, step));
    for (auto [row, squash] : {std::pair{&soft, Squash::kSoftmax},
                               std::pair{&sig, Squash::kSigmoid},
                               std::pair{&mix, Squash::kMixed}}) {
      const Squash s = squash;
      row->worst = std::max(
          row->worst,
          grad_check(
              [&](const DenseMap& z) { return overlap_suppression_loss(z, f.target, s); },
              [&](const DenseMap& z) {
                return overlap_suppression_loss_with_gradient(z, f.target, s).gradient;
              },
              f.logits, step));
    }
    const DenseMap sm = softmax_channels(f.logits);
    for (std::size_t p = 0; p < sm.pixels(); ++p) {
      if (f.target.ids()[p] == 0) continue;
      double sum = 0.0;
      for (int k = 0; k < sm.channels(); ++k) sum += sm.at(p, k);
      norm.worst = std::max(norm.worst, std::abs(sum - 1.0));
    }

    Pcg32 rng(seed ^ 0xb5ad4eceda1ce2a9ULL, i);
    const int in = 3 + rng.range(0, 2);
    const int h1 = rng.range(1, 4);
    const int h2 = rng.range(1, 4);
    DenseMap features(f.probs.height(), f.probs.width(), in - 2);
    for (double& v : features.mutable_values()) v = rng.uniform(-1.0, 1.0);
    features = append_relative_coordinates(features, f.probs.height() / 2.0, f.probs.width() / 2.0);
    const HeadWeights dyn = random_head(rng, in, h1, h2);
    const HeadWeights fix = random_head(rng, in, h1, h2);
    const KernelBankLoss total = kernel_bank_loss(features, dyn, fix, f.dice_target, weights);
    double by_path = 0.0;
    for (int r = 1; r <= kNumPaths; ++r) {
      if (weights[r - 1] == 0.0) continue;
      by_path += weights[r - 1] * single_path_loss(features, dyn, fix, f.dice_target, r);
    }
    bank.worst = std::max(bank.worst, std::abs(total.total - by_path));

    KernelSet set;
    set.num_entities = static_cast<std::size_t>(rng.range(1, 3));
    const int per_kernel = rng.range(1, 5);
    for (std::size_t n = 1; n <= set.num_entities; ++n) {
      const int m = rng.range(1, 4);
      for (int j = 0; j < m; ++j) {
        std::vector<double> k(static_cast<std::size_t>(per_kernel));
        for (double& v : k) v = rng.uniform(-1.0, 1.0);
        set.kernels.push_back(std::move(k));
        set.assignment.push_back(static_cast<EntityId>(n));
      }
    }
    const auto base = representative_kernels(set);
    KernelSet shuffled = set;
    for (std::size_t a = shuffled.kernels.size(); a > 1; --a) {
      const std::size_t b = rng.bounded(static_cast<std::uint32_t>(a));
      std::swap(shuffled.kernels[a - 1], shuffled.kernels[b]);
      std::swap(shuffled.assignment[a - 1], shuffled.assignment[b]);
    }
    const auto perm = representative_kernels(shuffled);
    for (std::size_t n = 0; n < base.size(); ++n) {
      for (std::size_t d = 0; d < base[n].size(); ++d) {
        reps.worst = std::max(reps.worst, std::abs(base[n][d] - perm[n][d]));
      }
    }
  }
  return {dice, soft, sig, mix, norm, bank, reps};
}

}  // namespace entityseg
