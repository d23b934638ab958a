#pragma once

#include <map>
#include <string>
#include <vector>

#include "anchors/anchors.hpp"
#include "encoder/model.hpp"

namespace fge {

struct AttackConfig {
  double epsilon = 8.0 / 255.0;  // L-inf budget in [0,1] pixel units
  double alpha = 2.0 / 255.0;    // per-step magnitude
  std::size_t steps = 8;
  double mu = 1.0;      // momentum decay
  double lambda = 1.0;  // push term weight
  std::vector<int> layers = {3, 4};        // captured block indices
  std::vector<double> omega = {0.5, 0.5};  // per-layer weights, same order
  bool clamp_each_step = false;  // keep x+delta feasible after every step
};

struct StepRecord {
  std::size_t iter = 0;
  double total = 0.0;
  std::map<int, double> pull, push;
  double grad_inf = 0.0;   // accumulated momentum, L-inf
  double delta_inf = 0.0;  // current perturbation, L-inf
};

struct AttackTrace {
  std::vector<StepRecord> steps;
};

struct AttackResult {
  Tensor image;  // same shape as the input, values in [0,1]
  AttackTrace trace;
};

struct LossBreakdown {
  TensorPtr total;
  std::map<int, double> pull, push;
  double total_value = 0.0;
};

// Differentiable native-to-encoder downscale: one pass of the 4-tap binomial
// kernel per axis (mirror padding), then a half-pixel-center bilinear
// reduction to 32x32. Constants survive exactly.
TensorPtr resample(Tape& t, const TensorPtr& img);

// Forward-only convenience for preprocessing.
Tensor resample_plain(const Tensor& img);

// Anchor guidance loss over the captured layers: per layer l,
//   pull_l = sum_a (1 - cos(z_l, a_real)),  push_l = sum_a cos(z_l, a_fake),
//   total  = sum_l omega_l * (pull_l + lambda * push_l).
// The omega keys must equal the z_layers keys exactly.
LossBreakdown mmg_loss(Tape& t, const std::map<int, TensorPtr>& z_layers,
                       const AnchorSet& anchors, double lambda,
                       const std::map<int, double>& omega);

// Momentum-iterative signed descent on the guidance loss within the L-inf
// ball around image. Deterministic; depends only on the arguments.
AttackResult attack(const Tensor& image, const DualEncoder& enc,
                    const AnchorSet& anchors, const AttackConfig& cfg);

// Anchor-free variant: minimizes the cosine between the perturbed and the
// frozen clean embeddings at the same layers (recorded in the pull slots).
AttackResult untargeted_attack(const Tensor& image, const DualEncoder& enc,
                               const AttackConfig& cfg);

void write_trace_csv(const AttackTrace& trace, const std::string& path);

}  // namespace fge
