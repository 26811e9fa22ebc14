#pragma once

// Finite-difference checks shared by the unit tests and the acceptance run.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "wmnet/random.hpp"
#include "wmnet/tensor.hpp"

namespace gradcheck {

inline constexpr double kLayerStep = 1e-3;

/// Norm-wise relative error between `analytic` and central differences of
/// `loss` over up to 32 randomly chosen entries of `x`.
double layer_error(wmnet::Tensor& x, const wmnet::Tensor& analytic,
                   const std::function<double()>& loss, wmnet::Rng& rng);

struct LayerResult {
  std::string name;  // e.g. "conv2d stride 2 same: kernels"
  double error = 0.0;
};

/// Every layer primitive's vector-Jacobian products (inputs and parameters,
/// each geometry and mode in use) against central differences.
std::vector<LayerResult> layer_suite(std::uint64_t seed);

struct StageResult {
  std::string name;
  std::size_t checked = 0;
  double worst_error = 0.0;
};

struct PipelineReport {
  std::vector<StageResult> stages;  // host, mark, embed, extract
  double host_branch_gradient = 0.0;
  double mark_branch_gradient = 0.0;
};

/// d(l3)/d(parameter) of the full train-mode pipeline (embed, attack,
/// extract) against central differences, for `per_stage` parameters in each
/// of the four networks. Parameters are drawn at random and the ones with the
/// largest analytic gradient are probed, so float32 rounding in the loss
/// does not swamp the difference quotient.
PipelineReport pipeline_spot_check(std::uint64_t seed, std::size_t per_stage);

}  // namespace gradcheck
