#ifndef PATCHRL_ZO_HPP
#define PATCHRL_ZO_HPP

#include <functional>
#include <string>

#include "patchrl/episode.hpp"
#include "patchrl/image.hpp"
#include "patchrl/model.hpp"
#include "patchrl/rng.hpp"

namespace patchrl::zo {

/// Patch lifted to unbounded tanh space: image values x = (1 + tanh phi)/2.
struct PhiPatch {
  int height = 0, width = 0, channels = 0;
  int origin_col = 0, origin_row = 0;
  Eigen::ArrayXd values;  // same layout as img::Image::data
};

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double learning_rate = 0.01;
  double stabilizer = 1e-8;
};

struct ZoConfig {
  double offset = 1e-3;      // finite-difference half-step in phi space
  int coords_per_step = 16;  // random masked coordinates refined per round
  AdamParams adam;
  long max_queries = 2000;
};

/// x-space -> phi-space. Pixels are clamped into [delta, 1-delta]
/// (delta = 1e-6) before arctanh.
PhiPatch to_phi(const img::Image& patch, int origin_col, int origin_row);
/// phi-space -> x-space: (1 + tanh(phi)) / 2.
img::Image to_x(const PhiPatch& phi);

/// Symmetric difference quotient along one coordinate:
/// (loss(phi + eps*e) - loss(phi - eps*e)) / (2 eps).
/// Consumes exactly two loss evaluations.
double zo_gradient(const Eigen::ArrayXd& phi, int coordinate, double offset,
                   const std::function<double(const Eigen::ArrayXd&)>& loss_fn);

/// Query-only coordinate refinement of a patch at a fixed position: rounds
/// of coordinate-wise difference-quotient estimates fed into per-coordinate
/// ADAM ascent on the oracle reward. Stops at the first successful verdict
/// seen on any query, or when the query budget is exhausted.
loop::AttackResult adam_zo_refine(const img::Image& x, const img::Image& init_patch,
                                  int origin_col, int origin_row,
                                  models::TargetOracle& oracle, attack::Mode mode,
                                  const std::string& label, const ZoConfig& cfg,
                                  rng::Stream& rs);

/// Combined attack: the policy-driven stage runs with the gradient
/// regularizer enabled; on failure its best patch and position seed the ZO
/// refinement. Query counts of both stages are totaled.
loop::AttackResult so_then_zo(const img::Image& x, const loop::EpisodeConfig& cfg_so,
                              const ZoConfig& cfg_zo, agent::AgentNet& net,
                              const attack::Surrogates& surrogates,
                              models::TargetOracle& oracle,
                              const img::ValidRegion& valid, rng::Stream& rs);

}  // namespace patchrl::zo

#endif  // PATCHRL_ZO_HPP
