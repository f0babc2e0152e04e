#ifndef PATCHRL_AGENT_HPP
#define PATCHRL_AGENT_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "patchrl/attack.hpp"
#include "patchrl/image.hpp"
#include "patchrl/nn.hpp"
#include "patchrl/rng.hpp"

namespace patchrl::agent {

struct AgentConfig {
  int levels = 3;         // encoder/decoder depth (clamped to what dims allow)
  int base_channels = 16; // channels at the top level, doubled per level
};

/// n x h x w map produced by the agent; channel i scores positions for
/// surrogate i.
struct FeatureMap {
  int channels = 0, height = 0, width = 0;
  nn::Arr data;  // CHW
};

/// The three sampling distributions of one epoch.
struct PolicySet {
  int grid_height = 0, grid_width = 0;
  Eigen::VectorXd position_probs;  // h*w; exactly 0 at invalid origins; sums to 1
  Eigen::VectorXd weight_means;    // softmax of channel means; sums to 1
  double weight_sigma = 0.01;
  Eigen::VectorXd step_probs;      // over the 20-value step grid; sums to 1
};

/// One sampled set of attack variables.
struct Action {
  int origin_col = 0, origin_row = 0;
  int position_index = 0;  // row * grid_width + col
  attack::EnsembleWeights rho;
  int step_index = 0;
  double step_size = 0.0;
};

/// Pre-clip Gaussian weight draws; the Gaussian score function is evaluated
/// at these, not at the normalized weights.
struct RawDraws {
  Eigen::VectorXd weight_draws;
};

struct SampleEntry {
  Action action;
  RawDraws raws;
  double reward = 0.0;
  // Ablation variants drop policy factors from the update.
  bool used_weight_policy = true;
  bool used_step_policy = true;
};

struct SampleBatch {
  img::Image state;
  std::vector<SampleEntry> entries;
};

/// Encoder-decoder policy network with skip connections. The output feature
/// map has one channel per surrogate and the input's spatial dims; a dense
/// head maps the masked position distribution to the 20 step-size logits.
///
/// An instance is owned by exactly one attack episode: it is constructed
/// fresh (seeded) per attacked image and carries that image's valid-origin
/// mask so the step head sees the same masked distribution that is sampled.
class AgentNet {
 public:
  AgentNet(nn::Shape input, int n_surrogates, const img::ValidRegion& valid,
           const AgentConfig& cfg, std::uint64_t seed);

  int n_surrogates() const { return n_surrogates_; }
  nn::Shape input_shape() const { return input_; }
  const nn::Arr& valid_mask() const { return valid_mask_; }
  int effective_levels() const { return levels_; }

  std::vector<nn::Arr>& params() { return params_; }
  const std::vector<nn::Arr>& params() const { return params_; }
  /// Parameter indices of the step head (frozen-parameter checks).
  std::pair<int, int> step_head_param_range() const { return {fc_weight_index_, fc_weight_index_ + 2}; }

  /// Node handles of one forward construction on a tape.
  struct Graph {
    int feature_map = -1;
    int position_probs = -1;  // masked + renormalized
    int weight_means = -1;
    int step_logits = -1;
    int step_probs = -1;
    std::vector<int> bound_params;
  };
  Graph build_graph(nn::Tape& tape, const img::Image& x, bool with_param_grad) const;

  /// Deterministic forward pass: feature map plus step-size logits.
  std::pair<FeatureMap, Eigen::VectorXd> forward(const img::Image& x) const;

 private:
  nn::Shape input_;
  int n_surrogates_ = 0;
  int levels_ = 0;
  int base_channels_ = 0;
  nn::Arr valid_mask_;  // h*w of {0,1}
  std::vector<nn::Arr> params_;
  std::vector<nn::Shape> param_shapes_;
  int fc_weight_index_ = 0;

  int add_param(nn::Shape s, double init_std, rng::Stream& rs);
};

/// Builds the three policies from a feature map: per-channel spatial softmax
/// averaged over channels for positions (invalid origins zeroed, vector
/// renormalized), softmax of channel means for the weight Gaussians, softmax
/// of the head logits for the step grid.
PolicySet build_policies(const FeatureMap& map, const Eigen::VectorXd& step_logits,
                         const img::ValidRegion& valid, double sigma);

/// Draws one action. Raw Gaussian weight draws are clipped at zero and
/// normalized to the simplex; if every draw clips to zero the draw is
/// retried a bounded number of times and then falls back to the means.
std::pair<Action, RawDraws> sample(const PolicySet& ps, rng::Stream& rs);

/// Gradient in the network parameters of the summed log-probability of one
/// action (categorical position and step factors, Gaussian weight factor at
/// the raw draws).
std::vector<nn::Arr> log_prob_grad(const PolicySet& ps, const Action& action,
                                   const RawDraws& raws, const AgentNet& net,
                                   const img::Image& x);

/// REINFORCE ascent step: theta += alpha * (1/N) sum_n grad log pi(a_n) * R_n.
void reinforce_update(AgentNet& net, const SampleBatch& batch, double alpha,
                      double sigma);

/// Debugging checkpoint (parameters + seed).
void save_agent_checkpoint(const std::string& path, const AgentNet& net,
                           std::uint64_t seed);

}  // namespace patchrl::agent

#endif  // PATCHRL_AGENT_HPP
