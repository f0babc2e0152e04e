#ifndef PATCHRL_EPISODE_HPP
#define PATCHRL_EPISODE_HPP

#include <optional>
#include <string>
#include <vector>

#include "patchrl/agent.hpp"
#include "patchrl/attack.hpp"
#include "patchrl/image.hpp"
#include "patchrl/model.hpp"
#include "patchrl/rng.hpp"

namespace patchrl::loop {

/// Ablation switches: the position policy is always learned; weight and
/// step policies can be frozen to their fixed values.
struct AblationFlags {
  bool learn_weights = true;
  bool learn_step = true;
  double fixed_step = 0.1;
};

struct EpisodeConfig {
  int samples_per_epoch = 5;  // N
  int max_epochs = 50;        // K
  attack::Mode mode = attack::Mode::kDodging;
  std::string label;          // y (dodging) or the impersonation target
  std::string true_label;     // ground truth; defaults to label when empty
  attack::MifgsmConfig attack;
  img::PatchSpec patch;
  double sigma = 0.01;
  double learning_rate = 0.001;
  long query_cap = 0;  // 0 = unlimited
  agent::AgentConfig agent;
  AblationFlags ablation;
};

struct EpochBest {
  agent::Action action;
  double reward = 0.0;
};

struct AttackResult {
  bool success = false;
  long nq = 0;
  img::Image adv_image;
  std::vector<EpochBest> action_trace;  // per-epoch best (action, reward)
  int epochs_run = 0;
  agent::Action final_action;
  double final_reward = 0.0;
  long nq_so = 0, nq_zo = 0;  // stage breakdown for combined attacks
};

/// Reward of one candidate: dodging 1 - F(x_adv, y), impersonation
/// F(x_adv, target). Consumes exactly one oracle query; the verdict of that
/// same query is surfaced through `verdict_out`.
double reward(models::TargetOracle& oracle, const img::Image& x_adv, attack::Mode mode,
              const std::string& label, models::Verdict* verdict_out = nullptr);

/// Dodging succeeds when top-1 != y; impersonation when top-1 == target.
bool success_check(const models::Verdict& verdict, attack::Mode mode,
                   const std::string& label);

struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One full episode: K epochs of forward -> build policies -> N samples of
/// {draw action -> ensemble patch attack -> one reward query -> success
/// check} -> policy-gradient update, stopping at the first success or when
/// the epoch/query budget runs out.
AttackResult run_attack(const img::Image& x, const EpisodeConfig& cfg,
                        agent::AgentNet& net, const attack::Surrogates& surrogates,
                        models::TargetOracle& oracle, const img::ValidRegion& valid,
                        rng::Stream& rs);

}  // namespace patchrl::loop

#endif  // PATCHRL_EPISODE_HPP
