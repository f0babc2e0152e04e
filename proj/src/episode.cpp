#include "patchrl/episode.hpp"

#include <algorithm>

namespace patchrl::loop {

double reward(models::TargetOracle& oracle, const img::Image& x_adv, attack::Mode mode,
              const std::string& label, models::Verdict* verdict_out) {
  const models::QueryResult qr = oracle.query_scored(x_adv, label);
  if (verdict_out) *verdict_out = qr.verdict;
  return mode == attack::Mode::kDodging ? 1.0 - qr.label_score : qr.label_score;
}

bool success_check(const models::Verdict& verdict, attack::Mode mode,
                   const std::string& label) {
  return mode == attack::Mode::kDodging ? verdict.identity != label
                                        : verdict.identity == label;
}

AttackResult run_attack(const img::Image& x, const EpisodeConfig& cfg,
                        agent::AgentNet& net, const attack::Surrogates& surrogates,
                        models::TargetOracle& oracle, const img::ValidRegion& valid,
                        rng::Stream& rs) {
  if (valid.allowed_count() == 0)
    throw img::EmptyRegionError("run_attack: empty valid region");
  const std::string truth = cfg.true_label.empty() ? cfg.label : cfg.true_label;
  {
    const models::Verdict clean = models::identify(oracle.recognizer(), x);
    if (clean.identity != truth)
      throw PreconditionError("run_attack: clean image misidentified as " + clean.identity);
  }

  const long start_count = oracle.query_count();
  const int n_models = static_cast<int>(surrogates.size());
  const int fixed_step_index = std::clamp(
      static_cast<int>(std::lround(cfg.ablation.fixed_step / 0.01)) - 1, 0, 19);

  AttackResult result;
  result.adv_image = x;
  double best_reward = -1.0;

  auto queries_used = [&]() { return oracle.query_count() - start_count; };
  auto cap_reached = [&]() {
    return cfg.query_cap > 0 && queries_used() >= cfg.query_cap;
  };

  for (int epoch = 0; epoch < cfg.max_epochs && !cap_reached(); ++epoch) {
    auto [map, step_logits] = net.forward(x);
    const agent::PolicySet ps = agent::build_policies(map, step_logits, valid, cfg.sigma);

    agent::SampleBatch batch;
    batch.state = x;
    result.epochs_run = epoch + 1;
    bool epoch_has_best = false;
    EpochBest epoch_best;

    for (int n = 0; n < cfg.samples_per_epoch && !cap_reached(); ++n) {
      auto [action, raws] = agent::sample(ps, rs);
      agent::SampleEntry entry;
      if (!cfg.ablation.learn_weights) {
        action.rho = attack::EnsembleWeights::equal(n_models);
        entry.used_weight_policy = false;
      }
      if (!cfg.ablation.learn_step) {
        action.step_index = fixed_step_index;
        action.step_size = cfg.ablation.fixed_step;
        entry.used_step_policy = false;
      }

      const img::PatchMask mask = img::make_mask(action.origin_col, action.origin_row,
                                                 cfg.patch, x.height, x.width);
      attack::MifgsmConfig acfg = cfg.attack;
      acfg.mode = cfg.mode;
      acfg.label = cfg.label;
      acfg.step_size = action.step_size;
      const img::Image x_adv = attack::mifgsm_patch(x, mask, action.rho, acfg, surrogates);

      models::Verdict verdict;
      const double r = reward(oracle, x_adv, cfg.mode, cfg.label, &verdict);

      entry.action = action;
      entry.raws = raws;
      entry.reward = r;
      batch.entries.push_back(entry);

      if (!epoch_has_best || r > epoch_best.reward) {
        epoch_best = {action, r};
        epoch_has_best = true;
      }
      if (r > best_reward) {
        best_reward = r;
        result.adv_image = x_adv;
        result.final_action = action;
        result.final_reward = r;
      }

      if (success_check(verdict, cfg.mode, cfg.label)) {
        result.action_trace.push_back({action, r});
        result.success = true;
        result.nq = queries_used();
        result.nq_so = result.nq;
        result.adv_image = x_adv;
        result.final_action = action;
        result.final_reward = r;
        return result;
      }
    }

    if (epoch_has_best) result.action_trace.push_back(epoch_best);
    if (!batch.entries.empty() && !cap_reached())
      agent::reinforce_update(net, batch, cfg.learning_rate, cfg.sigma);
  }

  result.success = false;
  result.nq = queries_used();
  result.nq_so = result.nq;
  return result;
}

}  // namespace patchrl::loop
