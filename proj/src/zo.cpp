#include "patchrl/zo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace patchrl::zo {

namespace {
constexpr double kDelta = 1e-6;

struct SuccessSignal {
  img::Image image;
  long nq = 0;
  double reward = 0.0;
};
}  // namespace

PhiPatch to_phi(const img::Image& patch, int origin_col, int origin_row) {
  PhiPatch p;
  p.height = patch.height;
  p.width = patch.width;
  p.channels = patch.channels;
  p.origin_col = origin_col;
  p.origin_row = origin_row;
  p.values.resize(patch.size());
  for (int i = 0; i < patch.size(); ++i) {
    const double v = std::clamp(patch.data[i], kDelta, 1.0 - kDelta);
    p.values[i] = std::atanh(2.0 * v - 1.0);
  }
  return p;
}

img::Image to_x(const PhiPatch& phi) {
  img::Image out(phi.height, phi.width, phi.channels);
  out.data = 0.5 * (1.0 + phi.values.tanh());
  return out;
}

double zo_gradient(const Eigen::ArrayXd& phi, int coordinate, double offset,
                   const std::function<double(const Eigen::ArrayXd&)>& loss_fn) {
  if (coordinate < 0 || coordinate >= phi.size())
    throw std::out_of_range("zo_gradient: bad coordinate");
  Eigen::ArrayXd probe = phi;
  probe[coordinate] = phi[coordinate] + offset;
  const double plus = loss_fn(probe);
  probe[coordinate] = phi[coordinate] - offset;
  const double minus = loss_fn(probe);
  return (plus - minus) / (2.0 * offset);
}

loop::AttackResult adam_zo_refine(const img::Image& x, const img::Image& init_patch,
                                  int origin_col, int origin_row,
                                  models::TargetOracle& oracle, attack::Mode mode,
                                  const std::string& label, const ZoConfig& cfg,
                                  rng::Stream& rs) {
  const img::PatchMask mask = img::make_mask(
      origin_col, origin_row, {init_patch.height, init_patch.width}, x.height, x.width);
  PhiPatch phi = to_phi(init_patch, origin_col, origin_row);

  const long start_count = oracle.query_count();
  auto used = [&]() { return oracle.query_count() - start_count; };
  auto remaining = [&]() { return cfg.max_queries - used(); };

  auto compose = [&](const Eigen::ArrayXd& vals) {
    PhiPatch p = phi;
    p.values = vals;
    return img::uncrop(x, to_x(p), mask);
  };

  loop::AttackResult result;
  result.adv_image = compose(phi.values);
  double best_reward = -1.0;

  // Every loss evaluation is one oracle query; a winning verdict anywhere
  // aborts the refinement immediately so no query lands after the success.
  auto eval = [&](const Eigen::ArrayXd& vals) -> double {
    img::Image candidate = compose(vals);
    const models::QueryResult qr = oracle.query_scored(candidate, label);
    const double rw =
        mode == attack::Mode::kDodging ? 1.0 - qr.label_score : qr.label_score;
    if (rw > best_reward) {
      best_reward = rw;
      result.adv_image = candidate;
      result.final_reward = rw;
    }
    if (loop::success_check(qr.verdict, mode, label))
      throw SuccessSignal{std::move(candidate), used(), rw};
    return rw;
  };

  Eigen::ArrayXd m = Eigen::ArrayXd::Zero(phi.values.size());
  Eigen::ArrayXd v = Eigen::ArrayXd::Zero(phi.values.size());
  Eigen::ArrayXd steps = Eigen::ArrayXd::Zero(phi.values.size());

  std::vector<int> coords(static_cast<std::size_t>(phi.values.size()));
  std::iota(coords.begin(), coords.end(), 0);

  try {
    while (remaining() >= 2) {
      // Fisher-Yates prefix: pick coords_per_step distinct coordinates.
      const int take =
          std::min<int>(cfg.coords_per_step, static_cast<int>(coords.size()));
      for (int i = 0; i < take; ++i) {
        const auto j = rs.uniform_int(i, static_cast<std::int64_t>(coords.size()) - 1);
        std::swap(coords[static_cast<std::size_t>(i)], coords[static_cast<std::size_t>(j)]);
      }
      for (int i = 0; i < take && remaining() >= 2; ++i) {
        const int c = coords[static_cast<std::size_t>(i)];
        const double ghat = zo_gradient(phi.values, c, cfg.offset, eval);
        steps[c] += 1.0;
        m[c] = cfg.adam.beta1 * m[c] + (1.0 - cfg.adam.beta1) * ghat;
        v[c] = cfg.adam.beta2 * v[c] + (1.0 - cfg.adam.beta2) * ghat * ghat;
        const double mhat = m[c] / (1.0 - std::pow(cfg.adam.beta1, steps[c]));
        const double vhat = v[c] / (1.0 - std::pow(cfg.adam.beta2, steps[c]));
        phi.values[c] += cfg.adam.learning_rate * mhat /
                         (std::sqrt(vhat) + cfg.adam.stabilizer);
      }
      if (remaining() >= 1) eval(phi.values);
    }
  } catch (const SuccessSignal& s) {
    result.success = true;
    result.nq = s.nq;
    result.nq_zo = s.nq;
    result.adv_image = s.image;
    result.final_reward = s.reward;
    return result;
  }

  result.success = false;
  result.nq = used();
  result.nq_zo = result.nq;
  return result;
}

loop::AttackResult so_then_zo(const img::Image& x, const loop::EpisodeConfig& cfg_so,
                              const ZoConfig& cfg_zo, agent::AgentNet& net,
                              const attack::Surrogates& surrogates,
                              models::TargetOracle& oracle,
                              const img::ValidRegion& valid, rng::Stream& rs) {
  loop::AttackResult so_res = run_attack(x, cfg_so, net, surrogates, oracle, valid, rs);
  if (so_res.success) return so_res;

  int origin_col = so_res.final_action.origin_col;
  int origin_row = so_res.final_action.origin_row;
  if (so_res.nq == 0) {
    // No sample was ever drawn (degenerate budget); start from the first
    // allowed origin instead of a meaningless default.
    bool found = false;
    for (int r = 0; r < valid.grid_height && !found; ++r)
      for (int c = 0; c < valid.grid_width && !found; ++c)
        if (valid.is_allowed(r, c)) {
          origin_row = r;
          origin_col = c;
          found = true;
        }
  }

  const img::PatchMask mask =
      img::make_mask(origin_col, origin_row, cfg_so.patch, x.height, x.width);
  const img::Image init_patch = img::crop(so_res.adv_image, mask);

  loop::AttackResult zo_res = adam_zo_refine(x, init_patch, origin_col, origin_row,
                                             oracle, cfg_so.mode, cfg_so.label, cfg_zo, rs);
  loop::AttackResult combined = std::move(zo_res);
  combined.nq_so = so_res.nq;
  combined.nq = so_res.nq + combined.nq_zo;
  combined.action_trace = std::move(so_res.action_trace);
  combined.epochs_run = so_res.epochs_run;
  combined.final_action = so_res.final_action;
  combined.final_action.origin_col = origin_col;
  combined.final_action.origin_row = origin_row;
  return combined;
}

}  // namespace patchrl::zo
