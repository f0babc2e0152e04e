#include "patchrl/agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "patchrl/params_io.hpp"

namespace patchrl::agent {

namespace {

int clamp_levels(int requested, int h, int w) {
  int lv = 0;
  while (lv < requested) {
    const int div = 1 << (lv + 1);
    if (h % div != 0 || w % div != 0 || h / div < 1 || w / div < 1) break;
    ++lv;
  }
  return lv;
}

Eigen::VectorXd softmax_vec(const Eigen::VectorXd& z) {
  const double m = z.maxCoeff();
  Eigen::ArrayXd e = (z.array() - m).exp();
  return (e / e.sum()).matrix();
}

}  // namespace

int AgentNet::add_param(nn::Shape s, double init_std, rng::Stream& rs) {
  nn::Arr p(s.size());
  if (init_std > 0.0)
    for (int i = 0; i < p.size(); ++i) p[i] = rs.normal(0.0, init_std);
  else
    p.setZero();
  params_.push_back(std::move(p));
  param_shapes_.push_back(s);
  return static_cast<int>(params_.size() - 1);
}

AgentNet::AgentNet(nn::Shape input, int n_surrogates, const img::ValidRegion& valid,
                   const AgentConfig& cfg, std::uint64_t seed)
    : input_(input), n_surrogates_(n_surrogates) {
  if (valid.grid_height != input.h || valid.grid_width != input.w)
    throw std::invalid_argument("AgentNet: valid region dims do not match input");
  if (valid.allowed_count() == 0) throw img::EmptyRegionError("AgentNet: empty valid region");

  levels_ = clamp_levels(cfg.levels, input.h, input.w);
  base_channels_ = cfg.base_channels;
  valid_mask_ = nn::Arr::Zero(input.h * input.w);
  for (int i = 0; i < input.h * input.w; ++i)
    valid_mask_[i] = valid.allowed[static_cast<std::size_t>(i)] ? 1.0 : 0.0;

  rng::Stream rs(rng::mix(seed, 0xa9e27ULL));
  int c_prev = input.c;
  for (int i = 0; i < levels_; ++i) {
    const int c_out = base_channels_ << i;
    add_param({c_out, c_prev, 9}, std::sqrt(2.0 / (c_prev * 9)), rs);
    add_param({c_out, 1, 1}, 0.0, rs);
    c_prev = c_out;
  }
  const int c_bott = base_channels_ << levels_;
  add_param({c_bott, c_prev, 9}, std::sqrt(2.0 / (c_prev * 9)), rs);
  add_param({c_bott, 1, 1}, 0.0, rs);
  c_prev = c_bott;
  for (int i = levels_ - 1; i >= 0; --i) {
    const int c_skip = base_channels_ << i;
    const int c_in = c_prev + c_skip;
    add_param({c_skip, c_in, 9}, std::sqrt(2.0 / (c_in * 9)), rs);
    add_param({c_skip, 1, 1}, 0.0, rs);
    c_prev = c_skip;
  }
  // Head and step layers start small so the initial policies are near
  // uniform and the first epochs explore.
  add_param({n_surrogates_, c_prev, 9}, 0.1 * std::sqrt(2.0 / (c_prev * 9)), rs);
  add_param({n_surrogates_, 1, 1}, 0.0, rs);
  fc_weight_index_ = add_param({20, input.h * input.w, 1},
                               0.1 * std::sqrt(2.0 / (input.h * input.w)), rs);
  add_param({20, 1, 1}, 0.0, rs);
}

AgentNet::Graph AgentNet::build_graph(nn::Tape& tape, const img::Image& x,
                                      bool with_param_grad) const {
  if (x.height != input_.h || x.width != input_.w || x.channels != input_.c)
    throw std::invalid_argument("AgentNet: input dims mismatch");

  Graph g;
  g.bound_params.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i)
    g.bound_params.push_back(tape.input(params_[i], param_shapes_[i], with_param_grad));

  const int x_node = tape.input(models::to_chw(x), input_, false);
  std::size_t p = 0;
  auto next_pair = [&]() {
    const int w = g.bound_params[p], b = g.bound_params[p + 1];
    p += 2;
    return std::pair<int, int>{w, b};
  };

  int cur = x_node;
  std::vector<int> skips;
  for (int i = 0; i < levels_; ++i) {
    auto [w, b] = next_pair();
    cur = tape.relu(tape.conv3x3(cur, w, b));
    skips.push_back(cur);
    cur = tape.avgpool2(cur);
  }
  {
    auto [w, b] = next_pair();
    cur = tape.relu(tape.conv3x3(cur, w, b));
  }
  for (int i = levels_ - 1; i >= 0; --i) {
    auto [w, b] = next_pair();
    cur = tape.upsample2(cur);
    cur = tape.concat_channels(cur, skips[static_cast<std::size_t>(i)]);
    cur = tape.relu(tape.conv3x3(cur, w, b));
  }
  {
    auto [w, b] = next_pair();
    g.feature_map = tape.conv3x3(cur, w, b);
  }

  const int spatial_softmax = tape.softmax_spatial(g.feature_map);
  const int pos_mean = tape.mean_channels(spatial_softmax);
  const int pos_flat = tape.reshape(pos_mean, {input_.h * input_.w, 1, 1});
  const int masked = tape.mul_const(pos_flat, valid_mask_);
  const int total = tape.sum(masked);
  g.position_probs = tape.div_by_scalar(masked, total);

  g.weight_means = tape.softmax_flat(tape.channel_means(g.feature_map));

  {
    auto [w, b] = next_pair();
    g.step_logits = tape.dense(g.position_probs, w, b);
    g.step_probs = tape.softmax_flat(g.step_logits);
  }
  return g;
}

std::pair<FeatureMap, Eigen::VectorXd> AgentNet::forward(const img::Image& x) const {
  nn::Tape tape;
  const Graph g = build_graph(tape, x, false);
  FeatureMap map;
  map.channels = n_surrogates_;
  map.height = input_.h;
  map.width = input_.w;
  map.data = tape.value(g.feature_map);
  const nn::Arr& logits = tape.value(g.step_logits);
  return {std::move(map),
          Eigen::Map<const Eigen::VectorXd>(logits.data(), logits.size())};
}

PolicySet build_policies(const FeatureMap& map, const Eigen::VectorXd& step_logits,
                         const img::ValidRegion& valid, double sigma) {
  if (map.height != valid.grid_height || map.width != valid.grid_width)
    throw std::invalid_argument("build_policies: map/valid dims mismatch");
  if (!map.data.isFinite().all())
    throw std::invalid_argument("build_policies: non-finite feature map");
  if (valid.allowed_count() == 0)
    throw img::EmptyRegionError("build_policies: empty valid region");

  const int hw = map.height * map.width;
  PolicySet ps;
  ps.grid_height = map.height;
  ps.grid_width = map.width;
  ps.weight_sigma = sigma;

  Eigen::VectorXd pos = Eigen::VectorXd::Zero(hw);
  Eigen::VectorXd channel_means(map.channels);
  for (int ci = 0; ci < map.channels; ++ci) {
    auto seg = map.data.segment(ci * hw, hw);
    channel_means[ci] = seg.mean();
    const double m = seg.maxCoeff();
    Eigen::ArrayXd e = (seg - m).exp();
    pos += (e / e.sum()).matrix();
  }
  pos /= map.channels;
  for (int i = 0; i < hw; ++i)
    if (!valid.allowed[static_cast<std::size_t>(i)]) pos[i] = 0.0;
  const double total = pos.sum();
  if (!(total > 0.0))
    throw std::runtime_error("build_policies: zero mass on valid origins");
  ps.position_probs = pos / total;

  ps.weight_means = softmax_vec(channel_means);
  ps.step_probs = softmax_vec(step_logits);
  return ps;
}

std::pair<Action, RawDraws> sample(const PolicySet& ps, rng::Stream& rs) {
  Action a;
  RawDraws raws;
  a.position_index = rs.categorical(
      std::span<const double>(ps.position_probs.data(), ps.position_probs.size()));
  a.origin_row = a.position_index / ps.grid_width;
  a.origin_col = a.position_index % ps.grid_width;

  const int n = static_cast<int>(ps.weight_means.size());
  raws.weight_draws.resize(n);
  constexpr int kMaxRetries = 8;
  bool ok = false;
  for (int attempt = 0; attempt < kMaxRetries && !ok; ++attempt) {
    for (int i = 0; i < n; ++i)
      raws.weight_draws[i] = rs.normal(ps.weight_means[i], ps.weight_sigma);
    ok = (raws.weight_draws.array().max(0.0).sum() > 0.0);
  }
  if (ok) {
    a.rho = attack::EnsembleWeights::normalized(raws.weight_draws);
  } else {
    // All draws clipped away repeatedly; fall back to the means.
    raws.weight_draws = ps.weight_means;
    a.rho = attack::EnsembleWeights::normalized(ps.weight_means);
  }

  a.step_index =
      rs.categorical(std::span<const double>(ps.step_probs.data(), ps.step_probs.size()));
  a.step_size = attack::step_grid()[static_cast<std::size_t>(a.step_index)];
  return {a, raws};
}

namespace {

// Scalar node for log pi(a | s) of one sampled entry.
int log_prob_node(nn::Tape& tape, const AgentNet::Graph& g, const SampleEntry& entry,
                  double sigma) {
  std::vector<int> parts;
  parts.push_back(tape.log_elem(tape.gather(g.position_probs, entry.action.position_index)));
  if (entry.used_weight_policy)
    parts.push_back(
        tape.gaussian_logpdf_sum(g.weight_means, entry.raws.weight_draws.array(), sigma));
  if (entry.used_step_policy)
    parts.push_back(tape.log_elem(tape.gather(g.step_probs, entry.action.step_index)));
  return tape.affine_combine(parts, std::vector<double>(parts.size(), 1.0), 0.0);
}

}  // namespace

std::vector<nn::Arr> log_prob_grad(const PolicySet& ps, const Action& action,
                                   const RawDraws& raws, const AgentNet& net,
                                   const img::Image& x) {
  nn::Tape tape;
  const AgentNet::Graph g = net.build_graph(tape, x, true);
  SampleEntry entry;
  entry.action = action;
  entry.raws = raws;
  const int lp = log_prob_node(tape, g, entry, ps.weight_sigma);
  tape.backward(lp);
  std::vector<nn::Arr> grads;
  grads.reserve(g.bound_params.size());
  for (int id : g.bound_params) {
    if (tape.grad(id).size() == 0)
      grads.push_back(nn::Arr::Zero(tape.value(id).size()));
    else
      grads.push_back(tape.grad(id));
  }
  return grads;
}

void reinforce_update(AgentNet& net, const SampleBatch& batch, double alpha,
                      double sigma) {
  if (batch.entries.empty()) throw std::invalid_argument("reinforce_update: empty batch");
  nn::Tape tape;
  const AgentNet::Graph g = net.build_graph(tape, batch.state, true);
  std::vector<int> log_probs;
  std::vector<double> coeffs;
  const double inv_n = 1.0 / static_cast<double>(batch.entries.size());
  for (const SampleEntry& e : batch.entries) {
    log_probs.push_back(log_prob_node(tape, g, e, sigma));
    coeffs.push_back(e.reward * inv_n);
  }
  const int objective = tape.affine_combine(log_probs, coeffs, 0.0);
  tape.backward(objective);
  auto& params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const nn::Arr& grad = tape.grad(g.bound_params[i]);
    if (grad.size() != 0) params[i] += alpha * grad;
  }
}

void save_agent_checkpoint(const std::string& path, const AgentNet& net,
                           std::uint64_t seed) {
  io::write_params_bin(path + ".bin", net.params());
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["n_surrogates"] = net.n_surrogates();
  j["levels"] = net.effective_levels();
  j["params_file"] = path + ".bin";
  std::ofstream f(path + ".json");
  f << j.dump(2) << "\n";
}

}  // namespace patchrl::agent
