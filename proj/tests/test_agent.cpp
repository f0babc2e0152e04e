#include <doctest.h>

#include <cmath>
#include <fstream>
#include <patchrl/agent.hpp>
#include <patchrl/rng.hpp>

using namespace patchrl;

namespace {

img::Image random_image(int h, int w, int c, std::uint64_t seed) {
  img::Image im(h, w, c);
  rng::Stream rs(seed);
  for (int i = 0; i < im.size(); ++i) im.data[i] = rs.uniform();
  return im;
}

// Independent recomputation of log pi(a | s) from plain policy values; the
// finite-difference oracle for the tape-based gradients.
double log_pi_value(const agent::AgentNet& net, const img::Image& x,
                    const img::ValidRegion& valid, const agent::Action& action,
                    const agent::RawDraws& raws, double sigma) {
  auto [map, logits] = net.forward(x);
  const auto ps = agent::build_policies(map, logits, valid, sigma);
  double lp = std::log(ps.position_probs[action.position_index]);
  for (int i = 0; i < ps.weight_means.size(); ++i) {
    const double d = raws.weight_draws[i] - ps.weight_means[i];
    lp += -d * d / (2.0 * sigma * sigma) - std::log(sigma) -
          0.5 * std::log(2.0 * 3.141592653589793);
  }
  lp += std::log(ps.step_probs[action.step_index]);
  return lp;
}

}  // namespace

TEST_CASE("forward is deterministic with matching spatial dims") {
  const auto valid = img::compute_valid_region(8, 8, {}, {2, 2});
  agent::AgentNet net({3, 8, 8}, 3, valid, {2, 4}, 99);
  const auto x = random_image(8, 8, 3, 100);
  auto [m1, l1] = net.forward(x);
  auto [m2, l2] = net.forward(x);
  CHECK(m1.channels == 3);
  CHECK(m1.height == 8);
  CHECK(m1.width == 8);
  CHECK(l1.size() == 20);
  CHECK((m1.data == m2.data).all());
  CHECK((l1 - l2).norm() == 0.0);
}

TEST_CASE("forward matches the recorded golden fingerprint") {
  const auto valid = img::compute_valid_region(8, 8, {}, {2, 2});
  agent::AgentNet net({3, 8, 8}, 2, valid, {2, 4}, 1234);
  const auto x = random_image(8, 8, 3, 4321);
  auto [map, logits] = net.forward(x);
  // Frozen from the first seeded reference run of this configuration.
  CHECK(map.data.sum() == doctest::Approx(0.255542691913).epsilon(1e-9));
  CHECK(map.data[0] == doctest::Approx(0.006104582319).epsilon(1e-9));
  CHECK(logits.sum() == doctest::Approx(-0.015129456069).epsilon(1e-9));
}

TEST_CASE("build_policies is uniform for constant equal channels") {
  agent::FeatureMap map;
  map.channels = 3;
  map.height = 4;
  map.width = 4;
  map.data = nn::Arr::Constant(48, 0.7);
  const auto valid = img::compute_valid_region(4, 4, {}, {2, 2});  // 9 allowed
  const auto ps = agent::build_policies(map, Eigen::VectorXd::Zero(20), valid, 0.01);

  for (int i = 0; i < 16; ++i) {
    if (valid.allowed[static_cast<std::size_t>(i)])
      CHECK(ps.position_probs[i] == doctest::Approx(1.0 / 9).epsilon(1e-9));
    else
      CHECK(ps.position_probs[i] == 0.0);
  }
  CHECK(ps.position_probs.sum() == doctest::Approx(1.0).epsilon(1e-9));
  for (int i = 0; i < 3; ++i)
    CHECK(ps.weight_means[i] == doctest::Approx(1.0 / 3).epsilon(1e-9));
  for (int i = 0; i < 20; ++i)
    CHECK(ps.step_probs[i] == doctest::Approx(1.0 / 20).epsilon(1e-9));
}

TEST_CASE("invalid origins carry exactly zero probability") {
  const auto valid = img::compute_valid_region(6, 6, {{2, 2, 2, 2}}, {2, 2});
  agent::AgentNet net({3, 6, 6}, 2, valid, {1, 4}, 7);
  const auto x = random_image(6, 6, 3, 8);
  auto [map, logits] = net.forward(x);
  const auto ps = agent::build_policies(map, logits, valid, 0.01);
  for (int i = 0; i < 36; ++i)
    if (!valid.allowed[static_cast<std::size_t>(i)]) CHECK(ps.position_probs[i] == 0.0);
  CHECK(ps.position_probs.sum() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(ps.weight_means.sum() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(ps.step_probs.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("channel means map through softmax as hand-computed") {
  agent::FeatureMap map;
  map.channels = 3;
  map.height = 2;
  map.width = 2;
  map.data = nn::Arr::Zero(12);
  map.data.segment(0, 4).setConstant(1.0);  // channel means (1, 0, 0)
  const auto valid = img::compute_valid_region(2, 2, {}, {1, 1});
  const auto ps = agent::build_policies(map, Eigen::VectorXd::Zero(20), valid, 0.01);
  CHECK(ps.weight_means[0] == doctest::Approx(0.576).epsilon(2e-3));
  CHECK(ps.weight_means[1] == doctest::Approx(0.212).epsilon(2e-3));
  CHECK(ps.weight_means[2] == doctest::Approx(0.212).epsilon(2e-3));
}

TEST_CASE("adding a constant to the feature map leaves policies unchanged") {
  const auto valid = img::compute_valid_region(6, 6, {}, {2, 3});
  agent::AgentNet net({3, 6, 6}, 3, valid, {1, 4}, 17);
  const auto x = random_image(6, 6, 3, 18);
  auto [map, logits] = net.forward(x);
  const auto ps1 = agent::build_policies(map, logits, valid, 0.01);
  agent::FeatureMap shifted = map;
  shifted.data += 3.25;
  const auto ps2 = agent::build_policies(shifted, logits, valid, 0.01);
  CHECK((ps1.position_probs - ps2.position_probs).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ps1.weight_means - ps2.weight_means).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sampling honors degenerate categoricals and the clip-normalize rule") {
  agent::PolicySet ps;
  ps.grid_height = 3;
  ps.grid_width = 3;
  ps.position_probs = Eigen::VectorXd::Zero(9);
  ps.position_probs[5] = 1.0;  // row 1, col 2
  ps.weight_means = Eigen::VectorXd::Constant(3, 1.0 / 3);
  ps.weight_sigma = 0.01;
  ps.step_probs = Eigen::VectorXd::Zero(20);
  ps.step_probs[7] = 1.0;

  rng::Stream rs(55);
  for (int k = 0; k < 10; ++k) {
    const auto [action, raws] = agent::sample(ps, rs);
    CHECK(action.position_index == 5);
    CHECK(action.origin_row == 1);
    CHECK(action.origin_col == 2);
    CHECK(action.step_index == 7);
    CHECK(action.step_size == doctest::Approx(0.08).epsilon(1e-9));
    CHECK(action.rho.on_simplex());
  }
}

TEST_CASE("clip-normalize follows the stated arithmetic") {
  Eigen::VectorXd raw(3);
  raw << 0.5, 0.3, 0.4;
  const auto rho = attack::EnsembleWeights::normalized(raw);
  CHECK(rho.values[0] == doctest::Approx(5.0 / 12).epsilon(1e-12));
  CHECK(rho.values[1] == doctest::Approx(3.0 / 12).epsilon(1e-12));
  CHECK(rho.values[2] == doctest::Approx(4.0 / 12).epsilon(1e-12));

  Eigen::VectorXd with_neg(3);
  with_neg << -0.2, 0.6, 0.2;
  const auto rho2 = attack::EnsembleWeights::normalized(with_neg);
  CHECK(rho2.values[0] == 0.0);
  CHECK(rho2.values[1] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(rho2.values[2] == doctest::Approx(0.25).epsilon(1e-12));

  Eigen::VectorXd all_neg = Eigen::VectorXd::Constant(3, -1.0);
  CHECK_THROWS_AS(attack::EnsembleWeights::normalized(all_neg), std::domain_error);
}

TEST_CASE("seeded draws stay within four sigma of their means") {
  agent::PolicySet ps;
  ps.grid_height = 2;
  ps.grid_width = 2;
  ps.position_probs = Eigen::VectorXd::Constant(4, 0.25);
  ps.weight_means = Eigen::VectorXd::Constant(3, 1.0 / 3);
  ps.weight_sigma = 0.01;
  ps.step_probs = Eigen::VectorXd::Constant(20, 0.05);
  rng::Stream rs(808);
  for (int k = 0; k < 40; ++k) {
    const auto [action, raws] = agent::sample(ps, rs);
    for (int i = 0; i < 3; ++i)
      CHECK(std::abs(raws.weight_draws[i] - 1.0 / 3) <= 4.0 * 0.01);
  }
}

TEST_CASE("gaussian score coefficient is zero at the mean and 1/sigma at one sigma") {
  const double sigma = 0.05;
  nn::Arr mu(1);
  mu[0] = 0.4;
  {
    nn::Tape t;
    const int mun = t.input(mu, {1, 1, 1}, true);
    nn::Arr a(1);
    a[0] = 0.4;  // a == mu
    t.backward(t.gaussian_logpdf_sum(mun, a, sigma));
    CHECK(t.grad(mun)[0] == 0.0);
  }
  {
    nn::Tape t;
    const int mun = t.input(mu, {1, 1, 1}, true);
    nn::Arr a(1);
    a[0] = 0.4 + sigma;  // a == mu + sigma
    t.backward(t.gaussian_logpdf_sum(mun, a, sigma));
    CHECK(t.grad(mun)[0] == doctest::Approx(1.0 / sigma).epsilon(1e-9));
  }
}

TEST_CASE("log-prob gradients match finite differences on a two-layer toy agent") {
  const auto valid = img::compute_valid_region(5, 5, {}, {2, 2});
  agent::AgentNet net({1, 5, 5}, 2, valid, {0, 4}, 23);  // levels clamp to 0
  CHECK(net.effective_levels() == 0);
  const auto x = random_image(5, 5, 1, 24);
  const double sigma = 0.05;

  auto [map, logits] = net.forward(x);
  const auto ps = agent::build_policies(map, logits, valid, sigma);
  rng::Stream rs(25);
  auto [action, raws] = agent::sample(ps, rs);

  const auto grads = agent::log_prob_grad(ps, action, raws, net, x);
  REQUIRE(grads.size() == net.params().size());

  rng::Stream probe_rs(26);
  int checked = 0;
  for (std::size_t p = 0; p < net.params().size(); ++p) {
    for (int probe = 0; probe < 2; ++probe) {
      if (net.params()[p].size() == 0) continue;
      const int idx =
          static_cast<int>(probe_rs.uniform_int(0, net.params()[p].size() - 1));
      const double h = 1e-5;
      const double orig = net.params()[p][idx];
      net.params()[p][idx] = orig + h;
      const double up = log_pi_value(net, x, valid, action, raws, sigma);
      net.params()[p][idx] = orig - h;
      const double dn = log_pi_value(net, x, valid, action, raws, sigma);
      net.params()[p][idx] = orig;
      const double fd = (up - dn) / (2.0 * h);
      const double an = grads[p][idx];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-7});
      CHECK(std::abs(an - fd) / denom < 1e-3);
      ++checked;
    }
  }
  CHECK(checked >= 10);
}

TEST_CASE("reinforce with zero rewards leaves parameters untouched") {
  const auto valid = img::compute_valid_region(6, 6, {}, {2, 2});
  agent::AgentNet net({3, 6, 6}, 2, valid, {1, 4}, 31);
  const auto x = random_image(6, 6, 3, 32);
  const auto before = net.params();

  auto [map, logits] = net.forward(x);
  const auto ps = agent::build_policies(map, logits, valid, 0.01);
  rng::Stream rs(33);
  agent::SampleBatch batch;
  batch.state = x;
  for (int n = 0; n < 4; ++n) {
    auto [action, raws] = agent::sample(ps, rs);
    batch.entries.push_back({action, raws, 0.0, true, true});
  }
  agent::reinforce_update(net, batch, 0.001, 0.01);
  for (std::size_t p = 0; p < before.size(); ++p)
    CHECK((net.params()[p] == before[p]).all());
}

TEST_CASE("a single unit-reward sample updates along its log-prob gradient") {
  const auto valid = img::compute_valid_region(6, 6, {}, {2, 2});
  agent::AgentNet net({3, 6, 6}, 2, valid, {1, 4}, 41);
  const auto x = random_image(6, 6, 3, 42);

  auto [map, logits] = net.forward(x);
  const auto ps = agent::build_policies(map, logits, valid, 0.01);
  rng::Stream rs(43);
  auto [action, raws] = agent::sample(ps, rs);
  const auto grads = agent::log_prob_grad(ps, action, raws, net, x);

  const auto before = net.params();
  agent::SampleBatch batch;
  batch.state = x;
  batch.entries.push_back({action, raws, 1.0, true, true});
  const double alpha = 0.002;
  agent::reinforce_update(net, batch, alpha, 0.01);
  for (std::size_t p = 0; p < before.size(); ++p) {
    const nn::Arr expect = before[p] + alpha * grads[p];
    CHECK((net.params()[p] - expect).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("reinforce ascends the bandit objective in at least 95 of 100 trials") {
  // 1x2 single-channel image, 1x1 patch: two origins with fixed rewards.
  const auto valid = img::compute_valid_region(1, 2, {}, {1, 1});
  const img::Image x = img::Image::constant(1, 2, 1, 0.5);
  const double rewards[2] = {0.9, 0.1};
  const double sigma = 0.05, alpha = 0.5;
  const int n_samples = 8, n_draws = 10000;

  int ascents = 0;
  for (int trial = 0; trial < 100; ++trial) {
    agent::AgentNet net({1, 1, 2}, 1, valid, {0, 4}, rng::mix(900, trial));
    auto policy_of = [&]() {
      auto [map, logits] = net.forward(x);
      return agent::build_policies(map, logits, valid, sigma);
    };
    const auto ps = policy_of();

    rng::Stream rs(rng::mix(901, trial));
    agent::SampleBatch batch;
    batch.state = x;
    for (int n = 0; n < n_samples; ++n) {
      auto [action, raws] = agent::sample(ps, rs);
      batch.entries.push_back({action, raws, rewards[action.position_index], true, true});
    }
    agent::reinforce_update(net, batch, alpha, sigma);
    const auto ps2 = policy_of();

    // Monte-Carlo J with common random numbers shared across both policies.
    rng::Stream crn(rng::mix(902, trial));
    double j_before = 0.0, j_after = 0.0;
    for (int d = 0; d < n_draws; ++d) {
      const double u = crn.uniform();
      j_before += rewards[u < ps.position_probs[0] ? 0 : 1];
      j_after += rewards[u < ps2.position_probs[0] ? 0 : 1];
    }
    if (j_after > j_before) ++ascents;
  }
  CHECK(ascents >= 95);
}

TEST_CASE("agent checkpoint writes parameters and seed") {
  const auto valid = img::compute_valid_region(4, 4, {}, {2, 2});
  agent::AgentNet net({3, 4, 4}, 2, valid, {1, 4}, 77);
  const auto path = std::string("/tmp/patchrl_agent_ckpt");
  agent::save_agent_checkpoint(path, net, 77);
  CHECK(std::ifstream(path + ".bin").good());
  CHECK(std::ifstream(path + ".json").good());
}
