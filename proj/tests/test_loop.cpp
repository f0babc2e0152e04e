#include <doctest.h>

#include <cmath>
#include <patchrl/episode.hpp>
#include <patchrl/harness.hpp>
#include <patchrl/rng.hpp>

using namespace patchrl;

namespace {

img::Image random_image(int h, int w, int c, std::uint64_t seed) {
  img::Image im(h, w, c);
  rng::Stream rs(seed);
  for (int i = 0; i < im.size(); ++i) im.data[i] = rs.uniform();
  return im;
}

// Recognizer that scores any image as `confidence` for label "y" by rigging
// the final layer to a constant embedding.
models::Recognizer fixed_confidence_recognizer(double confidence) {
  auto m = std::make_shared<models::FeatureExtractor>(
      models::init_extractor("mlp_small", {1, 2, 2}, 1));
  const double c = 2.0 * confidence - 1.0;
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  m->params[m->params.size() - 2].setZero();
  auto& bias = m->params[m->params.size() - 1];
  bias.setZero();
  bias[0] = c;
  bias[1] = s;
  models::Gallery g;
  Eigen::VectorXd unit = Eigen::VectorXd::Zero(bias.size());
  unit[0] = 1.0;
  g.entries.emplace("y", unit);
  return {std::move(m), std::move(g)};
}

struct ToyWorld {
  img::Image x;
  attack::Surrogates surrogates;
  std::shared_ptr<models::FeatureExtractor> target_model;
  Eigen::VectorXd clean_embedding;
  std::string label = "y";
};

// Shared toy scene: one clean image, two surrogate recognizers, and the
// clean embedding under the target model (galleries get rigged per test).
ToyWorld toy_world(int h, int w, std::uint64_t seed) {
  ToyWorld world;
  world.x = random_image(h, w, 3, rng::mix(seed, 1));
  for (int i = 0; i < 2; ++i) {
    auto m = std::make_shared<models::FeatureExtractor>(models::init_extractor(
        i == 0 ? "mlp_small" : "mlp_medium", {3, h, w}, rng::mix(seed, 2, i)));
    models::Gallery g;
    g.entries.emplace("y", models::extract(*m, world.x).normalized());
    g.entries.emplace(
        "z",
        models::extract(*m, random_image(h, w, 3, rng::mix(seed, 3, i))).normalized());
    world.surrogates.push_back({std::move(m), std::move(g)});
  }
  world.target_model = std::make_shared<models::FeatureExtractor>(
      models::init_extractor("mlp_deep", {3, h, w}, rng::mix(seed, 4)));
  world.clean_embedding = models::extract(*world.target_model, world.x).normalized();
  return world;
}

// Fragile target: the true identity matches the clean embedding exactly and
// a decoy sits a hair away, so any perturbation dodges.
models::TargetOracle fragile_oracle(const ToyWorld& world) {
  models::Gallery g;
  g.entries.emplace("y", world.clean_embedding);
  Eigen::VectorXd decoy = world.clean_embedding;
  decoy[0] += 1e-9;
  g.entries.emplace("z", decoy.normalized());
  return models::TargetOracle({world.target_model, g});
}

// Robust target: every decoy is anti-correlated, so dodging cannot happen.
models::TargetOracle robust_oracle(const ToyWorld& world) {
  models::Gallery g;
  g.entries.emplace("y", world.clean_embedding);
  g.entries.emplace("z", (-world.clean_embedding).eval());
  return models::TargetOracle({world.target_model, g});
}

loop::EpisodeConfig small_episode_config(const std::string& label) {
  loop::EpisodeConfig cfg;
  cfg.samples_per_epoch = 3;
  cfg.max_epochs = 2;
  cfg.patch = {2, 2};
  cfg.attack.iterations = 2;
  cfg.label = label;
  cfg.agent.levels = 1;
  cfg.agent.base_channels = 4;
  return cfg;
}

}  // namespace

TEST_CASE("reward implements the two modes and spends one query") {
  const auto x = random_image(2, 2, 1, 5);
  SUBCASE("dodging with full confidence gives zero reward") {
    models::TargetOracle oracle(fixed_confidence_recognizer(1.0));
    CHECK(loop::reward(oracle, x, attack::Mode::kDodging, "y") ==
          doctest::Approx(0.0).epsilon(1e-9));
    CHECK(oracle.query_count() == 1);
  }
  SUBCASE("dodging at 0.25 confidence gives 0.75") {
    models::TargetOracle oracle(fixed_confidence_recognizer(0.25));
    CHECK(loop::reward(oracle, x, attack::Mode::kDodging, "y") ==
          doctest::Approx(0.75).epsilon(1e-9));
  }
  SUBCASE("impersonation returns the confidence itself") {
    models::TargetOracle oracle(fixed_confidence_recognizer(0.83));
    models::Verdict v;
    CHECK(loop::reward(oracle, x, attack::Mode::kImpersonation, "y", &v) ==
          doctest::Approx(0.83).epsilon(1e-9));
    CHECK(v.identity == "y");
  }
  SUBCASE("unknown label throws") {
    models::TargetOracle oracle(fixed_confidence_recognizer(0.5));
    CHECK_THROWS_AS(loop::reward(oracle, x, attack::Mode::kDodging, "nope"),
                    std::invalid_argument);
  }
}

TEST_CASE("success_check matches the mode semantics") {
  CHECK_FALSE(loop::success_check({"y", 0.9}, attack::Mode::kDodging, "y"));
  CHECK(loop::success_check({"other", 0.4}, attack::Mode::kDodging, "y"));
  CHECK(loop::success_check({"target", 0.6}, attack::Mode::kImpersonation, "target"));
  CHECK_FALSE(loop::success_check({"y", 0.6}, attack::Mode::kImpersonation, "target"));
}

TEST_CASE("fragile oracle falls in epoch one with nq at most N") {
  const auto world = toy_world(8, 8, 61);
  auto oracle = fragile_oracle(world);
  const auto valid = img::compute_valid_region(8, 8, {}, {2, 2});
  auto cfg = small_episode_config(world.label);
  cfg.max_epochs = 5;

  agent::AgentNet net({3, 8, 8}, 2, valid, cfg.agent, 62);
  rng::Stream rs(63);
  const auto res = loop::run_attack(world.x, cfg, net, world.surrogates, oracle, valid, rs);
  CHECK(res.success);
  CHECK(res.epochs_run == 1);
  CHECK(res.nq <= cfg.samples_per_epoch);
  CHECK(res.nq == oracle.query_count());
}

TEST_CASE("robust oracle exhausts the budget with nq equal to K times N") {
  const auto world = toy_world(8, 8, 71);
  auto oracle = robust_oracle(world);
  const auto valid = img::compute_valid_region(8, 8, {}, {2, 2});
  const auto cfg = small_episode_config(world.label);

  agent::AgentNet net({3, 8, 8}, 2, valid, cfg.agent, 72);
  rng::Stream rs(73);
  const auto res = loop::run_attack(world.x, cfg, net, world.surrogates, oracle, valid, rs);
  CHECK_FALSE(res.success);
  CHECK(res.nq == cfg.samples_per_epoch * cfg.max_epochs);
  CHECK(res.nq == oracle.query_count());
  CHECK(res.epochs_run == cfg.max_epochs);
  CHECK(res.action_trace.size() == static_cast<std::size_t>(cfg.max_epochs));
}

TEST_CASE("query cap stops the loop mid-run") {
  const auto world = toy_world(8, 8, 81);
  auto oracle = robust_oracle(world);
  const auto valid = img::compute_valid_region(8, 8, {}, {2, 2});
  auto cfg = small_episode_config(world.label);
  cfg.max_epochs = 10;
  cfg.query_cap = 4;

  agent::AgentNet net({3, 8, 8}, 2, valid, cfg.agent, 82);
  rng::Stream rs(83);
  const auto res = loop::run_attack(world.x, cfg, net, world.surrogates, oracle, valid, rs);
  CHECK_FALSE(res.success);
  CHECK(res.nq == 4);
  CHECK(oracle.query_count() == 4);
}

TEST_CASE("adversarial image differs from x only inside one mask rectangle") {
  const auto world = toy_world(8, 8, 91);
  auto oracle = robust_oracle(world);
  const auto valid = img::compute_valid_region(8, 8, {}, {2, 2});
  const auto cfg = small_episode_config(world.label);

  agent::AgentNet net({3, 8, 8}, 2, valid, cfg.agent, 92);
  rng::Stream rs(93);
  const auto res = loop::run_attack(world.x, cfg, net, world.surrogates, oracle, valid, rs);
  const auto mask = img::make_mask(res.final_action.origin_col, res.final_action.origin_row,
                                   cfg.patch, 8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c)
      for (int ch = 0; ch < 3; ++ch)
        if (!mask.covers(r, c)) CHECK(res.adv_image.at(r, c, ch) == world.x.at(r, c, ch));
}

TEST_CASE("misidentified clean image raises the precondition error") {
  const auto world = toy_world(8, 8, 101);
  models::Gallery g;
  g.entries.emplace("y", (-world.clean_embedding).eval());
  g.entries.emplace("z", world.clean_embedding);
  models::TargetOracle oracle({world.target_model, g});
  const auto valid = img::compute_valid_region(8, 8, {}, {2, 2});
  const auto cfg = small_episode_config(world.label);

  agent::AgentNet net({3, 8, 8}, 2, valid, cfg.agent, 102);
  rng::Stream rs(103);
  CHECK_THROWS_AS(
      loop::run_attack(world.x, cfg, net, world.surrogates, oracle, valid, rs),
      loop::PreconditionError);
  CHECK(oracle.query_count() == 0);  // the precheck is not attack traffic
}

TEST_CASE("empty valid region raises immediately") {
  const auto world = toy_world(8, 8, 111);
  auto oracle = robust_oracle(world);
  img::ValidRegion empty;
  empty.grid_height = 8;
  empty.grid_width = 8;
  empty.spec = {2, 2};
  empty.allowed.assign(64, 0);
  auto cfg = small_episode_config(world.label);
  const auto valid_ok = img::compute_valid_region(8, 8, {}, {2, 2});
  agent::AgentNet net({3, 8, 8}, 2, valid_ok, cfg.agent, 112);
  rng::Stream rs(113);
  CHECK_THROWS_AS(
      loop::run_attack(world.x, cfg, net, world.surrogates, oracle, empty, rs),
      img::EmptyRegionError);
}

TEST_CASE("single origin and surrogate degenerate to a pure transfer attack") {
  const auto world = toy_world(8, 8, 121);
  attack::Surrogates one{world.surrogates[0]};

  // Restrict the region to exactly one origin.
  std::vector<img::Rect> excl{{0, 0, 8, 3}, {0, 5, 8, 3}, {0, 3, 3, 2}, {5, 3, 3, 2}};
  const auto valid = img::compute_valid_region(8, 8, excl, {2, 2});
  REQUIRE(valid.allowed_count() == 1);
  REQUIRE(valid.is_allowed(3, 3));

  auto cfg = small_episode_config(world.label);
  cfg.samples_per_epoch = 1;
  cfg.max_epochs = 1;
  cfg.ablation.learn_weights = false;
  cfg.ablation.learn_step = false;  // action fully determined by the origin

  const auto mask = img::make_mask(3, 3, {2, 2}, 8, 8);
  attack::MifgsmConfig acfg = cfg.attack;
  acfg.label = world.label;
  acfg.step_size = cfg.ablation.fixed_step;
  const auto direct =
      attack::mifgsm_patch(world.x, mask, attack::EnsembleWeights::equal(1), acfg, one);

  for (bool fragile : {true, false}) {
    auto oracle = fragile ? fragile_oracle(world) : robust_oracle(world);
    auto oracle2 = fragile ? fragile_oracle(world) : robust_oracle(world);
    const bool direct_success = loop::success_check(
        oracle2.query(direct), attack::Mode::kDodging, world.label);

    agent::AgentNet net({3, 8, 8}, 1, valid, cfg.agent, 122);
    rng::Stream rs(123);
    const auto res = loop::run_attack(world.x, cfg, net, one, oracle, valid, rs);
    CHECK(res.success == direct_success);
    CHECK((res.adv_image.data == direct.data).all());
  }
}

TEST_CASE("seeded toy instance reproduces its golden triple") {
  const auto world = toy_world(8, 8, 131);
  auto oracle = fragile_oracle(world);
  const auto valid = img::compute_valid_region(8, 8, {}, {2, 2});
  auto cfg = small_episode_config(world.label);
  cfg.max_epochs = 6;

  agent::AgentNet net({3, 8, 8}, 2, valid, cfg.agent, 132);
  rng::Stream rs(133);
  const auto res = loop::run_attack(world.x, cfg, net, world.surrogates, oracle, valid, rs);
  // Frozen from the first seeded reference run.
  CHECK(res.success == true);
  CHECK(res.nq == 1);
  CHECK(res.final_action.origin_col == 2);
  CHECK(res.final_action.origin_row == 5);
}
