#include "patchrl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "patchrl/png_io.hpp"
#include "patchrl/rng.hpp"
#include "patchrl/svg_plot.hpp"

namespace patchrl::harness {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m{
      "so", "so_zo", "perturbation_only", "position_only",
      "random_zo", "ablate_p", "ablate_pw"};
  return m;
}

namespace {

// Stable per-method stream ids, independent of config ordering. The four
// policy-driven variants share one stream: paired draws turn the ablation
// and uplift comparisons into common-random-number comparisons, so their
// ASR differences reflect the algorithm rather than sampling luck.
std::uint64_t method_stream_id(const std::string& method) {
  if (method == "so" || method == "so_zo" || method == "ablate_p" ||
      method == "ablate_pw")
    return 0x5100;
  const auto& names = known_methods();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == method) return 0x5000 + i;
  throw std::invalid_argument("unknown method: " + method);
}

}  // namespace

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.episode.samples_per_epoch = 5;
  cfg.episode.max_epochs = 50;
  cfg.episode.sigma = 0.01;
  cfg.episode.learning_rate = 0.001;
  cfg.episode.query_cap = 250;
  cfg.episode.attack.iterations = 20;
  cfg.episode.attack.momentum_decay = 1.0;
  cfg.episode.attack.zo_reg_beta = 0.0;
  // Desk-scale ZO stage: the cosine landscape per patch coordinate is
  // nearly flat, so the refinement needs a larger step and budget than the
  // ZOO-style struct defaults to make progress at 32x32.
  cfg.zo.adam.learning_rate = 0.2;
  cfg.zo.max_queries = 6000;
  // Benchmark-sized agent; the 3/16 architecture default is available via
  // the episode config but costs ~3x the runtime at 32x32.
  cfg.episode.agent.levels = 2;
  cfg.episode.agent.base_channels = 8;
  cfg.dataset.noise = 0.08;
  return cfg;
}

ordered_json run_config_to_json(const RunConfig& cfg) {
  ordered_json j;
  j["dataset"] = {{"n_identities", cfg.dataset.n_identities},
                  {"per_identity", cfg.dataset.per_identity},
                  {"test_per_identity", cfg.dataset.test_per_identity},
                  {"height", cfg.dataset.height},
                  {"width", cfg.dataset.width},
                  {"channels", cfg.dataset.channels},
                  {"noise", cfg.dataset.noise},
                  {"seed", cfg.dataset.seed}};
  j["models"] = {{"surrogates", cfg.models.surrogates},
                 {"target", cfg.models.target},
                 {"epochs", cfg.models.epochs},
                 {"batch_size", cfg.models.batch_size},
                 {"learning_rate", cfg.models.learning_rate},
                 {"seed", cfg.models.seed}};
  j["mode"] = attack::mode_name(cfg.mode);
  j["patch"] = {{"height", cfg.patch.height}, {"width", cfg.patch.width}};
  j["exclusions"] = ordered_json::array();
  for (const auto& r : cfg.exclusions)
    j["exclusions"].push_back(
        {{"row", r.row}, {"col", r.col}, {"h", r.height}, {"w", r.width}});
  j["episode"] = {{"samples_per_epoch", cfg.episode.samples_per_epoch},
                  {"max_epochs", cfg.episode.max_epochs},
                  {"sigma", cfg.episode.sigma},
                  {"learning_rate", cfg.episode.learning_rate},
                  {"query_cap", cfg.episode.query_cap},
                  {"mifgsm",
                   {{"step_size", cfg.episode.attack.step_size},
                    {"momentum_decay", cfg.episode.attack.momentum_decay},
                    {"iterations", cfg.episode.attack.iterations},
                    {"smooth", cfg.episode.attack.smooth}}},
                  {"agent",
                   {{"levels", cfg.episode.agent.levels},
                    {"base_channels", cfg.episode.agent.base_channels}}},
                  {"fixed_step", cfg.episode.ablation.fixed_step}};
  j["zo"] = {{"offset", cfg.zo.offset},
             {"coords_per_step", cfg.zo.coords_per_step},
             {"max_queries", cfg.zo.max_queries},
             {"adam",
              {{"beta1", cfg.zo.adam.beta1},
               {"beta2", cfg.zo.adam.beta2},
               {"learning_rate", cfg.zo.adam.learning_rate},
               {"stabilizer", cfg.zo.adam.stabilizer}}}};
  j["so_zo_reg_beta"] = cfg.so_zo_reg_beta;
  j["methods"] = cfg.methods;
  j["seeds"] = cfg.seeds;
  j["n_test_images"] = cfg.n_test_images;
  j["threads"] = cfg.threads;
  j["output_dir"] = cfg.output_dir;
  return j;
}

RunConfig run_config_from_json(const ordered_json& j) {
  RunConfig cfg = default_run_config();
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    if (d.contains("n_identities")) cfg.dataset.n_identities = d.at("n_identities");
    if (d.contains("per_identity")) cfg.dataset.per_identity = d.at("per_identity");
    if (d.contains("test_per_identity"))
      cfg.dataset.test_per_identity = d.at("test_per_identity");
    if (d.contains("height")) cfg.dataset.height = d.at("height");
    if (d.contains("width")) cfg.dataset.width = d.at("width");
    if (d.contains("channels")) cfg.dataset.channels = d.at("channels");
    if (d.contains("noise")) cfg.dataset.noise = d.at("noise");
    if (d.contains("seed")) cfg.dataset.seed = d.at("seed");
  }
  if (j.contains("models")) {
    const auto& m = j.at("models");
    if (m.contains("surrogates"))
      cfg.models.surrogates = m.at("surrogates").get<std::vector<std::string>>();
    if (m.contains("target")) cfg.models.target = m.at("target");
    if (m.contains("epochs")) cfg.models.epochs = m.at("epochs");
    if (m.contains("batch_size")) cfg.models.batch_size = m.at("batch_size");
    if (m.contains("learning_rate")) cfg.models.learning_rate = m.at("learning_rate");
    if (m.contains("seed")) cfg.models.seed = m.at("seed");
  }
  if (j.contains("mode")) cfg.mode = attack::mode_from_name(j.at("mode"));
  if (j.contains("patch")) {
    cfg.patch.height = j.at("patch").at("height");
    cfg.patch.width = j.at("patch").at("width");
  }
  if (j.contains("exclusions")) {
    cfg.exclusions.clear();
    for (const auto& e : j.at("exclusions"))
      cfg.exclusions.push_back({e.at("row").get<int>(), e.at("col").get<int>(),
                                e.at("h").get<int>(), e.at("w").get<int>()});
  }
  if (j.contains("episode")) {
    const auto& e = j.at("episode");
    if (e.contains("samples_per_epoch"))
      cfg.episode.samples_per_epoch = e.at("samples_per_epoch");
    if (e.contains("max_epochs")) cfg.episode.max_epochs = e.at("max_epochs");
    if (e.contains("sigma")) cfg.episode.sigma = e.at("sigma");
    if (e.contains("learning_rate")) cfg.episode.learning_rate = e.at("learning_rate");
    if (e.contains("query_cap")) cfg.episode.query_cap = e.at("query_cap");
    if (e.contains("mifgsm")) {
      const auto& a = e.at("mifgsm");
      if (a.contains("step_size")) cfg.episode.attack.step_size = a.at("step_size");
      if (a.contains("momentum_decay"))
        cfg.episode.attack.momentum_decay = a.at("momentum_decay");
      if (a.contains("iterations")) cfg.episode.attack.iterations = a.at("iterations");
      if (a.contains("smooth")) cfg.episode.attack.smooth = a.at("smooth");
    }
    if (e.contains("agent")) {
      const auto& a = e.at("agent");
      if (a.contains("levels")) cfg.episode.agent.levels = a.at("levels");
      if (a.contains("base_channels")) cfg.episode.agent.base_channels = a.at("base_channels");
    }
    if (e.contains("fixed_step")) cfg.episode.ablation.fixed_step = e.at("fixed_step");
  }
  if (j.contains("zo")) {
    const auto& z = j.at("zo");
    if (z.contains("offset")) cfg.zo.offset = z.at("offset");
    if (z.contains("coords_per_step")) cfg.zo.coords_per_step = z.at("coords_per_step");
    if (z.contains("max_queries")) cfg.zo.max_queries = z.at("max_queries");
    if (z.contains("adam")) {
      const auto& a = z.at("adam");
      if (a.contains("beta1")) cfg.zo.adam.beta1 = a.at("beta1");
      if (a.contains("beta2")) cfg.zo.adam.beta2 = a.at("beta2");
      if (a.contains("learning_rate")) cfg.zo.adam.learning_rate = a.at("learning_rate");
      if (a.contains("stabilizer")) cfg.zo.adam.stabilizer = a.at("stabilizer");
    }
  }
  if (j.contains("so_zo_reg_beta")) cfg.so_zo_reg_beta = j.at("so_zo_reg_beta");
  if (j.contains("methods")) cfg.methods = j.at("methods").get<std::vector<std::string>>();
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("n_test_images")) cfg.n_test_images = j.at("n_test_images");
  if (j.contains("threads")) cfg.threads = j.at("threads");
  if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir");
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config " + path);
  return run_config_from_json(ordered_json::parse(f));
}

std::vector<std::string> validate_run_config(const RunConfig& cfg) {
  std::vector<std::string> errors;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };
  check(cfg.dataset.n_identities >= 2, "dataset.n_identities must be >= 2");
  check(cfg.dataset.per_identity >= 1, "dataset.per_identity must be >= 1");
  check(cfg.dataset.height >= 1 && cfg.dataset.width >= 1 && cfg.dataset.channels >= 1,
        "dataset dims must be >= 1");
  check(cfg.dataset.noise >= 0.0, "dataset.noise must be >= 0");
  check(!cfg.models.surrogates.empty(), "models.surrogates must not be empty");
  {
    auto sorted = cfg.models.surrogates;
    std::sort(sorted.begin(), sorted.end());
    check(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
          "models.surrogates contains duplicates");
  }
  // Leave-one-out protocol: the attacked target never sits in the ensemble.
  check(std::find(cfg.models.surrogates.begin(), cfg.models.surrogates.end(),
                  cfg.models.target) == cfg.models.surrogates.end(),
        "models.target must not appear in models.surrogates (leave-one-out)");
  for (const auto& id : cfg.models.surrogates) {
    try {
      models::architecture_by_id(id, {cfg.dataset.channels, cfg.dataset.height,
                                      cfg.dataset.width});
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
  }
  check(cfg.patch.height >= 1 && cfg.patch.height <= cfg.dataset.height,
        "patch.height out of range");
  check(cfg.patch.width >= 1 && cfg.patch.width <= cfg.dataset.width,
        "patch.width out of range");
  check(cfg.episode.samples_per_epoch >= 1, "episode.samples_per_epoch must be >= 1");
  check(cfg.episode.max_epochs >= 1, "episode.max_epochs must be >= 1");
  check(cfg.episode.sigma > 0.0, "episode.sigma must be > 0");
  check(cfg.episode.attack.iterations >= 1, "episode.mifgsm.iterations must be >= 1");
  check(cfg.episode.attack.momentum_decay >= 0.0,
        "episode.mifgsm.momentum_decay must be >= 0");
  const auto grid = attack::step_grid();
  auto on_grid = [&](double s) {
    return std::any_of(grid.begin(), grid.end(),
                       [&](double v) { return std::abs(v - s) < 1e-9; });
  };
  check(on_grid(cfg.episode.attack.step_size),
        "episode.mifgsm.step_size must lie on the 0.01..0.20 grid");
  check(on_grid(cfg.episode.ablation.fixed_step),
        "episode.fixed_step must lie on the 0.01..0.20 grid");
  check(cfg.zo.offset > 0.0, "zo.offset must be > 0");
  check(cfg.zo.coords_per_step >= 1, "zo.coords_per_step must be >= 1");
  check(cfg.zo.max_queries >= 0, "zo.max_queries must be >= 0");
  check(!cfg.seeds.empty(), "seeds must not be empty");
  check(cfg.n_test_images >= 1, "n_test_images must be >= 1");
  for (const auto& m : cfg.methods) {
    const auto& names = known_methods();
    if (std::find(names.begin(), names.end(), m) == names.end())
      errors.push_back("unknown method: " + m);
  }
  return errors;
}

// ---------------------------------------------------------------- baselines

loop::AttackResult baseline_perturbation_only(const img::Image& x,
                                              const loop::EpisodeConfig& cfg,
                                              const attack::Surrogates& surrogates,
                                              models::TargetOracle& oracle,
                                              const img::ValidRegion& valid,
                                              rng::Stream& rs) {
  std::vector<int> allowed;
  for (int i = 0; i < valid.grid_height * valid.grid_width; ++i)
    if (valid.allowed[static_cast<std::size_t>(i)]) allowed.push_back(i);
  if (allowed.empty()) throw img::EmptyRegionError("baseline: empty valid region");
  const int idx =
      allowed[static_cast<std::size_t>(rs.uniform_int(0, static_cast<std::int64_t>(allowed.size()) - 1))];

  const long start = oracle.query_count();
  loop::AttackResult result;
  result.final_action.origin_row = idx / valid.grid_width;
  result.final_action.origin_col = idx % valid.grid_width;
  result.final_action.rho = attack::EnsembleWeights::equal(static_cast<int>(surrogates.size()));
  result.final_action.step_size = cfg.ablation.fixed_step;

  const img::PatchMask mask = img::make_mask(result.final_action.origin_col,
                                             result.final_action.origin_row, cfg.patch,
                                             x.height, x.width);
  attack::MifgsmConfig acfg = cfg.attack;
  acfg.mode = cfg.mode;
  acfg.label = cfg.label;
  acfg.step_size = cfg.ablation.fixed_step;
  result.adv_image = attack::mifgsm_patch(x, mask, result.final_action.rho, acfg, surrogates);

  models::Verdict verdict;
  result.final_reward = loop::reward(oracle, result.adv_image, cfg.mode, cfg.label, &verdict);
  result.success = loop::success_check(verdict, cfg.mode, cfg.label);
  result.nq = oracle.query_count() - start;
  result.action_trace.push_back({result.final_action, result.final_reward});
  return result;
}

loop::AttackResult baseline_position_only(const img::Image& x, const img::Image& pattern,
                                          attack::Mode mode, const std::string& label,
                                          models::TargetOracle& oracle,
                                          const img::ValidRegion& valid, long cap,
                                          rng::Stream& rs) {
  if (pattern.height != valid.spec.height || pattern.width != valid.spec.width)
    throw std::invalid_argument("baseline_position_only: pattern dims != patch spec");
  std::vector<int> allowed;
  for (int i = 0; i < valid.grid_height * valid.grid_width; ++i)
    if (valid.allowed[static_cast<std::size_t>(i)]) allowed.push_back(i);
  if (allowed.empty()) throw img::EmptyRegionError("baseline: empty valid region");
  for (std::size_t i = allowed.size(); i > 1; --i)
    std::swap(allowed[i - 1],
              allowed[static_cast<std::size_t>(rs.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

  const long start = oracle.query_count();
  loop::AttackResult result;
  result.adv_image = x;
  double best = -1.0;
  const long budget = cap > 0 ? std::min<long>(cap, static_cast<long>(allowed.size()))
                              : static_cast<long>(allowed.size());
  for (long k = 0; k < budget; ++k) {
    const int idx = allowed[static_cast<std::size_t>(k)];
    const int row = idx / valid.grid_width, col = idx % valid.grid_width;
    const img::PatchMask mask = img::make_mask(col, row, valid.spec, x.height, x.width);
    const img::Image candidate = img::paste(x, img::uncrop(x, pattern, mask), mask);
    models::Verdict verdict;
    const double r = loop::reward(oracle, candidate, mode, label, &verdict);
    if (r > best) {
      best = r;
      result.adv_image = candidate;
      result.final_action.origin_col = col;
      result.final_action.origin_row = row;
      result.final_reward = r;
    }
    if (loop::success_check(verdict, mode, label)) {
      result.success = true;
      result.adv_image = candidate;
      result.final_action.origin_col = col;
      result.final_action.origin_row = row;
      result.final_reward = r;
      break;
    }
  }
  result.nq = oracle.query_count() - start;
  result.action_trace.push_back({result.final_action, result.final_reward});
  return result;
}

loop::AttackResult baseline_random_zo(const img::Image& x, const img::PatchSpec& patch,
                                      attack::Mode mode, const std::string& label,
                                      models::TargetOracle& oracle,
                                      const img::ValidRegion& valid,
                                      const zo::ZoConfig& cfg, rng::Stream& rs) {
  std::vector<int> allowed;
  for (int i = 0; i < valid.grid_height * valid.grid_width; ++i)
    if (valid.allowed[static_cast<std::size_t>(i)]) allowed.push_back(i);
  if (allowed.empty()) throw img::EmptyRegionError("baseline: empty valid region");
  const int idx =
      allowed[static_cast<std::size_t>(rs.uniform_int(0, static_cast<std::int64_t>(allowed.size()) - 1))];
  const int row = idx / valid.grid_width, col = idx % valid.grid_width;

  img::Image init(patch.height, patch.width, x.channels);
  for (int i = 0; i < init.size(); ++i) init.data[i] = rs.uniform();
  return zo::adam_zo_refine(x, init, col, row, oracle, mode, label, cfg, rs);
}

// ------------------------------------------------------------- experiment

namespace {

struct SeedContext {
  std::uint64_t seed = 0;
  models::Dataset dataset;
  attack::Surrogates surrogates;
  models::Recognizer target;
  img::ValidRegion valid;
  std::vector<int> test_indices;  // into dataset.test, clean-verified
  long clean_filtered = 0;
};

SeedContext build_seed_context(const RunConfig& cfg, std::uint64_t seed) {
  SeedContext ctx;
  ctx.seed = seed;
  DatasetConfig dc = cfg.dataset;
  dc.seed = rng::mix(cfg.dataset.seed, seed);
  ctx.dataset = generate_synthetic_dataset(dc, cfg.exclusions);

  models::TrainConfig tc;
  tc.architecture_ids = cfg.models.surrogates;
  tc.architecture_ids.push_back(cfg.models.target);
  tc.seed = rng::mix(cfg.models.seed, seed);
  tc.epochs = cfg.models.epochs;
  tc.batch_size = cfg.models.batch_size;
  tc.learning_rate = cfg.models.learning_rate;
  auto trained = models::train_toy_models(ctx.dataset, tc);

  for (std::size_t i = 0; i < trained.size(); ++i) {
    auto ptr = std::make_shared<models::FeatureExtractor>(std::move(trained[i]));
    models::Recognizer rec{ptr, models::build_gallery(*ptr, ctx.dataset.train)};
    if (i + 1 == trained.size())
      ctx.target = std::move(rec);
    else
      ctx.surrogates.push_back(std::move(rec));
  }

  ctx.valid = img::compute_valid_region(cfg.dataset.height, cfg.dataset.width,
                                        cfg.exclusions, cfg.patch);

  // Round-robin across identities, keeping only cleanly identified images.
  std::map<std::string, std::vector<int>> by_label;
  for (std::size_t i = 0; i < ctx.dataset.test.size(); ++i)
    by_label[ctx.dataset.test[i].label].push_back(static_cast<int>(i));
  bool progressed = true;
  std::size_t round = 0;
  while (static_cast<int>(ctx.test_indices.size()) < cfg.n_test_images && progressed) {
    progressed = false;
    for (auto& [label, ids] : by_label) {
      if (round < ids.size() &&
          static_cast<int>(ctx.test_indices.size()) < cfg.n_test_images) {
        const int idx = ids[round];
        const auto& li = ctx.dataset.test[static_cast<std::size_t>(idx)];
        if (models::identify(ctx.target, li.image).identity == li.label)
          ctx.test_indices.push_back(idx);
        else
          ++ctx.clean_filtered;
        progressed = true;
      }
    }
    ++round;
  }
  return ctx;
}

// Deterministic impersonation target: the non-true identity whose gallery
// entry is most similar to the clean embedding (the easiest confusion).
std::string pick_impersonation_target(const SeedContext& ctx, const img::Image& x,
                                      const std::string& truth) {
  const Eigen::VectorXd e = models::extract(*ctx.target.extractor, x);
  const double nx = std::max(e.norm(), 1e-30);
  std::string best;
  double best_cos = -2.0;
  for (const auto& [label, emb] : ctx.target.gallery.entries) {
    if (label == truth) continue;
    const double c = e.dot(emb) / nx;
    if (c > best_cos) {
      best_cos = c;
      best = label;
    }
  }
  return best;
}

ImageRecord run_one(const RunConfig& cfg, const SeedContext& ctx, const std::string& method,
                    int order_index, img::Image* patch_out) {
  const int test_idx = ctx.test_indices[static_cast<std::size_t>(order_index)];
  const auto& li = ctx.dataset.test[static_cast<std::size_t>(test_idx)];

  ImageRecord rec;
  rec.seed = ctx.seed;
  {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%llu_t%02d", static_cast<unsigned long long>(ctx.seed),
                  order_index);
    rec.image_id = buf;
  }
  rec.method = method;
  rec.mode = attack::mode_name(cfg.mode);
  rec.label = li.label;

  loop::EpisodeConfig ecfg = cfg.episode;
  ecfg.mode = cfg.mode;
  ecfg.patch = cfg.patch;
  ecfg.true_label = li.label;
  if (cfg.mode == attack::Mode::kImpersonation) {
    rec.target_label = pick_impersonation_target(ctx, li.image, li.label);
    ecfg.label = rec.target_label;
  } else {
    ecfg.label = li.label;
  }

  models::TargetOracle oracle(ctx.target);
  rng::Stream rs(rng::mix(ctx.seed, method_stream_id(method),
                          static_cast<std::uint64_t>(order_index)));
  const std::uint64_t agent_seed =
      rng::mix(ctx.seed, method_stream_id(method) + 0x100, static_cast<std::uint64_t>(order_index));

  const long before = oracle.query_count();
  loop::AttackResult res;
  if (method == "so" || method == "ablate_p" || method == "ablate_pw") {
    if (method == "ablate_p") {
      ecfg.ablation.learn_weights = false;
      ecfg.ablation.learn_step = false;
    } else if (method == "ablate_pw") {
      ecfg.ablation.learn_step = false;
    }
    agent::AgentNet net({cfg.dataset.channels, cfg.dataset.height, cfg.dataset.width},
                        static_cast<int>(ctx.surrogates.size()), ctx.valid, ecfg.agent,
                        agent_seed);
    res = loop::run_attack(li.image, ecfg, net, ctx.surrogates, oracle, ctx.valid, rs);
  } else if (method == "so_zo") {
    ecfg.attack.zo_reg_beta = cfg.so_zo_reg_beta;
    agent::AgentNet net({cfg.dataset.channels, cfg.dataset.height, cfg.dataset.width},
                        static_cast<int>(ctx.surrogates.size()), ctx.valid, ecfg.agent,
                        agent_seed);
    res = zo::so_then_zo(li.image, ecfg, cfg.zo, net, ctx.surrogates, oracle, ctx.valid, rs);
  } else if (method == "perturbation_only") {
    res = baseline_perturbation_only(li.image, ecfg, ctx.surrogates, oracle, ctx.valid, rs);
  } else if (method == "position_only") {
    // Pattern fixed per episode, drawn from the episode stream.
    img::Image pattern(cfg.patch.height, cfg.patch.width, cfg.dataset.channels);
    for (int i = 0; i < pattern.size(); ++i) pattern.data[i] = rs.uniform();
    res = baseline_position_only(li.image, pattern, cfg.mode, ecfg.label, oracle, ctx.valid,
                                 ecfg.query_cap, rs);
  } else if (method == "random_zo") {
    res = baseline_random_zo(li.image, cfg.patch, cfg.mode, ecfg.label, oracle, ctx.valid,
                             cfg.zo, rs);
  } else {
    throw std::invalid_argument("unknown method: " + method);
  }
  rec.oracle_delta = oracle.query_count() - before;

  rec.success = res.success;
  rec.nq = res.nq;
  rec.epochs = res.epochs_run;
  rec.origin_col = res.final_action.origin_col;
  rec.origin_row = res.final_action.origin_row;
  if (res.final_action.rho.values.size() > 0)
    rec.rho.assign(res.final_action.rho.values.data(),
                   res.final_action.rho.values.data() + res.final_action.rho.values.size());
  rec.eps = res.final_action.step_size;
  rec.nq_so = res.nq_so;
  rec.nq_zo = res.nq_zo;
  for (const auto& eb : res.action_trace) rec.reward_trace.push_back(eb.reward);

  if (patch_out && res.success) {
    const img::PatchMask mask = img::make_mask(rec.origin_col, rec.origin_row, cfg.patch,
                                               cfg.dataset.height, cfg.dataset.width);
    *patch_out = img::crop(res.adv_image, mask);
  }
  return rec;
}

void write_outputs(const RunConfig& cfg, RunSummary& summary,
                   const std::vector<img::Image>& patches,
                   const std::vector<bool>& has_patch) {
  const fs::path out(cfg.output_dir);
  fs::create_directories(out / "plots");
  fs::create_directories(out / "patches");

  {
    std::ofstream f(out / "records.jsonl");
    for (const auto& r : summary.records) f << record_to_json(r).dump() << "\n";
  }
  {
    std::ofstream f(out / "summary.json");
    ordered_json j;
    j["config"] = summary.config_snapshot;
    j["clean_filtered"] = summary.clean_filtered;
    j["methods"] = ordered_json::array();
    for (const auto& m : summary.methods) {
      ordered_json e;
      e["method"] = m.method;
      e["attempted"] = m.attempted;
      e["successes"] = m.successes;
      e["budget_exhausted"] = m.budget_exhausted;
      e["asr"] = m.asr;
      e["mean_nq"] = m.mean_nq;
      e["seed_averaged_asr"] = m.seed_averaged_asr;
      for (const auto& [s, v] : m.per_seed_asr)
        e["per_seed_asr"][std::to_string(s)] = v;
      j["methods"].push_back(e);
    }
    f << j.dump(2) << "\n";
  }
  {
    std::ofstream f(out / "summary.csv");
    f << "method,attempted,successes,budget_exhausted,asr,mean_nq,seed_averaged_asr\n";
    for (const auto& m : summary.methods) {
      char line[256];
      std::snprintf(line, sizeof(line), "%s,%ld,%ld,%ld,%.6f,%.4f,%.6f\n",
                    m.method.c_str(), m.attempted, m.successes, m.budget_exhausted, m.asr,
                    m.mean_nq, m.seed_averaged_asr);
      f << line;
    }
  }
  {
    ordered_json manifest;
    manifest["generated_at"] = []() {
      std::time_t t = std::time(nullptr);
      char buf[64];
      std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
      return std::string(buf);
    }();
    manifest["config"] = summary.config_snapshot;
    std::ofstream f(out / "manifest.json");
    f << manifest.dump(2) << "\n";
  }

  std::vector<std::string> labels;
  std::vector<double> asr;
  std::vector<std::vector<double>> nq_series;
  for (const auto& m : summary.methods) {
    labels.push_back(m.method);
    asr.push_back(m.asr);
    std::vector<double> nqs;
    for (const auto& r : summary.records)
      if (r.method == m.method && r.success) nqs.push_back(static_cast<double>(r.nq));
    nq_series.push_back(std::move(nqs));
  }
  plot::bar_chart_svg((out / "plots" / "asr.svg").string(), "Attack success rate", labels,
                      asr);
  plot::histogram_svg((out / "plots" / "nq.svg").string(),
                      "Queries per successful attack", labels, nq_series, 20);

  for (std::size_t i = 0; i < summary.records.size(); ++i) {
    if (!has_patch[i]) continue;
    const auto& r = summary.records[i];
    const fs::path dir = out / "patches" / r.method;
    fs::create_directories(dir);
    io::save_png((dir / (r.image_id + ".png")).string(), patches[i]);
  }
}

}  // namespace

std::vector<MethodSummary> summarize_records(const std::vector<ImageRecord>& records,
                                             const std::vector<std::string>& method_order) {
  std::vector<MethodSummary> out;
  for (const auto& method : method_order) {
    MethodSummary ms;
    ms.method = method;
    std::map<std::uint64_t, std::pair<long, long>> per_seed;  // attempted, successes
    double nq_sum = 0.0;
    for (const auto& r : records) {
      if (r.method != method) continue;
      ++ms.attempted;
      auto& [att, suc] = per_seed[r.seed];
      ++att;
      if (r.success) {
        ++ms.successes;
        ++suc;
        nq_sum += static_cast<double>(r.nq);
      } else {
        ++ms.budget_exhausted;
      }
    }
    if (ms.attempted > 0)
      ms.asr = static_cast<double>(ms.successes) / static_cast<double>(ms.attempted);
    if (ms.successes > 0) ms.mean_nq = nq_sum / static_cast<double>(ms.successes);
    double acc = 0.0;
    for (const auto& [seed, counts] : per_seed) {
      const double sa = counts.first > 0
                            ? static_cast<double>(counts.second) / counts.first
                            : 0.0;
      ms.per_seed_asr[seed] = sa;
      acc += sa;
    }
    if (!per_seed.empty()) ms.seed_averaged_asr = acc / static_cast<double>(per_seed.size());
    out.push_back(std::move(ms));
  }
  return out;
}

ordered_json record_to_json(const ImageRecord& r) {
  ordered_json j;
  j["seed"] = r.seed;
  j["image_id"] = r.image_id;
  j["method"] = r.method;
  j["mode"] = r.mode;
  j["label"] = r.label;
  if (!r.target_label.empty()) j["target_label"] = r.target_label;
  j["success"] = r.success;
  j["nq"] = r.nq;
  j["oracle_delta"] = r.oracle_delta;
  j["epochs"] = r.epochs;
  j["origin"] = {{"col", r.origin_col}, {"row", r.origin_row}};
  j["rho"] = r.rho;
  j["eps"] = r.eps;
  j["nq_so"] = r.nq_so;
  j["nq_zo"] = r.nq_zo;
  j["reward_trace"] = r.reward_trace;
  return j;
}

ImageRecord record_from_json(const ordered_json& j) {
  ImageRecord r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.image_id = j.at("image_id").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.label = j.at("label").get<std::string>();
  if (j.contains("target_label")) r.target_label = j.at("target_label").get<std::string>();
  r.success = j.at("success").get<bool>();
  r.nq = j.at("nq").get<long>();
  r.oracle_delta = j.at("oracle_delta").get<long>();
  r.epochs = j.at("epochs").get<int>();
  r.origin_col = j.at("origin").at("col").get<int>();
  r.origin_row = j.at("origin").at("row").get<int>();
  r.rho = j.at("rho").get<std::vector<double>>();
  r.eps = j.at("eps").get<double>();
  r.nq_so = j.at("nq_so").get<long>();
  r.nq_zo = j.at("nq_zo").get<long>();
  r.reward_trace = j.at("reward_trace").get<std::vector<double>>();
  return r;
}

std::vector<ImageRecord> read_records_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::vector<ImageRecord> records;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    records.push_back(record_from_json(ordered_json::parse(line)));
  }
  return records;
}

RunSummary run_experiment(const RunConfig& cfg) {
  {
    const auto errors = validate_run_config(cfg);
    if (!errors.empty()) {
      std::ostringstream msg;
      msg << "invalid config:";
      for (const auto& e : errors) msg << "\n  - " << e;
      throw std::invalid_argument(msg.str());
    }
  }

  RunSummary summary;
  summary.config_snapshot = run_config_to_json(cfg);

  struct Task {
    std::size_t seed_index;
    std::string method;
    int order_index;
  };
  std::vector<Task> tasks;
  std::vector<SeedContext> contexts;
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    contexts.push_back(build_seed_context(cfg, cfg.seeds[si]));
    summary.clean_filtered += contexts.back().clean_filtered;
    for (const auto& method : cfg.methods)
      for (int i = 0; i < static_cast<int>(contexts.back().test_indices.size()); ++i)
        tasks.push_back({si, method, i});
  }

  std::vector<ImageRecord> records(tasks.size());
  std::vector<img::Image> patches(tasks.size());
  std::vector<bool> has_patch(tasks.size(), false);

  const int n_threads = cfg.threads > 0
                            ? cfg.threads
                            : std::max(1u, std::thread::hardware_concurrency());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& t = tasks[i];
      img::Image patch;
      records[i] = run_one(cfg, contexts[t.seed_index], t.method, t.order_index, &patch);
      if (patch.size() > 0) {
        patches[i] = std::move(patch);
        has_patch[i] = true;
      }
    }
  };
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  summary.records = std::move(records);
  summary.methods = summarize_records(summary.records, cfg.methods);
  write_outputs(cfg, summary, patches, has_patch);
  return summary;
}

RunSummary ablation_axes(RunConfig cfg) {
  cfg.methods = {"ablate_p", "ablate_pw", "so"};
  return run_experiment(cfg);
}

void write_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  auto records = read_records_jsonl((dir / "records.jsonl").string());
  std::vector<std::string> methods;
  for (const auto& r : records)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
  const auto summaries = summarize_records(records, methods);

  fs::create_directories(dir / "plots");
  {
    std::ofstream f(dir / "summary.csv");
    f << "method,attempted,successes,budget_exhausted,asr,mean_nq,seed_averaged_asr\n";
    for (const auto& m : summaries) {
      char line[256];
      std::snprintf(line, sizeof(line), "%s,%ld,%ld,%ld,%.6f,%.4f,%.6f\n",
                    m.method.c_str(), m.attempted, m.successes, m.budget_exhausted, m.asr,
                    m.mean_nq, m.seed_averaged_asr);
      f << line;
    }
  }
  std::vector<std::string> labels;
  std::vector<double> asr;
  std::vector<std::vector<double>> nq_series;
  for (const auto& m : summaries) {
    labels.push_back(m.method);
    asr.push_back(m.asr);
    std::vector<double> nqs;
    for (const auto& r : records)
      if (r.method == m.method && r.success) nqs.push_back(static_cast<double>(r.nq));
    nq_series.push_back(std::move(nqs));
  }
  plot::bar_chart_svg((dir / "plots" / "asr.svg").string(), "Attack success rate", labels,
                      asr);
  plot::histogram_svg((dir / "plots" / "nq.svg").string(), "Queries per successful attack",
                      labels, nq_series, 20);
}

}  // namespace patchrl::harness
