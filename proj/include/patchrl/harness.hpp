#ifndef PATCHRL_HARNESS_HPP
#define PATCHRL_HARNESS_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchrl/episode.hpp"
#include "patchrl/model.hpp"
#include "patchrl/zo.hpp"

namespace patchrl::harness {

struct DatasetConfig {
  int n_identities = 10;
  int per_identity = 20;       // training images per identity
  int test_per_identity = 7;
  int height = 32, width = 32, channels = 3;
  double noise = 0.08;
  std::uint64_t seed = 1234;
};

struct ModelsConfig {
  std::vector<std::string> surrogates{"mlp_small", "mlp_medium", "mlp_deep"};
  std::string target = "mlp_wide";
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 0.001;
  std::uint64_t seed = 77;
};

struct RunConfig {
  DatasetConfig dataset;
  ModelsConfig models;
  attack::Mode mode = attack::Mode::kDodging;
  img::PatchSpec patch{6, 7};
  std::vector<img::Rect> exclusions{{12, 10, 8, 12}};
  loop::EpisodeConfig episode;
  zo::ZoConfig zo;
  double so_zo_reg_beta = 0.1;  // Eq.-15 regularizer weight for the combined attack
  std::vector<std::string> methods{"so"};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int n_test_images = 50;
  int threads = 0;  // 0 = hardware concurrency
  std::string output_dir = "out";
};

/// Known method names, in canonical report order.
const std::vector<std::string>& known_methods();

RunConfig default_run_config();
nlohmann::ordered_json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::ordered_json& j);
RunConfig load_run_config(const std::string& path);

/// Structural checks (leave-one-out roster, ranges, method names). Returns
/// the list of violations; empty means valid.
std::vector<std::string> validate_run_config(const RunConfig& cfg);

/// Synthetic identity-blob dataset: per-identity smooth base pattern
/// (random Gaussian bumps over a ramp) plus per-image bounded noise.
/// Deterministic under the config seed.
models::Dataset generate_synthetic_dataset(const DatasetConfig& cfg,
                                           const std::vector<img::Rect>& exclusions);

void save_dataset(const std::string& dir, const models::Dataset& ds);
models::Dataset load_dataset(const std::string& dir);

// --- baselines ---

/// Transfer-only: equal weights, one fixed random valid origin, a single
/// verification query.
loop::AttackResult baseline_perturbation_only(const img::Image& x,
                                              const loop::EpisodeConfig& cfg,
                                              const attack::Surrogates& surrogates,
                                              models::TargetOracle& oracle,
                                              const img::ValidRegion& valid,
                                              rng::Stream& rs);

/// Fixed-pattern random placement search: one query per candidate origin
/// (no repeats), capped by the query budget.
loop::AttackResult baseline_position_only(const img::Image& x, const img::Image& pattern,
                                          attack::Mode mode, const std::string& label,
                                          models::TargetOracle& oracle,
                                          const img::ValidRegion& valid, long cap,
                                          rng::Stream& rs);

/// Random origin and random patch content refined by the ZO stage.
loop::AttackResult baseline_random_zo(const img::Image& x, const img::PatchSpec& patch,
                                      attack::Mode mode, const std::string& label,
                                      models::TargetOracle& oracle,
                                      const img::ValidRegion& valid,
                                      const zo::ZoConfig& cfg, rng::Stream& rs);

// --- experiment driver ---

struct ImageRecord {
  std::uint64_t seed = 0;
  std::string image_id;
  std::string method;
  std::string mode;
  std::string label;         // ground truth
  std::string target_label;  // impersonation target ("" for dodging)
  bool success = false;
  long nq = 0;
  long oracle_delta = 0;  // instrumented counter delta, recorded independently
  int epochs = 0;
  int origin_col = 0, origin_row = 0;
  std::vector<double> rho;
  double eps = 0.0;
  long nq_so = 0, nq_zo = 0;
  std::vector<double> reward_trace;
};

struct MethodSummary {
  std::string method;
  long attempted = 0;
  long successes = 0;
  long budget_exhausted = 0;
  double asr = 0.0;      // successes / attempted, pooled over seeds
  double mean_nq = 0.0;  // over successful attacks only
  std::map<std::uint64_t, double> per_seed_asr;
  double seed_averaged_asr = 0.0;  // mean of the per-seed ASRs
};

struct RunSummary {
  std::vector<MethodSummary> methods;
  std::vector<ImageRecord> records;
  nlohmann::ordered_json config_snapshot;
  long clean_filtered = 0;  // test images dropped by the clean-identification filter
};

/// Runs every configured method over the seeded toy benchmark and writes
/// records.jsonl, summary.csv/json, patch PNGs and comparison plots under
/// cfg.output_dir. Re-computable: every summary number derives from the
/// persisted records.
RunSummary run_experiment(const RunConfig& cfg);

/// The three ablation variants (position only / + weights / + step size).
RunSummary ablation_axes(RunConfig cfg);

/// Aggregates records into per-method summaries (used both by
/// run_experiment and by `report` when re-reading persisted records).
std::vector<MethodSummary> summarize_records(const std::vector<ImageRecord>& records,
                                             const std::vector<std::string>& method_order);

nlohmann::ordered_json record_to_json(const ImageRecord& r);
ImageRecord record_from_json(const nlohmann::ordered_json& j);
std::vector<ImageRecord> read_records_jsonl(const std::string& path);

/// Regenerates summary.csv/json and plots from an output directory's
/// records.jsonl.
void write_report(const std::string& run_dir);

}  // namespace patchrl::harness

#endif  // PATCHRL_HARNESS_HPP
