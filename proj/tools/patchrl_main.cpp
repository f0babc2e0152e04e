#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "patchrl/harness.hpp"
#include "patchrl/png_io.hpp"

namespace fs = std::filesystem;
using namespace patchrl;

namespace {

// Relative output paths land under $PATCHRL_OUT_ROOT when it is set.
std::string resolve_out(const std::string& path) {
  const char* root = std::getenv("PATCHRL_OUT_ROOT");
  if (!root || *root == '\0' || fs::path(path).is_absolute()) return path;
  return (fs::path(root) / path).string();
}

harness::RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return harness::default_run_config();
  return harness::load_run_config(path);
}

void print_summary(const harness::RunSummary& summary) {
  std::cout << "method              attempted successes    ASR    mean NQ\n";
  for (const auto& m : summary.methods) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-20s %8ld %9ld  %6.2f%%  %8.2f\n",
                  m.method.c_str(), m.attempted, m.successes, m.asr * 100.0, m.mean_nq);
    std::cout << line;
  }
  if (summary.clean_filtered > 0)
    std::cout << "(clean-identification filter dropped " << summary.clean_filtered
              << " test images)\n";
}

int run_methods(const std::string& config_path, const std::string& out_dir,
                const std::vector<std::string>& methods, int threads) {
  harness::RunConfig cfg = load_config_or_default(config_path);
  if (!methods.empty()) cfg.methods = methods;
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  cfg.output_dir = resolve_out(cfg.output_dir);
  if (threads > 0) cfg.threads = threads;
  const auto summary = harness::run_experiment(cfg);
  print_summary(summary);
  std::cout << "outputs written to " << cfg.output_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Black-box adversarial patch toolkit"};
  app.require_subcommand(1);

  // dataset gen
  auto* dataset = app.add_subcommand("dataset", "Dataset utilities");
  auto* dataset_gen = dataset->add_subcommand("gen", "Generate the synthetic identity dataset");
  std::string ds_out = "data";
  harness::DatasetConfig ds_cfg;
  std::vector<std::vector<int>> ds_excl;
  dataset_gen->add_option("--out", ds_out, "Output directory");
  dataset_gen->add_option("--identities", ds_cfg.n_identities, "Number of identities");
  dataset_gen->add_option("--per-identity", ds_cfg.per_identity, "Training images per identity");
  dataset_gen->add_option("--test-per-identity", ds_cfg.test_per_identity,
                          "Test images per identity");
  dataset_gen->add_option("--height", ds_cfg.height, "Image height");
  dataset_gen->add_option("--width", ds_cfg.width, "Image width");
  dataset_gen->add_option("--channels", ds_cfg.channels, "Image channels");
  dataset_gen->add_option("--noise", ds_cfg.noise, "Per-image noise amplitude");
  dataset_gen->add_option("--seed", ds_cfg.seed, "Dataset seed");
  dataset_gen->add_option("--exclusion", ds_excl,
                          "Exclusion rectangle row col h w (repeatable)")
      ->expected(-1);

  // models train
  auto* models_cmd = app.add_subcommand("models", "Model utilities");
  auto* models_train = models_cmd->add_subcommand("train", "Train the toy extractors");
  std::string mt_dataset, mt_out = "models";
  models::TrainConfig mt_cfg;
  mt_cfg.architecture_ids = {"mlp_small", "mlp_medium", "mlp_deep", "conv_small"};
  models_train->add_option("--dataset", mt_dataset, "Dataset directory")->required();
  models_train->add_option("--out", mt_out, "Checkpoint directory");
  models_train->add_option("--archs", mt_cfg.architecture_ids, "Architecture ids");
  models_train->add_option("--seed", mt_cfg.seed, "Training seed");
  models_train->add_option("--epochs", mt_cfg.epochs, "Training epochs");
  models_train->add_option("--batch", mt_cfg.batch_size, "Batch size");
  models_train->add_option("--lr", mt_cfg.learning_rate, "Learning rate");

  // gallery build
  auto* gallery_cmd = app.add_subcommand("gallery", "Gallery utilities");
  auto* gallery_build = gallery_cmd->add_subcommand("build", "Build a gallery for one model");
  std::string gb_models, gb_dataset, gb_arch, gb_out = "gallery.json";
  gallery_build->add_option("--models", gb_models, "Checkpoint directory")->required();
  gallery_build->add_option("--arch", gb_arch, "Architecture id of the model")->required();
  gallery_build->add_option("--dataset", gb_dataset, "Dataset directory")->required();
  gallery_build->add_option("--out", gb_out, "Output gallery JSON");

  // attack run / attack refine
  auto* attack_cmd = app.add_subcommand("attack", "Run attacks");
  auto* attack_run = attack_cmd->add_subcommand("run", "Run configured attack methods");
  std::string ar_config, ar_out;
  std::vector<std::string> ar_methods;
  int ar_threads = 0;
  attack_run->add_option("--config", ar_config, "Run config JSON");
  attack_run->add_option("--out", ar_out, "Output directory override");
  attack_run->add_option("--methods", ar_methods, "Method override");
  attack_run->add_option("--threads", ar_threads, "Worker threads");
  auto* attack_refine =
      attack_cmd->add_subcommand("refine", "Run the combined policy + ZO attack");
  std::string arf_config, arf_out;
  int arf_threads = 0;
  attack_refine->add_option("--config", arf_config, "Run config JSON");
  attack_refine->add_option("--out", arf_out, "Output directory override");
  attack_refine->add_option("--threads", arf_threads, "Worker threads");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Run the P / P+W / P+W+S ablation");
  std::string ab_config, ab_out;
  int ab_threads = 0;
  ablate->add_option("--config", ab_config, "Run config JSON");
  ablate->add_option("--out", ab_out, "Output directory override");
  ablate->add_option("--threads", ab_threads, "Worker threads");

  // report
  auto* report = app.add_subcommand("report", "Regenerate summary and plots from records");
  std::string rp_dir;
  report->add_option("--run", rp_dir, "Run output directory")->required();

  // config validate / init
  auto* config_cmd = app.add_subcommand("config", "Config utilities");
  auto* config_validate = config_cmd->add_subcommand("validate", "Validate a run config");
  std::string cv_path;
  config_validate->add_option("--config", cv_path, "Run config JSON")->required();
  auto* config_init = config_cmd->add_subcommand("init", "Write the default run config");
  std::string ci_path = "config.json";
  config_init->add_option("--out", ci_path, "Output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (dataset_gen->parsed()) {
      std::vector<img::Rect> excl;
      for (const auto& e : ds_excl) {
        if (e.size() != 4) throw std::invalid_argument("--exclusion wants row col h w");
        excl.push_back({e[0], e[1], e[2], e[3]});
      }
      const auto ds = harness::generate_synthetic_dataset(ds_cfg, excl);
      harness::save_dataset(resolve_out(ds_out), ds);
      std::cout << "wrote " << ds.train.size() << " train / " << ds.test.size()
                << " test images to " << resolve_out(ds_out) << "\n";
    } else if (models_train->parsed()) {
      const auto ds = harness::load_dataset(mt_dataset);
      const auto trained = models::train_toy_models(ds, mt_cfg);
      models::save_models(resolve_out(mt_out), trained);
      for (const auto& m : trained)
        std::cout << m.arch.id << ": train accuracy " << m.train_accuracy * 100.0 << "%\n";
    } else if (gallery_build->parsed()) {
      const auto ds = harness::load_dataset(gb_dataset);
      const auto all = models::load_models(gb_models);
      const models::FeatureExtractor* model = nullptr;
      for (const auto& m : all)
        if (m.arch.id == gb_arch) model = &m;
      if (!model) throw std::runtime_error("model not found in checkpoints: " + gb_arch);
      models::save_gallery(resolve_out(gb_out), models::build_gallery(*model, ds.train));
      std::cout << "gallery written to " << resolve_out(gb_out) << "\n";
    } else if (attack_run->parsed()) {
      return run_methods(ar_config, ar_out, ar_methods, ar_threads);
    } else if (attack_refine->parsed()) {
      return run_methods(arf_config, arf_out, {"so_zo"}, arf_threads);
    } else if (ablate->parsed()) {
      harness::RunConfig cfg = load_config_or_default(ab_config);
      if (!ab_out.empty()) cfg.output_dir = ab_out;
      cfg.output_dir = resolve_out(cfg.output_dir);
      if (ab_threads > 0) cfg.threads = ab_threads;
      const auto summary = harness::ablation_axes(cfg);
      print_summary(summary);
      std::cout << "outputs written to " << cfg.output_dir << "\n";
    } else if (report->parsed()) {
      harness::write_report(rp_dir);
      std::cout << "report regenerated in " << rp_dir << "\n";
    } else if (config_validate->parsed()) {
      const auto cfg = harness::load_run_config(cv_path);
      const auto errors = harness::validate_run_config(cfg);
      if (errors.empty()) {
        std::cout << "OK\n";
      } else {
        for (const auto& e : errors) std::cerr << "error: " << e << "\n";
        return 1;
      }
    } else if (config_init->parsed()) {
      std::ofstream f(ci_path);
      f << harness::run_config_to_json(harness::default_run_config()).dump(2) << "\n";
      std::cout << "default config written to " << ci_path << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
