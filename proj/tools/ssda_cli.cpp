// Command-line front end for the experiment harness.

#include "ssda/checkpoint.hpp"
#include "ssda/errors.hpp"
#include "ssda/experiment.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace ssda;

// Flag values; applied on top of the --config file only when given.
struct Flags {
  std::string config_path;
  std::string output_dir;
  std::vector<std::uint64_t> seeds;
  int k_shot = 0;
  int jobs = 0;
  double beta = 0;
  double learning_rate = 0;
  Index batch_size = 0;
  int epochs1 = 0, epochs2 = 0, epochs3 = 0;
  int patience = 0;
  double min_delta = 0;
  std::vector<Index> hidden;
  Index bottleneck = 0;
  bool use_unlabeled_recon = false;
  bool disable_mmd = false;
  bool sequential = false;
  bool no_baseline = false;
  bool no_monitor = false;
  bool no_checkpoints = false;
  std::string source_images, source_labels, target_images, target_labels;
  Index subset = 0;
  Index side = 0;
  std::uint64_t data_seed = 0;
  std::vector<double> beta_sweep;
  std::vector<double> fractions;
  std::string fraction_scope;
};

struct Options {
  CLI::App* app;

  template <typename T>
  void add(const std::string& name, T& target, const std::string& help) {
    app->add_option(name, target, help);
  }
  void flag(const std::string& name, bool& target, const std::string& help) {
    app->add_flag(name, target, help);
  }
};

void register_common(CLI::App* app, Flags& f) {
  Options o{app};
  app->add_option("--config", f.config_path, "JSON config (or a report.json) to start from");
  o.add("-o,--output", f.output_dir, "Output directory");
  o.add("--seeds", f.seeds, "Seed list");
  o.add("-k,--k-shot", f.k_shot, "Labeled target samples per class");
  o.add("-j,--jobs", f.jobs, "Worker threads");
  o.add("--beta", f.beta, "Weight of the class-wise MMD term");
  o.add("--lr", f.learning_rate, "Adam learning rate");
  o.add("--batch-size", f.batch_size, "Minibatch size");
  o.add("--epochs-stage1", f.epochs1, "Epoch cap for stage 1");
  o.add("--epochs-stage2", f.epochs2, "Epoch cap for stage 2 and the S+T baseline");
  o.add("--epochs-stage3", f.epochs3, "Epoch cap for stage 3");
  o.add("--patience", f.patience, "Plateau patience in epochs");
  o.add("--min-delta", f.min_delta, "Minimum loss improvement that resets patience");
  o.add("--hidden", f.hidden, "Encoder hidden widths");
  o.add("--bottleneck", f.bottleneck, "Bottleneck width");
  o.flag("--use-unlabeled-recon", f.use_unlabeled_recon, "Add D_u rows to the target reconstruction");
  o.flag("--disable-mmd", f.disable_mmd, "Ablation: drop the MMD term");
  o.flag("--sequential", f.sequential, "Ablation: train source then target");
  o.flag("--no-baseline", f.no_baseline, "Skip the per-seed S+T comparison");
  o.flag("--no-monitor", f.no_monitor, "Skip the per-epoch target accuracy probe");
  o.flag("--no-checkpoints", f.no_checkpoints, "Do not write checkpoints");
  o.add("--source-images", f.source_images, "Source IDX images (switches to IDX data)");
  o.add("--source-labels", f.source_labels, "Source IDX labels");
  o.add("--target-images", f.target_images, "Target IDX images");
  o.add("--target-labels", f.target_labels, "Target IDX labels");
  o.add("--subset", f.subset, "Stratified subsample per IDX domain (0 = all)");
  o.add("--side", f.side, "Common image side for IDX data");
  o.add("--data-seed", f.data_seed, "Seed for IDX subsampling");
  o.add("--beta-sweep", f.beta_sweep, "Beta grid");
  o.add("--fractions", f.fractions, "Labeled-fraction grid, values in (0,1]");
  o.add("--fraction-scope", f.fraction_scope, "labeled | unlabeled | both");
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
}

ExperimentConfig build_config(const CLI::App& app, const Flags& f) {
  ExperimentConfig c;
  if (!f.config_path.empty()) c = read_json(f.config_path).get<ExperimentConfig>();
  auto has = [&](const char* name) { return app.count(name) > 0; };
  if (has("--output")) c.output_dir = f.output_dir;
  if (has("--seeds")) c.seeds = f.seeds;
  if (has("--k-shot")) c.k_shot = f.k_shot;
  if (has("--jobs")) c.jobs = f.jobs;
  if (has("--beta")) c.train.beta = f.beta;
  if (has("--lr")) c.train.learning_rate = f.learning_rate;
  if (has("--batch-size")) c.train.batch_size = f.batch_size;
  if (has("--epochs-stage1")) c.train.max_epochs_stage1 = f.epochs1;
  if (has("--epochs-stage2")) c.train.max_epochs_stage2 = f.epochs2;
  if (has("--epochs-stage3")) c.train.max_epochs_stage3 = f.epochs3;
  if (has("--patience")) c.train.patience = f.patience;
  if (has("--min-delta")) c.train.min_delta = f.min_delta;
  if (has("--hidden")) c.train.hidden = f.hidden;
  if (has("--bottleneck")) c.train.bottleneck = f.bottleneck;
  if (f.use_unlabeled_recon) c.train.use_unlabeled_recon = true;
  if (f.disable_mmd) c.train.disable_mmd = true;
  if (f.sequential) c.train.sequential_learning = true;
  if (f.no_baseline) c.compare_baseline = false;
  if (f.no_monitor) c.monitor_accuracy = false;
  if (f.no_checkpoints) c.write_checkpoints = false;
  if (has("--source-images") || has("--target-images")) c.data.kind = DatasetSource::Kind::kIdx;
  if (has("--source-images")) c.data.source_images = f.source_images;
  if (has("--source-labels")) c.data.source_labels = f.source_labels;
  if (has("--target-images")) c.data.target_images = f.target_images;
  if (has("--target-labels")) c.data.target_labels = f.target_labels;
  if (has("--subset")) c.data.subset = f.subset;
  if (has("--side")) c.data.side = f.side;
  if (has("--data-seed")) c.data.data_seed = f.data_seed;
  if (has("--beta-sweep")) c.beta_sweep = f.beta_sweep;
  if (has("--fractions")) c.fraction_sweep = f.fractions;
  if (has("--fraction-scope")) c.fraction_scope = fraction_scope_from_string(f.fraction_scope);
  c.validate();
  return c;
}

void print_report(const RunReport& r) {
  for (const auto& s : r.seeds) {
    std::printf("seed %llu  accuracy %.4f", static_cast<unsigned long long>(s.seed), s.accuracy);
    if (s.baseline_accuracy) std::printf("  s+t %.4f", *s.baseline_accuracy);
    std::printf("\n");
  }
  std::printf("%s mean accuracy %.4f +- %.4f", r.method.c_str(), r.mean_accuracy, r.std_accuracy);
  if (r.baseline_mean_accuracy) std::printf("  (s+t %.4f)", *r.baseline_mean_accuracy);
  std::printf("  [%.1fs, config %s]\n", r.wall_clock_seconds, r.config_hash.c_str());
}

int export_embeddings_cmd(const ExperimentConfig& cfg, const std::string& checkpoint,
                          const std::string& domain, const std::string& out, Index max_samples,
                          std::uint64_t seed) {
  const nlohmann::json header = read_json(checkpoint);
  const std::string kind = header.value("kind", "");
  std::vector<DenseLayer> encoder;
  with_stage("checkpoint", [&] {
    if (kind == "autoencoder") {
      encoder = load_autoencoder(checkpoint).model.encoder;
    } else if (kind == "target_model") {
      encoder = load_target_model(checkpoint).model.encoder;
    } else {
      throw ConfigError("checkpoint kind '" + kind + "' has no encoder");
    }
  });
  // Embeds the chosen domain's full sample set (labels are written alongside).
  const PreparedData data = prepare_data(cfg, cfg.seeds.front());
  LabeledDataset ds;
  if (domain == "source") {
    ds = data.source;
  } else if (domain == "target") {
    ds.samples = data.split.unlabeled.samples();
    ds.labels = EvaluationAccess::hidden_labels(data.split.unlabeled);
  } else {
    throw ConfigError("--domain must be source or target");
  }
  with_stage("export", [&] {
    export_embeddings(encoder, ds.samples, ds.labels, out, max_samples, seed);
  });
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised domain adaptation with coupled auto-encoders"};
  app.require_subcommand(1);

  Flags f;
  auto* run = app.add_subcommand("run", "Three-stage training and evaluation per seed");
  auto* baseline = app.add_subcommand("baseline", "S+T baseline under the same protocol");
  auto* ablate = app.add_subcommand("ablate", "full / disable_mmd / sequential rows plus beta sweep");
  auto* sweep_beta = app.add_subcommand("sweep-beta", "Accuracy over the beta grid");
  auto* sweep_fraction = app.add_subcommand("sweep-fraction", "Accuracy over labeled-target fractions");
  auto* embed = app.add_subcommand("export-embeddings", "Write bottleneck features as CSV");
  for (auto* sub : {run, baseline, ablate, sweep_beta, sweep_fraction, embed}) {
    register_common(sub, f);
  }
  bool no_beta = false;
  ablate->add_flag("--no-beta-sweep", no_beta, "Only the three ablation rows");

  std::string checkpoint;
  std::string domain = "target";
  std::string embed_out = "embeddings.csv";
  Index max_samples = 2000;
  std::uint64_t embed_seed = 0;
  embed->add_option("--checkpoint", checkpoint, "Auto-encoder or target model checkpoint")
      ->required();
  embed->add_option("--domain", domain, "source | target (D_u)");
  embed->add_option("--out", embed_out, "Output CSV path");
  embed->add_option("--max-samples", max_samples, "Subset size");
  embed->add_option("--embed-seed", embed_seed, "Subset seed");

  CLI11_PARSE(app, argc, argv);

  CLI::App* active = app.get_subcommands().front();
  try {
    const ExperimentConfig cfg = with_stage("config", [&] { return build_config(*active, f); });
    if (active == run) {
      print_report(run_experiment(cfg));
    } else if (active == baseline) {
      print_report(run_s_plus_t_baseline(cfg));
    } else if (active == ablate) {
      std::cout << run_ablations(cfg, !no_beta).to_csv();
    } else if (active == sweep_beta) {
      std::cout << run_beta_sweep(cfg).to_csv();
    } else if (active == sweep_fraction) {
      std::cout << run_fraction_sweep(cfg).to_csv();
    } else {
      return export_embeddings_cmd(cfg, checkpoint, domain, embed_out, max_samples, embed_seed);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
