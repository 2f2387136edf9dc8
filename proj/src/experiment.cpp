#include "ssda/experiment.hpp"

#include "ssda/checkpoint.hpp"
#include "ssda/errors.hpp"
#include "ssda/hash.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace ssda {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kTagSplit = 101;
constexpr std::uint64_t kTagUnlabeledFraction = 102;

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

// Removes whatever a failed run wrote: the whole directory when the run
// created it, otherwise the individual files it registered.
class OutputGuard {
 public:
  explicit OutputGuard(const std::string& dir) : dir_(dir) {
    if (dir_.empty()) return;
    existed_ = fs::exists(dir_);
    fs::create_directories(dir_);
  }

  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;

  ~OutputGuard() {
    if (committed_ || dir_.empty()) return;
    std::error_code ec;
    if (!existed_) {
      fs::remove_all(dir_, ec);
      return;
    }
    for (const auto& p : created_) fs::remove_all(p, ec);
  }

  bool enabled() const { return !dir_.empty(); }

  fs::path track(const fs::path& relative) {
    const fs::path full = dir_ / relative;
    std::lock_guard lock(mu_);
    const fs::path top = dir_ / *relative.begin();
    if (!fs::exists(top)) created_.push_back(top);
    if (full.has_parent_path()) fs::create_directories(full.parent_path());
    return full;
  }

  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  bool existed_ = false;
  bool committed_ = false;
  std::vector<fs::path> created_;
  std::mutex mu_;
};

// Runs fn(i) for every index, on up to `jobs` threads. Results land in
// index order, so parallel and serial runs produce the same output.
template <typename Result, typename Fn>
std::vector<Result> parallel_map(std::size_t n, int jobs, Fn fn) {
  std::vector<Result> out(n);
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i] = fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  for (std::size_t t = 0; t < count; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

struct Domains {
  LabeledDataset source;
  LabeledDataset target;
};

Domains load_domains(const ExperimentConfig& cfg) {
  return with_stage("data", [&] {
    Domains d;
    if (cfg.data.kind == DatasetSource::Kind::kSynthetic) {
      auto [s, t] = gen_synthetic_shift(cfg.data.synthetic);
      d.source = std::move(s);
      d.target = std::move(t);
    } else {
      d.source = load_idx(cfg.data.source_images, cfg.data.source_labels, cfg.data.side, "source");
      d.target = load_idx(cfg.data.target_images, cfg.data.target_labels, cfg.data.side, "target");
      const int classes = std::max(d.source.class_count, d.target.class_count);
      d.source.class_count = d.target.class_count = classes;
      if (cfg.data.subset > 0) {
        d.source = stratified_subsample(d.source, cfg.data.subset, derive_seed(cfg.data.data_seed, 1));
        d.target = stratified_subsample(d.target, cfg.data.subset, derive_seed(cfg.data.data_seed, 2));
      }
    }
    if (d.source.dim() != d.target.dim()) {
      throw DimensionError("source and target sample widths differ");
    }
    return d;
  });
}

PreparedData split_for_seed(const Domains& d, const ExperimentConfig& cfg, std::uint64_t seed) {
  return with_stage("data", [&] {
    PreparedData p;
    p.source = d.source;
    p.split = make_kshot_split(d.target, cfg.k_shot, derive_seed(seed, kTagSplit));
    return p;
  });
}

// Nearest source class centroid in the bottleneck, applied to D_u features.
double centroid_accuracy(const CoupledGraph& g, const LabeledDataset& source,
                         const UnlabeledSet& du) {
  const Matrix fs_ = encode_values(g.source_ae.encoder, source.samples);
  const Matrix ft = encode_values(g.target_ae.encoder, du.samples());
  Matrix centroids = Matrix::Zero(source.class_count, fs_.cols());
  std::vector<double> counts(static_cast<std::size_t>(source.class_count), 0.0);
  for (Index i = 0; i < fs_.rows(); ++i) {
    centroids.row(source.labels[i]) += fs_.row(i);
    counts[source.labels[i]] += 1.0;
  }
  for (int k = 0; k < source.class_count; ++k) {
    if (counts[k] > 0) centroids.row(k) /= counts[k];
  }
  const auto& truth = EvaluationAccess::hidden_labels(du);
  Index hits = 0;
  for (Index i = 0; i < ft.rows(); ++i) {
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < source.class_count; ++k) {
      if (counts[k] == 0) continue;
      const double dist = (ft.row(i) - centroids.row(k)).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best = k;
      }
    }
    if (truth[i] == best) ++hits;
  }
  return ft.rows() == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(ft.rows());
}

TrainConfig seeded(const TrainConfig& base, std::uint64_t seed) {
  TrainConfig t = base;
  t.seed = seed;
  return t;
}

// Stage pipeline for one seed; writes artifacts under `seed_dir` when set.
SeedResult run_seed(const Domains& domains, const ExperimentConfig& cfg, const TrainConfig& train,
                    std::uint64_t seed, bool with_baseline, OutputGuard* out) {
  const PreparedData data = split_for_seed(domains, cfg, seed);
  const TrainConfig tc = seeded(train, seed);
  const UnlabeledSet& du = data.split.unlabeled;

  EpochMonitor monitor;
  if (cfg.monitor_accuracy) {
    monitor = [&](const CoupledGraph& g) { return centroid_accuracy(g, data.source, du); };
  }
  const SsdaResult r = train_ssda(data.source, data.split.labeled, du, tc, monitor);

  SeedResult s;
  s.seed = seed;
  s.accuracy = with_stage("evaluation", [&] { return target_accuracy(r.model, du); });
  s.mmd_before = r.mmd_before;
  s.mmd_after = r.mmd_after;
  s.stage1_epochs = r.stage1.epochs;
  s.history = r.stage1.history;

  if (with_baseline) {
    s.baseline_accuracy = with_stage("baseline", [&] {
      const TargetModel base = train_source_plus_target(data.source, data.split.labeled, tc);
      return target_accuracy(base, du);
    });
  }

  if (out != nullptr && out->enabled()) {
    with_stage("output", [&] {
      const std::string hash = config_hash(cfg);
      const fs::path dir = "seed_" + std::to_string(seed);
      write_text(out->track(dir / "losses.csv"), losses_csv(s.history));
      write_text(out->track(dir / "split.json"), split_to_json(data.split).dump(2) + "\n");
      if (cfg.write_checkpoints) {
        save_autoencoder(out->track(dir / "stage1_source.ae"), r.graph.source_ae, hash);
        save_autoencoder(out->track(dir / "stage1_target.ae"), r.graph.target_ae, hash);
        save_classifier(out->track(dir / "stage2.clf"), r.source_classifier, hash);
        save_target_model(out->track(dir / "stage3.model"), r.model, hash);
      }
    });
  }
  return s;
}

void finalize(RunReport& report) {
  std::vector<double> acc;
  std::vector<double> base;
  for (const auto& s : report.seeds) {
    acc.push_back(s.accuracy);
    if (s.baseline_accuracy) base.push_back(*s.baseline_accuracy);
  }
  report.mean_accuracy = mean(acc);
  report.std_accuracy = stddev(acc);
  if (!base.empty()) report.baseline_mean_accuracy = mean(base);
}

void write_report(const RunReport& report, OutputGuard& out) {
  if (!out.enabled()) return;
  with_stage("output", [&] {
    write_text(out.track("report.json"), report.to_json(true).dump(2) + "\n");
    std::ostringstream all;
    all << "seed,epoch,L_s,L_t,recon_t,mmd,target_acc\n";
    for (const auto& s : report.seeds) {
      for (const auto& e : s.history) {
        all << s.seed << ',' << e.epoch << ',' << fmt_double(e.source_loss) << ','
            << fmt_double(e.target_loss) << ',' << fmt_double(e.recon_target) << ','
            << fmt_double(e.mmd) << ',' << fmt_double(e.target_acc) << '\n';
      }
    }
    write_text(out.track("losses.csv"), all.str());
  });
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(FractionScope s) {
  switch (s) {
    case FractionScope::kLabeled: return "labeled";
    case FractionScope::kUnlabeled: return "unlabeled";
    case FractionScope::kBoth: return "both";
  }
  return "labeled";
}

FractionScope fraction_scope_from_string(const std::string& s) {
  if (s == "labeled") return FractionScope::kLabeled;
  if (s == "unlabeled") return FractionScope::kUnlabeled;
  if (s == "both") return FractionScope::kBoth;
  throw ConfigError("unknown fraction scope '" + s + "' (labeled|unlabeled|both)");
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (k_shot < 1) throw ConfigError("k_shot must be at least 1");
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  if (embedding_samples < 1) throw ConfigError("embedding_samples must be positive");
  train.validate(0);
  for (double b : beta_sweep) {
    if (!(b >= 0.0)) throw ConfigError("beta sweep values must be non-negative");
  }
  for (double f : fraction_sweep) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("fractions must lie in (0, 1]");
  }
  if (data.kind == DatasetSource::Kind::kIdx &&
      (data.source_images.empty() || data.source_labels.empty() || data.target_images.empty() ||
       data.target_labels.empty())) {
    throw ConfigError("IDX data needs source/target image and label paths");
  }
}

void to_json(json& j, const DatasetSource& d) {
  j = json{{"kind", d.kind == DatasetSource::Kind::kSynthetic ? "synthetic" : "idx"}};
  if (d.kind == DatasetSource::Kind::kSynthetic) {
    j["synthetic"] = d.synthetic;
  } else {
    j["source_images"] = d.source_images;
    j["source_labels"] = d.source_labels;
    j["target_images"] = d.target_images;
    j["target_labels"] = d.target_labels;
    j["subset"] = d.subset;
    j["side"] = d.side;
    j["data_seed"] = d.data_seed;
  }
}

void from_json(const json& j, DatasetSource& d) {
  DatasetSource out;
  const std::string kind = j.value("kind", "synthetic");
  if (kind == "synthetic") {
    out.kind = DatasetSource::Kind::kSynthetic;
    if (j.contains("synthetic")) out.synthetic = j.at("synthetic").get<SyntheticShiftSpec>();
    out.synthetic.resolve();
  } else if (kind == "idx") {
    out.kind = DatasetSource::Kind::kIdx;
    out.source_images = j.value("source_images", "");
    out.source_labels = j.value("source_labels", "");
    out.target_images = j.value("target_images", "");
    out.target_labels = j.value("target_labels", "");
    out.subset = j.value("subset", out.subset);
    out.side = j.value("side", out.side);
    out.data_seed = j.value("data_seed", out.data_seed);
  } else {
    throw ConfigError("unknown data kind '" + kind + "'");
  }
  d = std::move(out);
}

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"data", c.data},
           {"k_shot", c.k_shot},
           {"train", c.train},
           {"seeds", c.seeds},
           {"beta_sweep", c.beta_sweep},
           {"fraction_sweep", c.fraction_sweep},
           {"fraction_scope", to_string(c.fraction_scope)},
           {"output_dir", c.output_dir},
           {"embedding_samples", c.embedding_samples},
           {"compare_baseline", c.compare_baseline},
           {"monitor_accuracy", c.monitor_accuracy},
           {"write_checkpoints", c.write_checkpoints},
           {"jobs", c.jobs}};
}

void from_json(const json& j_in, ExperimentConfig& c) {
  // A report embeds its config under "config".
  const json& j = j_in.contains("config") && j_in.at("config").is_object() ? j_in.at("config") : j_in;
  ExperimentConfig d;
  c.data = j.contains("data") ? j.at("data").get<DatasetSource>() : d.data;
  c.k_shot = j.value("k_shot", d.k_shot);
  c.train = j.contains("train") ? j.at("train").get<TrainConfig>() : d.train;
  c.seeds = j.value("seeds", d.seeds);
  c.beta_sweep = j.value("beta_sweep", d.beta_sweep);
  c.fraction_sweep = j.value("fraction_sweep", d.fraction_sweep);
  c.fraction_scope = fraction_scope_from_string(j.value("fraction_scope", to_string(d.fraction_scope)));
  c.output_dir = j.value("output_dir", d.output_dir);
  c.embedding_samples = j.value("embedding_samples", d.embedding_samples);
  c.compare_baseline = j.value("compare_baseline", d.compare_baseline);
  c.monitor_accuracy = j.value("monitor_accuracy", d.monitor_accuracy);
  c.write_checkpoints = j.value("write_checkpoints", d.write_checkpoints);
  c.jobs = j.value("jobs", d.jobs);
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = cfg;
  // Where results go and how many threads compute them do not change them.
  j.erase("output_dir");
  j.erase("jobs");
  return fnv1a_hex(j.dump());
}

json RunReport::to_json(bool include_timing) const {
  json seeds_json = json::array();
  for (const auto& s : seeds) {
    json history = json::array();
    for (const auto& e : s.history) {
      history.push_back(json{{"epoch", e.epoch},
                             {"L_s", e.source_loss},
                             {"L_t", e.target_loss},
                             {"recon_t", e.recon_target},
                             {"mmd", e.mmd},
                             {"target_acc", e.target_acc}});
    }
    json sj{{"seed", s.seed},
            {"accuracy", s.accuracy},
            {"mmd_before", s.mmd_before},
            {"mmd_after", s.mmd_after},
            {"stage1_epochs", s.stage1_epochs},
            {"history", history}};
    sj["baseline_accuracy"] = s.baseline_accuracy ? json(*s.baseline_accuracy) : json(nullptr);
    seeds_json.push_back(sj);
  }
  json j{{"method", method},
         {"config_hash", config_hash},
         {"config", config},
         {"seeds", seeds_json},
         {"mean_accuracy", mean_accuracy},
         {"std_accuracy", std_accuracy}};
  j["baseline_mean_accuracy"] =
      baseline_mean_accuracy ? json(*baseline_mean_accuracy) : json(nullptr);
  if (include_timing) j["wall_clock_seconds"] = wall_clock_seconds;
  return j;
}

std::string RunReport::content_hash() const {
  json j = to_json(false);
  j["config"].erase("output_dir");
  j["config"].erase("jobs");
  return fnv1a_hex(j.dump());
}

PreparedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  return split_for_seed(load_domains(cfg), cfg, seed);
}

double target_accuracy(const TargetModel& model, const UnlabeledSet& du) {
  if (du.size() == 0) throw ConfigError("no unlabeled target samples to evaluate");
  const Predictions p = predict_unlabeled(model, du);
  const auto& truth = EvaluationAccess::hidden_labels(du);
  Index hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += p.labels[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

RunReport run_experiment(const ExperimentConfig& cfg) {
  const auto start = Clock::now();
  cfg.validate();
  OutputGuard out(cfg.output_dir);
  const Domains domains = load_domains(cfg);

  RunReport report;
  report.method = "ssda";
  report.config = cfg;
  report.config_hash = config_hash(cfg);
  report.seeds = parallel_map<SeedResult>(cfg.seeds.size(), cfg.jobs, [&](std::size_t i) {
    return run_seed(domains, cfg, cfg.train, cfg.seeds[i], cfg.compare_baseline, &out);
  });
  finalize(report);
  report.wall_clock_seconds = seconds_since(start);
  write_report(report, out);
  out.commit();
  return report;
}

RunReport run_s_plus_t_baseline(const ExperimentConfig& cfg) {
  const auto start = Clock::now();
  cfg.validate();
  OutputGuard out(cfg.output_dir);
  const Domains domains = load_domains(cfg);

  RunReport report;
  report.method = "s+t";
  report.config = cfg;
  report.config_hash = config_hash(cfg);
  report.seeds = parallel_map<SeedResult>(cfg.seeds.size(), cfg.jobs, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    const PreparedData data = split_for_seed(domains, cfg, seed);
    SeedResult s;
    s.seed = seed;
    const TargetModel model = with_stage("baseline", [&] {
      return train_source_plus_target(data.source, data.split.labeled, seeded(cfg.train, seed));
    });
    s.accuracy = with_stage("evaluation", [&] { return target_accuracy(model, data.split.unlabeled); });
    if (out.enabled() && cfg.write_checkpoints) {
      with_stage("output", [&] {
        save_target_model(out.track(fs::path("seed_" + std::to_string(seed)) / "baseline.model"),
                          model, report.config_hash);
      });
    }
    return s;
  });
  finalize(report);
  report.wall_clock_seconds = seconds_since(start);
  write_report(report, out);
  out.commit();
  return report;
}

// ---------------------------------------------------------------------------

namespace {

AblationRow ablation_row(const Domains& domains, const ExperimentConfig& cfg, std::string name,
                         const TrainConfig& train) {
  AblationRow row;
  row.name = std::move(name);
  row.beta = train.beta;
  ExperimentConfig quiet = cfg;
  quiet.monitor_accuracy = false;
  row.accuracies = parallel_map<double>(cfg.seeds.size(), cfg.jobs, [&](std::size_t i) {
    return run_seed(domains, quiet, train, cfg.seeds[i], false, nullptr).accuracy;
  });
  row.mean = mean(row.accuracies);
  row.std = stddev(row.accuracies);
  return row;
}

std::string beta_name(double beta) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "beta=%g", beta);
  return buf;
}

void write_table(const ExperimentConfig& cfg, const AblationTable& table, const char* stem) {
  if (cfg.output_dir.empty()) return;
  OutputGuard out(cfg.output_dir);
  with_stage("output", [&] {
    write_text(out.track(std::string(stem) + ".csv"), table.to_csv());
    json j = table.to_json();
    j["config"] = cfg;
    j["config_hash"] = config_hash(cfg);
    write_text(out.track(std::string(stem) + ".json"), j.dump(2) + "\n");
  });
  out.commit();
}

}  // namespace

std::string AblationTable::to_csv() const {
  std::ostringstream os;
  os << "name,beta,mean,std,n\n";
  for (const auto& r : rows) {
    os << r.name << ',' << fmt_double(r.beta) << ',' << fmt_double(r.mean) << ','
       << fmt_double(r.std) << ',' << r.accuracies.size() << '\n';
  }
  return os.str();
}

json AblationTable::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    rows_json.push_back(json{{"name", r.name},
                             {"beta", r.beta},
                             {"accuracies", r.accuracies},
                             {"mean", r.mean},
                             {"std", r.std}});
  }
  return json{{"rows", rows_json}};
}

const AblationRow* AblationTable::find(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

AblationTable run_ablations(const ExperimentConfig& cfg, bool include_beta_sweep) {
  cfg.validate();
  const Domains domains = load_domains(cfg);
  AblationTable table;
  TrainConfig full = cfg.train;
  full.disable_mmd = false;
  full.sequential_learning = false;
  TrainConfig no_mmd = full;
  no_mmd.disable_mmd = true;
  TrainConfig sequential = full;
  sequential.sequential_learning = true;
  table.rows.push_back(ablation_row(domains, cfg, "full", full));
  table.rows.push_back(ablation_row(domains, cfg, "disable_mmd", no_mmd));
  table.rows.push_back(ablation_row(domains, cfg, "sequential_learning", sequential));
  if (include_beta_sweep) {
    for (double beta : cfg.beta_sweep) {
      TrainConfig t = full;
      t.beta = beta;
      table.rows.push_back(ablation_row(domains, cfg, beta_name(beta), t));
    }
  }
  write_table(cfg, table, "ablations");
  return table;
}

AblationTable run_beta_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const Domains domains = load_domains(cfg);
  AblationTable table;
  for (double beta : cfg.beta_sweep) {
    TrainConfig t = cfg.train;
    t.beta = beta;
    table.rows.push_back(ablation_row(domains, cfg, beta_name(beta), t));
  }
  write_table(cfg, table, "beta_sweep");
  return table;
}

std::string FractionCurve::to_csv() const {
  std::ostringstream os;
  os << "fraction,mean,std\n";
  for (const auto& p : points) {
    os << fmt_double(p.fraction) << ',' << fmt_double(p.mean) << ',' << fmt_double(p.std) << '\n';
  }
  return os.str();
}

FractionCurve run_fraction_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const Domains domains = load_domains(cfg);
  const bool cut_labeled = cfg.fraction_scope != FractionScope::kUnlabeled;
  const bool cut_unlabeled = cfg.fraction_scope != FractionScope::kLabeled;

  for (double f : cfg.fraction_sweep) {
    if (cut_labeled && std::llround(f * cfg.k_shot) < 1) {
      throw ConfigError("fraction " + fmt_double(f) + " leaves no labeled sample per class at k = " +
                        std::to_string(cfg.k_shot));
    }
  }

  FractionCurve curve;
  for (double f : cfg.fraction_sweep) {
    FractionPoint point;
    point.fraction = f;
    point.accuracies = parallel_map<double>(cfg.seeds.size(), cfg.jobs, [&](std::size_t i) {
      const std::uint64_t seed = cfg.seeds[i];
      const PreparedData data = split_for_seed(domains, cfg, seed);
      LabeledDataset labeled = data.split.labeled;
      if (cut_labeled) {
        // D_l rows come grouped by class in draw order; keep the first m of each.
        const auto m = static_cast<int>(std::llround(f * cfg.k_shot));
        std::vector<Index> keep;
        std::vector<int> taken(static_cast<std::size_t>(labeled.class_count), 0);
        for (Index r = 0; r < labeled.size(); ++r) {
          if (taken[labeled.labels[r]]++ < m) keep.push_back(r);
        }
        labeled = labeled.subset(keep);
      }
      UnlabeledSet train_du = data.split.unlabeled;
      if (cut_unlabeled && f < 1.0) {
        const UnlabeledSet& full = data.split.unlabeled;
        std::vector<Index> order(static_cast<std::size_t>(full.size()));
        std::iota(order.begin(), order.end(), Index{0});
        std::mt19937_64 rng(derive_seed(seed, kTagUnlabeledFraction));
        std::shuffle(order.begin(), order.end(), rng);
        const auto n = std::max<Index>(1, static_cast<Index>(std::llround(f * static_cast<double>(full.size()))));
        order.resize(static_cast<std::size_t>(n));
        std::sort(order.begin(), order.end());
        Matrix x(n, full.dim());
        std::vector<int> hidden;
        for (Index r = 0; r < n; ++r) {
          x.row(r) = full.samples().row(order[static_cast<std::size_t>(r)]);
          hidden.push_back(EvaluationAccess::hidden_labels(full)[order[static_cast<std::size_t>(r)]]);
        }
        train_du = EvaluationAccess::make_unlabeled(std::move(x), std::move(hidden));
      }
      const SsdaResult r = train_ssda(data.source, labeled, train_du, seeded(cfg.train, seed));
      // Accuracy is always measured on the full D_u.
      return with_stage("evaluation", [&] { return target_accuracy(r.model, data.split.unlabeled); });
    });
    point.mean = mean(point.accuracies);
    point.std = stddev(point.accuracies);
    curve.points.push_back(std::move(point));
  }

  if (!cfg.output_dir.empty()) {
    OutputGuard out(cfg.output_dir);
    with_stage("output", [&] { write_text(out.track("fraction_sweep.csv"), curve.to_csv()); });
    out.commit();
  }
  return curve;
}

void export_embeddings(std::span<const DenseLayer> encoder, const Matrix& samples,
                       std::span<const int> labels, const fs::path& out_path, Index max_samples,
                       std::uint64_t seed) {
  if (static_cast<Index>(labels.size()) != samples.rows()) {
    throw DimensionError("export_embeddings: label count differs from sample count");
  }
  const Index n = std::min(max_samples, samples.rows());
  std::vector<Index> rows(static_cast<std::size_t>(samples.rows()));
  std::iota(rows.begin(), rows.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(static_cast<std::size_t>(n));
  std::sort(rows.begin(), rows.end());

  Matrix x(n, samples.cols());
  for (Index i = 0; i < n; ++i) x.row(i) = samples.row(rows[static_cast<std::size_t>(i)]);
  const Matrix features = encode_values(encoder, x);

  std::ostringstream os;
  os << "sample_id,label";
  for (Index c = 0; c < features.cols(); ++c) os << ",f" << c;
  os << '\n';
  for (Index i = 0; i < n; ++i) {
    const Index id = rows[static_cast<std::size_t>(i)];
    os << id << ',' << labels[static_cast<std::size_t>(id)];
    for (Index c = 0; c < features.cols(); ++c) os << ',' << fmt_double(features(i, c));
    os << '\n';
  }
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_text(out_path, os.str());
}

std::string losses_csv(const std::vector<EpochLog>& history) {
  std::ostringstream os;
  os << "epoch,L_s,L_t,recon_t,mmd,target_acc\n";
  for (const auto& e : history) {
    os << e.epoch << ',' << fmt_double(e.source_loss) << ',' << fmt_double(e.target_loss) << ','
       << fmt_double(e.recon_target) << ',' << fmt_double(e.mmd) << ','
       << fmt_double(e.target_acc) << '\n';
  }
  return os.str();
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace ssda
