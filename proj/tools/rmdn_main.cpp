// rmdn: train, score and evaluate robust recurrent mixture-density models
// on multivariate time-series datasets.

#include <CLI11.hpp>
#include <atomic>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <map>
#include <mutex>
#include <thread>

#include "rmdn/checkpoint.hpp"
#include "rmdn/common.hpp"
#include "rmdn/data.hpp"
#include "rmdn/scoring.hpp"
#include "rmdn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rmdn;

namespace {

constexpr int kSchemaVersion = 1;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- variants

struct VariantFlags {
  Family family;
  bool multires;
  bool attention;
};

const std::map<std::string, VariantFlags>& variant_table() {
  static const std::map<std::string, VariantFlags> table = {
      {"RGMM", {Family::Gaussian, false, true}},
      {"RGMM-MR", {Family::Gaussian, true, true}},
      {"RSMM", {Family::StudentT, false, true}},
      {"RSMM-MR", {Family::StudentT, true, true}},
      {"RSMM-MR-NoAttn", {Family::StudentT, true, false}},
  };
  return table;
}

VariantFlags variant_flags(const std::string& name) {
  auto it = variant_table().find(name);
  if (it == variant_table().end()) {
    std::string known;
    for (const auto& [k, v] : variant_table()) known += (known.empty() ? "" : ", ") + k;
    throw UsageError("unknown variant '" + name + "' (known: " + known + ")");
  }
  return it->second;
}

std::string variant_name(const ModelConfig& cfg) {
  for (const auto& [name, flags] : variant_table())
    if (flags.family == cfg.family && flags.multires == cfg.multires &&
        flags.attention == cfg.attention)
      return name;
  return "custom";
}

// ---------------------------------------------------------------- config

struct ExperimentConfig {
  std::string variant = "RSMM-MR";
  ModelConfig model;  // family/multires/attention are derived from variant
  TrainConfig train;
  SynthSpec synth;
  int n_normal_train = 200;
  int n_normal_test = 40;
  int n_anomaly_test = 40;
  double eval_p = 0.1;
  std::string ensemble_mode = "mean";
  double contaminate_fraction = 0.1;
  double contaminate_sigma2 = 5.0;
  std::uint64_t contaminate_seed = 0;
  bool scale_inputs = true;

  ModelConfig model_config() const {
    ModelConfig cfg = model;
    const VariantFlags flags = variant_flags(variant);
    cfg.family = flags.family;
    cfg.multires = flags.multires;
    cfg.attention = flags.attention;
    cfg.validate();
    return cfg;
  }
};

void apply_overrides(json& j, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw UsageError("--set expects key.path=value, got '" + kv + "'");
    std::string pointer = "/" + kv.substr(0, eq);
    for (auto& c : pointer)
      if (c == '.') c = '/';
    json value;
    try {
      value = json::parse(kv.substr(eq + 1));
    } catch (const json::exception&) {
      value = kv.substr(eq + 1);  // plain string
    }
    j[json::json_pointer(pointer)] = value;
  }
}

ExperimentConfig parse_experiment(const json& j) {
  ExperimentConfig cfg;
  try {
    if (j.value("schema_version", kSchemaVersion) != kSchemaVersion)
      throw UsageError("unsupported config schema_version");
    cfg.variant = j.value("variant", cfg.variant);
    if (j.contains("model")) {
      const json& m = j.at("model");
      cfg.model.input_dim = m.value("dims", cfg.model.input_dim);
      cfg.model.hidden = m.value("hidden", cfg.model.hidden);
      cfg.model.layers = m.value("layers", cfg.model.layers);
      cfg.model.seq_len = m.value("seq_len", cfg.model.seq_len);
      cfg.model.components = m.value("components", cfg.model.components);
      cfg.model.resolutions = m.value("resolutions", cfg.model.resolutions);
      cfg.model.conv_kernel = m.value("conv_kernel", cfg.model.conv_kernel);
      cfg.model.conv_stride = m.value("conv_stride", cfg.model.conv_stride);
      cfg.model.conv_padding = m.value("conv_padding", cfg.model.conv_padding);
      cfg.model.nu_lo = m.value("nu_lo", cfg.model.nu_lo);
      cfg.model.nu_hi = m.value("nu_hi", cfg.model.nu_hi);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      cfg.train.epochs = t.value("epochs", cfg.train.epochs);
      cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
      cfg.train.lr = t.value("lr", cfg.train.lr);
      cfg.train.weight_decay = t.value("weight_decay", cfg.train.weight_decay);
      cfg.train.init_scale = t.value("init_scale", cfg.train.init_scale);
      cfg.train.seed = t.value("seed", cfg.train.seed);
      cfg.train.beta1 = t.value("beta1", cfg.train.beta1);
      cfg.train.beta2 = t.value("beta2", cfg.train.beta2);
      cfg.train.eps = t.value("eps", cfg.train.eps);
      cfg.train.clip_norm = t.value("clip_norm", cfg.train.clip_norm);
    }
    if (j.contains("synth")) {
      const json& s = j.at("synth");
      cfg.synth.dims = s.value("dims", cfg.model.input_dim);
      cfg.synth.frames = s.value("frames", cfg.synth.frames);
      cfg.synth.seed = s.value("seed", cfg.synth.seed);
      cfg.synth.machine_id = s.value("machine_id", cfg.synth.machine_id);
      cfg.synth.freq = s.value("freq", cfg.synth.freq);
      cfg.synth.amp = s.value("amp", cfg.synth.amp);
      cfg.synth.ar_coef = s.value("ar_coef", cfg.synth.ar_coef);
      cfg.synth.noise_std = s.value("noise_std", cfg.synth.noise_std);
      if (s.contains("anomaly")) cfg.synth.anomaly = anomaly_from_string(s.at("anomaly"));
      cfg.synth.anomaly_magnitude = s.value("anomaly_magnitude", cfg.synth.anomaly_magnitude);
      cfg.n_normal_train = s.value("n_normal_train", cfg.n_normal_train);
      cfg.n_normal_test = s.value("n_normal_test", cfg.n_normal_test);
      cfg.n_anomaly_test = s.value("n_anomaly_test", cfg.n_anomaly_test);
    } else {
      cfg.synth.dims = cfg.model.input_dim;
    }
    if (j.contains("eval")) cfg.eval_p = j.at("eval").value("p", cfg.eval_p);
    if (j.contains("ensemble")) cfg.ensemble_mode = j.at("ensemble").value("mode", cfg.ensemble_mode);
    if (j.contains("contaminate")) {
      const json& c = j.at("contaminate");
      cfg.contaminate_fraction = c.value("fraction", cfg.contaminate_fraction);
      cfg.contaminate_sigma2 = c.value("sigma2", cfg.contaminate_sigma2);
      cfg.contaminate_seed = c.value("seed", cfg.contaminate_seed);
    }
    cfg.scale_inputs = j.value("scale_inputs", cfg.scale_inputs);
  } catch (const json::exception& e) {
    throw UsageError(std::string("bad experiment config: ") + e.what());
  }
  variant_flags(cfg.variant);  // reject unknown variants early
  return cfg;
}

json experiment_json(const ExperimentConfig& cfg) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["variant"] = cfg.variant;
  j["model"] = {{"dims", cfg.model.input_dim},
                {"hidden", cfg.model.hidden},
                {"layers", cfg.model.layers},
                {"seq_len", cfg.model.seq_len},
                {"components", cfg.model.components},
                {"resolutions", cfg.model.resolutions},
                {"conv_kernel", cfg.model.conv_kernel},
                {"conv_stride", cfg.model.conv_stride},
                {"conv_padding", cfg.model.conv_padding},
                {"nu_lo", cfg.model.nu_lo},
                {"nu_hi", cfg.model.nu_hi}};
  j["train"] = {{"epochs", cfg.train.epochs},   {"batch_size", cfg.train.batch_size},
                {"lr", cfg.train.lr},           {"weight_decay", cfg.train.weight_decay},
                {"init_scale", cfg.train.init_scale}, {"seed", cfg.train.seed},
                {"beta1", cfg.train.beta1},     {"beta2", cfg.train.beta2},
                {"eps", cfg.train.eps},         {"clip_norm", cfg.train.clip_norm}};
  j["synth"] = {{"dims", cfg.synth.dims},
                {"frames", cfg.synth.frames},
                {"seed", cfg.synth.seed},
                {"machine_id", cfg.synth.machine_id},
                {"freq", cfg.synth.freq},
                {"amp", cfg.synth.amp},
                {"ar_coef", cfg.synth.ar_coef},
                {"noise_std", cfg.synth.noise_std},
                {"anomaly", to_string(cfg.synth.anomaly)},
                {"anomaly_magnitude", cfg.synth.anomaly_magnitude},
                {"n_normal_train", cfg.n_normal_train},
                {"n_normal_test", cfg.n_normal_test},
                {"n_anomaly_test", cfg.n_anomaly_test}};
  j["eval"] = {{"p", cfg.eval_p}};
  j["ensemble"] = {{"mode", cfg.ensemble_mode}};
  j["contaminate"] = {{"fraction", cfg.contaminate_fraction},
                      {"sigma2", cfg.contaminate_sigma2},
                      {"seed", cfg.contaminate_seed}};
  j["scale_inputs"] = cfg.scale_inputs;
  return j;
}

ExperimentConfig load_experiment(const std::string& path, const std::vector<std::string>& sets) {
  json j = json::object();
  if (!path.empty()) {
    try {
      j = json::parse(read_file(path));
    } catch (const json::exception& e) {
      throw UsageError("cannot parse config " + path + ": " + e.what());
    } catch (const CorruptFileError& e) {
      throw UsageError(e.what());
    }
  }
  apply_overrides(j, sets);
  return parse_experiment(j);
}

// ---------------------------------------------------------------- datasets

struct Dataset {
  fs::path dir;
  std::vector<ManifestEntry> manifest;
};

Dataset open_dataset(const std::string& dir) {
  Dataset ds;
  ds.dir = dir;
  ds.manifest = load_manifest((ds.dir / "manifest.csv").string());
  return ds;
}

FrameSequence load_recording(const Dataset& ds, const ManifestEntry& entry) {
  FrameSequence rec;
  rec.values = load_fseq((ds.dir / entry.path).string());
  rec.recording_id = entry.recording_id;
  rec.machine_id = entry.machine_id;
  rec.label = entry.label;
  return rec;
}

std::vector<FrameSequence> load_split(const Dataset& ds, const std::string& split) {
  std::vector<FrameSequence> recs;
  for (const auto& entry : ds.manifest)
    if (entry.split == split) recs.push_back(load_recording(ds, entry));
  if (recs.empty()) throw CorruptFileError("dataset has no '" + split + "' recordings");
  return recs;
}

std::string dataset_hash(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& entry : ds.manifest) {
    const std::string bytes = read_file((ds.dir / entry.path).string());
    for (unsigned char byte : bytes) {
      h ^= byte;
      h *= 0x100000001b3ull;
    }
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_dataset(const fs::path& dir, const std::vector<std::pair<std::string, FrameSequence>>&
                                            split_recordings) {
  fs::create_directories(dir / "recordings");
  std::vector<ManifestEntry> manifest;
  for (const auto& [split, rec] : split_recordings) {
    const std::string rel = "recordings/" + rec.recording_id + ".fseq";
    save_fseq((dir / rel).string(), rec.values);
    manifest.push_back({rec.recording_id, rec.machine_id, rec.label, split, rel});
  }
  save_manifest((dir / "manifest.csv").string(), manifest);
}

void write_config_echo(const fs::path& dir, const ExperimentConfig& cfg) {
  write_file((dir / "config.json").string(), experiment_json(cfg).dump(2) + "\n");
}

// ---------------------------------------------------------------- commands

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  int threads = 1;
};

int cmd_generate(const CommonArgs& common, const std::string& out_dir) {
  const ExperimentConfig cfg = load_experiment(common.config_path, common.sets);
  SynthSpec train_spec = cfg.synth;
  train_spec.id_prefix = "train_";
  train_spec.n_normal = cfg.n_normal_train;
  train_spec.n_anomalous = 0;
  SynthSpec test_spec = cfg.synth;
  test_spec.id_prefix = "test_";
  test_spec.n_normal = cfg.n_normal_test;
  test_spec.n_anomalous = cfg.n_anomaly_test;

  std::vector<std::pair<std::string, FrameSequence>> recordings;
  for (auto& rec : generate(train_spec).normal) recordings.emplace_back("train", std::move(rec));
  SynthResult test = generate(test_spec);
  for (auto& rec : test.normal) recordings.emplace_back("test", std::move(rec));
  for (auto& rec : test.anomalous) recordings.emplace_back("test", std::move(rec));

  const fs::path dir(out_dir);
  write_dataset(dir, recordings);
  write_config_echo(dir, cfg);
  std::cout << "wrote " << recordings.size() << " recordings to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const CommonArgs& common, const std::string& data_dir, const std::string& out_dir) {
  const ExperimentConfig cfg = load_experiment(common.config_path, common.sets);
  const ModelConfig model_cfg = cfg.model_config();
  const Dataset ds = open_dataset(data_dir);
  std::vector<FrameSequence> train_recs = load_split(ds, "train");

  const fs::path dir(out_dir);
  fs::create_directories(dir);
  if (cfg.scale_inputs) {
    const ScalerRecord scaler = fit_scaler(train_recs);
    write_file((dir / "scaler.json").string(), scaler_to_json(scaler));
    train_recs = apply_scaler(scaler, train_recs);
  }
  WindowSet windows = make_windows(train_recs, model_cfg.seq_len);
  if (windows.skipped_recordings > 0)
    std::cerr << "warning: " << windows.skipped_recordings
              << " training recordings shorter than seq_len+1 were skipped\n";
  if (windows.items.empty())
    throw CorruptFileError("no training windows: every recording is shorter than seq_len+1");

  TrainConfig tcfg = cfg.train;
  tcfg.checkpoint_path = (dir / "model.rmdn").string();
  const TrainResult result = train(model_cfg, tcfg, windows);
  write_loss_csv((dir / "loss.csv").string(), result.epoch_loss);
  write_config_echo(dir, cfg);
  if (result.aborted) {
    std::cerr << "training aborted: " << result.abort_reason
              << " (last-good checkpoint retained)\n";
    return kExitNumerical;
  }
  std::cout << "trained " << cfg.variant << " for " << result.epoch_loss.size()
            << " epochs; final mean NLL "
            << (result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back()) << "\n";
  return kExitOk;
}

struct ScoreOutcome {
  std::vector<ScoreReport> scores;
  std::vector<std::pair<std::string, std::string>> skipped;  // id, reason
};

ScoreOutcome score_split(const Dataset& ds, const std::string& split, const ModelConfig& model_cfg,
                         const ModelWeights& weights, const ScalerRecord* scaler,
                         const std::string& model_id, int threads) {
  std::vector<const ManifestEntry*> entries;
  for (const auto& entry : ds.manifest)
    if (entry.split == split) entries.push_back(&entry);
  if (entries.empty()) throw CorruptFileError("dataset has no '" + split + "' recordings");

  std::vector<ScoreReport> scores(entries.size());
  std::vector<std::pair<std::string, std::string>> skipped;
  std::vector<std::uint8_t> ok(entries.size(), 0);
  std::mutex skip_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= entries.size()) return;
      try {
        FrameSequence rec = load_recording(ds, *entries[i]);
        if (scaler != nullptr) rec = apply_scaler(*scaler, rec);
        scores[i] = anomaly_score(weights, model_cfg, rec, model_id);
        ok[i] = 1;
      } catch (const std::invalid_argument& e) {
        const std::lock_guard<std::mutex> lock(skip_mutex);
        skipped.emplace_back(entries[i]->recording_id, e.what());
      }
    }
  };
  const int n_threads = std::max(1, threads);
  std::vector<std::thread> pool;
  for (int i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  ScoreOutcome outcome;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (ok[i]) outcome.scores.push_back(std::move(scores[i]));
  std::sort(skipped.begin(), skipped.end());
  outcome.skipped = std::move(skipped);
  return outcome;
}

int cmd_score(const CommonArgs& common, const std::string& data_dir, const std::string& split,
              const std::string& checkpoint_path, std::string scaler_path,
              const std::string& out_path, std::string model_id) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  if (model_id.empty()) model_id = variant_name(ck.config);

  ScalerRecord scaler;
  bool have_scaler = false;
  if (scaler_path.empty()) {
    const fs::path sibling = fs::path(checkpoint_path).parent_path() / "scaler.json";
    if (fs::exists(sibling)) scaler_path = sibling.string();
  }
  if (!scaler_path.empty()) {
    scaler = scaler_from_json(read_file(scaler_path));
    have_scaler = true;
  }

  const Dataset ds = open_dataset(data_dir);
  const ScoreOutcome outcome = score_split(ds, split, ck.config, ck.weights,
                                           have_scaler ? &scaler : nullptr, model_id,
                                           common.threads);
  save_score_csv(out_path, outcome.scores);
  if (!outcome.skipped.empty()) {
    std::ostringstream skip_csv;
    skip_csv << "recording_id,reason\n";
    for (const auto& [id, reason] : outcome.skipped) {
      std::cerr << "warning: skipped " << id << ": " << reason << "\n";
      skip_csv << id << "," << reason << "\n";
    }
    write_file(out_path + ".skipped.csv", skip_csv.str());
  }
  std::cout << "scored " << outcome.scores.size() << " recordings (" << outcome.skipped.size()
            << " skipped) -> " << out_path << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& scores_path, const std::string& out_path, double p) {
  const std::vector<ScoreReport> scores = load_score_csv(scores_path);
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>>
      groups;
  for (const auto& s : scores) {
    if (s.label == Label::Unknown)
      throw UsageError("cannot evaluate recording '" + s.recording_id + "' with unknown label");
    auto& [neg, pos] = groups[{s.machine_id, s.model_id}];
    (s.label == Label::Normal ? neg : pos).push_back(s.score);
  }
  std::vector<EvalRow> rows;
  for (const auto& [key, lists] : groups) {
    EvalRow row;
    row.machine_id = key.first;
    row.model_id = key.second;
    row.result = evaluate_scores(lists.first, lists.second, p);
    rows.push_back(std::move(row));
  }
  save_eval_csv(out_path, rows);
  for (const auto& row : rows)
    std::cout << row.machine_id << " " << row.model_id << ": auc=" << row.result.auc
              << " pauc=" << row.result.pauc << " (p=" << p << ")\n";
  return kExitOk;
}

int cmd_ensemble(const std::vector<std::string>& score_paths,
                 const std::vector<std::string>& train_score_paths, const std::string& mode_name,
                 const std::string& out_path, const std::string& model_id) {
  if (score_paths.size() != train_score_paths.size())
    throw UsageError("--scores and --train-scores must list the same number of files");
  if (score_paths.empty()) throw UsageError("ensemble needs at least one score file");
  const EnsembleMode mode = ensemble_mode_from_string(mode_name);

  std::vector<std::vector<ScoreReport>> standardized;
  for (std::size_t k = 0; k < score_paths.size(); ++k) {
    std::vector<ScoreReport> eval_scores = load_score_csv(score_paths[k]);
    const std::vector<ScoreReport> train_scores = load_score_csv(train_score_paths[k]);
    // per-machine standardization statistics from the training scores
    std::map<std::string, std::vector<double>> by_machine;
    for (const auto& s : train_scores) by_machine[s.machine_id].push_back(s.score);
    for (auto& s : eval_scores) {
      auto it = by_machine.find(s.machine_id);
      if (it == by_machine.end())
        throw UsageError("no training scores for machine '" + s.machine_id + "' in " +
                         train_score_paths[k]);
      s.score = standardize(it->second, std::vector<double>{s.score}).front();
    }
    std::sort(eval_scores.begin(), eval_scores.end(),
              [](const ScoreReport& a, const ScoreReport& b) {
                return a.recording_id < b.recording_id;
              });
    standardized.push_back(std::move(eval_scores));
  }
  const std::vector<ScoreReport> combined = ensemble(standardized, mode, model_id);
  save_score_csv(out_path, combined);
  std::cout << "combined " << score_paths.size() << " models (" << mode_name << ") -> " << out_path
            << "\n";
  return kExitOk;
}

int cmd_ablate(const CommonArgs& common, const std::string& data_dir, const std::string& out_dir) {
  const ExperimentConfig base_cfg = load_experiment(common.config_path, common.sets);
  const Dataset ds = open_dataset(data_dir);
  const std::string hash = dataset_hash(ds);
  const fs::path dir(out_dir);
  fs::create_directories(dir);

  std::vector<FrameSequence> train_recs = load_split(ds, "train");
  ScalerRecord scaler;
  if (base_cfg.scale_inputs) {
    scaler = fit_scaler(train_recs);
    train_recs = apply_scaler(scaler, train_recs);
  }

  std::ostringstream table;
  table << "variant,auc,pauc,p,seed,dataset_hash\n";
  for (const auto& [name, flags] : variant_table()) {
    ExperimentConfig cfg = base_cfg;
    cfg.variant = name;
    const ModelConfig model_cfg = cfg.model_config();
    const fs::path vdir = dir / name;
    fs::create_directories(vdir);

    TrainConfig tcfg = cfg.train;
    tcfg.checkpoint_path = (vdir / "model.rmdn").string();
    const WindowSet windows = make_windows(train_recs, model_cfg.seq_len);
    if (windows.items.empty()) throw CorruptFileError("no training windows for variant " + name);
    const TrainResult result = train(model_cfg, tcfg, windows);
    write_loss_csv((vdir / "loss.csv").string(), result.epoch_loss);
    if (base_cfg.scale_inputs)
      write_file((vdir / "scaler.json").string(), scaler_to_json(scaler));
    if (result.aborted) {
      std::cerr << "training aborted for " << name << ": " << result.abort_reason << "\n";
      return kExitNumerical;
    }

    const ScoreOutcome outcome =
        score_split(ds, "test", model_cfg, result.weights,
                    base_cfg.scale_inputs ? &scaler : nullptr, name, common.threads);
    save_score_csv((vdir / "scores.csv").string(), outcome.scores);
    std::vector<double> neg, pos;
    for (const auto& s : outcome.scores) {
      if (s.label == Label::Unknown) throw UsageError("ablate needs labeled test recordings");
      (s.label == Label::Normal ? neg : pos).push_back(s.score);
    }
    const EvalResult eval = evaluate_scores(neg, pos, cfg.eval_p);
    table << name << "," << format_full(eval.auc) << "," << format_full(eval.pauc) << ","
          << format_full(eval.p) << "," << cfg.train.seed << "," << hash << "\n";
    std::cout << name << ": auc=" << eval.auc << " pauc=" << eval.pauc << "\n";
  }
  write_file((dir / "ablation.csv").string(), table.str());
  write_config_echo(dir, base_cfg);
  return kExitOk;
}

int cmd_contaminate(const CommonArgs& common, const std::string& data_dir,
                    const std::string& out_dir, const std::string& split) {
  const ExperimentConfig cfg = load_experiment(common.config_path, common.sets);
  const Dataset ds = open_dataset(data_dir);

  std::vector<FrameSequence> targets;
  std::vector<const ManifestEntry*> target_entries;
  std::vector<std::pair<std::string, FrameSequence>> passthrough;
  for (const auto& entry : ds.manifest) {
    FrameSequence rec = load_recording(ds, entry);
    if (entry.split == split) {
      targets.push_back(std::move(rec));
      target_entries.push_back(&entry);
    } else {
      passthrough.emplace_back(entry.split, std::move(rec));
    }
  }
  if (targets.empty()) throw CorruptFileError("dataset has no '" + split + "' recordings");

  const ContaminationResult result = inject_noise_bursts(
      targets, cfg.contaminate_fraction, cfg.contaminate_sigma2, cfg.contaminate_seed);

  std::vector<std::pair<std::string, FrameSequence>> recordings;
  for (std::size_t i = 0; i < result.data.size(); ++i)
    recordings.emplace_back(target_entries[i]->split, result.data[i]);
  for (auto& [sp, rec] : passthrough) recordings.emplace_back(sp, std::move(rec));

  const fs::path dir(out_dir);
  write_dataset(dir, recordings);
  std::ostringstream mask_csv;
  mask_csv << "recording_id,frame_index\n";
  for (std::size_t r = 0; r < result.mask.size(); ++r)
    for (std::size_t t = 0; t < result.mask[r].size(); ++t)
      if (result.mask[r][t])
        mask_csv << result.data[r].recording_id << "," << t << "\n";
  write_file((dir / "mask.csv").string(), mask_csv.str());
  write_config_echo(dir, cfg);
  std::cout << "contaminated " << result.n_contaminated << " frames across " << targets.size()
            << " '" << split << "' recordings -> " << out_dir << "\n";
  return kExitOk;
}

const char* kConfigHelp = R"(Configuration file (JSON), overridable with --set key.path=value:
  variant                 RGMM | RGMM-MR | RSMM | RSMM-MR | RSMM-MR-NoAttn
  model.dims              input dimension P
  model.hidden            GRU hidden size            model.layers     GRU depth
  model.seq_len           window length              model.components mixture size
  model.resolutions       streams when multires      model.conv_kernel/conv_stride/conv_padding
  model.nu_lo, model.nu_hi  degrees-of-freedom bounds
  train.epochs train.batch_size train.lr train.weight_decay train.init_scale
  train.seed train.beta1 train.beta2 train.eps train.clip_norm
  synth.dims synth.frames synth.seed synth.machine_id synth.freq synth.amp
  synth.ar_coef synth.noise_std synth.anomaly synth.anomaly_magnitude
  synth.n_normal_train synth.n_normal_test synth.n_anomaly_test
  eval.p                  pAUC false-positive budget
  ensemble.mode           mean | max
  contaminate.fraction contaminate.sigma2 contaminate.seed
  scale_inputs            fit a [-1,1] scaler on the training split

Exit codes: 0 success, 2 config/usage error, 3 data error, 4 numerical failure.)";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust recurrent mixture-density models for time-series anomaly detection"};
  app.footer(kConfigHelp);
  app.require_subcommand(1);

  CommonArgs common;
  app.add_option("-c,--config", common.config_path, "experiment configuration JSON");
  app.add_option("--set", common.sets, "override a config field, e.g. --set train.lr=1e-3");
  app.add_option("--threads", common.threads, "worker thread cap for scoring")
      ->check(CLI::PositiveNumber);

  std::string data_dir, out, checkpoint, scaler, model_id;
  std::string score_split_name = "test", cont_split_name = "train";
  std::vector<std::string> score_files, train_score_files;
  std::string mode;
  double eval_p = -1.0;

  CLI::App* generate = app.add_subcommand("generate", "emit a synthetic dataset (FSEQ + manifest)");
  generate->add_option("-o,--out", out, "output dataset directory")->required();

  CLI::App* train_cmd = app.add_subcommand("train", "fit a variant, write checkpoint + loss CSV");
  train_cmd->add_option("--data", data_dir, "dataset directory")->required();
  train_cmd->add_option("-o,--out", out, "output directory")->required();

  CLI::App* score_cmd =
      app.add_subcommand("score", "score recordings against a checkpoint, write score CSV");
  score_cmd->add_option("--data", data_dir, "dataset directory")->required();
  score_cmd->add_option("--split", score_split_name, "manifest split to score (default test)");
  score_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  score_cmd->add_option("--scaler", scaler, "scaler JSON (default: scaler.json next to checkpoint)");
  score_cmd->add_option("--model-id", model_id, "model id column value (default: variant name)");
  score_cmd->add_option("-o,--out", out, "output score CSV")->required();

  CLI::App* eval_cmd = app.add_subcommand("eval", "compute AUC/pAUC per machine and model");
  eval_cmd->add_option("--scores", score_files, "score CSV")->required()->expected(1);
  eval_cmd->add_option("--p", eval_p, "pAUC false-positive budget (default from config)");
  eval_cmd->add_option("-o,--out", out, "output eval CSV")->required();

  CLI::App* ens_cmd =
      app.add_subcommand("ensemble", "standardize per machine and combine score CSVs");
  ens_cmd->add_option("--scores", score_files, "per-model eval score CSVs")->required();
  ens_cmd->add_option("--train-scores", train_score_files,
                      "per-model training score CSVs (standardization statistics)")
      ->required();
  ens_cmd->add_option("--mode", mode, "mean | max (default from config)");
  ens_cmd->add_option("--model-id", model_id, "model id for the combined scores");
  ens_cmd->add_option("-o,--out", out, "output score CSV")->required();

  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "train and evaluate all five variants on one dataset");
  ablate_cmd->add_option("--data", data_dir, "dataset directory")->required();
  ablate_cmd->add_option("-o,--out", out, "output directory")->required();

  CLI::App* cont_cmd =
      app.add_subcommand("contaminate", "inject noise bursts into a dataset split and re-emit it");
  cont_cmd->add_option("--data", data_dir, "dataset directory")->required();
  cont_cmd->add_option("--split", cont_split_name, "split to contaminate (default train)");
  cont_cmd->add_option("-o,--out", out, "output dataset directory")->required();

  // let -c/--set/--threads appear after the subcommand name
  for (CLI::App* sub : {generate, train_cmd, score_cmd, eval_cmd, ens_cmd, ablate_cmd, cont_cmd})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (generate->parsed()) return cmd_generate(common, out);
    if (train_cmd->parsed()) return cmd_train(common, data_dir, out);
    if (score_cmd->parsed())
      return cmd_score(common, data_dir, score_split_name, checkpoint, scaler, out, model_id);
    if (eval_cmd->parsed()) {
      if (eval_p <= 0.0)
        eval_p = load_experiment(common.config_path, common.sets).eval_p;
      return cmd_eval(score_files.front(), out, eval_p);
    }
    if (ens_cmd->parsed()) {
      if (mode.empty()) mode = load_experiment(common.config_path, common.sets).ensemble_mode;
      if (model_id.empty()) model_id = "ensemble";
      return cmd_ensemble(score_files, train_score_files, mode, out, model_id);
    }
    if (ablate_cmd->parsed()) return cmd_ablate(common, data_dir, out);
    if (cont_cmd->parsed()) return cmd_contaminate(common, data_dir, out, cont_split_name);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const CorruptFileError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
