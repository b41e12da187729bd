// anomhead: synth / validate / train / eval / infer over feature bundle files.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "anomhead/anomhead.hpp"

namespace fs = std::filesystem;
using namespace anomhead;

namespace {

constexpr int kExitViolations = 1;

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::Format: return 3;
    case ErrorCategory::Compat:
    case ErrorCategory::Dimension: return 4;
    case ErrorCategory::Validation:
    case ErrorCategory::Metric: return 5;
  }
  return 1;
}

struct Layered {
  std::string config;
  std::vector<std::string> overrides;

  ConfigFile load() const {
    ConfigFile f = config.empty() ? ConfigFile{} : load_config(config);
    for (const auto& o : overrides) apply_override(f, o);
    return f;
  }
};

void add_layering(CLI::App* cmd, Layered& l) {
  cmd->add_option("--config", l.config, "INI configuration file");
  cmd->add_option("--set", l.overrides, "override, e.g. train.epochs=3 (repeatable)");
}

// Flag wins, then [paths] in the config file.
fs::path required_path(const std::string& flag_value, const ConfigFile& f, const std::string& key,
                       const std::string& flag) {
  if (!flag_value.empty()) return flag_value;
  if (auto it = f.paths.find(key); it != f.paths.end()) return it->second;
  throw ConfigError("missing " + flag + " (or paths." + key + " in the config file)");
}

std::optional<fs::path> optional_path(const std::string& flag_value, const ConfigFile& f, const std::string& key) {
  if (!flag_value.empty()) return fs::path(flag_value);
  if (auto it = f.paths.find(key); it != f.paths.end()) return fs::path(it->second);
  return std::nullopt;
}

// ---- synth ----

struct SynthArgs {
  Layered layers;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int run_synth(const SynthArgs& a) {
  ConfigFile f = a.layers.load();
  if (a.seed) f.synth.seed = *a.seed;
  const fs::path out = required_path(a.out, f, "out", "--out");
  const SynthDataset ds = synth_dataset(f.synth);
  write_synth_dataset(ds, out);
  std::printf("wrote %zu bundles, manifest.tsv and textbank.adtx to %s\n", ds.bundles.size(), out.string().c_str());
  return 0;
}

// ---- validate ----

std::vector<fs::path> collect_feature_files(const fs::path& root) {
  if (!fs::exists(root)) throw FormatError(root.string() + ": no such file or directory");
  if (!fs::is_directory(root)) return {root};
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".adft" || ext == ".adtx")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

int run_validate(const std::string& target) {
  std::size_t bad = 0;
  const auto files = collect_feature_files(target);
  for (const auto& p : files) {
    std::vector<Violation> v;
    try {
      const auto bytes = read_file_bytes(p);
      if (p.extension() == ".adtx") {
        v = validate_textbank(decode_textbank_unchecked(bytes, p.string()), 1e-5);
      } else {
        v = validate_bundle(decode_bundle_unchecked(bytes, p.string()));
      }
    } catch (const FormatError& e) {
      std::printf("%s: FORMAT: %s\n", p.string().c_str(), e.what());
      ++bad;
      continue;
    }
    for (const auto& x : v) std::printf("%s: %s\n", p.string().c_str(), to_string(x).c_str());
    if (!v.empty()) ++bad;
  }
  std::printf("%zu file(s) checked, %zu with violations\n", files.size(), bad);
  return bad == 0 ? 0 : kExitViolations;
}

// ---- train ----

struct TrainArgs {
  Layered layers;
  std::string manifest, textbank, out, log;
  std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
  ConfigFile f = a.layers.load();
  if (a.seed) f.train.seed = *a.seed;
  validate_config(f.train);
  const DatasetManifest m = read_manifest(required_path(a.manifest, f, "manifest", "--manifest"));
  const TextBank bank = read_textbank(required_path(a.textbank, f, "textbank", "--textbank"));
  const fs::path out = required_path(a.out, f, "ckpt", "--out");
  const auto log = optional_path(a.log, f, "log");

  const TrainResult r = train(m, bank, f.train);
  for (const auto& e : r.epochs) {
    std::printf("epoch %zu  total %.6f  cm %.6f  aacm %.6f\n", e.epoch, e.total, e.cm, e.aacm);
  }
  save_checkpoint(r.stack, f.train, out);
  if (log) write_file_text(*log, format_loss_log(r.steps));
  std::printf("checkpoint: %s\n", out.string().c_str());
  return 0;
}

// ---- eval ----

struct EvalArgs {
  Layered layers;
  std::string manifest, textbank, ckpt, report;
  bool baseline = false;
};

int run_eval(const EvalArgs& a) {
  const ConfigFile f = a.layers.load();
  const DatasetManifest m = read_manifest(required_path(a.manifest, f, "manifest", "--manifest"));
  EvalReport r;
  if (a.baseline) {
    const LoadedSplit test = load_split(m, Split::Test);
    r = evaluate_baseline(test.bundles, test.names);
  } else {
    validate_config(f.train);
    const TextBank bank = read_textbank(required_path(a.textbank, f, "textbank", "--textbank"));
    const AdapterStack stack = load_checkpoint(required_path(a.ckpt, f, "ckpt", "--ckpt"), f.train);
    r = evaluate(m, stack, bank, f.train);
  }
  std::fputs(format_report_text(r).c_str(), stdout);
  if (const auto report = optional_path(a.report, f, "report")) write_file_text(*report, format_report_kv(r));
  return 0;
}

// ---- infer ----

struct InferArgs {
  Layered layers;
  std::string bundle, textbank, ckpt, out_pfm, out_pgm;
};

int run_infer(const InferArgs& a) {
  const ConfigFile f = a.layers.load();
  validate_config(f.train);
  const fs::path bundle_path = required_path(a.bundle, f, "bundle", "--bundle");
  const FeatureBundle b = read_bundle(bundle_path);
  const TextBank bank = read_textbank(required_path(a.textbank, f, "textbank", "--textbank"));
  const AdapterStack stack = load_checkpoint(required_path(a.ckpt, f, "ckpt", "--ckpt"), f.train);
  const fs::path pfm = required_path(a.out_pfm, f, "out", "--out-pfm");

  check_compatible(b, stack, bank, bundle_path.string());
  const AnomalyMap map = infer(b, stack, bank, f.train).map;
  write_pfm(map, pfm);
  if (!a.out_pgm.empty()) write_pgm(map, a.out_pgm);
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  std::printf("%zux%zu map, min %.4f max %.4f -> %s\n", map.width, map.height, *lo, *hi, pfm.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trainable anomaly-detection head over frozen backbone features"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "write a synthetic dataset (bundles, manifest, text bank)");
  c_synth->add_option("--spec", synth.layers.config, "INI file whose [synth] section describes the dataset");
  c_synth->add_option("--set", synth.layers.overrides, "override, e.g. synth.n_train=16 (repeatable)");
  c_synth->add_option("--out", synth.out, "output directory");
  c_synth->add_option("--seed", synth.seed, "generator seed");

  std::string features;
  auto* c_validate = app.add_subcommand("validate", "check .adft/.adtx files; exit 0 iff no violations");
  c_validate->add_option("--features", features, "file or directory")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train an adapter stack and write a checkpoint");
  add_layering(c_train, tr.layers);
  c_train->add_option("--manifest", tr.manifest);
  c_train->add_option("--textbank", tr.textbank);
  c_train->add_option("--out", tr.out, "checkpoint path (.adck)");
  c_train->add_option("--log", tr.log, "per-step loss log");
  c_train->add_option("--seed", tr.seed);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "pixel AUROC / max-F1 over the test split");
  add_layering(c_eval, ev.layers);
  c_eval->add_option("--manifest", ev.manifest);
  c_eval->add_option("--textbank", ev.textbank);
  c_eval->add_option("--ckpt", ev.ckpt);
  c_eval->add_option("--report", ev.report, "key=value report file");
  c_eval->add_flag("--baseline", ev.baseline, "score with the training-free channel-mean map");

  InferArgs in;
  auto* c_infer = app.add_subcommand("infer", "anomaly map for one bundle");
  add_layering(c_infer, in.layers);
  c_infer->add_option("--bundle", in.bundle);
  c_infer->add_option("--textbank", in.textbank);
  c_infer->add_option("--ckpt", in.ckpt);
  c_infer->add_option("--out-pfm", in.out_pfm);
  c_infer->add_option("--out-pgm", in.out_pgm, "8-bit preview");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "CONFIG: %s\n", e.what());
    return exit_code(ErrorCategory::Config);
  }

  try {
    if (c_synth->parsed()) return run_synth(synth);
    if (c_validate->parsed()) return run_validate(features);
    if (c_train->parsed()) return run_train(tr);
    if (c_eval->parsed()) return run_eval(ev);
    if (c_infer->parsed()) return run_infer(in);
  } catch (const Error& e) {
    std::fprintf(stderr, "%s: %s\n", category_name(e.category()), e.what());
    return exit_code(e.category());
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "FORMAT: %s\n", e.what());
    return exit_code(ErrorCategory::Format);
  }
  return 0;
}
