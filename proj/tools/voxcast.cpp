// voxcast command-line driver: dataset generation and import, voxelization,
// training, evaluation and the numeric self-checks.

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "voxcast/checkpoint.hpp"
#include "voxcast/error.hpp"
#include "voxcast/eval.hpp"
#include "voxcast/gradcheck.hpp"
#include "voxcast/runtime.hpp"
#include "voxcast/synth.hpp"
#include "voxcast/train.hpp"
#include "voxcast/voxel.hpp"

namespace fs = std::filesystem;
using namespace voxcast;

namespace {

enum Exit { kOk = 0, kConfig = 1, kData = 2, kNumeric = 3 };

// Every recognised setting with its default; "" means unset.
const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d{
      {"seed", "0"},
      {"types", "all"},
      {"out", ""},
      {"dataset", ""},
      {"classifier", ""},
      {"simulator", ""},
      {"alpha", ""},
      {"epochs", "20"},
      {"batch", ""},
      {"augment", "100"},
      {"keep_ratio", "0.8"},
      {"noise", "0.05"},
      {"test_row", "3"},
      {"lr", "0.001"},
      {"model", "full"},
      {"per_window", "4000"},
      {"test_per_window", "1000"},
      {"checkpoint_every", "0"},
      {"select_best", "1"},
      {"ce_normalize", "1"},
      {"binarize", "0"},
      {"input", ""},
      {"inject_fault", ""},
      {"trials", "10"},
      {"adjoint_cases", "100"},
  };
  return d;
}

// Keys echoed for each command.
const std::map<std::string, std::vector<std::string>>& command_keys() {
  static const std::map<std::string, std::vector<std::string>> k{
      {"gen", {"seed", "types", "out", "augment", "keep_ratio", "noise"}},
      {"import", {"seed", "types", "out", "dataset", "augment", "keep_ratio"}},
      {"voxelize", {"types", "input", "out"}},
      {"train-classifier",
       {"seed", "types", "out", "dataset", "epochs", "batch", "lr", "model", "test_row", "checkpoint_every",
        "select_best", "ce_normalize"}},
      {"train-simulator",
       {"seed", "types", "out", "dataset", "classifier", "alpha", "epochs", "batch", "lr", "model", "test_row",
        "per_window", "test_per_window", "checkpoint_every", "ce_normalize"}},
      {"eval",
       {"seed", "types", "out", "dataset", "classifier", "simulator", "alpha", "test_row", "test_per_window",
        "binarize"}},
      {"check", {"seed", "inject_fault", "trials", "adjoint_cases"}},
  };
  return k;
}

class Settings {
 public:
  explicit Settings(std::string command) : command_(std::move(command)), values_(defaults()) {
    if (command_ == "train-classifier") values_["batch"] = "64";
    if (command_ == "train-simulator") values_["batch"] = "16";
  }

  void set(const std::string& key, const std::string& value, const std::string& origin) {
    if (!defaults().count(key)) fail(ErrorKind::ConfigError, "unknown setting '" + key + "' in " + origin);
    values_[key] = value;
  }

  void apply_file(const fs::path& path) {
    for (const auto& [k, v] : read_key_values(path)) set(k, v, path.string());
  }

  const std::string& str(const std::string& key) const { return values_.at(key); }
  bool has(const std::string& key) const { return !values_.at(key).empty(); }

  std::string required(const std::string& key) const {
    if (!has(key)) fail(ErrorKind::ConfigError, command_ + " needs --" + key);
    return str(key);
  }

  template <typename N>
  N number(const std::string& key) const {
    const std::string& s = required(key);
    N v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
      fail(ErrorKind::ConfigError, "setting " + key + " = '" + s + "' is not a number");
    return v;
  }

  bool flag(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "1" || s == "true") return true;
    if (s == "0" || s == "false" || s.empty()) return false;
    fail(ErrorKind::ConfigError, "setting " + key + " = '" + s + "' is not a boolean");
  }

  std::vector<PlaceholderType> types() const { return parse_types(str("types")); }

  std::map<std::string, std::string> manifest() const {
    std::map<std::string, std::string> m{{"command", command_}};
    for (const auto& k : command_keys().at(command_)) m[k] = values_.at(k);
    return m;
  }

 private:
  std::string command_;
  std::map<std::string, std::string> values_;
};

// Printed before any work and, when an output directory is known, saved
// next to the results.
void echo_manifest(const Settings& s, const std::optional<fs::path>& dir) {
  const auto m = s.manifest();
  std::cout << "# manifest\n";
  for (const auto& [k, v] : m) std::cout << k << "=" << v << "\n";
  std::cout.flush();
  if (dir) {
    fs::create_directories(*dir);
    write_key_values(*dir / (m.at("command") + ".manifest"), m);
  }
}

std::optional<fs::path> out_dir(const Settings& s) {
  if (!s.has("out")) return std::nullopt;
  return fs::path(s.str("out"));
}

void print_counts(const GridStore& store) {
  for (auto t : store.types()) {
    const auto counts = store.class_counts(t);
    std::size_t total = 0;
    std::cout << type_letter(t) << ":";
    for (std::size_t c = 0; c < counts.size(); ++c) {
      std::cout << " " << roman(c) << "=" << counts[c];
      total += counts[c];
    }
    std::cout << " total=" << total << "\n";
  }
}

ClassifierConfig classifier_plan(const Settings& s) {
  const auto& m = s.str("model");
  if (m == "full") return ClassifierConfig{};
  if (m == "reduced") return ClassifierConfig::reduced();
  fail(ErrorKind::ConfigError, "model must be full or reduced, got '" + m + "'");
}

SimulatorConfig simulator_plan(const Settings& s) {
  const auto& m = s.str("model");
  if (m == "full") return SimulatorConfig{};
  if (m == "reduced") return SimulatorConfig::reduced();
  fail(ErrorKind::ConfigError, "model must be full or reduced, got '" + m + "'");
}

TrainPlan train_plan(const Settings& s) {
  TrainPlan p;
  p.epochs = s.number<std::size_t>("epochs");
  p.batch = s.number<std::size_t>("batch");
  p.seed = s.number<std::uint64_t>("seed");
  p.adam.lr = s.number<double>("lr");
  p.checkpoint_every = s.number<std::size_t>("checkpoint_every");
  p.ce.normalize = s.flag("ce_normalize");
  p.out_dir = fs::path(s.required("out"));
  p.validate();
  return p;
}

// A checkpoint argument is either a file or a directory holding
// <stem>_<T><suffix>.vfck files.
Checkpoint checkpoint_for(const std::string& arg, const std::string& stem, PlaceholderType t,
                          const std::string& suffix = "") {
  fs::path p(arg);
  if (fs::is_directory(p)) p /= stem + "_" + std::string(1, type_letter(t)) + suffix + ".vfck";
  return load_checkpoint(p);
}

GridStore load_dataset(const Settings& s, PlaceholderType t) {
  return load_store(s.required("dataset"), {t});
}

int cmd_gen(const Settings& s) {
  DatasetManifest m;
  m.augment_count = s.number<std::size_t>("augment");
  m.keep_ratio = s.number<double>("keep_ratio");
  m.noise_amplitude = s.number<double>("noise");
  m.types = s.types();
  m.validate();
  const fs::path out = s.required("out");
  const auto store = gen_dataset(m, s.number<std::uint64_t>("seed"));
  save_store(out, store);
  print_counts(store);
  return kOk;
}

int cmd_import(const Settings& s) {
  ImportOptions o;
  o.augment_count = s.number<std::size_t>("augment");
  o.keep_ratio = s.number<double>("keep_ratio");
  o.types = s.types();
  const fs::path out = s.required("out");
  const auto store = import_real(s.required("dataset"), o, s.number<std::uint64_t>("seed"));
  save_store(out, store);
  print_counts(store);
  return kOk;
}

int cmd_voxelize(const Settings& s) {
  const auto types = s.types();
  if (types.size() != 1) fail(ErrorKind::ConfigError, "voxelize takes exactly one type");
  const auto cloud = load_cloud(s.required("input"));
  auto grid = voxelize(cloud, default_grid_spec(types[0]));
  grid.placeholder_type = types[0];
  const fs::path out = s.required("out");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_grid(out, grid);
  std::cout << "points=" << cloud.points.size() << " occupied=" << occupancy_count(grid) << " of "
            << grid.cell_count() << "\n";
  return kOk;
}

void log_epoch(const char* what, PlaceholderType t, const EpochSummary& e) {
  std::printf("%s %c epoch %zu loss %.6g", what, type_letter(t), e.epoch, e.mean_loss);
  if (e.test_mean_f) std::printf(" test_mean_f %.4f", *e.test_mean_f);
  std::printf("\n");
  std::fflush(stdout);
}

int cmd_train_classifier(const Settings& s) {
  auto plan = train_plan(s);
  plan.select_best = s.flag("select_best");
  plan.label = "classifier";
  const auto cfg = classifier_plan(s);
  for (auto t : s.types()) {
    const auto store = load_dataset(s, t);
    const auto [train, test] = split_rows(store, s.number<int>("test_row"));
    const auto r = train_classifier<float>(train, test, t, cfg, plan,
                                           [t](const EpochSummary& e) { log_epoch("classifier", t, e); });
    std::printf("classifier %c selected epoch %zu -> %s\n", type_letter(t), r.selected_epoch,
                (*plan.out_dir / ("classifier_" + std::string(1, type_letter(t)) + ".vfck")).c_str());
  }
  return kOk;
}

int cmd_train_simulator(const Settings& s) {
  auto plan = train_plan(s);
  plan.alpha = s.number<double>("alpha");
  plan.label = arch_label(plan.alpha);
  const auto cfg = simulator_plan(s);
  const auto clf_arg = s.required("classifier");
  for (auto t : s.types()) {
    const auto clf = checkpoint_for(clf_arg, "classifier", t);
    const auto store = load_dataset(s, t);
    const auto [train, test] = split_rows(store, s.number<int>("test_row"));
    const auto seed = s.number<std::uint64_t>("seed");
    const auto windows = make_windows(train, s.number<std::size_t>("per_window"), derive_seed(seed, {0x3a11, 1}));
    const auto held = make_windows(test, s.number<std::size_t>("test_per_window"), derive_seed(seed, {0x3a11, 2}));
    train_simulator<float>(train, windows, clf, cfg, plan,
                           [t](const EpochSummary& e) { log_epoch("simulator", t, e); },
                           WindowSet{&test, &held});
    std::printf("simulator %c %s -> %s\n", type_letter(t), plan.label.c_str(),
                (*plan.out_dir / ("simulator_" + std::string(1, type_letter(t)) + "_" + plan.label + ".vfck")).c_str());
  }
  return kOk;
}

int cmd_eval(const Settings& s) {
  EvalOptions opt;
  opt.binarize = s.flag("binarize");
  const auto clf_arg = s.required("classifier");
  std::vector<MetricReport> cls, sim;
  for (auto t : s.types()) {
    const auto clf = checkpoint_for(clf_arg, "classifier", t);
    const auto store = load_dataset(s, t);
    const auto test = split_rows(store, s.number<int>("test_row")).second;
    cls.push_back(eval_classifier(clf, test, opt).report);
    if (s.has("simulator")) {
      const auto seed = s.number<std::uint64_t>("seed");
      const auto held = make_windows(test, s.number<std::size_t>("test_per_window"), derive_seed(seed, {0x3a11, 2}));
      const std::string suffix = s.has("alpha") ? "_" + arch_label(s.number<double>("alpha")) : "";
      sim.push_back(
          eval_simulation(checkpoint_for(s.str("simulator"), "simulator", t, suffix), clf, test, held, opt).report);
    }
  }
  std::cout << render_table(cls);
  if (!sim.empty()) std::cout << "\n" << render_table(sim);
  if (auto dir = out_dir(s)) {
    fs::create_directories(*dir);
    std::ofstream(*dir / "classifier_report.txt") << render_table(cls);
    std::ofstream(*dir / "classifier_report.csv") << render_csv(cls);
    if (!sim.empty()) {
      std::ofstream(*dir / "simulation_report.txt") << render_table(sim);
      std::ofstream(*dir / "simulation_report.csv") << render_csv(sim);
    }
  }
  return kOk;
}

int cmd_check(const Settings& s) {
  SuiteOptions opt;
  opt.seed = s.number<std::uint64_t>("seed");
  opt.trials = s.number<std::size_t>("trials");
  opt.inject_fault = s.str("inject_fault");
  if (!opt.inject_fault.empty()) {
    const auto layers = gradient_suite_layers();
    if (std::find(layers.begin(), layers.end(), opt.inject_fault) == layers.end())
      fail(ErrorKind::ConfigError, "no layer named '" + opt.inject_fault + "'");
  }
  bool ok = true;
  for (const auto& c : run_gradient_suite(opt)) {
    std::printf("%-14s %s worst_rel_err %.3e over %zu trials (%s)\n", c.layer.c_str(), c.passed ? "pass" : "FAIL",
                c.worst_error, c.trials, c.detail.c_str());
    ok = ok && c.passed;
  }
  const auto adj = run_adjoint_suite(s.number<std::size_t>("adjoint_cases"), opt.seed);
  std::printf("%-14s %s worst_err %.3e over %zu cases\n", "adjoint", adj.passed ? "pass" : "FAIL", adj.worst_error,
              adj.cases);
  ok = ok && adj.passed;
  std::printf("%s\n", ok ? "all checks passed" : "numeric checks FAILED");
  return ok ? kOk : kNumeric;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::ConfigError:
    case ErrorKind::InvalidGridSpec:
      return kConfig;
    default:
      return kData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"voxcast: occupancy-grid classifier and deposit simulator"};
  app.require_subcommand(1);

  std::map<std::string, std::string> flags;
  std::string config_path;
  std::vector<std::string> overrides;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen", "generate a synthetic dataset store"},
      {"import", "voxelize and augment real scans into a store"},
      {"voxelize", "voxelize one point cloud"},
      {"train-classifier", "train one classifier per type"},
      {"train-simulator", "train the simulator against a frozen classifier"},
      {"eval", "classifier and simulation reports"},
      {"check", "finite-difference and adjoint self-checks"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "key=value settings file");
    sub->add_option("--set", overrides, "extra key=value setting (repeatable)");
    for (const auto& key : command_keys().at(name)) {
      if (key == "types" || key == "seed" || key == "alpha" || key == "epochs" || key == "batch" || key == "out" ||
          key == "dataset" || key == "classifier" || key == "simulator" || key == "input" || key == "inject_fault")
        sub->add_option("--" + std::string(key == "inject_fault" ? "inject-fault" : key), flags[name + "." + key]);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  const auto* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  try {
    Settings s(command);
    if (!config_path.empty()) s.apply_file(config_path);
    for (const auto& key : command_keys().at(command)) {
      const std::string flag = key == "inject_fault" ? "--inject-fault" : "--" + key;
      const auto* opt = sub->get_option_no_throw(flag);
      if (opt && opt->count() > 0) s.set(key, flags[command + "." + key], "flags");
    }
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) fail(ErrorKind::ConfigError, "--set expects key=value, got '" + kv + "'");
      s.set(kv.substr(0, eq), kv.substr(eq + 1), "--set");
    }
    echo_manifest(s, command == "voxelize" || command == "check" ? std::nullopt : out_dir(s));

    if (command == "gen") return cmd_gen(s);
    if (command == "import") return cmd_import(s);
    if (command == "voxelize") return cmd_voxelize(s);
    if (command == "train-classifier") return cmd_train_classifier(s);
    if (command == "train-simulator") return cmd_train_simulator(s);
    if (command == "eval") return cmd_eval(s);
    return cmd_check(s);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
}
