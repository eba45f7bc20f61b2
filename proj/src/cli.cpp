#include "unirit/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "unirit/checkpoint.hpp"
#include "unirit/error.hpp"
#include "unirit/gmm.hpp"
#include "unirit/io.hpp"
#include "unirit/parallel.hpp"
#include "unirit/report.hpp"
#include "unirit/synth.hpp"
#include "unirit/trainer.hpp"

namespace unirit::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(Source s) {
  switch (s) {
    case Source::default_value: return "default";
    case Source::config_file: return "config-file";
    case Source::flag: return "flag";
  }
  return "default";
}

void RunConfig::declare(const std::string& name, ordered_json default_value) {
  if (!values_.contains(name)) order_.push_back(name);
  values_[name] = std::move(default_value);
  sources_[name] = Source::default_value;
}

void RunConfig::apply_config_file(const json& j) {
  if (!j.is_object()) throw ValidationError("config file: expected a JSON object");
  const json* fields = &j;
  if (j.contains("fields") && j.at("fields").is_object()) {
    if (j.contains("command") && j.at("command") != command_)
      throw ValidationError("config file: resolved configuration belongs to '" + j.at("command").get<std::string>() +
                            "', not '" + command_ + "'");
    fields = &j.at("fields");
  }
  for (const auto& [key, v] : fields->items()) {
    if (!values_.contains(key)) throw ValidationError("config file: unknown key '" + key + "' for " + command_);
    const json& value = fields == &j ? v : v.at("value");
    values_[key] = value;
    sources_[key] = Source::config_file;
  }
}

void RunConfig::set_flag(const std::string& name, ordered_json value) {
  if (!values_.contains(name)) throw ValidationError("unknown setting '" + name + "'");
  values_[name] = std::move(value);
  sources_[name] = Source::flag;
}

const ordered_json& RunConfig::value(const std::string& name) const {
  if (!values_.contains(name)) throw ValidationError("unknown setting '" + name + "'");
  return values_.at(name);
}

Source RunConfig::source(const std::string& name) const {
  auto it = sources_.find(name);
  if (it == sources_.end()) throw ValidationError("unknown setting '" + name + "'");
  return it->second;
}

void RunConfig::throw_bad_value(const std::string& name, const std::string& what) {
  throw ValidationError("setting '" + name + "' has the wrong type: " + what);
}

ordered_json RunConfig::resolved() const {
  ordered_json fields = ordered_json::object();
  for (const auto& name : order_)
    fields[name] = ordered_json{{"value", values_.at(name)}, {"source", to_string(sources_.at(name))}};
  return ordered_json{{"command", command_}, {"fields", std::move(fields)}};
}

unsigned thread_count() {
  if (const char* env = std::getenv("UNIRIT_THREADS"); env && *env) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1) throw ValidationError("UNIRIT_THREADS must be a positive integer");
    return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

/// Collects flag bindings so that only flags actually given land in the RunConfig.
class Binder {
 public:
  explicit Binder(CLI::App* app) : app_(app) {}

  template <typename T>
  void option(const std::string& flag, const std::string& field, const std::string& help) {
    auto storage = std::make_shared<T>();
    CLI::Option* opt = app_->add_option(flag, *storage, help);
    appliers_.push_back([storage, opt, field](RunConfig& rc) {
      if (opt->count() > 0) rc.set_flag(field, *storage);
    });
  }

  void toggle(const std::string& flag, const std::string& field, const std::string& help) {
    CLI::Option* opt = app_->add_flag(flag, help);
    appliers_.push_back([opt, field](RunConfig& rc) {
      if (opt->count() > 0) rc.set_flag(field, true);
    });
  }

  void apply(RunConfig& rc) const {
    for (const auto& f : appliers_) f(rc);
  }

 private:
  CLI::App* app_;
  std::vector<std::function<void(RunConfig&)>> appliers_;
};

struct Command {
  CLI::App* app = nullptr;
  std::unique_ptr<Binder> binder;
  std::string config_path;
  std::function<void(RunConfig&)> declare;
  std::function<void(const RunConfig&, std::ostream&)> run;
};

std::string required_path(const RunConfig& rc, const std::string& name) {
  const auto& v = rc.value(name);
  if (v.is_null() || (v.is_string() && v.get<std::string>().empty()))
    throw ValidationError("missing required setting '" + name + "'");
  return rc.get<std::string>(name);
}

fs::path prepare_out_dir(const RunConfig& rc) {
  const fs::path out = required_path(rc, "out");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw RuntimeFailure("cannot create output directory " + out.string() + ": " + ec.message());
  write_json(out / "resolved_config.json", rc.resolved());
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string padded(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04zu", i);
  return buf;
}

ordered_json transform_json(const RigidTransformd& xf) {
  ordered_json r = ordered_json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.push_back(xf.rotation(i, j));
  return ordered_json{{"rotation", r}, {"translation", {xf.translation.x(), xf.translation.y(), xf.translation.z()}}};
}

// ---------------------------------------------------------------------------
// synth

void declare_synth(RunConfig& rc) {
  rc.declare("family", "sphere");
  rc.declare("base", "");
  rc.declare("count", 1);
  rc.declare("points", 1024);
  rc.declare("deform", 15.0);
  rc.declare("case", "A");
  rc.declare("rot_deg", 45.0);
  rc.declare("trans", 0.2);
  rc.declare("noise", 0.0);
  rc.declare("dropout", 0.0);
  rc.declare("control_points", 8);
  rc.declare("radius", 100.0);
  rc.declare("seed", 0);
  rc.declare("out", nullptr);
}

void run_synth(const RunConfig& rc, std::ostream& out) {
  const auto families = split(rc.get<std::string>("family"), ',');
  if (families.empty()) throw ValidationError("synth: --family is empty");
  const int count = rc.get<int>("count");
  if (count < 1) throw ValidationError("synth: --count must be positive");
  const double rot = rc.get<double>("rot_deg");
  const double trans = rc.get<double>("trans");
  if (rot < 0.0 || trans < 0.0) throw ValidationError("synth: --rot-deg and --trans are magnitudes and must be >= 0");
  const auto seed = rc.get<std::uint64_t>("seed");

  std::vector<PairSpec> specs;
  for (int i = 0; i < count; ++i) {
    PairSpec s;
    s.family = shape_family_from_string(families[static_cast<std::size_t>(i) % families.size()]);
    s.base_path = rc.get<std::string>("base");
    s.n_points = rc.get<int>("points");
    s.deform_mm = rc.get<double>("deform");
    s.pair_case = pair_case_from_string(rc.get<std::string>("case"));
    s.rotation_range_deg = {-rot, rot};
    s.translation_range = {-trans, trans};
    s.noise_sigma = rc.get<double>("noise");
    s.dropout_fraction = rc.get<double>("dropout");
    s.control_points = rc.get<int>("control_points");
    s.shape_radius = rc.get<double>("radius");
    s.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    s.validate();
    specs.push_back(std::move(s));
  }
  const fs::path dir = prepare_out_dir(rc);
  std::vector<std::optional<SyntheticPair>> made(specs.size());
  parallel_for(specs.size(), thread_count(), [&](std::size_t i) {
    made[i] = make_registration_pair(specs[i], to_string(specs[i].family) + "_" + padded(i));
  });
  std::vector<SyntheticPair> pairs;
  for (auto& p : made) pairs.push_back(std::move(*p));
  const Manifest m = write_dataset(pairs, dir);
  out << "synth: wrote " << pairs.size() << " pairs to " << dir.string() << " (manifest " << m.path.filename().string()
      << ")\n";
}

// ---------------------------------------------------------------------------
// train

const std::vector<std::string>& model_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    const ordered_json defaults = to_json(UniRiTConfig{});
    for (const auto& [key, v] : defaults.items()) k.push_back(key);
    return k;
  }();
  return keys;
}

void declare_train(RunConfig& rc) {
  rc.declare("manifest", nullptr);
  rc.declare("out", nullptr);
  const ordered_json defaults = to_json(UniRiTConfig{});
  for (const auto& [key, v] : defaults.items()) rc.declare(key, v);
}

UniRiTConfig model_config(const RunConfig& rc) {
  json j = json::object();
  for (const auto& key : model_keys()) j[key] = rc.value(key);
  return config_from_json(j);
}

void write_history(const fs::path& dir, const std::vector<EpochRecord>& history) {
  ordered_json rows = ordered_json::array();
  std::string csv = "epoch,total,global,rigid\n";
  for (const auto& r : history) {
    rows.push_back(ordered_json{{"epoch", r.epoch}, {"total", r.total}, {"global", r.global}, {"rigid", r.rigid}});
    csv += std::to_string(r.epoch) + "," + format_number(r.total) + "," + format_number(r.global) + "," +
           format_number(r.rigid) + "\n";
  }
  write_json(dir / "loss_history.json", ordered_json{{"epochs", std::move(rows)}});
  write_text(dir / "loss_history.csv", csv);
}

void run_train(const RunConfig& rc, std::ostream& out) {
  const UniRiTConfig config = model_config(rc);
  const Manifest manifest = read_manifest(required_path(rc, "manifest"));
  const auto pairs = prepare_manifest(manifest, config.points_per_cloud, config.seed);
  const fs::path dir = prepare_out_dir(rc);
  if (config.checkpoint_every > 0) fs::create_directories(dir / "checkpoints");

  out << "train: " << pairs.size() << " pairs, " << config.epochs << " epochs"
      << (config.ablate_rigid ? " (rigid stage ablated)" : "") << "\n";
  std::vector<EpochRecord> history;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r, const UniRiTModel<float>& model, const nn::AdamState<float>& adam) {
    history.push_back(r);
    out << "epoch " << r.epoch << " total " << r.total << " global " << r.global << " rigid " << r.rigid << "\n";
    out.flush();
    if (config.checkpoint_every > 0 && r.epoch % config.checkpoint_every == 0) {
      save_checkpoint(dir / "checkpoints" / ("epoch_" + padded(static_cast<std::size_t>(r.epoch)) + ".json"), model,
                      &adam, r.epoch);
      write_history(dir, history);
    }
  };
  const TrainResult result = train(pairs, config, hooks);
  save_checkpoint(dir / "checkpoint.json", result.model, &result.adam, config.epochs);
  write_history(dir, result.history);
  out << "train: wrote " << (dir / "checkpoint.json").string() << "\n";
}

// ---------------------------------------------------------------------------
// register

void declare_register(RunConfig& rc) {
  rc.declare("checkpoint", nullptr);
  rc.declare("source", nullptr);
  rc.declare("target", nullptr);
  rc.declare("out", nullptr);
  rc.declare("correspondence", "auto");
  rc.declare("seed", 0);
}

void run_register(const RunConfig& rc, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(required_path(rc, "checkpoint"));
  const PointCloud source = read_cloud(fs::path(required_path(rc, "source")));
  const PointCloud target = read_cloud(fs::path(required_path(rc, "target")));
  const std::string corr = rc.get<std::string>("correspondence");
  bool paired = false;
  if (corr == "auto") paired = source.size() == target.size();
  else if (corr == "yes") paired = true;
  else if (corr != "no") throw ValidationError("register: --correspondence must be auto, yes or no");
  if (paired && source.size() != target.size())
    throw ValidationError("register: index correspondence needs equal point counts");

  const auto seed = rc.get<std::uint64_t>("seed");
  const fs::path dir = prepare_out_dir(rc);
  const RegistrationResult r = register_pair(ckpt.model, source, target, paired, seed);
  write_cloud(dir / "registered.xyz", r.registered);
  write_cloud(dir / "rigid_stage.xyz", r.rigid_out);
  ordered_json report = to_json(r.report);
  ordered_json xfs = ordered_json::array();
  for (const auto& xf : r.transforms) xfs.push_back(transform_json(xf));
  report["transforms"] = std::move(xfs);
  report["composed"] = transform_json(r.composed);
  write_json(dir / "report.json", report);
  out << "register: cd " << r.report.cd;
  if (r.report.rmse) out << ", rmse " << *r.report.rmse << " (pre " << *r.report.pre_rmse << ")";
  out << ", inference " << r.inference_ms << " ms\n";
}

// ---------------------------------------------------------------------------
// eval

void declare_eval(RunConfig& rc) {
  rc.declare("checkpoint", nullptr);
  rc.declare("manifest", nullptr);
  rc.declare("out", nullptr);
  rc.declare("seed", 0);
}

void run_eval(const RunConfig& rc, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(required_path(rc, "checkpoint"));
  const Manifest manifest = read_manifest(required_path(rc, "manifest"));
  if (manifest.entries.empty()) throw ValidationError("eval: manifest has no pairs");
  const auto seed = rc.get<std::uint64_t>("seed");
  const int points = ckpt.model.config().points_per_cloud;
  const fs::path dir = prepare_out_dir(rc);

  std::vector<EvalRecord> records(manifest.entries.size());
  std::vector<double> ms(manifest.entries.size());
  parallel_for(manifest.entries.size(), thread_count(), [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    const auto pair = prepare_pair(e.id, e.family, read_cloud(e.source_path), read_cloud(e.target_path),
                                   e.has_correspondence, points, derive_seed(seed, e.seed));
    const auto r = register_pair(ckpt.model, pair);
    records[i] = EvalRecord{r.report, e.family};
    ms[i] = r.inference_ms;
  });
  ordered_json rows = ordered_json::array();
  for (const auto& r : records) rows.push_back(to_json(r));
  write_json(dir / "records.json", rows);
  const Aggregate agg = report_aggregate(records);
  write_text(dir / "aggregate.csv", agg.to_csv());
  write_json(dir / "aggregate.json", agg.to_json());

  double mean_ms = 0.0;
  for (double v : ms) mean_ms += v / static_cast<double>(ms.size());
  const auto& overall = agg.rows.back();
  out << "eval: " << records.size() << " pairs";
  if (overall.mean_rmse) out << ", mean rmse " << *overall.mean_rmse << " (pre " << *overall.mean_pre_rmse << ")";
  out << ", mean cd " << overall.mean_cd << ", mean inference " << mean_ms << " ms\n";
}

// ---------------------------------------------------------------------------
// analyze-gmm

void declare_gmm(RunConfig& rc) {
  rc.declare("sets", ordered_json::array());
  rc.declare("components", 16);
  rc.declare("samples", 2000);
  rc.declare("picks", 12);
  rc.declare("repetitions", 4);
  rc.declare("points", 0);
  rc.declare("seed", 0);
  rc.declare("out", nullptr);
}

std::vector<fs::path> cloud_files(const fs::path& path) {
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path))
      if (entry.is_regular_file() && entry.path().extension() == ".xyz") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
  } else if (path.extension() == ".json") {
    for (const auto& e : read_manifest(path).entries) files.push_back(e.target_path);
  } else {
    throw ValidationError("analyze-gmm: " + path.string() + " is neither a directory nor a manifest");
  }
  if (files.empty()) throw ValidationError("analyze-gmm: no clouds found under " + path.string());
  return files;
}

void run_gmm(const RunConfig& rc, std::ostream& out) {
  const auto sets = rc.get<std::vector<std::string>>("sets");
  if (sets.size() < 2) throw ValidationError("analyze-gmm: need at least two --set LABEL=PATH entries");
  const int points = rc.get<int>("points");
  const auto seed = rc.get<std::uint64_t>("seed");
  std::vector<LabeledCollection> collections;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
      throw ValidationError("analyze-gmm: expected LABEL=PATH, got '" + s + "'");
    LabeledCollection c{s.substr(0, eq), {}};
    for (const auto& f : cloud_files(s.substr(eq + 1))) {
      PointCloud cloud = read_cloud(f);
      if (points > 0 && cloud.size() > points)
        cloud = subsample(cloud, points, derive_seed(seed, collections.size() * 100003 + c.clouds.size()));
      c.clouds.push_back(std::move(cloud));
    }
    collections.push_back(std::move(c));
  }
  DivergenceOptions opt;
  opt.components = rc.get<int>("components");
  opt.samples_per_pair = rc.get<int>("samples");
  opt.picks = rc.get<int>("picks");
  opt.repetitions = rc.get<int>("repetitions");
  opt.seed = seed;
  opt.threads = thread_count();
  const fs::path dir = prepare_out_dir(rc);
  const DivergenceMatrix m = divergence_matrix(collections, opt);
  write_text(dir / "divergence.csv", m.to_csv());
  out << "analyze-gmm: " << collections.size() << " labels, matrix written to " << (dir / "divergence.csv").string()
      << "\n";
}

int report_error(std::ostream& err, const std::string& kind, const std::string& what, int code) {
  err << "error (" << kind << "): " << what << "\n";
  return code;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Point cloud registration: synthetic data, training, registration, evaluation, GMM analysis", "unirit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::vector<std::unique_ptr<Command>> commands;
  auto add = [&](const std::string& name, const std::string& help, std::function<void(RunConfig&)> declare,
                 std::function<void(const RunConfig&, std::ostream&)> run) -> Command& {
    auto c = std::make_unique<Command>();
    c->app = app.add_subcommand(name, help);
    c->binder = std::make_unique<Binder>(c->app);
    c->app->add_option("--config", c->config_path, "JSON file of settings (flags take precedence)");
    c->declare = std::move(declare);
    c->run = std::move(run);
    commands.push_back(std::move(c));
    return *commands.back();
  };

  {
    auto& c = add("synth", "Generate synthetic registration pairs and a manifest", declare_synth, run_synth);
    auto& b = *c.binder;
    b.option<std::string>("--family", "family", "sphere|ellipsoid|blob|torus|from_file, comma-separated to mix");
    b.option<std::string>("--base", "base", "base cloud for the from_file family");
    b.option<int>("--count", "count", "number of pairs");
    b.option<int>("--points", "points", "points per cloud");
    b.option<double>("--deform", "deform", "mean displacement magnitude of the warp");
    b.option<std::string>("--case", "case", "A (deformation only) or B (plus rigid offset)");
    b.option<double>("--rot-deg", "rot_deg", "Case B rotation magnitude bound in degrees");
    b.option<double>("--trans", "trans", "Case B translation bound in normalized units");
    b.option<double>("--noise", "noise", "Gaussian noise sigma on the source");
    b.option<double>("--dropout", "dropout", "fraction of source points removed");
    b.option<int>("--control-points", "control_points", "warp control points");
    b.option<double>("--radius", "radius", "base shape radius");
    b.option<std::uint64_t>("--seed", "seed", "random seed");
    b.option<std::string>("--out", "out", "output directory");
  }
  {
    auto& c = add("train", "Train a model on a manifest", declare_train, run_train);
    auto& b = *c.binder;
    b.option<std::string>("--manifest", "manifest", "dataset manifest");
    b.option<std::string>("--out", "out", "output directory");
    b.option<std::uint64_t>("--seed", "seed", "random seed");
    b.toggle("--ablate-rigid", "ablate_rigid", "train without the rigid stage");
    b.option<int>("--epochs", "epochs", "training epochs");
    b.option<int>("--points", "points_per_cloud", "points per cloud");
    b.option<double>("--lr", "lr", "Adam learning rate");
    b.option<int>("--n-iters", "n_iters", "rigid iterations");
    b.option<double>("--alpha", "alpha", "weight of the global loss");
    b.option<int>("--checkpoint-every", "checkpoint_every", "epochs between checkpoints, 0 disables");
  }
  {
    auto& c = add("register", "Register one source cloud onto a target cloud", declare_register, run_register);
    auto& b = *c.binder;
    b.option<std::string>("--checkpoint", "checkpoint", "trained checkpoint");
    b.option<std::string>("--source", "source", "source cloud file");
    b.option<std::string>("--target", "target", "target cloud file");
    b.option<std::string>("--out", "out", "output directory");
    b.option<std::string>("--correspondence", "correspondence", "auto|yes|no: whether rows correspond by index");
    b.option<std::uint64_t>("--seed", "seed", "subsampling seed");
  }
  {
    auto& c = add("eval", "Evaluate a checkpoint on every pair of a manifest", declare_eval, run_eval);
    auto& b = *c.binder;
    b.option<std::string>("--checkpoint", "checkpoint", "trained checkpoint");
    b.option<std::string>("--manifest", "manifest", "dataset manifest");
    b.option<std::string>("--out", "out", "output directory");
    b.option<std::uint64_t>("--seed", "seed", "subsampling seed");
  }
  {
    auto& c = add("analyze-gmm", "Pairwise GMM divergence matrix between labeled cloud sets", declare_gmm, run_gmm);
    auto& b = *c.binder;
    b.option<std::vector<std::string>>("--set", "sets", "LABEL=PATH (directory of .xyz files or manifest), repeatable");
    b.option<int>("--components", "components", "mixture components per cloud");
    b.option<int>("--samples", "samples", "Monte Carlo samples per divergence");
    b.option<int>("--picks", "picks", "random cloud pairs per repetition");
    b.option<int>("--repetitions", "repetitions", "repetitions");
    b.option<int>("--points", "points", "subsample clouds to this many points (0 keeps all)");
    b.option<std::uint64_t>("--seed", "seed", "random seed");
    b.option<std::string>("--out", "out", "output directory");
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error (usage): " << e.what() << "\n\n";
    const auto chosen = app.get_subcommands();
    err << (chosen.empty() ? app.help() : chosen.front()->help());
    return 1;
  }

  Command* chosen = nullptr;
  for (auto& c : commands)
    if (c->app->parsed()) chosen = c.get();

  try {
    RunConfig rc(chosen->app->get_name());
    chosen->declare(rc);
    if (!chosen->config_path.empty()) rc.apply_config_file(read_json(chosen->config_path));
    chosen->binder->apply(rc);
    chosen->run(rc, out);
    return 0;
  } catch (const ValidationError& e) {
    return report_error(err, "validation", e.what(), 1);
  } catch (const RuntimeFailure& e) {
    return report_error(err, "runtime", e.what(), 2);
  } catch (const std::exception& e) {
    return report_error(err, "runtime", e.what(), 2);
  }
}

}  // namespace unirit::cli
