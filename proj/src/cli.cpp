#include "pivae/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <climits>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pivae/baselines.hpp"
#include "pivae/dataset.hpp"
#include "pivae/dataset_io.hpp"
#include "pivae/errors.hpp"
#include "pivae/inference.hpp"
#include "pivae/kernels.hpp"
#include "pivae/mcmc.hpp"
#include "pivae/model.hpp"
#include "pivae/rng.hpp"
#include "pivae/samplers.hpp"

namespace pivae {
namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;
constexpr double kLog2Pi = 1.83787706640934548356;

// ---------------------------------------------------------------------------
// Config file handling. Configs are JSON objects; unknown keys anywhere in
// the schema are rejected so silent typos cannot change an experiment.

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* key : allowed) known = known || item.key() == key;
    if (!known) {
      throw ConfigError("config: unknown key '" + item.key() + "' in " + path);
    }
  }
}

// Returns the named sub-object, or null when absent; non-objects are errors.
const json* object_section(const json& root, const char* name) {
  if (!root.contains(name)) return nullptr;
  const json& section = root.at(name);
  if (!section.is_object()) {
    throw ConfigError(std::string(name) + ": expected an object");
  }
  return &section;
}

void reject_unknown(const json& root) {
  check_keys(root, "the top level",
             {"prior", "model", "train", "noise", "mcmc", "optimize",
              "predict", "benchmark", "seed", "threads", "out"});
  if (const json* s = object_section(root, "prior")) {
    check_keys(*s, "prior",
               {"family", "draws", "points", "dim", "box", "kernel",
                "lengthscale", "amplitude", "jitter", "cubic", "lgcp"});
    if (const json* c = object_section(*s, "cubic")) {
      check_keys(*c, "prior.cubic", {"a", "b", "c", "d", "budget"});
    }
    if (const json* l = object_section(*s, "lgcp")) {
      check_keys(*l, "prior.lgcp", {"horizon", "resolution", "gp_mean"});
    }
  }
  if (const json* s = object_section(root, "model")) {
    check_keys(*s, "model",
               {"latent", "features", "centres", "phi_hidden",
                "encoder_hidden", "decoder_hidden"});
  }
  if (const json* s = object_section(root, "train")) {
    check_keys(*s, "train", {"epochs", "batch", "learning_rate", "kl_weight"});
  }
  if (const json* s = object_section(root, "noise")) {
    check_keys(*s, "noise",
               {"family", "fixed_sigma", "sigma_prior_scale", "horizon"});
  }
  if (const json* s = object_section(root, "mcmc")) {
    check_keys(*s, "mcmc",
               {"chains", "warmup", "draws", "leapfrog", "target_accept",
                "init_radius"});
  }
  if (const json* s = object_section(root, "optimize")) {
    check_keys(*s, "optimize", {"steps", "learning_rate", "init_log_sigma"});
  }
  if (const json* s = object_section(root, "predict")) {
    check_keys(*s, "predict", {"stride", "include_noise", "channel"});
  }
  if (const json* s = object_section(root, "benchmark")) {
    check_keys(*s, "benchmark",
               {"dim", "train_points", "test_points", "box", "kernel",
                "lengthscale", "amplitude", "jitter", "noise_sd", "split_seed",
                "gp_restarts", "gp_steps", "gp_learning_rate"});
  }
}

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read '" + path + "'");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
  }
  if (!root.is_object()) {
    throw ConfigError("config: '" + path + "' must hold a JSON object");
  }
  reject_unknown(root);
  return root;
}

double num_field(const json& obj, const std::string& path, const char* key,
                 double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) {
    throw ConfigError(path + "." + key + ": expected a number");
  }
  return v.get<double>();
}

int int_field(const json& obj, const std::string& path, const char* key,
              int fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) {
    throw ConfigError(path + "." + key + ": expected an integer");
  }
  return v.get<int>();
}

std::uint64_t u64_field(const json& obj, const std::string& path,
                        const char* key, std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!(v.is_number_unsigned() ||
        (v.is_number_integer() && v.get<std::int64_t>() >= 0))) {
    throw ConfigError(path + "." + key + ": expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

bool bool_field(const json& obj, const std::string& path, const char* key,
                bool fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_boolean()) {
    throw ConfigError(path + "." + key + ": expected true or false");
  }
  return v.get<bool>();
}

std::string str_field(const json& obj, const std::string& path,
                      const char* key, const std::string& fallback,
                      bool required = false) {
  if (!obj.contains(key)) {
    if (required) throw ConfigError(path + "." + key + ": required");
    return fallback;
  }
  const json& v = obj.at(key);
  if (!v.is_string()) {
    throw ConfigError(path + "." + key + ": expected a string");
  }
  return v.get<std::string>();
}

std::vector<int> int_list_field(const json& obj, const std::string& path,
                                const char* key, std::vector<int> fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_array()) {
    throw ConfigError(path + "." + key + ": expected an integer list");
  }
  std::vector<int> out;
  for (const json& e : v) {
    if (!e.is_number_integer()) {
      throw ConfigError(path + "." + key + ": expected an integer list");
    }
    out.push_back(e.get<int>());
  }
  return out;
}

// A scalar means the degenerate range [v, v]; otherwise [lo, hi].
Range range_field(const json& obj, const std::string& path, const char* key,
                  Range fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (v.is_number()) {
    const double x = v.get<double>();
    return Range{x, x};
  }
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number()) {
    return Range{v[0].get<double>(), v[1].get<double>()};
  }
  throw ConfigError(path + "." + key + ": expected a number or [lo, hi]");
}

std::vector<Range> box_field(const json& obj, const std::string& path,
                             const char* key) {
  std::vector<Range> box;
  if (!obj.contains(key)) return box;
  const json& v = obj.at(key);
  if (!v.is_array()) {
    throw ConfigError(path + "." + key + ": expected a list of [lo, hi]");
  }
  for (const json& e : v) {
    if (!(e.is_array() && e.size() == 2 && e[0].is_number() &&
          e[1].is_number())) {
      throw ConfigError(path + "." + key + ": expected a list of [lo, hi]");
    }
    box.push_back(Range{e[0].get<double>(), e[1].get<double>()});
  }
  return box;
}

KernelFamily kernel_family_field(const json& obj, const std::string& path,
                                 const char* key, KernelFamily fallback) {
  const std::string name = str_field(obj, path, key, "");
  if (name.empty()) return fallback;
  if (name == "rbf") return KernelFamily::kRbf;
  if (name == "matern32") return KernelFamily::kMatern32;
  throw ConfigError(path + "." + key + ": unknown kernel '" + name +
                    "' (expected rbf or matern32)");
}

PriorConfig parse_prior(const json& root) {
  const json* s = object_section(root, "prior");
  if (s == nullptr) throw ConfigError("prior: section missing");
  PriorConfig pc;
  const std::string family = str_field(*s, "prior", "family", "", true);
  if (family == "gp") {
    pc.family = PriorFamily::kGp;
  } else if (family == "cubic") {
    pc.family = PriorFamily::kCubic;
  } else if (family == "lgcp") {
    pc.family = PriorFamily::kLgcp;
  } else {
    throw ConfigError("prior.family: unknown family '" + family +
                      "' (expected gp, cubic, or lgcp)");
  }
  pc.draws = int_field(*s, "prior", "draws", 0);
  pc.points = int_field(*s, "prior", "points", 0);
  pc.dim = int_field(*s, "prior", "dim", 1);
  pc.box = box_field(*s, "prior", "box");
  pc.kernel = kernel_family_field(*s, "prior", "kernel", KernelFamily::kRbf);
  pc.lengthscale = range_field(*s, "prior", "lengthscale", Range{1.0, 1.0});
  pc.amplitude = num_field(*s, "prior", "amplitude", 1.0);
  pc.jitter = num_field(*s, "prior", "jitter", 1e-8);
  if (const json* c = object_section(*s, "cubic")) {
    pc.cubic.a = range_field(*c, "prior.cubic", "a", pc.cubic.a);
    pc.cubic.b = range_field(*c, "prior.cubic", "b", pc.cubic.b);
    pc.cubic.c = range_field(*c, "prior.cubic", "c", pc.cubic.c);
    pc.cubic.d = range_field(*c, "prior.cubic", "d", pc.cubic.d);
    pc.cubic.budget = int_field(*c, "prior.cubic", "budget", pc.cubic.budget);
  }
  if (const json* l = object_section(*s, "lgcp")) {
    pc.lgcp.horizon = num_field(*l, "prior.lgcp", "horizon", pc.lgcp.horizon);
    pc.lgcp.resolution =
        int_field(*l, "prior.lgcp", "resolution", pc.lgcp.resolution);
    pc.lgcp.gp_mean = num_field(*l, "prior.lgcp", "gp_mean", pc.lgcp.gp_mean);
  }
  pc.validate();
  return pc;
}

TrainConfig parse_train(const json& root, std::uint64_t seed) {
  TrainConfig tc;
  tc.seed = seed;
  if (const json* m = object_section(root, "model")) {
    tc.latent = int_field(*m, "model", "latent", tc.latent);
    tc.feature_map.features =
        int_field(*m, "model", "features", tc.feature_map.features);
    tc.feature_map.centres =
        int_field(*m, "model", "centres", tc.feature_map.centres);
    tc.feature_map.hidden =
        int_list_field(*m, "model", "phi_hidden", tc.feature_map.hidden);
    tc.encoder_hidden =
        int_list_field(*m, "model", "encoder_hidden", tc.encoder_hidden);
    tc.decoder_hidden =
        int_list_field(*m, "model", "decoder_hidden", tc.decoder_hidden);
  }
  if (const json* t = object_section(root, "train")) {
    tc.epochs = int_field(*t, "train", "epochs", tc.epochs);
    tc.batch = int_field(*t, "train", "batch", tc.batch);
    tc.learning_rate =
        num_field(*t, "train", "learning_rate", tc.learning_rate);
    tc.kl_weight = num_field(*t, "train", "kl_weight", tc.kl_weight);
  }
  tc.validate();
  return tc;
}

NoiseModel parse_noise(const json& root) {
  NoiseModel noise;
  if (const json* s = object_section(root, "noise")) {
    const std::string family = str_field(*s, "noise", "family", "gaussian");
    if (family == "gaussian") {
      noise.family = NoiseModel::Family::kGaussianUnknownSigma;
    } else if (family == "gaussian_fixed") {
      noise.family = NoiseModel::Family::kGaussianFixedSigma;
    } else if (family == "poisson") {
      noise.family = NoiseModel::Family::kPoissonProcess;
    } else {
      throw ConfigError(
          "noise.family: unknown family '" + family +
          "' (expected gaussian, gaussian_fixed, or poisson)");
    }
    noise.fixed_sigma = num_field(*s, "noise", "fixed_sigma", noise.fixed_sigma);
    noise.sigma_prior_scale =
        num_field(*s, "noise", "sigma_prior_scale", noise.sigma_prior_scale);
    noise.horizon = num_field(*s, "noise", "horizon", noise.horizon);
  }
  noise.validate();
  return noise;
}

HmcConfig parse_mcmc(const json& root, std::uint64_t seed, int threads) {
  HmcConfig mc;
  mc.seed = seed;
  mc.threads = threads;
  if (const json* s = object_section(root, "mcmc")) {
    mc.chains = int_field(*s, "mcmc", "chains", mc.chains);
    mc.warmup = int_field(*s, "mcmc", "warmup", mc.warmup);
    mc.draws = int_field(*s, "mcmc", "draws", mc.draws);
    mc.leapfrog = int_field(*s, "mcmc", "leapfrog", mc.leapfrog);
    mc.target_accept =
        num_field(*s, "mcmc", "target_accept", mc.target_accept);
    mc.init_radius = num_field(*s, "mcmc", "init_radius", mc.init_radius);
  }
  mc.validate();
  return mc;
}

OptimizeConfig parse_optimize(const json& root) {
  OptimizeConfig oc;
  if (const json* s = object_section(root, "optimize")) {
    oc.steps = int_field(*s, "optimize", "steps", oc.steps);
    oc.learning_rate =
        num_field(*s, "optimize", "learning_rate", oc.learning_rate);
    oc.init_log_sigma =
        num_field(*s, "optimize", "init_log_sigma", oc.init_log_sigma);
  }
  oc.validate();
  return oc;
}

PredictConfig parse_predict(const json& root, std::uint64_t seed) {
  PredictConfig pc;
  pc.seed = seed;
  if (const json* s = object_section(root, "predict")) {
    pc.stride = int_field(*s, "predict", "stride", pc.stride);
    pc.include_noise =
        bool_field(*s, "predict", "include_noise", pc.include_noise);
    pc.channel = int_field(*s, "predict", "channel", pc.channel);
  }
  return pc;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag,
                           const json& root) {
  if (flag.has_value()) return *flag;
  return u64_field(root, "config", "seed", 1);
}

std::string resolve_out(const std::string& flag, const json& root) {
  if (!flag.empty()) return flag;
  return str_field(root, "config", "out", ".");
}

int resolve_threads(const std::optional<int>& flag, const json& root) {
  if (flag.has_value()) return *flag;
  return int_field(root, "config", "threads", 0);
}

// ---------------------------------------------------------------------------
// Artifact plumbing.

void write_text(const std::string& text, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

void write_json_file(const json& value, const std::string& path) {
  write_text(value.dump(2) + "\n", path);
}

// Every artifact carries a sidecar with the format version, the seed, and a
// full echo of the configuration that produced it.
void write_meta(const std::string& artifact, const char* command,
                const json& config_echo, std::uint64_t seed,
                const json& inputs) {
  json meta;
  meta["format_version"] = kFormatVersion;
  meta["command"] = command;
  meta["seed"] = seed;
  meta["config"] = config_echo;
  meta["inputs"] = inputs;
  write_json_file(meta, artifact + ".meta.json");
}

std::string prepare_out(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create output directory '" + dir +
                  "': " + ec.message());
  }
  return dir;
}

void append_double(std::string* out, double value) {
  char buffer[32];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
  out->append(buffer, result.ptr);
}

double elapsed_seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       since)
      .count();
}

double mse(const VectorXd& a, const VectorXd& b) {
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// Subcommands.

struct MakePriorOpts {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_make_prior(const MakePriorOpts& o) {
  const json cfg = load_config(o.config);
  const std::uint64_t seed = resolve_seed(o.seed, cfg);
  const std::string out = prepare_out(resolve_out(o.out, cfg));
  const PriorConfig prior = parse_prior(cfg);

  Rng rng(seed);
  const PriorDataset dataset = build_prior_dataset(prior, rng);
  const std::string path = out + "/dataset.jsonl";
  write_dataset_jsonl(dataset, path);
  write_meta(path, "make-prior", cfg, seed, json{{"config", o.config}});

  int kmin = INT_MAX;
  int kmax = 0;
  for (const FunctionDraw& d : dataset.draws) {
    kmin = std::min(kmin, static_cast<int>(d.locations.rows()));
    kmax = std::max(kmax, static_cast<int>(d.locations.rows()));
  }
  const int channels = dataset.with_integral ? 2 : 1;
  if (kmin == kmax) {
    std::printf("dataset: N=%zu K=%d D=%d channels=%d\n",
                dataset.draws.size(), kmax, dataset.dim, channels);
  } else {
    std::printf("dataset: N=%zu K=%d..%d D=%d channels=%d\n",
                dataset.draws.size(), kmin, kmax, dataset.dim, channels);
  }
  std::printf("wrote %s\n", path.c_str());
  return kExitOk;
}

struct TrainOpts {
  std::string config;
  std::string dataset;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainOpts& o) {
  const json cfg = load_config(o.config);
  const std::uint64_t seed = resolve_seed(o.seed, cfg);
  const std::string out = prepare_out(resolve_out(o.out, cfg));

  const PriorDataset dataset = read_dataset_jsonl(o.dataset);
  const TrainConfig train_config = parse_train(cfg, seed);
  const TrainResult result = train_prior(dataset, train_config);

  const std::string model_path = out + "/model.bin";
  save_model(result.model, model_path);
  write_meta(model_path, "train", cfg, seed,
             json{{"config", o.config}, {"dataset", o.dataset}});

  json report;
  report["format_version"] = kFormatVersion;
  report["command"] = "train";
  report["seed"] = seed;
  report["config"] = cfg;
  report["dataset"] = json{{"path", o.dataset},
                           {"draws", dataset.draws.size()},
                           {"dim", dataset.dim},
                           {"channels", dataset.with_integral ? 2 : 1}};
  json losses = json::array();
  for (std::size_t e = 0; e < result.report.epoch_losses.size(); ++e) {
    losses.push_back(json{{"epoch", e + 1},
                          {"loss", result.report.epoch_losses[e]}});
  }
  report["epoch_losses"] = std::move(losses);
  report["final_loss"] = result.report.epoch_losses.back();
  const std::string report_path = out + "/train_report.json";
  write_json_file(report, report_path);

  std::printf("trained: functions=%zu epochs=%zu final_loss=%.6f\n",
              dataset.draws.size(), result.report.epoch_losses.size(),
              result.report.epoch_losses.back());
  std::printf("wrote %s\n", model_path.c_str());
  std::printf("wrote %s\n", report_path.c_str());
  return kExitOk;
}

struct SampleOpts {
  std::string model;
  std::string locations;
  std::string out;
  int draws = 1;
  std::uint64_t seed = 1;
};

int cmd_sample(const SampleOpts& o) {
  const PiVaeModel model = load_model(o.model);
  const MatrixXd locations = read_numeric_csv(o.locations, model.dim);
  const std::string out = prepare_out(o.out.empty() ? "." : o.out);

  std::string csv = "draw";
  for (int d = 0; d < model.dim; ++d) csv += ",s" + std::to_string(d);
  csv += ",value";
  if (model.channels > 1) csv += ",integral";
  csv += "\n";

  Rng rng(o.seed);
  for (int draw = 1; draw <= o.draws; ++draw) {
    const MatrixXd values = generate(model, locations, rng);
    for (Eigen::Index k = 0; k < locations.rows(); ++k) {
      csv += std::to_string(draw);
      for (int d = 0; d < model.dim; ++d) {
        csv += ',';
        append_double(&csv, locations(k, d));
      }
      for (int c = 0; c < model.channels; ++c) {
        csv += ',';
        append_double(&csv, values(k, c));
      }
      csv += '\n';
    }
  }
  const std::string path = out + "/samples.csv";
  write_text(csv, path);
  const json echo{{"model", o.model},
                  {"locations", o.locations},
                  {"draws", o.draws},
                  {"seed", o.seed}};
  write_meta(path, "sample", echo, o.seed,
             json{{"model", o.model}, {"locations", o.locations}});

  std::printf("sampled: draws=%d locations=%d channels=%d\n", o.draws,
              static_cast<int>(locations.rows()), model.channels);
  std::printf("wrote %s\n", path.c_str());
  return kExitOk;
}

struct InferOpts {
  std::string model;
  std::string data;
  std::string config;
  std::string grid;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

int cmd_infer(const InferOpts& o) {
  const json cfg = load_config(o.config);
  const std::uint64_t seed = resolve_seed(o.seed, cfg);
  const int threads = resolve_threads(o.threads, cfg);
  const std::string out = prepare_out(resolve_out(o.out, cfg));

  const PiVaeModel model = load_model(o.model);
  const NoiseModel noise = parse_noise(cfg);
  const bool point_process =
      noise.family == NoiseModel::Family::kPoissonProcess;
  const MatrixXd table =
      read_numeric_csv(o.data, point_process ? model.dim : model.dim + 1);
  ObservedData data;
  data.locations = table.leftCols(model.dim);
  if (!point_process) data.values = table.col(model.dim);

  const HmcConfig mcmc = parse_mcmc(cfg, seed, threads);
  const OptimizeConfig optimize = parse_optimize(cfg);
  const LatentPosterior posterior = infer(model, data, noise, mcmc, optimize);
  const std::vector<std::string> names = parameter_names(posterior);
  const json inputs{{"config", o.config}, {"model", o.model},
                    {"data", o.data}};

  const std::string chains_path = out + "/chains.csv";
  write_chains_csv(posterior.chains, names, chains_path);
  write_meta(chains_path, "infer", cfg, seed, inputs);

  json diag;
  diag["format_version"] = kFormatVersion;
  diag["command"] = "infer";
  diag["seed"] = seed;
  diag["config"] = cfg;
  diag["converged"] = posterior.converged;
  diag["warnings"] = posterior.warnings;
  diag["chains"] = posterior.chains.chains();
  diag["draws"] = posterior.chains.num_draws();
  diag["divergences"] = posterior.diagnostics.divergence_count;
  diag["max_rhat"] = posterior.diagnostics.max_rhat();
  diag["min_ess_per_draw"] = posterior.diagnostics.min_ess_per_draw();
  json params = json::array();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    params.push_back(json{
        {"name", names[i]},
        {"rhat", posterior.diagnostics.rhat(k)},
        {"ess", posterior.diagnostics.ess(k)},
        {"ess_per_draw", posterior.diagnostics.ess_per_draw(k)},
        {"degenerate", static_cast<bool>(posterior.diagnostics.degenerate[i])},
    });
  }
  diag["parameters"] = std::move(params);
  json accept = json::array();
  json steps = json::array();
  for (int c = 0; c < posterior.chains.chains(); ++c) {
    accept.push_back(posterior.chains.accept_rate(c));
    steps.push_back(posterior.chains.step_size(c));
  }
  diag["accept_rate"] = std::move(accept);
  diag["step_size"] = std::move(steps);
  const std::string diag_path = out + "/diagnostics.json";
  write_json_file(diag, diag_path);

  const MatrixXd grid = o.grid.empty()
                            ? data.locations
                            : read_numeric_csv(o.grid, model.dim);
  const PredictConfig predict_config = parse_predict(cfg, seed);
  const PredictionSummary summary = predict(posterior, grid, predict_config);
  const std::string pred_path = out + "/predictions.csv";
  write_predictions_csv(grid, summary, pred_path);
  write_meta(pred_path, "infer", cfg, seed, inputs);

  for (const std::string& warning : posterior.warnings) {
    std::printf("warning: %s\n", warning.c_str());
  }
  std::printf(
      "inference: converged=%s max_rhat=%.4f min_ess_per_draw=%.3f "
      "divergences=%d\n",
      posterior.converged ? "yes" : "no", posterior.diagnostics.max_rhat(),
      posterior.diagnostics.min_ess_per_draw(),
      posterior.diagnostics.divergence_count);
  std::printf("wrote %s\n", chains_path.c_str());
  std::printf("wrote %s\n", diag_path.c_str());
  std::printf("wrote %s\n", pred_path.c_str());
  return kExitOk;
}

struct BenchmarkOpts {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

json method_metrics(const VectorXd& y_train, const VectorXd& mean_train,
                    const VectorXd& sd_train, const VectorXd& y_test,
                    const VectorXd& mean_test, const VectorXd& sd_test) {
  const double train_mse = mse(y_train, mean_train);
  const double test_mse = mse(y_test, mean_test);
  return json{
      {"train_mse", train_mse},
      {"test_mse", test_mse},
      {"train_rmse", std::sqrt(train_mse)},
      {"test_rmse", std::sqrt(test_mse)},
      {"train_nll", mean_negative_log_density(y_train, mean_train, sd_train)},
      {"test_nll", mean_negative_log_density(y_test, mean_test, sd_test)},
  };
}

int cmd_benchmark(const BenchmarkOpts& o) {
  const json cfg = load_config(o.config);
  const std::uint64_t seed = resolve_seed(o.seed, cfg);
  const int threads = resolve_threads(o.threads, cfg);
  const std::string out = prepare_out(resolve_out(o.out, cfg));

  const json* b = object_section(cfg, "benchmark");
  if (b == nullptr) throw ConfigError("benchmark: section missing");
  const int dim = int_field(*b, "benchmark", "dim", 2);
  const int train_points = int_field(*b, "benchmark", "train_points", 100);
  const int test_points = int_field(*b, "benchmark", "test_points", 200);
  const double noise_sd = num_field(*b, "benchmark", "noise_sd", 0.1);
  const std::uint64_t split_seed =
      u64_field(*b, "benchmark", "split_seed", 1001);
  if (dim < 1) throw ConfigError("benchmark.dim: must be at least 1");
  if (train_points < 2 || test_points < 1) {
    throw ConfigError(
        "benchmark.train_points/test_points: need at least 2 train and 1 "
        "test point");
  }
  if (!(noise_sd > 0.0)) {
    throw ConfigError("benchmark.noise_sd: must be positive");
  }
  KernelSpec task_kernel;
  task_kernel.family =
      kernel_family_field(*b, "benchmark", "kernel", KernelFamily::kRbf);
  task_kernel.lengthscale = num_field(*b, "benchmark", "lengthscale", 1.0);
  task_kernel.amplitude = num_field(*b, "benchmark", "amplitude", 1.0);
  task_kernel.jitter = num_field(*b, "benchmark", "jitter", 1e-8);
  task_kernel.validate();
  std::vector<Range> box = box_field(*b, "benchmark", "box");
  if (box.empty()) box.assign(static_cast<std::size_t>(dim), Range{-1.0, 1.0});
  if (static_cast<int>(box.size()) != dim) {
    throw ConfigError("benchmark.box: need one [lo, hi] pair per dimension");
  }

  // One joint field draw over train and test locations keeps both splits on
  // the same ground-truth surface.
  Rng task_rng(split_seed);
  const int total = train_points + test_points;
  MatrixXd locations(total, dim);
  for (int i = 0; i < total; ++i) {
    for (int d = 0; d < dim; ++d) {
      locations(i, d) = task_rng.uniform(box[static_cast<std::size_t>(d)].lo,
                                         box[static_cast<std::size_t>(d)].hi);
    }
  }
  VectorXd field = sample_gp(task_kernel, locations, task_rng);
  VectorXd y(total);
  for (int i = 0; i < total; ++i) y(i) = field(i) + noise_sd * task_rng.normal();
  const MatrixXd train_locs = locations.topRows(train_points);
  const MatrixXd test_locs = locations.bottomRows(test_points);
  const VectorXd y_train = y.head(train_points);
  const VectorXd y_test = y.tail(test_points);

  // Encoder/decoder pipeline: corpus, stage-1 training, stage-2 inference.
  const PriorConfig prior = parse_prior(cfg);
  if (prior.dim != dim) {
    throw ConfigError("benchmark: prior.dim must match benchmark.dim");
  }
  const NoiseModel noise = parse_noise(cfg);
  if (noise.family == NoiseModel::Family::kPoissonProcess) {
    throw ConfigError(
        "benchmark: noise.family must be a gaussian family for the "
        "regression task");
  }
  auto t0 = std::chrono::steady_clock::now();
  Rng prior_rng(seed);
  const PriorDataset corpus = build_prior_dataset(prior, prior_rng);
  const TrainResult trained = train_prior(corpus, parse_train(cfg, seed));
  const double train_seconds = elapsed_seconds(t0);

  ObservedData observed;
  observed.locations = train_locs;
  observed.values = y_train;
  t0 = std::chrono::steady_clock::now();
  const LatentPosterior posterior =
      infer(trained.model, observed, noise, parse_mcmc(cfg, seed, threads),
            parse_optimize(cfg));
  PredictConfig predict_config = parse_predict(cfg, seed);
  predict_config.include_noise = false;
  const PredictionSummary f_train = predict(posterior, train_locs,
                                            predict_config);
  const PredictionSummary f_test = predict(posterior, test_locs,
                                           predict_config);
  predict_config.include_noise = true;
  const PredictionSummary n_train = predict(posterior, train_locs,
                                            predict_config);
  const PredictionSummary n_test = predict(posterior, test_locs,
                                           predict_config);
  const double infer_seconds = elapsed_seconds(t0);

  // Exact GP on the identical split, hyperparameters from the evidence.
  GpOptimizeConfig gp_config;
  gp_config.restarts = int_field(*b, "benchmark", "gp_restarts", 3);
  gp_config.steps = int_field(*b, "benchmark", "gp_steps", 200);
  gp_config.learning_rate =
      num_field(*b, "benchmark", "gp_learning_rate", 0.05);
  gp_config.seed = seed;
  t0 = std::chrono::steady_clock::now();
  const GpRegressor gp = optimize_gp_hyperparameters(
      train_locs, y_train, task_kernel.family, gp_config);
  const GpPrediction g_train = gp_fit_predict(gp, train_locs);
  const GpPrediction g_test = gp_fit_predict(gp, test_locs);
  const double gp_seconds = elapsed_seconds(t0);
  const auto gp_sd = [&](const GpPrediction& p) {
    return (p.variance.array() + gp.noise_variance).sqrt().matrix().eval();
  };

  json metrics;
  metrics["format_version"] = kFormatVersion;
  metrics["command"] = "benchmark";
  metrics["seed"] = seed;
  metrics["config"] = cfg;
  metrics["split_seed"] = split_seed;
  metrics["task"] = json{
      {"dim", dim},
      {"train_points", train_points},
      {"test_points", test_points},
      {"noise_sd", noise_sd},
      {"kernel", task_kernel.family == KernelFamily::kRbf ? "rbf" : "matern32"},
      {"lengthscale", task_kernel.lengthscale},
      {"amplitude", task_kernel.amplitude},
  };
  json pivae = method_metrics(y_train, f_train.mean, n_train.sd, y_test,
                              f_test.mean, n_test.sd);
  pivae["converged"] = posterior.converged;
  metrics["pivae"] = std::move(pivae);
  json gp_metrics = method_metrics(y_train, g_train.mean, gp_sd(g_train),
                                   y_test, g_test.mean, gp_sd(g_test));
  gp_metrics["lengthscale"] = gp.kernel.lengthscale;
  gp_metrics["amplitude"] = gp.kernel.amplitude;
  gp_metrics["noise_variance"] = gp.noise_variance;
  gp_metrics["log_marginal"] = g_train.log_marginal;
  metrics["gp"] = std::move(gp_metrics);
  const std::string metrics_path = out + "/metrics.json";
  write_json_file(metrics, metrics_path);

  // Wall-clock lives in its own artifact: timings vary run to run and are
  // excluded from the bit-reproducibility guarantee.
  json timings;
  timings["format_version"] = kFormatVersion;
  timings["command"] = "benchmark";
  timings["reproducible"] = false;
  timings["train_seconds"] = train_seconds;
  timings["infer_seconds"] = infer_seconds;
  timings["gp_seconds"] = gp_seconds;
  const std::string timings_path = out + "/timings.json";
  write_json_file(timings, timings_path);

  std::printf(
      "benchmark: pivae test_mse=%.4f train_mse=%.4f | gp test_mse=%.4f "
      "train_mse=%.4f\n",
      metrics["pivae"]["test_mse"].get<double>(),
      metrics["pivae"]["train_mse"].get<double>(),
      metrics["gp"]["test_mse"].get<double>(),
      metrics["gp"]["train_mse"].get<double>());
  std::printf("timing: train=%.1fs infer=%.1fs gp=%.1fs\n", train_seconds,
              infer_seconds, gp_seconds);
  std::printf("wrote %s\n", metrics_path.c_str());
  std::printf("wrote %s\n", timings_path.c_str());
  return kExitOk;
}

}  // namespace

double mean_negative_log_density(const VectorXd& values, const VectorXd& mean,
                                 const VectorXd& sd) {
  if (values.size() != mean.size() || values.size() != sd.size()) {
    throw ShapeError("nll: need matching value, mean, and sd lengths");
  }
  if (values.size() == 0) throw ShapeError("nll: need at least one point");
  double total = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!(sd(i) > 0.0) || !std::isfinite(sd(i))) {
      throw NumericError("nll: predictive sd must be positive and finite");
    }
    const double r = (values(i) - mean(i)) / sd(i);
    total += 0.5 * kLog2Pi + std::log(sd(i)) + 0.5 * r * r;
  }
  return total / static_cast<double>(values.size());
}

MatrixXd read_numeric_csv(const std::string& path, int columns) {
  if (columns < 1) throw ShapeError("read_numeric_csv: need at least 1 column");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");

  const auto parse_row = [](const std::string& line,
                            std::vector<double>* row) {
    row->clear();
    std::size_t begin = 0;
    while (begin <= line.size()) {
      std::size_t end = line.find(',', begin);
      if (end == std::string::npos) end = line.size();
      std::size_t lo = begin;
      std::size_t hi = end;
      while (lo < hi && std::isspace(static_cast<unsigned char>(line[lo]))) {
        ++lo;
      }
      while (hi > lo &&
             std::isspace(static_cast<unsigned char>(line[hi - 1]))) {
        --hi;
      }
      const std::string token = line.substr(lo, hi - lo);
      if (token.empty()) return false;
      char* tail = nullptr;
      const double value = std::strtod(token.c_str(), &tail);
      if (tail != token.c_str() + token.size()) return false;
      row->push_back(value);
      begin = end + 1;
    }
    return true;
  };

  std::vector<double> flat;
  std::vector<double> row;
  std::string line;
  int rows = 0;
  int lineno = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const bool parsed = parse_row(line, &row);
    if (first_content) {
      first_content = false;
      if (!parsed) continue;  // header line
    }
    if (!parsed) {
      throw IoError(path + ":" + std::to_string(lineno) +
                    ": not a numeric row");
    }
    if (static_cast<int>(row.size()) != columns) {
      throw IoError(path + ":" + std::to_string(lineno) + ": expected " +
                    std::to_string(columns) + " columns, got " +
                    std::to_string(row.size()));
    }
    flat.insert(flat.end(), row.begin(), row.end());
    ++rows;
  }
  MatrixXd table(rows, columns);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < columns; ++j) {
      table(i, j) = flat[static_cast<std::size_t>(i) *
                             static_cast<std::size_t>(columns) +
                         static_cast<std::size_t>(j)];
    }
  }
  return table;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{
      "pivae: function priors via an encoder/decoder over feature weights, "
      "with HMC inference on new data"};
  app.require_subcommand(1);

  MakePriorOpts mk;
  CLI::App* mk_cmd = app.add_subcommand(
      "make-prior", "Draw a function corpus from a configured prior");
  mk_cmd->add_option("--config", mk.config, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  mk_cmd->add_option("--seed", mk.seed, "Override the config seed");
  mk_cmd->add_option("--out", mk.out, "Output directory");

  TrainOpts tr;
  CLI::App* tr_cmd =
      app.add_subcommand("train", "Fit the two-stage prior to a corpus");
  tr_cmd->add_option("--config", tr.config, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  tr_cmd->add_option("--dataset", tr.dataset, "Corpus file (JSON lines)")
      ->required()
      ->check(CLI::ExistingFile);
  tr_cmd->add_option("--seed", tr.seed, "Override the config seed");
  tr_cmd->add_option("--out", tr.out, "Output directory");

  SampleOpts sa;
  CLI::App* sa_cmd = app.add_subcommand(
      "sample", "Decode fresh latent draws at given locations");
  sa_cmd->add_option("--model", sa.model, "Trained model file")
      ->required()
      ->check(CLI::ExistingFile);
  sa_cmd->add_option("--locations", sa.locations, "Locations CSV")
      ->required()
      ->check(CLI::ExistingFile);
  sa_cmd->add_option("--draws", sa.draws, "Number of function draws")
      ->check(CLI::PositiveNumber);
  sa_cmd->add_option("--seed", sa.seed, "Sampling seed");
  sa_cmd->add_option("--out", sa.out, "Output directory");

  InferOpts in;
  CLI::App* in_cmd = app.add_subcommand(
      "infer", "Sample the latent posterior for observed data");
  in_cmd->add_option("--model", in.model, "Trained model file")
      ->required()
      ->check(CLI::ExistingFile);
  in_cmd->add_option("--data", in.data, "Observations CSV")
      ->required()
      ->check(CLI::ExistingFile);
  in_cmd->add_option("--config", in.config, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  in_cmd
      ->add_option("--grid", in.grid,
                   "Prediction locations CSV (default: the data locations)")
      ->check(CLI::ExistingFile);
  in_cmd->add_option("--seed", in.seed, "Override the config seed");
  in_cmd->add_option("--threads", in.threads, "Worker threads (0 = cores)")
      ->check(CLI::NonNegativeNumber);
  in_cmd->add_option("--out", in.out, "Output directory");

  BenchmarkOpts be;
  CLI::App* be_cmd = app.add_subcommand(
      "benchmark", "Compare the pipeline against an exact GP on one task");
  be_cmd->add_option("--config", be.config, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  be_cmd->add_option("--seed", be.seed, "Override the config seed");
  be_cmd->add_option("--threads", be.threads, "Worker threads (0 = cores)")
      ->check(CLI::NonNegativeNumber);
  be_cmd->add_option("--out", be.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (mk_cmd->parsed()) return cmd_make_prior(mk);
    if (tr_cmd->parsed()) return cmd_train(tr);
    if (sa_cmd->parsed()) return cmd_sample(sa);
    if (in_cmd->parsed()) return cmd_infer(in);
    if (be_cmd->parsed()) return cmd_benchmark(be);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kExitUsage;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  }
  return kExitUsage;
}

}  // namespace pivae
