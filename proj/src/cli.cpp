// Copyright 2026 The ccinekf Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ccinekf/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "ccinekf/contact_net.hpp"
#include "ccinekf/errors.hpp"
#include "ccinekf/eval.hpp"
#include "ccinekf/robot_model.hpp"
#include "ccinekf/sim.hpp"
#include "ccinekf/train.hpp"

#ifndef CCINEKF_VERSION
#define CCINEKF_VERSION "0.0.0"
#endif

namespace ccinekf::cli {

using nlohmann::json;
namespace fs = std::filesystem;

std::string version() { return CCINEKF_VERSION; }

json RunManifest::to_json() const {
  return json{{"command", command}, {"argv", argv},       {"config", config},
              {"seed", seed},       {"version", version()}, {"inputs", inputs},
              {"outputs", outputs}, {"wall_time", wall_time}};
}

void RunManifest::write(const std::string& path) const {
  write_file_atomically(path, to_json().dump(2) + "\n");
}

std::string manifest_path(const std::string& output) {
  fs::path p(output);
  return (p.parent_path() / (p.stem().string() + ".manifest.json")).string();
}

namespace {

constexpr const char* kDefaultModel = "builtin:desk_biped";

json read_json_file(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw InputError("'" + path + "' is not valid JSON: " + e.what());
  }
}

RobotModel load_model(const std::string& source) {
  if (source == "builtin:desk_biped") return RobotModel::desk_biped();
  if (source == "builtin:desk_biped_full_body") return RobotModel::desk_biped_full_body();
  if (source.rfind("builtin:", 0) == 0) {
    throw ConfigurationError("unknown built-in model '" + source + "'");
  }
  return RobotModel::load(source);
}

std::string in_dir(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void make_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

bool given(const CLI::Option* o) { return o != nullptr && o->count() > 0; }

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string model = kDefaultModel;
  std::string config;
  std::string scenario;
  std::uint64_t seed = 0;
  double duration = 0.0;
  double rate = 0.0;
  bool noise_free = false;
  std::string out;
  CLI::Option* o_scenario = nullptr;
  CLI::Option* o_seed = nullptr;
  CLI::Option* o_duration = nullptr;
  CLI::Option* o_rate = nullptr;
};

void add_simulate(CLI::App& app, SimulateArgs& a) {
  app.add_option("--model", a.model, "Robot model JSON or builtin:<name>");
  app.add_option("--config", a.config, "Simulation config JSON");
  a.o_scenario = app.add_option("--scenario", a.scenario, "gait or ground");
  a.o_seed = app.add_option("--seed", a.seed, "Episode seed");
  a.o_duration = app.add_option("--duration", a.duration, "Episode length (s)");
  a.o_rate = app.add_option("--rate", a.rate, "Sample rate (Hz)");
  app.add_flag("--noise-free", a.noise_free, "Disable sensor noise, slip and kicks");
  app.add_option("--out", a.out, "Dataset JSONL path")->required();
}

void run_simulate(const SimulateArgs& a, RunManifest& m) {
  const RobotModel model = load_model(a.model);
  SimConfig c = a.config.empty() ? SimConfig{} : SimConfig::from_json(read_json_file(a.config));
  if (given(a.o_scenario)) c.scenario = a.scenario;
  if (given(a.o_seed)) c.seed = a.seed;
  if (given(a.o_duration)) c.duration = a.duration;
  if (given(a.o_rate)) c.rate = a.rate;
  if (a.noise_free) {
    const SimConfig clean = SimConfig::noise_free(c.scenario, c.seed);
    c.slip.probability = clean.slip.probability;
    c.disturbance.period = clean.disturbance.period;
    c.imu = clean.imu;
    c.encoder = clean.encoder;
  }
  c.validate();
  const EpisodeDataset d = generate_episode(model, c);
  make_parent(a.out);
  d.save(a.out, {{"sim", c.to_json()}});
  m.config = {{"sim", c.to_json()}, {"model", model.to_json()}};
  m.seed = c.seed;
  if (!a.config.empty()) m.inputs["config"] = a.config;
  m.inputs["model"] = a.model;
  m.outputs["dataset"] = a.out;
  m.outputs["metadata"] = dataset_metadata_path(a.out);
}

// ------------------------------------------------------- select-candidates

struct SelectArgs {
  std::string model = kDefaultModel;
  int n = 4;
  std::vector<std::string> bodies;
  std::uint64_t seed = 0;
  std::string out;
  std::string model_out;
};

void add_select(CLI::App& app, SelectArgs& a) {
  app.add_option("--model", a.model, "Robot model JSON or builtin:<name>");
  app.add_option("--n", a.n, "Number of candidates")->required();
  app.add_option("--bodies", a.bodies, "Link names to sample on")->required()->delimiter(',');
  app.add_option("--seed", a.seed, "Sampling seed");
  app.add_option("--out", a.out, "Candidates JSON path")->required();
  app.add_option("--model-out", a.model_out, "Write the model with these candidates");
}

void run_select(const SelectArgs& a, RunManifest& m) {
  const RobotModel model = load_model(a.model);
  const std::vector<CandidatePoint> cands = sample_candidates(model, a.n, a.bodies, a.seed);
  json list = json::array();
  for (const CandidatePoint& c : cands) {
    list.push_back({{"name", c.name},
                    {"link", model.links()[c.link].name},
                    {"offset", {c.offset.x(), c.offset.y(), c.offset.z()}}});
  }
  make_parent(a.out);
  write_file_atomically(a.out, json{{"candidates", list}}.dump(2) + "\n");
  m.config = {{"n", a.n}, {"bodies", a.bodies}, {"model", model.to_json()}};
  m.seed = a.seed;
  m.inputs["model"] = a.model;
  m.outputs["candidates"] = a.out;
  if (!a.model_out.empty()) {
    make_parent(a.model_out);
    write_file_atomically(a.model_out, model.with_candidates(cands).to_json().dump(2) + "\n");
    m.outputs["model"] = a.model_out;
  }
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string model = kDefaultModel;
  std::string config;
  std::vector<std::string> datasets;
  std::vector<std::string> eval_datasets;
  std::string scenario;
  double episode_length = 0.0;
  int iterations = 0;
  int environments = 0;
  int buffer_length = 0;
  int history = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  int threads = 0;
  int eval_every = 0;
  int checkpoint_every = 0;
  std::string out_dir;
  CLI::Option* o_scenario = nullptr;
  CLI::Option* o_episode = nullptr;
  CLI::Option* o_iterations = nullptr;
  CLI::Option* o_environments = nullptr;
  CLI::Option* o_buffer = nullptr;
  CLI::Option* o_history = nullptr;
  CLI::Option* o_lr = nullptr;
  CLI::Option* o_seed = nullptr;
  CLI::Option* o_threads = nullptr;
  CLI::Option* o_eval_every = nullptr;
};

void add_train(CLI::App& app, TrainArgs& a) {
  app.add_option("--model", a.model, "Robot model JSON or builtin:<name>");
  app.add_option("--config", a.config, "Training config JSON");
  app.add_option("--dataset", a.datasets, "Training dataset(s) instead of simulated episodes");
  app.add_option("--eval-dataset", a.eval_datasets, "Held-out dataset(s) for evaluation");
  a.o_scenario = app.add_option("--scenario", a.scenario, "Simulated scenario: gait or ground");
  a.o_episode = app.add_option("--episode-length", a.episode_length, "Episode length T (s)");
  a.o_iterations = app.add_option("--iterations", a.iterations, "Optimizer steps");
  a.o_environments = app.add_option("--environments", a.environments, "Environments E");
  a.o_buffer = app.add_option("--buffer-length", a.buffer_length, "Buffer length L");
  a.o_history = app.add_option("--history", a.history, "History window H");
  a.o_lr = app.add_option("--lr", a.lr, "Adam learning rate");
  a.o_seed = app.add_option("--seed", a.seed, "Seed");
  a.o_threads = app.add_option("--threads", a.threads, "Worker threads");
  a.o_eval_every = app.add_option("--eval-every", a.eval_every, "Evaluation period (0 = off)");
  app.add_option("--checkpoint-every", a.checkpoint_every, "Checkpoint period (0 = end only)");
  app.add_option("--out-dir", a.out_dir, "Output directory")->required();
}

void write_checkpoint(const std::string& path, const ContactNet& net) {
  write_file_atomically(path, net.to_json().dump() + "\n");
}

void run_train(const TrainArgs& a, RunManifest& m) {
  const RobotModel model = load_model(a.model);
  TrainConfig c =
      a.config.empty() ? TrainConfig{} : TrainConfig::from_json(read_json_file(a.config));
  if (given(a.o_scenario)) c.sim.scenario = a.scenario;
  if (given(a.o_episode)) c.sim.duration = a.episode_length;
  if (given(a.o_iterations)) c.iterations = a.iterations;
  if (given(a.o_environments)) c.environments = a.environments;
  if (given(a.o_buffer)) c.buffer_length = a.buffer_length;
  if (given(a.o_history)) c.history = a.history;
  if (given(a.o_lr)) c.adam.lr = a.lr;
  if (given(a.o_seed)) c.seed = a.seed;
  if (given(a.o_threads)) c.threads = a.threads;
  if (given(a.o_eval_every)) c.eval_every = a.eval_every;
  c.validate();

  TrainData data;
  for (const auto& p : a.datasets) data.train.push_back(EpisodeDataset::load(p));
  for (const auto& p : a.eval_datasets) data.eval.push_back(EpisodeDataset::load(p));

  fs::create_directories(a.out_dir);
  const std::string ckpt = in_dir(a.out_dir, "checkpoint.json");
  const std::string log_path = in_dir(a.out_dir, "train_log.csv");
  TrainLog partial;
  const TrainResult r = train(
      model, c,
      [&](const TrainLogRow& row, const ContactNet& net) {
        partial.rows.push_back(row);
        if (!std::isnan(row.eval_rmse)) {
          std::cerr << "iteration " << row.iteration << ": eval velocity RMSE "
                    << format_double(row.eval_rmse) << " m/s\n";
        }
        if (a.checkpoint_every > 0 && row.iteration > 0 &&
            row.iteration % a.checkpoint_every == 0) {
          write_checkpoint(ckpt, net);
          write_file_atomically(log_path, partial.to_csv());
        }
      },
      &data);
  write_checkpoint(ckpt, r.net);
  write_file_atomically(log_path, r.log.to_csv());
  json cfg = c.to_json();
  cfg.erase("threads");
  m.config = {{"train", cfg}, {"model", model.to_json()}};
  m.seed = c.seed;
  m.inputs["model"] = a.model;
  if (!a.config.empty()) m.inputs["config"] = a.config;
  for (std::size_t i = 0; i < a.datasets.size(); ++i) {
    m.inputs["dataset_" + std::to_string(i)] = a.datasets[i];
  }
  for (std::size_t i = 0; i < a.eval_datasets.size(); ++i) {
    m.inputs["eval_dataset_" + std::to_string(i)] = a.eval_datasets[i];
  }
  m.outputs["checkpoint"] = ckpt;
  m.outputs["train_log"] = log_path;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string model = kDefaultModel;
  std::string dataset;
  std::string checkpoint;
  std::string baseline;
  std::string config;
  std::string name;
  std::string out_dir;
  double sigma_contact = 0.0;
  double sigma_free = 0.0;
  CLI::Option* o_sigma_contact = nullptr;
  CLI::Option* o_sigma_free = nullptr;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  app.add_option("--model", a.model, "Robot model JSON or builtin:<name>");
  app.add_option("--dataset", a.dataset, "Dataset JSONL")->required();
  auto* ck = app.add_option("--checkpoint", a.checkpoint, "Trained contact network");
  auto* bl = app.add_option("--baseline", a.baseline, "heuristic, gt-contacts, gt-slip or free");
  ck->excludes(bl);
  app.add_option("--config", a.config, "JSON with optional noise and baseline sections");
  a.o_sigma_contact =
      app.add_option("--sigma-contact", a.sigma_contact, "Baseline contact variance (m^2/s^2)");
  a.o_sigma_free = app.add_option("--sigma-free", a.sigma_free, "Baseline free variance");
  app.add_option("--name", a.name, "Method name in the report");
  app.add_option("--out-dir", a.out_dir, "Output directory")->required();
}

BaselineOptions baseline_from_json(const json& j) {
  BaselineOptions o;
  o.sigma_contact = j.value("sigma_contact", o.sigma_contact);
  o.sigma_free = j.value("sigma_free", o.sigma_free);
  o.slip_factor = j.value("slip_factor", o.slip_factor);
  o.slip_speed = j.value("slip_speed", o.slip_speed);
  o.contact_speed = j.value("contact_speed", o.contact_speed);
  o.contact_height = j.value("contact_height", o.contact_height);
  if (!(o.sigma_contact > 0.0 && o.sigma_free > 0.0 && o.slip_factor > 0.0)) {
    throw ConfigurationError("baseline variances and slip factor must be positive");
  }
  return o;
}

void run_eval(const EvalArgs& a, RunManifest& m) {
  if (a.checkpoint.empty() == a.baseline.empty()) {
    throw ConfigurationError("eval needs exactly one of --checkpoint or --baseline");
  }
  const RobotModel model = load_model(a.model);
  const json cfg = a.config.empty() ? json::object() : read_json_file(a.config);
  NoiseParams np;
  BaselineOptions opt;
  try {
    if (cfg.contains("noise")) np = NoiseParams::from_json(cfg["noise"]);
    json b = cfg.value("baseline", json::object());
    if (given(a.o_sigma_contact)) b["sigma_contact"] = a.sigma_contact;
    if (given(a.o_sigma_free)) b["sigma_free"] = a.sigma_free;
    opt = baseline_from_json(b);
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("malformed eval config: ") + e.what());
  }
  np.validate();
  const EpisodeDataset data = EpisodeDataset::load(a.dataset);
  TrajectoryPair pair;
  std::string method = a.name;
  if (!a.baseline.empty()) {
    const ContactSource src = parse_contact_source(a.baseline);
    pair = heuristic_contact_filter(data, model, np, src, opt);
    if (method.empty()) method = to_string(src);
    m.config["baseline"] = opt.to_json();
    m.config["source"] = to_string(src);
  } else {
    const ContactNet net = ContactNet::load(a.checkpoint);
    pair = learned_contact_filter(data, model, np, net);
    if (method.empty()) method = "learned";
    m.inputs["checkpoint"] = a.checkpoint;
    m.config["checkpoint"] = net.to_json();
  }
  const AteErrors errors = ate_errors(pair);
  const AteReport report = ate(pair);
  const NeesResult core = nees(pair, NeesBlock::kCore, 0.95);

  fs::create_directories(a.out_dir);
  json out = report.to_json();
  out["method"] = method;
  out["nees_core"] = core.summary();
  const std::string report_path = in_dir(a.out_dir, "report.json");
  const std::string steps_path = in_dir(a.out_dir, "steps.csv");
  const std::string errors_path = in_dir(a.out_dir, "errors.jsonl");
  write_file_atomically(report_path, out.dump(2) + "\n");
  write_file_atomically(steps_path, steps_csv(pair, errors, &core));
  write_file_atomically(errors_path, core_errors_jsonl(pair));
  m.config["noise"] = np.to_json();
  m.config["model"] = model.to_json();
  m.config["method"] = method;
  m.inputs["model"] = a.model;
  m.inputs["dataset"] = a.dataset;
  if (!a.config.empty()) m.inputs["config"] = a.config;
  m.outputs["report"] = report_path;
  m.outputs["steps"] = steps_path;
  m.outputs["errors"] = errors_path;
}

// -------------------------------------------------------------------- nees

struct NeesArgs {
  std::string errors;
  std::string block = "core";
  double confidence = 0.95;
  std::string out;
};

void add_nees(CLI::App& app, NeesArgs& a) {
  app.add_option("--errors", a.errors, "errors.jsonl written by eval")->required();
  app.add_option("--block", a.block, "core, velocity, position or orientation");
  app.add_option("--confidence", a.confidence, "Two-sided confidence level");
  app.add_option("--out", a.out, "NEES CSV path")->required();
}

void run_nees(const NeesArgs& a, RunManifest& m) {
  const NeesBlock block = parse_nees_block(a.block);
  if (!(a.confidence > 0.0 && a.confidence < 1.0)) {
    throw ConfigurationError("--confidence must be in (0, 1)");
  }
  std::vector<Vector9d> errors;
  std::vector<Matrix9d> P;
  parse_core_errors_jsonl(read_file(a.errors), errors, P);
  const NeesResult r = nees(errors, P, block, a.confidence);
  json summary = r.summary();
  summary["confidence"] = a.confidence;
  make_parent(a.out);
  const fs::path out(a.out);
  const std::string summary_path =
      (out.parent_path() / (out.stem().string() + ".summary.json")).string();
  write_file_atomically(a.out, nees_csv(r));
  write_file_atomically(summary_path, summary.dump(2) + "\n");
  m.config = {{"block", a.block}, {"confidence", a.confidence}};
  m.inputs["errors"] = a.errors;
  m.outputs["nees"] = a.out;
  m.outputs["summary"] = summary_path;
}

// ----------------------------------------------------------------- compare

struct CompareArgs {
  std::vector<std::string> reports;
  std::vector<std::string> names;
  std::string out;
};

void add_compare(CLI::App& app, CompareArgs& a) {
  app.add_option("reports", a.reports, "report.json files written by eval")->required();
  app.add_option("--name", a.names, "Row names, in report order");
  app.add_option("--out", a.out, "Markdown table path")->required();
}

void run_compare(const CompareArgs& a, RunManifest& m) {
  if (!a.names.empty() && a.names.size() != a.reports.size()) {
    throw ConfigurationError("--name must be given once per report");
  }
  std::vector<std::pair<std::string, AteReport>> rows;
  for (std::size_t i = 0; i < a.reports.size(); ++i) {
    const json j = read_json_file(a.reports[i]);
    const std::string name =
        a.names.empty() ? j.value("method", fs::path(a.reports[i]).parent_path().filename().string())
                        : a.names[i];
    rows.emplace_back(name, AteReport::from_json(j));
    m.inputs["report_" + std::to_string(i)] = a.reports[i];
  }
  make_parent(a.out);
  write_file_atomically(a.out, compare_table(rows));
  m.config = {{"names", json::array()}};
  for (const auto& r : rows) m.config["names"].push_back(r.first);
  m.outputs["table"] = a.out;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  const auto start = std::chrono::steady_clock::now();
  CLI::App app{"Contact-aided invariant EKF with learned contact covariances"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1, 1);

  SimulateArgs sim;
  SelectArgs sel;
  TrainArgs tr;
  EvalArgs ev;
  NeesArgs ne;
  CompareArgs cmp;
  CLI::App* s_sim = app.add_subcommand("simulate", "Generate a synthetic episode dataset");
  CLI::App* s_sel = app.add_subcommand("select-candidates", "Place contact candidates by FPS");
  CLI::App* s_tr = app.add_subcommand("train", "Train the contact network through the filter");
  CLI::App* s_ev = app.add_subcommand("eval", "Run a filter on a dataset and score it");
  CLI::App* s_ne = app.add_subcommand("nees", "NEES consistency of an eval run");
  CLI::App* s_cmp = app.add_subcommand("compare", "Tabulate several eval reports");
  add_simulate(*s_sim, sim);
  add_select(*s_sel, sel);
  add_train(*s_tr, tr);
  add_eval(*s_ev, ev);
  add_nees(*s_ne, ne);
  add_compare(*s_cmp, cmp);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, std::cout, std::cerr);
    return code == 0 ? kExitOk : kExitUsage;
  }

  RunManifest m;
  m.argv = args;
  std::string primary;
  try {
    if (s_sim->parsed()) {
      m.command = "simulate";
      run_simulate(sim, m);
      primary = sim.out;
    } else if (s_sel->parsed()) {
      m.command = "select-candidates";
      run_select(sel, m);
      primary = sel.out;
    } else if (s_tr->parsed()) {
      m.command = "train";
      run_train(tr, m);
      primary = in_dir(tr.out_dir, "manifest.json");
    } else if (s_ev->parsed()) {
      m.command = "eval";
      run_eval(ev, m);
      primary = in_dir(ev.out_dir, "manifest.json");
    } else if (s_ne->parsed()) {
      m.command = "nees";
      run_nees(ne, m);
      primary = ne.out;
    } else {
      m.command = "compare";
      run_compare(cmp, m);
      primary = cmp.out;
    }
    m.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    m.write(fs::path(primary).filename() == "manifest.json" ? primary : manifest_path(primary));
  } catch (const ConfigurationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int run(int argc, char** argv) {
  return run(std::vector<std::string>(argv, argv + argc));
}

}  // namespace ccinekf::cli
