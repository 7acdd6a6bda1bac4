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

#include "ccinekf/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <sstream>
#include <thread>

#include "ccinekf/errors.hpp"
#include "ccinekf/eval.hpp"
#include "ccinekf/rng.hpp"

namespace ccinekf {

using nlohmann::json;

namespace {

constexpr std::uint64_t kTrainStream = 11;
constexpr std::uint64_t kEvalStream = 12;
constexpr std::uint64_t kInitStream = 7;

std::string csv_value(double x) { return std::isnan(x) ? std::string() : format_double(x); }

}  // namespace

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigurationError("invalid training config: " + what);
  };
  require(environments >= 1, "environments must be >= 1");
  require(buffer_length >= 1, "buffer length must be >= 1");
  require(history >= 1, "history must be >= 1");
  require(iterations >= 0, "iterations must be >= 0");
  require(!hidden.empty(), "at least one hidden layer is required");
  for (int h : hidden) require(h >= 1, "hidden sizes must be >= 1");
  require(activation == "relu" || activation == "tanh", "activation must be relu or tanh");
  require(adam.lr >= 0.0 && std::isfinite(adam.lr), "learning rate must be >= 0");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0, "beta1 must be in [0, 1)");
  require(adam.beta2 >= 0.0 && adam.beta2 < 1.0, "beta2 must be in [0, 1)");
  require(adam.eps > 0.0, "adam epsilon must be > 0");
  require(eval_every >= 0, "eval_every must be >= 0");
  require(eval_episodes >= 1, "eval_episodes must be >= 1");
  require(threads >= 0, "threads must be >= 0");
  sim.validate();
  require(sim.duration * sim.rate >= buffer_length + 1,
          "episode must hold at least one buffer");
  noise.validate();
}

json TrainConfig::to_json() const {
  return json{{"environments", environments},
              {"buffer_length", buffer_length},
              {"history", history},
              {"iterations", iterations},
              {"hidden", hidden},
              {"activation", activation},
              {"adam", {{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2},
                        {"eps", adam.eps}}},
              {"seed", seed},
              {"sim", sim.to_json()},
              {"eval_every", eval_every},
              {"eval_episodes", eval_episodes},
              {"threads", threads},
              {"noise", noise.to_json()},
              {"p0", p0.to_json()}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    c.environments = j.value("environments", c.environments);
    c.buffer_length = j.value("buffer_length", c.buffer_length);
    c.history = j.value("history", c.history);
    c.iterations = j.value("iterations", c.iterations);
    c.hidden = j.value("hidden", c.hidden);
    c.activation = j.value("activation", c.activation);
    if (j.contains("adam")) {
      const json& a = j["adam"];
      c.adam.lr = a.value("lr", c.adam.lr);
      c.adam.beta1 = a.value("beta1", c.adam.beta1);
      c.adam.beta2 = a.value("beta2", c.adam.beta2);
      c.adam.eps = a.value("eps", c.adam.eps);
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("sim")) c.sim = SimConfig::from_json(j["sim"]);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
    c.threads = j.value("threads", c.threads);
    if (j.contains("noise")) c.noise = NoiseParams::from_json(j["noise"]);
    if (j.contains("p0")) c.p0 = InitialCovariance::from_json(j["p0"]);
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

Eigen::VectorXd adam_step(const Eigen::VectorXd& theta, const Eigen::VectorXd& g,
                          AdamState& state, const AdamParams& params) {
  if (g.size() != theta.size()) throw InputError("gradient and parameters differ in size");
  if (state.t == 0 || state.m.size() != theta.size()) {
    state.m = Eigen::VectorXd::Zero(theta.size());
    state.v = Eigen::VectorXd::Zero(theta.size());
    state.t = 0;
  }
  ++state.t;
  state.m = params.beta1 * state.m + (1.0 - params.beta1) * g;
  state.v = params.beta2 * state.v + (1.0 - params.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(params.beta1, state.t);
  const double c2 = 1.0 - std::pow(params.beta2, state.t);
  Eigen::VectorXd out = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    out[i] = theta[i] - params.lr * mhat / (std::sqrt(vhat) + params.eps);
  }
  return out;
}

std::string TrainLog::to_csv(bool include_wall_time) const {
  std::ostringstream out;
  out << "iteration,mean_loss,grad_norm,eval_rmse,diverged,episodes";
  if (include_wall_time) out << ",wall_time";
  out << "\n";
  for (const TrainLogRow& r : rows) {
    out << r.iteration << ',' << csv_value(r.mean_loss) << ',' << csv_value(r.grad_norm) << ','
        << csv_value(r.eval_rmse) << ',' << r.diverged << ',' << r.episodes;
    if (include_wall_time) out << ',' << csv_value(r.wall_time);
    out << "\n";
  }
  return out.str();
}

double TrainLog::first_eval() const {
  for (const TrainLogRow& r : rows) {
    if (!std::isnan(r.eval_rmse)) return r.eval_rmse;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

double TrainLog::last_eval() const {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (!std::isnan(it->eval_rmse)) return it->eval_rmse;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

EpisodeDataset training_episode(const RobotModel& model, const SimConfig& sim,
                                std::uint64_t seed, std::uint64_t stream,
                                std::uint64_t index) {
  SimConfig c = sim;
  // A randomized gait can occasionally ask for an unreachable foothold; the
  // next seed in the same stream is used instead.
  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    c.seed = Rng::mix(Rng::mix(Rng::mix(seed, stream), index), attempt);
    try {
      return generate_episode(model, c);
    } catch (const GenerationError&) {
    }
  }
  throw GenerationError("no reachable episode after 64 attempts", -1);
}

std::vector<EpisodeDataset> evaluation_episodes(const RobotModel& model,
                                                const TrainConfig& cfg) {
  std::vector<EpisodeDataset> out;
  for (int j = 0; j < cfg.eval_episodes; ++j) {
    out.push_back(training_episode(model, cfg.sim, cfg.seed, kEvalStream, j));
  }
  return out;
}

double evaluate_velocity_rmse(const std::vector<EpisodeDataset>& episodes,
                              const RobotModel& model, const NoiseParams& np,
                              const ContactNet& net) {
  double sum = 0.0;
  for (const EpisodeDataset& d : episodes) {
    try {
      sum += ate(learned_contact_filter(d, model, np, net)).velocity.rmse;
    } catch (const SingularUpdateError&) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return sum / static_cast<double>(episodes.size());
}

TrainingEnvironment::TrainingEnvironment(const RobotModel& model, const TrainConfig& cfg,
                                         int index, const std::vector<EpisodeDataset>* pool)
    : model_(&model),
      cfg_(&cfg),
      pool_(pool && !pool->empty() ? pool : nullptr),
      layout_(FeatureLayout::from_model(model, cfg.history)),
      index_(index),
      window_(cfg.history) {}

void TrainingEnvironment::start_episode() {
  if (pool_) {
    const std::size_t k = (static_cast<std::size_t>(index_) +
                           episode_index_ * static_cast<std::size_t>(cfg_->environments)) %
                          pool_->size();
    data_ = (*pool_)[k];
    ++episode_index_;
    if (static_cast<int>(data_.steps.size()) < cfg_->buffer_length + 1) {
      throw InputError("training episode is shorter than one buffer");
    }
  } else {
    data_ = training_episode(*model_, cfg_->sim, cfg_->seed,
                             Rng::mix(kTrainStream, static_cast<std::uint64_t>(index_)),
                             episode_index_++);
  }
  cursor_ = 0;
  window_.clear();
  window_.push(data_.frame(*model_, 0));
  estimate_ = FilterEstimate{data_.truth(0), cfg_->p0.matrix(model_->num_candidates())};
}

std::vector<BufferStep> TrainingEnvironment::next_buffer() {
  const int L = cfg_->buffer_length;
  const int last = static_cast<int>(data_.steps.size()) - 1;
  // Steps left over at the end of an episode are dropped.
  if (cursor_ < 0 || cursor_ + L > last) start_episode();
  std::vector<BufferStep> out;
  out.reserve(L);
  for (int k = cursor_ + 1; k <= cursor_ + L; ++k) {
    window_.push(data_.frame(*model_, k));
    BufferStep s;
    s.imu = data_.imu(k);
    s.q = data_.steps[k].q;
    s.features = history_features(layout_, window_);
    s.R_gt = data_.steps[k].R;
    s.v_gt = data_.steps[k].v;
    out.push_back(std::move(s));
  }
  cursor_ += L;
  return out;
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CCINEKF_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n >= 1) return static_cast<int>(n);
    throw ConfigurationError(std::string("CCINEKF_THREADS must be a positive integer, got '") +
                             env + "'");
  }
  return 1;
}

namespace {

struct EnvResult {
  bool ok = false;
  double loss = 0.0;
  GradientSet grad;
  std::exception_ptr error;
};

template <typename F>
void parallel_for(int n, int threads, const F& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const int t = std::min(threads, n);
  for (int w = 0; w < t; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += t) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

TrainResult train(const RobotModel& model, const TrainConfig& cfg,
                  const TrainCallback& on_iteration, const TrainData* data) {
  cfg.validate();
  const int threads = resolve_threads(cfg.threads);
  const FeatureLayout layout = FeatureLayout::from_model(model, cfg.history);
  ContactNetArch arch = ContactNetArch::for_layout(layout, cfg.hidden);
  arch.activation = cfg.activation;
  TrainResult result;
  ContactNet& net = result.net;
  net = ContactNet::initialize(arch, Rng::mix(cfg.seed, kInitStream));

  std::vector<TrainingEnvironment> envs;
  if (data) {
    for (const auto* set : {&data->train, &data->eval}) {
      for (const EpisodeDataset& d : *set) {
        if (d.num_candidates != model.num_candidates() || d.num_joints != model.num_joints()) {
          throw InputError("dataset and model disagree on candidates or joints");
        }
      }
    }
  }
  for (int e = 0; e < cfg.environments; ++e) {
    envs.emplace_back(model, cfg, e, data ? &data->train : nullptr);
  }
  std::vector<EpisodeDataset> held_out;
  if (cfg.eval_every > 0) {
    held_out = data && !data->eval.empty() ? data->eval : evaluation_episodes(model, cfg);
  }

  AdamState adam;
  const auto start = std::chrono::steady_clock::now();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  for (int it = 0; it <= cfg.iterations; ++it) {
    TrainLogRow row;
    row.iteration = it;
    row.mean_loss = nan;
    row.grad_norm = nan;
    const bool evaluate =
        cfg.eval_every > 0 && (it % cfg.eval_every == 0 || it == cfg.iterations);
    row.eval_rmse = evaluate ? evaluate_velocity_rmse(held_out, model, cfg.noise, net) : nan;
    if (it == cfg.iterations) {
      // Final row: evaluation of the trained parameters only.
      for (const auto& e : envs) row.episodes += e.episodes();
      row.wall_time = elapsed();
      result.log.rows.push_back(row);
      if (on_iteration) on_iteration(row, net);
      break;
    }

    std::vector<EnvResult> res(envs.size());
    parallel_for(static_cast<int>(envs.size()), threads, [&](int e) {
      EnvResult& r = res[e];
      try {
        const std::vector<BufferStep> buffer = envs[e].next_buffer();
        Rollout ro = rollout_loss(net, envs[e].estimate(), buffer, model, cfg.noise);
        r.loss = ro.loss_value;
        r.grad = backward(ro);
        if (!r.grad.all_finite()) throw GradientOverflowError("non-finite gradient", 0);
        envs[e].set_estimate(ro.final);
        r.ok = true;
      } catch (const DivergedRolloutError&) {
        envs[e].reset();
      } catch (const SingularUpdateError&) {
        envs[e].reset();
      } catch (const GradientOverflowError&) {
        envs[e].reset();
      } catch (...) {
        r.error = std::current_exception();
      }
    });

    GradientSet g = GradientSet::zeros_like(net);
    double loss = 0.0;
    int used = 0;
    for (EnvResult& r : res) {
      if (r.error) std::rethrow_exception(r.error);
      if (!r.ok) {
        ++row.diverged;
        continue;
      }
      g.add(r.grad);
      loss += r.loss;
      ++used;
    }
    if (used > 0) {
      g.scale(1.0 / used);
      row.mean_loss = loss / used;
      row.grad_norm = g.norm();
      net.unflatten(adam_step(net.flatten(), g.flatten(), adam, cfg.adam));
    }
    result.log.total_diverged += row.diverged;
    for (const auto& e : envs) row.episodes += e.episodes();
    row.wall_time = elapsed();
    result.log.rows.push_back(row);
    if (on_iteration) on_iteration(row, net);
  }
  return result;
}

}  // namespace ccinekf
