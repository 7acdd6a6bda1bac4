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

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ccinekf/contact_net.hpp"
#include "ccinekf/filter.hpp"
#include "ccinekf/robot_model.hpp"
#include "ccinekf/rollout.hpp"
#include "ccinekf/sim.hpp"

namespace ccinekf {

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int environments = 16;
  int buffer_length = 128;
  int history = 20;
  int iterations = 2000;
  std::vector<int> hidden{128, 64};
  std::string activation = "relu";
  AdamParams adam;
  std::uint64_t seed = 0;
  // Episode template; scenario and duration (episode length T) live here and
  // the seed is replaced per episode.
  SimConfig sim;
  int eval_every = 100;
  int eval_episodes = 4;
  // 0 reads CCINEKF_THREADS, falling back to one thread.
  int threads = 0;
  NoiseParams noise;
  InitialCovariance p0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  int t = 0;
};

// Bias-corrected Adam update; moments start at zero on the first call.
Eigen::VectorXd adam_step(const Eigen::VectorXd& theta, const Eigen::VectorXd& g,
                          AdamState& state, const AdamParams& params);

struct TrainLogRow {
  int iteration = 0;
  double mean_loss = 0.0;
  double grad_norm = 0.0;
  double wall_time = 0.0;
  // NaN when no evaluation ran at this iteration.
  double eval_rmse = 0.0;
  int diverged = 0;
  int episodes = 0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  int total_diverged = 0;

  std::string to_csv(bool include_wall_time = true) const;
  // Iteration-0 and last evaluation RMSE; NaN if absent.
  double first_eval() const;
  double last_eval() const;
};

// Episode with seed derived from (base seed, stream, index).
EpisodeDataset training_episode(const RobotModel& model, const SimConfig& sim,
                                std::uint64_t seed, std::uint64_t stream,
                                std::uint64_t index);

// Held-out evaluation episodes, seeds disjoint from the training streams.
std::vector<EpisodeDataset> evaluation_episodes(const RobotModel& model,
                                                const TrainConfig& cfg);

// Mean over episodes of the learned filter's body-velocity RMSE.
double evaluate_velocity_rmse(const std::vector<EpisodeDataset>& episodes,
                              const RobotModel& model, const NoiseParams& np,
                              const ContactNet& net);

// One environment: an episode, a cursor into it, the feature window and the
// filter estimate carried across buffers.
class TrainingEnvironment {
 public:
  // Episodes come from `pool` in round-robin order when given, otherwise
  // from the simulator.
  TrainingEnvironment(const RobotModel& model, const TrainConfig& cfg, int index,
                      const std::vector<EpisodeDataset>* pool = nullptr);

  // Next buffer of L steps, regenerating the episode when fewer than L steps
  // remain.
  std::vector<BufferStep> next_buffer();
  const FilterEstimate& estimate() const { return estimate_; }
  void set_estimate(const FilterEstimate& e) { estimate_ = e; }
  // Drops the current episode; the next buffer starts a fresh one.
  void reset() { cursor_ = -1; }
  int episodes() const { return static_cast<int>(episode_index_); }

 private:
  void start_episode();

  const RobotModel* model_;
  const TrainConfig* cfg_;
  const std::vector<EpisodeDataset>* pool_;
  FeatureLayout layout_;
  int index_;
  std::uint64_t episode_index_ = 0;
  EpisodeDataset data_;
  int cursor_ = -1;
  HistoryWindow window_;
  FilterEstimate estimate_;
};

// Recorded episodes used instead of simulated ones; an empty list keeps the
// simulator for that role.
struct TrainData {
  std::vector<EpisodeDataset> train;
  std::vector<EpisodeDataset> eval;
};

struct TrainResult {
  ContactNet net;
  TrainLog log;
};

using TrainCallback = std::function<void(const TrainLogRow&, const ContactNet&)>;

int resolve_threads(int requested);

TrainResult train(const RobotModel& model, const TrainConfig& cfg,
                  const TrainCallback& on_iteration = {},
                  const TrainData* data = nullptr);

}  // namespace ccinekf
