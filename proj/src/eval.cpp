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

#include "ccinekf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Cholesky>

#include "ccinekf/errors.hpp"
#include "ccinekf/liegroup.hpp"

namespace ccinekf {

using nlohmann::json;

namespace {

template <typename T>
void require_length(const std::vector<T>& v, std::size_t n, const char* what) {
  if (v.size() != n) {
    throw InputError(std::string("trajectory field '") + what + "' has length " +
                     std::to_string(v.size()) + ", expected " + std::to_string(n));
  }
}

int block_offset(NeesBlock b) {
  switch (b) {
    case NeesBlock::kCore:
    case NeesBlock::kOrientation:
      return 0;
    case NeesBlock::kVelocity:
      return 3;
    case NeesBlock::kPosition:
      return 6;
  }
  return 0;
}

std::string join(const double* x, int n) {
  std::string s;
  for (int k = 0; k < n; ++k) {
    if (k) s += ",";
    s += format_double(x[k]);
  }
  return s;
}

}  // namespace

void TrajectoryPair::validate() const {
  const std::size_t n = t.size();
  require_length(R_est, n, "R_est");
  require_length(R_gt, n, "R_gt");
  require_length(v_est, n, "v_est");
  require_length(v_gt, n, "v_gt");
  require_length(p_est, n, "p_est");
  require_length(p_gt, n, "p_gt");
  if (!P_core.empty()) require_length(P_core, n, "P_core");
  if (!sigma_trace.empty()) require_length(sigma_trace, n, "sigma_trace");
  for (std::size_t k = 1; k < n; ++k) {
    if (!(t[k] > t[k - 1])) throw InputError("trajectory timestamps are not increasing");
  }
}

json ErrorStats::to_json(const std::string& units) const {
  return json{{"rmse", rmse}, {"mae", mae}, {"med", med}, {"std", std}, {"units", units}};
}

ErrorStats ErrorStats::from_json(const json& j) {
  ErrorStats s;
  s.rmse = j.at("rmse").get<double>();
  s.mae = j.at("mae").get<double>();
  s.med = j.at("med").get<double>();
  s.std = j.at("std").get<double>();
  return s;
}

ErrorStats error_stats(std::span<const double> errors) {
  ErrorStats s;
  if (errors.empty()) return s;
  const double n = static_cast<double>(errors.size());
  double sum = 0.0, sum_abs = 0.0, sum_sq = 0.0;
  for (double e : errors) {
    sum += e;
    sum_abs += std::abs(e);
    sum_sq += e * e;
  }
  const double mean = sum / n;
  s.rmse = std::sqrt(sum_sq / n);
  s.mae = sum_abs / n;
  double var = 0.0;
  for (double e : errors) var += (e - mean) * (e - mean);
  s.std = std::sqrt(var / n);
  std::vector<double> a(errors.size());
  std::transform(errors.begin(), errors.end(), a.begin(),
                 [](double e) { return std::abs(e); });
  std::sort(a.begin(), a.end());
  const std::size_t m = a.size() / 2;
  s.med = a.size() % 2 ? a[m] : 0.5 * (a[m - 1] + a[m]);
  return s;
}

json AteReport::to_json() const {
  return json{{"velocity", velocity.to_json("m/s")},
              {"position", position.to_json("m")},
              {"orientation", orientation.to_json("rad")},
              {"steps", steps}};
}

AteReport AteReport::from_json(const json& j) {
  AteReport r;
  try {
    r.velocity = ErrorStats::from_json(j.at("velocity"));
    r.position = ErrorStats::from_json(j.at("position"));
    r.orientation = ErrorStats::from_json(j.at("orientation"));
    r.steps = j.value("steps", std::size_t{0});
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed ATE report: ") + e.what());
  }
  return r;
}

AteErrors ate_errors(const TrajectoryPair& pair) {
  pair.validate();
  AteErrors out;
  const std::size_t n = pair.size();
  if (n == 0) return out;
  // Yaw + translation taking the ground truth onto the estimate at t = 0. The
  // yaw maximizes tr(R_est0^T Rz R_gt0), which commutes with rotations about z.
  const Eigen::Matrix3d M = pair.R_gt[0] * pair.R_est[0].transpose();
  const Eigen::Matrix3d Rz = lie::rot_z(std::atan2(M(0, 1) - M(1, 0), M(0, 0) + M(1, 1)));
  for (std::size_t k = 0; k < n; ++k) {
    const Eigen::Vector3d ev =
        pair.R_gt[k].transpose() * pair.v_gt[k] - pair.R_est[k].transpose() * pair.v_est[k];
    const Eigen::Vector3d p = Rz * (pair.p_gt[k] - pair.p_gt[0]) + pair.p_est[0];
    const Eigen::Matrix3d R = Rz * pair.R_gt[k];
    out.velocity.push_back(ev.norm());
    out.position.push_back((p - pair.p_est[k]).norm());
    out.orientation.push_back(lie::so3_log(pair.R_est[k].transpose() * R).norm());
  }
  return out;
}

AteReport ate(const TrajectoryPair& pair) {
  const AteErrors e = ate_errors(pair);
  AteReport r;
  r.velocity = error_stats(e.velocity);
  r.position = error_stats(e.position);
  r.orientation = error_stats(e.orientation);
  r.steps = pair.size();
  return r;
}

double regularized_gamma_p(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) {
    throw InputError("incomplete gamma needs a > 0 and x >= 0");
  }
  if (x == 0.0) return 0.0;
  const double log_prefix = -x + a * std::log(x) - std::lgamma(a);
  constexpr double kEps = 1e-16;
  if (x < a + 1.0) {
    double ap = a;
    double del = 1.0 / a;
    double sum = del;
    for (int i = 0; i < 10000; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * kEps) break;
    }
    return std::min(1.0, sum * std::exp(log_prefix));
  }
  // Continued fraction for the upper tail (modified Lentz).
  constexpr double kTiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return std::max(0.0, 1.0 - std::exp(log_prefix) * h);
}

double chi2_cdf(double x, int dof) {
  if (dof < 1) throw InputError("chi-squared needs at least one degree of freedom");
  if (x <= 0.0) return 0.0;
  return regularized_gamma_p(0.5 * dof, 0.5 * x);
}

double chi2_quantile(double p, int dof) {
  if (!(p > 0.0 && p < 1.0)) throw InputError("quantile level must be in (0, 1)");
  double lo = 0.0;
  double hi = std::max(1.0, 2.0 * dof);
  while (chi2_cdf(hi, dof) < p) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (chi2_cdf(mid, dof) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::pair<double, double> chi2_bounds(int dof, double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw InputError("confidence must be in (0, 1)");
  }
  const double tail = 0.5 * (1.0 - confidence);
  return {chi2_quantile(tail, dof), chi2_quantile(1.0 - tail, dof)};
}

NeesBlock parse_nees_block(const std::string& name) {
  if (name == "core") return NeesBlock::kCore;
  if (name == "velocity") return NeesBlock::kVelocity;
  if (name == "position") return NeesBlock::kPosition;
  if (name == "orientation") return NeesBlock::kOrientation;
  throw InputError("unknown NEES block '" + name + "'");
}

std::string to_string(NeesBlock block) {
  switch (block) {
    case NeesBlock::kCore:
      return "core";
    case NeesBlock::kVelocity:
      return "velocity";
    case NeesBlock::kPosition:
      return "position";
    case NeesBlock::kOrientation:
      return "orientation";
  }
  return "core";
}

int nees_dim(NeesBlock block) { return block == NeesBlock::kCore ? 9 : 3; }

Vector9d core_error(const Eigen::Matrix3d& R_est, const Eigen::Vector3d& v_est,
                    const Eigen::Vector3d& p_est, const Eigen::Matrix3d& R_gt,
                    const Eigen::Vector3d& v_gt, const Eigen::Vector3d& p_gt) {
  FilterState est = FilterState::Zero(0);
  est.R = R_est;
  est.v = v_est;
  est.p = p_est;
  FilterState truth = FilterState::Zero(0);
  truth.R = R_gt;
  truth.v = v_gt;
  truth.p = p_gt;
  const Eigen::VectorXd xi = lie::right_invariant_error(est, truth);
  return xi.head<9>();
}

json NeesResult::summary() const {
  return json{{"block", to_string(block)},
              {"dim", dim},
              {"lower", lower},
              {"upper", upper},
              {"in_bounds_fraction", in_bounds},
              {"evaluated", evaluated},
              {"skipped", skipped}};
}

NeesResult nees(std::span<const Vector9d> errors, std::span<const Matrix9d> P,
                NeesBlock block, double confidence) {
  if (errors.size() != P.size()) {
    throw InputError("NEES needs one covariance per error");
  }
  NeesResult r;
  r.block = block;
  r.dim = nees_dim(block);
  std::tie(r.lower, r.upper) = chi2_bounds(r.dim, confidence);
  const int off = block_offset(block);
  int inside = 0;
  for (std::size_t k = 0; k < errors.size(); ++k) {
    const Eigen::VectorXd e = errors[k].segment(off, r.dim);
    const Eigen::MatrixXd S = P[k].block(off, off, r.dim, r.dim);
    const Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success || !S.allFinite()) {
      r.eps.push_back(std::numeric_limits<double>::quiet_NaN());
      ++r.skipped;
      continue;
    }
    const double eps = e.dot(llt.solve(e));
    r.eps.push_back(eps);
    ++r.evaluated;
    if (eps >= r.lower && eps <= r.upper) ++inside;
  }
  r.in_bounds = r.evaluated > 0 ? static_cast<double>(inside) / r.evaluated : 0.0;
  return r;
}

NeesResult nees(const TrajectoryPair& pair, NeesBlock block, double confidence) {
  pair.validate();
  if (pair.P_core.size() != pair.size()) {
    throw InputError("NEES needs the filter covariance for every step");
  }
  std::vector<Vector9d> errors;
  std::vector<Matrix9d> P;
  for (std::size_t k = 1; k < pair.size(); ++k) {
    errors.push_back(core_error(pair.R_est[k], pair.v_est[k], pair.p_est[k],
                                pair.R_gt[k], pair.v_gt[k], pair.p_gt[k]));
    P.push_back(pair.P_core[k]);
  }
  return nees(errors, P, block, confidence);
}

json BaselineOptions::to_json() const {
  return json{{"sigma_contact", sigma_contact}, {"sigma_free", sigma_free},
              {"slip_factor", slip_factor},     {"slip_speed", slip_speed},
              {"contact_speed", contact_speed}, {"contact_height", contact_height}};
}

ContactSource parse_contact_source(const std::string& name) {
  if (name == "heuristic") return ContactSource::kHeuristic;
  if (name == "gt-contacts") return ContactSource::kGroundTruth;
  if (name == "gt-slip") return ContactSource::kGroundTruthSlip;
  if (name == "free") return ContactSource::kFree;
  throw InputError("unknown baseline '" + name + "'");
}

std::string to_string(ContactSource source) {
  switch (source) {
    case ContactSource::kHeuristic:
      return "heuristic";
    case ContactSource::kGroundTruth:
      return "gt-contacts";
    case ContactSource::kGroundTruthSlip:
      return "gt-slip";
    case ContactSource::kFree:
      return "free";
  }
  return "free";
}

TrajectoryPair run_filter(const EpisodeDataset& data, const RobotModel& model,
                          const NoiseParams& np, const SigmaSource& sigma,
                          const InitialCovariance& p0) {
  if (data.steps.empty()) throw InputError("dataset has no steps");
  const int n = model.num_candidates();
  if (data.num_candidates != n || data.num_joints != model.num_joints()) {
    throw InputError("dataset and model disagree on candidates or joints");
  }
  TrajectoryPair out;
  auto record = [&](int k, const FilterEstimate& e,
                    const std::vector<Eigen::Matrix3d>& sig) {
    const DatasetStep& s = data.steps[k];
    out.t.push_back(s.t);
    out.R_est.push_back(e.x.R);
    out.v_est.push_back(e.x.v);
    out.p_est.push_back(e.x.p);
    out.R_gt.push_back(s.R);
    out.v_gt.push_back(s.v);
    out.p_gt.push_back(s.p);
    out.P_core.push_back(e.P.topLeftCorner<9, 9>());
    Eigen::VectorXd tr = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < sig.size(); ++i) tr[i] = std::sqrt(sig[i].trace());
    out.sigma_trace.push_back(tr);
  };
  FilterEstimate e{data.truth(0), p0.matrix(n)};
  record(0, e, {});
  for (int k = 1; k < static_cast<int>(data.steps.size()); ++k) {
    const std::vector<Eigen::Matrix3d> sig = sigma(k, e);
    e = filter_step(e.x, e.P, data.imu(k), data.steps[k].q, sig, model, np);
    record(k, e, sig);
  }
  return out;
}

TrajectoryPair heuristic_contact_filter(const EpisodeDataset& data,
                                        const RobotModel& model, const NoiseParams& np,
                                        ContactSource source,
                                        const BaselineOptions& opt) {
  const int n = model.num_candidates();
  const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
  SigmaSource sigma = [&](int k, const FilterEstimate& cur) {
    const DatasetStep& s = data.steps[k];
    std::vector<Eigen::Matrix3d> out(n, opt.sigma_free * I);
    for (int i = 0; i < n; ++i) {
      bool contact = false;
      double scale = 1.0;
      switch (source) {
        case ContactSource::kHeuristic: {
          // Estimated candidate velocity and height from the current state.
          const Eigen::Vector3d w = s.w - cur.x.bg;
          const Eigen::Vector3d bp = forward_kinematics(model, s.q, i);
          const Eigen::Vector3d bv = point_jacobian(model, s.q, i) * s.qd;
          const Eigen::Vector3d vc = cur.x.v + cur.x.R * (w.cross(bp) + bv);
          const double height = cur.x.p.z() + (cur.x.R * bp).z();
          contact = vc.head<2>().norm() <= opt.contact_speed && height <= opt.contact_height;
          break;
        }
        case ContactSource::kGroundTruth:
          contact = s.contact[i];
          break;
        case ContactSource::kGroundTruthSlip:
          contact = s.contact[i];
          if (s.slip.col(i).norm() > opt.slip_speed) scale = opt.slip_factor;
          break;
        case ContactSource::kFree:
          break;
      }
      if (contact) out[i] = (opt.sigma_contact * scale) * I;
    }
    return out;
  };
  return run_filter(data, model, np, sigma);
}

TrajectoryPair learned_contact_filter(const EpisodeDataset& data, const RobotModel& model,
                                      const NoiseParams& np, const ContactNet& net) {
  const FeatureLayout layout = FeatureLayout::from_model(model, net.arch().history);
  if (layout.input_dim() != net.arch().input_dim ||
      layout.num_candidates() != net.arch().num_candidates) {
    throw InputError("network does not match the model's feature layout");
  }
  HistoryWindow window(layout.history);
  window.push(data.frame(model, 0));
  SigmaSource sigma = [&](int k, const FilterEstimate&) {
    window.push(data.frame(model, k));
    std::vector<Eigen::Matrix3d> out = net.factors(history_features(layout, window));
    for (auto& S : out) S = chol_to_cov(S);
    return out;
  };
  return run_filter(data, model, np, sigma);
}

std::string steps_csv(const TrajectoryPair& pair, const AteErrors& errors,
                      const NeesResult* core_nees) {
  std::ostringstream out;
  const int n = pair.sigma_trace.empty() ? 0 : static_cast<int>(pair.sigma_trace[0].size());
  out << "t,err_velocity,err_position,err_orientation,nees_core";
  for (int i = 0; i < n; ++i) out << ",sigma_c" << (i + 1);
  out << "\n";
  for (std::size_t k = 0; k < pair.size(); ++k) {
    out << format_double(pair.t[k]) << ',' << format_double(errors.velocity[k]) << ','
        << format_double(errors.position[k]) << ','
        << format_double(errors.orientation[k]) << ',';
    // The NEES series starts at step 1.
    if (core_nees && k >= 1 && k - 1 < core_nees->eps.size()) {
      out << format_double(core_nees->eps[k - 1]);
    }
    for (int i = 0; i < n; ++i) out << ',' << format_double(pair.sigma_trace[k][i]);
    out << "\n";
  }
  return out.str();
}

std::string core_errors_jsonl(const TrajectoryPair& pair) {
  pair.validate();
  if (pair.P_core.size() != pair.size()) {
    throw InputError("trajectory has no covariance to export");
  }
  std::string out;
  for (std::size_t k = 1; k < pair.size(); ++k) {
    const Vector9d e = core_error(pair.R_est[k], pair.v_est[k], pair.p_est[k],
                                  pair.R_gt[k], pair.v_gt[k], pair.p_gt[k]);
    const Eigen::Matrix<double, 9, 9, Eigen::RowMajor> P = pair.P_core[k];
    out += "{\"t\":" + format_double(pair.t[k]) + ",\"xi\":[" + join(e.data(), 9) +
           "],\"P\":[" + join(P.data(), 81) + "]}\n";
  }
  return out;
}

void parse_core_errors_jsonl(const std::string& text, std::vector<Vector9d>& errors,
                             std::vector<Matrix9d>& P) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const json j = json::parse(line);
      const auto& xi = j.at("xi");
      const auto& pm = j.at("P");
      if (xi.size() != 9 || pm.size() != 81) {
        throw InputError("line " + std::to_string(lineno) +
                         ": expected 9 errors and 81 covariance entries");
      }
      Vector9d e;
      Matrix9d M;
      for (int r = 0; r < 9; ++r) {
        e[r] = xi[r].get<double>();
        for (int c = 0; c < 9; ++c) M(r, c) = pm[9 * r + c].get<double>();
      }
      errors.push_back(e);
      P.push_back(M);
    }
  } catch (const json::exception& e) {
    throw InputError("malformed error file at line " + std::to_string(lineno) + ": " +
                     e.what());
  }
}

std::string nees_csv(const NeesResult& r) {
  std::ostringstream out;
  out << "step,nees,in_bounds\n";
  for (std::size_t k = 0; k < r.eps.size(); ++k) {
    const double e = r.eps[k];
    out << (k + 1) << ',' << (std::isnan(e) ? std::string() : format_double(e)) << ','
        << ((e >= r.lower && e <= r.upper) ? 1 : 0) << "\n";
  }
  return out.str();
}

std::string compare_table(const std::vector<std::pair<std::string, AteReport>>& runs) {
  std::ostringstream out;
  const struct {
    const char* title;
    ErrorStats AteReport::*field;
  } quantities[] = {{"Velocity in body frame (m/s)", &AteReport::velocity},
                    {"Position (m)", &AteReport::position},
                    {"Orientation (rad)", &AteReport::orientation}};
  bool first = true;
  for (const auto& q : quantities) {
    if (!first) out << "\n";
    first = false;
    out << "### " << q.title << "\n\n";
    out << "| Method | RMSE | MAE | MED | STD |\n";
    out << "|---|---|---|---|---|\n";
    for (const auto& [name, report] : runs) {
      const ErrorStats& s = report.*(q.field);
      out << "| " << name << " | " << format_double(s.rmse) << " | "
          << format_double(s.mae) << " | " << format_double(s.med) << " | "
          << format_double(s.std) << " |\n";
    }
  }
  return out.str();
}

}  // namespace ccinekf
