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

#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace ccinekf {

// Base class for every error raised by the library. The CLI maps these to
// exit code 2; usage problems never reach this hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigurationError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class CandidateNotFoundError : public Error {
 public:
  explicit CandidateNotFoundError(int index)
      : Error("contact candidate " + std::to_string(index) + " not found"),
        index_(index) {}
  int index() const { return index_; }

 private:
  int index_;
};

// Target outside the leg workspace. `clamped()` is the nearest reachable
// point on the ray from the hip towards the requested target.
class ReachabilityError : public Error {
 public:
  ReachabilityError(const std::string& what, const Eigen::Vector3d& clamped)
      : Error(what), clamped_(clamped) {}
  const Eigen::Vector3d& clamped() const { return clamped_; }

 private:
  Eigen::Vector3d clamped_;
};

class InvalidCovarianceError : public Error {
 public:
  using Error::Error;
};

class SingularUpdateError : public Error {
 public:
  using Error::Error;
};

class DivergedRolloutError : public Error {
 public:
  DivergedRolloutError(const std::string& what, int step)
      : Error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

class GradientOverflowError : public Error {
 public:
  GradientOverflowError(const std::string& what, std::size_t node)
      : Error(what), node_(node) {}
  std::size_t node() const { return node_; }

 private:
  std::size_t node_;
};

class GenerationError : public Error {
 public:
  GenerationError(const std::string& what, int step)
      : Error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

}  // namespace ccinekf
