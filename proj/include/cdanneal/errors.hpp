// Copyright 2026 The cdanneal Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CDANNEAL_ERRORS_HPP
#define CDANNEAL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace cdanneal {

/// Argument shapes disagree (parameter length, matrix sizes).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A parameter vector lies outside the compact region.
class OutsideRegionError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// The likelihood has no maximizer (empirical moments on the boundary of
/// the mean-parameter space) or Newton failed to converge.
class MleNotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A check was requested whose mathematical hypotheses do not hold for the
/// given inputs (data constraints failed, a_m <= 0, ...).
class HypothesesUnmet : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed run configuration or model document.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace cdanneal

#endif  // CDANNEAL_ERRORS_HPP
