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

// Umbrella header.

#ifndef CDANNEAL_CDANNEAL_HPP
#define CDANNEAL_CDANNEAL_HPP

#include "cdanneal/diagnostics.hpp"
#include "cdanneal/errors.hpp"
#include "cdanneal/harness.hpp"
#include "cdanneal/kernel.hpp"
#include "cdanneal/learner.hpp"
#include "cdanneal/model.hpp"
#include "cdanneal/oracle.hpp"
#include "cdanneal/rng.hpp"

#endif  // CDANNEAL_CDANNEAL_HPP
