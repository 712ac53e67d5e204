/*
 * Copyright 2026 The nvpt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace nvpt {

// Error taxonomy used across the library. Argument and domain errors reuse
// the std exceptions (std::invalid_argument, std::domain_error); the classes
// below cover lifecycle and I/O failures. The CLI maps them to exit codes:
// argument/domain -> 2, state/capacity -> 3, io -> 4.

class StateError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class CapacityError : public StateError {
public:
  using StateError::StateError;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace nvpt
