// Copyright 2026 PCST Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PCST_ERROR_HPP
#define PCST_ERROR_HPP

#include <stdexcept>
#include <string>

namespace pcst {

// Base for all library errors. CLI maps subclasses onto stable exit codes:
// usage/configuration/data problems -> 2, numeric failures -> 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape disagreement (names both shapes in the message).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-range id for a lookup (reports id and table size).
class IndexError : public Error {
 public:
  using Error::Error;
};

// Bad API usage (non-scalar backward root, eps = 0, empty mask, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Bad run configuration (invalid preset value, missing corpus, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Problem with an example or corpus contents.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf or other numeric breakdown.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed serialized input (reports the offending line).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Unknown schema or checkpoint format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

// Internal consistency violation (tensor/grad mismatch, corrupt payload).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Target sequence cannot be aligned to the given number of frames.
class InfeasibleAlignmentError : public Error {
 public:
  using Error::Error;
};

}  // namespace pcst

#endif  // PCST_ERROR_HPP
