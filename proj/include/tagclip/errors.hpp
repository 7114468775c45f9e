/*
 * Copyright 2026 The tagclip-cpp Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef TAGCLIP_ERRORS_HPP_
#define TAGCLIP_ERRORS_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace tagclip {

enum class ErrorKind {
  kShape,
  kParse,
  kSchema,
  kIntegrity,
  kLookup,
  kConfig,
  kInput,
  kData,
  kIo,
  kPrecondition,
  kUsage,
};

inline std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape_error";
    case ErrorKind::kParse: return "parse_error";
    case ErrorKind::kSchema: return "schema_error";
    case ErrorKind::kIntegrity: return "integrity_error";
    case ErrorKind::kLookup: return "lookup_error";
    case ErrorKind::kConfig: return "config_error";
    case ErrorKind::kInput: return "input_error";
    case ErrorKind::kData: return "data_error";
    case ErrorKind::kIo: return "io_error";
    case ErrorKind::kPrecondition: return "precondition_error";
    case ErrorKind::kUsage: return "usage_error";
  }
  return "internal_error";
}

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it to an exit code without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace tagclip

#endif  // TAGCLIP_ERRORS_HPP_
