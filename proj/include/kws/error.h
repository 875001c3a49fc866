// Copyright 2026 The TKWS Authors. All Rights Reserved.
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

#ifndef KWS_ERROR_H_
#define KWS_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace kws {

enum class ErrorCode {
  kIo,
  kFormat,
  kUnsupportedFormat,
  kRateMismatch,
  kShape,
  kParameter,
  kDegenerate,
  kInfeasiblePlan,
  kCorruption,
  kValidation,
  kCalibration,
  kEvaluation,
  kIncompleteMeasurement,
  kArgument,
};

std::string_view error_code_name(ErrorCode code);

// All library failures are reported through this exception; callers switch on
// code() rather than on the message text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace kws

#endif  // KWS_ERROR_H_
