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

#include "kws/error.h"

namespace kws {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kFormat: return "format error";
    case ErrorCode::kUnsupportedFormat: return "unsupported format";
    case ErrorCode::kRateMismatch: return "rate mismatch";
    case ErrorCode::kShape: return "shape error";
    case ErrorCode::kParameter: return "parameter error";
    case ErrorCode::kDegenerate: return "degenerate input";
    case ErrorCode::kInfeasiblePlan: return "infeasible plan";
    case ErrorCode::kCorruption: return "corruption error";
    case ErrorCode::kValidation: return "validation error";
    case ErrorCode::kCalibration: return "calibration error";
    case ErrorCode::kEvaluation: return "evaluation error";
    case ErrorCode::kIncompleteMeasurement: return "incomplete measurement";
    case ErrorCode::kArgument: return "argument error";
  }
  return "error";
}

}  // namespace kws
