// Copyright 2026 The Entityseg Authors.
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

#include <stdexcept>
#include <string>
#include <string_view>

namespace entityseg {

// Error categories shared by every module. The CLI maps them onto exit
// codes: validation-style failures exit 1, I/O and format failures exit 2.
enum class ErrorKind {
  kFormat,
  kShape,
  kEmptyMask,
  kIngestion,
  kIntegrity,
  kDomain,
  kValidation,
  kConstraint,
  kConfig,
  kAssignment,
  kUsage,
  kIo,
};

inline std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kEmptyMask: return "empty-mask error";
    case ErrorKind::kIngestion: return "ingestion error";
    case ErrorKind::kIntegrity: return "integrity error";
    case ErrorKind::kDomain: return "domain error";
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kConstraint: return "constraint violation";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kAssignment: return "assignment error";
    case ErrorKind::kUsage: return "usage error";
    case ErrorKind::kIo: return "i/o error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define ENTITYSEG_DEFINE_ERROR(Name, Kind)                     \
  class Name : public Error {                                  \
   public:                                                     \
    explicit Name(const std::string& message)                  \
        : Error(ErrorKind::Kind, message) {}                   \
  }

ENTITYSEG_DEFINE_ERROR(FormatError, kFormat);
ENTITYSEG_DEFINE_ERROR(ShapeError, kShape);
ENTITYSEG_DEFINE_ERROR(EmptyMaskError, kEmptyMask);
ENTITYSEG_DEFINE_ERROR(IngestionError, kIngestion);
ENTITYSEG_DEFINE_ERROR(IntegrityError, kIntegrity);
ENTITYSEG_DEFINE_ERROR(DomainError, kDomain);
ENTITYSEG_DEFINE_ERROR(ValidationError, kValidation);
ENTITYSEG_DEFINE_ERROR(ConstraintViolation, kConstraint);
ENTITYSEG_DEFINE_ERROR(ConfigError, kConfig);
ENTITYSEG_DEFINE_ERROR(AssignmentError, kAssignment);
ENTITYSEG_DEFINE_ERROR(UsageError, kUsage);
ENTITYSEG_DEFINE_ERROR(IoError, kIo);

#undef ENTITYSEG_DEFINE_ERROR

}  // namespace entityseg
