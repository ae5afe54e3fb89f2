// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace patchbench {

enum class ErrorKind {
  kBounds,
  kShape,
  kValue,
  kCapability,
  kLookup,
  kTransport,
  kProtocol,
  kNumeric,
  kPlacement,
  kSize,
  kDivergence,
  kData,
  kInpaint,
  kStep,
  kAggregation,
  kDivision,
  kReport,
  kFormat,
  kIntegrity,
  kIo,
  kConfig,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Transport failures against a remote detector may succeed on retry.
  bool retriable() const noexcept { return kind_ == ErrorKind::kTransport; }

 private:
  ErrorKind kind_;
};

}  // namespace patchbench
