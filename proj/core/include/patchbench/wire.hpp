// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

// JSON-over-HTTP detector protocol. Images and feature maps travel as
// base64 row-major little-endian float32 so payloads round-trip exactly.
//
//   POST /v1/detect        {"image": {...}}
//   POST /v1/features      {"image": {...}, "layer_id": "..."}
//   GET  /v1/capabilities  -> {"has_features": bool, "class_count": int}
//
// Every decode_* throws kProtocol naming the offending field.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "patchbench/detector.hpp"
#include "patchbench/image.hpp"

namespace patchbench::wire {

inline constexpr std::string_view kDetectPath = "/v1/detect";
inline constexpr std::string_view kFeaturesPath = "/v1/features";
inline constexpr std::string_view kCapabilitiesPath = "/v1/capabilities";

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
// Throws kProtocol on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

struct DetectRequest {
  Image image;
  friend bool operator==(const DetectRequest&, const DetectRequest&) = default;
};

struct FeaturesRequest {
  Image image;
  std::string layer_id;
  friend bool operator==(const FeaturesRequest&, const FeaturesRequest&) = default;
};

struct DetectResponse {
  std::vector<Detection> detections;
  friend bool operator==(const DetectResponse&, const DetectResponse&) = default;
};

// Feature data is narrowed to float32 on the wire.
struct FeaturesResponse {
  std::string layer_id;
  Tensor3<float> data;
  friend bool operator==(const FeaturesResponse&, const FeaturesResponse&) = default;
};

struct CapabilitiesResponse {
  bool has_features = false;
  int class_count = 0;
  friend bool operator==(const CapabilitiesResponse&, const CapabilitiesResponse&) = default;
};

std::string encode(const DetectRequest& message);
std::string encode(const FeaturesRequest& message);
std::string encode(const DetectResponse& message);
std::string encode(const FeaturesResponse& message);
std::string encode(const CapabilitiesResponse& message);

DetectRequest decode_detect_request(std::string_view text);
FeaturesRequest decode_features_request(std::string_view text);
DetectResponse decode_detect_response(std::string_view text);
FeaturesResponse decode_features_response(std::string_view text);
CapabilitiesResponse decode_capabilities_response(std::string_view text);

FeaturesResponse to_wire(const FeatureMaps& maps);
FeatureMaps from_wire(const FeaturesResponse& message);

}  // namespace patchbench::wire
