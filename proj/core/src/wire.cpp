// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchbench/wire.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "patchbench/error.hpp"

namespace patchbench::wire {

static_assert(std::endian::native == std::endian::little, "wire codec assumes a little-endian host");

using ordered_json = nlohmann::ordered_json;

namespace {

[[noreturn]] void protocol_error(const std::string& field, const std::string& problem) {
  throw Error(ErrorKind::kProtocol, fmt::format("field '{}': {}", field, problem));
}

ordered_json parse(std::string_view text) {
  try {
    ordered_json j = ordered_json::parse(text);
    if (!j.is_object()) protocol_error("$", "message must be a JSON object");
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    protocol_error("$", fmt::format("invalid JSON at byte {}", e.byte));
  }
}

const ordered_json& member(const ordered_json& obj, const std::string& path, const char* key) {
  const std::string field = path.empty() ? key : path + "." + key;
  if (!obj.contains(key)) protocol_error(field, "missing");
  return obj[key];
}

std::int64_t integer(const ordered_json& obj, const std::string& path, const char* key) {
  const auto& v = member(obj, path, key);
  if (!v.is_number_integer()) protocol_error(path.empty() ? key : path + "." + key, "expected an integer");
  return v.get<std::int64_t>();
}

std::string text_field(const ordered_json& obj, const std::string& path, const char* key) {
  const auto& v = member(obj, path, key);
  if (!v.is_string()) protocol_error(path.empty() ? key : path + "." + key, "expected a string");
  return v.get<std::string>();
}

std::vector<std::uint8_t> float_bytes(const std::vector<float>& values) {
  std::vector<std::uint8_t> bytes(values.size() * sizeof(float));
  if (!bytes.empty()) std::memcpy(bytes.data(), values.data(), bytes.size());
  return bytes;
}

std::vector<float> floats_from(const std::string& field, const std::string& b64, std::size_t expected) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = base64_decode(b64);
  } catch (const Error&) {
    protocol_error(field, "invalid base64");
  }
  if (bytes.size() != expected * sizeof(float)) {
    protocol_error(field, fmt::format("expected {} float32 values, got {} bytes", expected, bytes.size()));
  }
  std::vector<float> values(expected);
  if (expected) std::memcpy(values.data(), bytes.data(), bytes.size());
  return values;
}

ordered_json image_json(const Image& image) {
  return {{"h", image.height()},
          {"w", image.width()},
          {"c", kChannels},
          {"data_b64", base64_encode(float_bytes(image.values()))}};
}

Image image_from(const ordered_json& root) {
  const auto& img = member(root, "", "image");
  if (!img.is_object()) protocol_error("image", "expected an object");
  const auto h = integer(img, "image", "h");
  const auto w = integer(img, "image", "w");
  const auto c = integer(img, "image", "c");
  if (h < 1 || h > 16384) protocol_error("image.h", "out of range");
  if (w < 1 || w > 16384) protocol_error("image.w", "out of range");
  if (c != kChannels) protocol_error("image.c", "must be 3");
  auto values = floats_from("image.data_b64", text_field(img, "image", "data_b64"),
                            static_cast<std::size_t>(h * w * c));
  try {
    return Image::from_values(static_cast<int>(h), static_cast<int>(w), std::move(values));
  } catch (const Error& e) {
    protocol_error("image.data_b64", e.what());
  }
}

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(ErrorKind::kProtocol, "base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out(text.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorKind::kProtocol, "invalid base64");
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string encode(const DetectRequest& message) {
  return ordered_json{{"image", image_json(message.image)}}.dump();
}

std::string encode(const FeaturesRequest& message) {
  return ordered_json{{"image", image_json(message.image)}, {"layer_id", message.layer_id}}.dump();
}

std::string encode(const DetectResponse& message) {
  ordered_json dets = ordered_json::array();
  for (const auto& d : message.detections) {
    dets.push_back({{"class_id", d.class_id},
                    {"confidence", d.confidence},
                    {"bbox", {d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h}}});
  }
  return ordered_json{{"detections", dets}}.dump();
}

std::string encode(const FeaturesResponse& message) {
  const auto& t = message.data;
  return ordered_json{{"layer_id", message.layer_id},
                      {"shape", {t.height(), t.width(), t.channels()}},
                      {"data_b64", base64_encode(float_bytes(t.values()))}}
      .dump();
}

std::string encode(const CapabilitiesResponse& message) {
  return ordered_json{{"has_features", message.has_features}, {"class_count", message.class_count}}.dump();
}

DetectRequest decode_detect_request(std::string_view text) { return {image_from(parse(text))}; }

FeaturesRequest decode_features_request(std::string_view text) {
  const auto j = parse(text);
  return {image_from(j), text_field(j, "", "layer_id")};
}

DetectResponse decode_detect_response(std::string_view text) {
  const auto j = parse(text);
  const auto& dets = member(j, "", "detections");
  if (!dets.is_array()) protocol_error("detections", "expected an array");
  DetectResponse out;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const std::string path = fmt::format("detections[{}]", i);
    const auto& d = dets[i];
    if (!d.is_object()) protocol_error(path, "expected an object");
    Detection det;
    det.class_id = static_cast<int>(integer(d, path, "class_id"));
    const auto& conf = member(d, path, "confidence");
    if (!conf.is_number()) protocol_error(path + ".confidence", "expected a number");
    det.confidence = conf.get<double>();
    if (!(det.confidence >= 0.0 && det.confidence <= 1.0)) protocol_error(path + ".confidence", "outside [0, 1]");
    const auto& box = member(d, path, "bbox");
    if (!box.is_array() || box.size() != 4) protocol_error(path + ".bbox", "expected [x, y, w, h]");
    for (std::size_t k = 0; k < 4; ++k) {
      if (!box[k].is_number()) protocol_error(fmt::format("{}.bbox[{}]", path, k), "expected a number");
    }
    det.bbox = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()};
    out.detections.push_back(det);
  }
  return out;
}

FeaturesResponse decode_features_response(std::string_view text) {
  const auto j = parse(text);
  FeaturesResponse out;
  out.layer_id = text_field(j, "", "layer_id");
  const auto& shape = member(j, "", "shape");
  if (!shape.is_array() || shape.size() != 3) protocol_error("shape", "expected [hf, wf, cf]");
  int dims[3];
  for (std::size_t k = 0; k < 3; ++k) {
    if (!shape[k].is_number_integer() || shape[k].get<std::int64_t>() < 1 ||
        shape[k].get<std::int64_t>() > 65536) {
      protocol_error(fmt::format("shape[{}]", k), "expected a positive integer");
    }
    dims[k] = shape[k].get<int>();
  }
  out.data = Tensor3<float>(dims[0], dims[1], dims[2]);
  out.data.values() = floats_from("data_b64", text_field(j, "", "data_b64"), out.data.size());
  for (float v : out.data.values()) {
    if (!std::isfinite(v)) protocol_error("data_b64", "non-finite feature value");
  }
  return out;
}

CapabilitiesResponse decode_capabilities_response(std::string_view text) {
  const auto j = parse(text);
  CapabilitiesResponse out;
  const auto& f = member(j, "", "has_features");
  if (!f.is_boolean()) protocol_error("has_features", "expected a boolean");
  out.has_features = f.get<bool>();
  const auto n = integer(j, "", "class_count");
  if (n < 1) protocol_error("class_count", "must be positive");
  out.class_count = static_cast<int>(n);
  return out;
}

FeaturesResponse to_wire(const FeatureMaps& maps) {
  FeaturesResponse out;
  out.layer_id = maps.layer_id;
  out.data = Tensor3<float>(maps.data.height(), maps.data.width(), maps.data.channels());
  for (std::size_t i = 0; i < maps.data.size(); ++i) {
    out.data.values()[i] = static_cast<float>(maps.data.values()[i]);
  }
  return out;
}

FeatureMaps from_wire(const FeaturesResponse& message) {
  FeatureMaps out;
  out.layer_id = message.layer_id;
  out.data = Tensor3<double>(message.data.height(), message.data.width(), message.data.channels());
  for (std::size_t i = 0; i < message.data.size(); ++i) out.data.values()[i] = message.data.values()[i];
  return out;
}

}  // namespace patchbench::wire
