// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchbench/remote.hpp"

#include <chrono>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "patchbench/error.hpp"
#include "patchbench/wire.hpp"

namespace patchbench {

namespace {

std::string error_body(const std::string& message) {
  return nlohmann::json{{"error", message}}.dump();
}

httplib::Client make_client(const std::string& base_url, double timeout_seconds) {
  httplib::Client client(base_url);
  if (!client.is_valid()) throw Error(ErrorKind::kTransport, "invalid detector URL '" + base_url + "'");
  const auto timeout = std::chrono::duration<double>(timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  return client;
}

// Maps an HTTP result to a body or a typed error. 5xx is retriable.
std::string check_result(const httplib::Result& result, const std::string& url, std::string_view path) {
  if (!result) {
    throw Error(ErrorKind::kTransport,
                fmt::format("{}{}: {}", url, path, httplib::to_string(result.error())));
  }
  if (result->status >= 500 && result->status != 501) {
    throw Error(ErrorKind::kTransport, fmt::format("{}{}: HTTP {}", url, path, result->status));
  }
  if (result->status == 501) {
    throw Error(ErrorKind::kCapability, fmt::format("{}{}: {}", url, path, result->body));
  }
  if (result->status == 404 && path == wire::kFeaturesPath) {
    throw Error(ErrorKind::kLookup, fmt::format("{}{}: {}", url, path, result->body));
  }
  if (result->status != 200) {
    throw Error(ErrorKind::kProtocol, fmt::format("{}{}: HTTP {}: {}", url, path, result->status, result->body));
  }
  return result->body;
}

}  // namespace

RemoteDetector::RemoteDetector(std::string base_url, RemoteOptions options)
    : base_url_(std::move(base_url)), options_(std::move(options)) {
  const auto caps = wire::decode_capabilities_response(get(wire::kCapabilitiesPath));
  capabilities_ = {false, caps.has_features, caps.class_count};
}

std::string RemoteDetector::get(std::string_view path) const {
  for (int attempt = 0;; ++attempt) {
    try {
      auto client = make_client(base_url_, options_.timeout_seconds);
      return check_result(client.Get(std::string(path)), base_url_, path);
    } catch (const Error& e) {
      if (!e.retriable() || attempt >= options_.retries) throw;
    }
  }
}

std::string RemoteDetector::post(std::string_view path, const std::string& body) const {
  for (int attempt = 0;; ++attempt) {
    try {
      auto client = make_client(base_url_, options_.timeout_seconds);
      return check_result(client.Post(std::string(path), body, "application/json"), base_url_, path);
    } catch (const Error& e) {
      if (!e.retriable() || attempt >= options_.retries) throw;
    }
  }
}

std::vector<Detection> RemoteDetector::detect(const Image& image) const {
  return wire::decode_detect_response(post(wire::kDetectPath, wire::encode(wire::DetectRequest{image})))
      .detections;
}

FeatureMaps RemoteDetector::feature_maps(const Image& image, std::string_view layer_id) const {
  if (!capabilities_.has_features) {
    throw Error(ErrorKind::kCapability, base_url_ + " does not serve feature maps");
  }
  const auto body = wire::encode(wire::FeaturesRequest{image, std::string(layer_id)});
  auto response = wire::decode_features_response(post(wire::kFeaturesPath, body));
  if (response.layer_id != layer_id) {
    throw Error(ErrorKind::kProtocol,
                fmt::format("field 'layer_id': requested '{}', got '{}'", layer_id, response.layer_id));
  }
  return wire::from_wire(response);
}

ServiceResponse handle_request(const Detector& detector, std::string_view method,
                               std::string_view path, const std::string& body) {
  try {
    if (method == "GET" && path == wire::kCapabilitiesPath) {
      const auto caps = detector.capabilities();
      return {200, wire::encode(wire::CapabilitiesResponse{caps.has_features, caps.class_count})};
    }
    if (method == "POST" && path == wire::kDetectPath) {
      const auto request = wire::decode_detect_request(body);
      return {200, wire::encode(wire::DetectResponse{detector.detect(request.image)})};
    }
    if (method == "POST" && path == wire::kFeaturesPath) {
      const auto request = wire::decode_features_request(body);
      return {200, wire::encode(wire::to_wire(detector.feature_maps(request.image, request.layer_id)))};
    }
    return {404, error_body(fmt::format("no route for {} {}", method, path))};
  } catch (const Error& e) {
    switch (e.kind()) {
      case ErrorKind::kProtocol:
      case ErrorKind::kShape:
      case ErrorKind::kValue: return {400, error_body(e.what())};
      case ErrorKind::kCapability: return {501, error_body(e.what())};
      case ErrorKind::kLookup: return {404, error_body(e.what())};
      default: return {500, error_body(e.what())};
    }
  }
}

struct DetectorServer::Impl {
  DetectorHandle detector;
  httplib::Server server;
};

DetectorServer::DetectorServer(DetectorHandle detector) : impl_(std::make_unique<Impl>()) {
  impl_->detector = std::move(detector);
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const auto out = handle_request(*impl_->detector, req.method, req.path, req.body);
    res.status = out.status;
    res.set_content(out.body, "application/json");
  };
  impl_->server.Get(std::string(wire::kCapabilitiesPath), route);
  impl_->server.Post(std::string(wire::kDetectPath), route);
  impl_->server.Post(std::string(wire::kFeaturesPath), route);
}

DetectorServer::~DetectorServer() { stop(); }

int DetectorServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error(ErrorKind::kTransport, "cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error(ErrorKind::kTransport, fmt::format("cannot bind {}:{}", host, port));
  }
  return port;
}

void DetectorServer::listen() { impl_->server.listen_after_bind(); }

void DetectorServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace patchbench
