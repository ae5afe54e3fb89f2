// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

// HTTP client and server for the wire protocol.

#pragma once

#include <memory>
#include <string>

#include "patchbench/detector.hpp"

namespace patchbench {

struct RemoteOptions {
  std::string feature_layer = "conv2";  // used by default_feature_layer()
  double timeout_seconds = 30.0;
  int retries = 2;  // extra attempts after a transport failure
};

// Detector backed by a service at `base_url` ("http://host:port"). Queries
// /v1/capabilities on construction. Gradients are never available.
// Transport failures throw kTransport; malformed responses throw kProtocol.
class RemoteDetector final : public Detector {
 public:
  explicit RemoteDetector(std::string base_url, RemoteOptions options = {});

  DetectorKind kind() const override { return DetectorKind::kRemote; }
  Capabilities capabilities() const override { return capabilities_; }
  std::vector<Detection> detect(const Image& image) const override;
  FeatureMaps feature_maps(const Image& image, std::string_view layer_id) const override;
  std::string default_feature_layer() const override { return options_.feature_layer; }

 private:
  std::string post(std::string_view path, const std::string& body) const;
  std::string get(std::string_view path) const;

  std::string base_url_;
  RemoteOptions options_;
  Capabilities capabilities_;
};

struct ServiceResponse {
  int status = 200;
  std::string body;
};

// Routes one request to `detector`. Protocol violations give 400, missing
// capabilities 501, unknown layers 404, unknown paths 404.
ServiceResponse handle_request(const Detector& detector, std::string_view method,
                               std::string_view path, const std::string& body);

// Serves a detector over HTTP until stop() is called.
class DetectorServer {
 public:
  explicit DetectorServer(DetectorHandle detector);
  ~DetectorServer();
  DetectorServer(const DetectorServer&) = delete;
  DetectorServer& operator=(const DetectorServer&) = delete;

  // Binds and returns the port (an ephemeral one when `port` is 0).
  int bind(const std::string& host, int port);
  // Blocks serving requests.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace patchbench
