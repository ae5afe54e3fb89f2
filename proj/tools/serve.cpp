// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

// Serves the toy detector over the HTTP wire protocol.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "patchbench/error.hpp"
#include "patchbench/remote.hpp"
#include "pipeline.hpp"

namespace {

patchbench::DetectorServer* g_server = nullptr;

void handle_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serve the toy detector over HTTP", "patchbench_serve"};
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string params;
  std::string out = "patchbench_out";
  app.add_option("--host", host)->capture_default_str();
  app.add_option("--port", port, "0 picks a free port")->capture_default_str();
  app.add_option("--params", params, "Trained toy detector weights (default: train and cache)");
  app.add_option("--out", out, "Model cache directory root")->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    patchbench::cli::Context ctx;
    ctx.config.detector_params = params;
    ctx.out = out;
    ctx.log = &std::cerr;
    patchbench::DetectorServer server(patchbench::cli::load_toy_detector(ctx));
    const int bound = server.bind(host, port);
    g_server = &server;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    std::cout << "listening on http://" << host << ":" << bound << std::endl;
    server.listen();
    g_server = nullptr;
  } catch (const patchbench::Error& e) {
    std::cerr << "patchbench_serve: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
