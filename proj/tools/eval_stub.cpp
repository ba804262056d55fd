// Minimal external evaluator for protocol tests.
//   eval_stub [ACCURACY] [--error] [--garbage] [--sleep-ms N] [--bad-handshake]
#include <chrono>
#include <iostream>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "hotsearch/evalbridge.hpp"

int main(int argc, char** argv) {
  double accuracy = 0.5;
  bool error = false, garbage = false, bad_handshake = false;
  int sleep_ms = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--error") {
      error = true;
    } else if (arg == "--garbage") {
      garbage = true;
    } else if (arg == "--bad-handshake") {
      bad_handshake = true;
    } else if (arg == "--sleep-ms" && i + 1 < argc) {
      sleep_ms = std::stoi(argv[++i]);
    } else {
      accuracy = std::stod(arg);
    }
  }

  std::cout << nlohmann::json{{"protocol", bad_handshake ? "other" : hotsearch::kEvalProtocol},
                              {"version", hotsearch::kEvalProtocolVersion}}
                   .dump()
            << std::endl;
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    if (sleep_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(sleep_ms));
    if (garbage) {
      std::cout << "not json" << std::endl;
      continue;
    }
    hotsearch::EvalResponse response;
    try {
      const auto request = hotsearch::request_from_json(nlohmann::json::parse(line));
      const auto echo = hotsearch::canonical_json(request.config);
      response = error ? hotsearch::EvalResponse::error("stub failure " + request.config_digest)
                       : hotsearch::EvalResponse::ok(accuracy, echo);
    } catch (const std::exception& e) {
      response = hotsearch::EvalResponse::error(e.what());
    }
    std::cout << hotsearch::to_json(response).dump() << std::endl;
  }
  return 0;
}
