// Reference denoiser server for bridge tests. Speaks protocol v1 on
// stdin/stdout.
//
//   denoise_fixture echo                 output = input, no potential
//   denoise_fixture scale --alpha 0.3    output = (1 - alpha) z, potential alpha/2 |z|^2
//
// Fault injection: --fault truncate-handshake | truncate-response | nan |
// error-status | bad-magic | bad-version, --die-after N, --delay-ms MS.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fdecon/bridge.hpp"
#include "fdecon/error.hpp"

namespace bridge = fdecon::bridge;

int main(int argc, char** argv) {
  CLI::App app{"denoiser bridge test fixture"};
  std::string mode = "echo";
  double alpha = 0.5;
  std::string fault = "none";
  long die_after = -1;
  int delay_ms = 0;
  app.add_option("mode", mode, "echo or scale")->check(CLI::IsMember({"echo", "scale"}));
  app.add_option("--alpha", alpha, "scale fixture shrinkage")->check(CLI::Range(0.0, 1.0));
  app.add_option("--fault", fault)->check(CLI::IsMember(
      {"none", "truncate-handshake", "truncate-response", "nan", "error-status", "bad-magic", "bad-version"}));
  app.add_option("--die-after", die_after, "exit without replying to request N+1");
  app.add_option("--delay-ms", delay_ms, "sleep before each denoise reply");
  CLI11_PARSE(app, argc, argv);

  const bool scale = mode == "scale";
  bridge::Capabilities caps{bridge::kProtocolVersion, scale};
  if (fault == "bad-version") caps.version = 2;

  bridge::SocketChannel channel(STDIN_FILENO, STDOUT_FILENO, -1);
  long served = 0;
  try {
    while (true) {
      std::uint8_t head[bridge::kErrorResponseBytes];
      channel.read_exact(head);
      const auto type = static_cast<bridge::MessageType>(head[4]);
      if (type == bridge::MessageType::Shutdown) return 0;

      if (type == bridge::MessageType::Handshake) {
        auto reply = bridge::encode_handshake_response(caps);
        if (fault == "truncate-handshake") {
          reply.resize(6);
          channel.write_all(reply);
          return 0;
        }
        channel.write_all(reply);
        continue;
      }

      if (type != bridge::MessageType::Denoise) {
        channel.write_all(bridge::encode_error_response());
        return 1;
      }

      const bridge::DenoiseRequest request = bridge::read_denoise_request_body(channel);
      if (die_after >= 0 && served >= die_after) return 3;
      if (delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      if (fault == "error-status") {
        channel.write_all(bridge::encode_error_response());
        ++served;
        continue;
      }

      bridge::DenoiseResponse response;
      response.potential = std::numeric_limits<double>::quiet_NaN();
      response.values = request.values;
      if (scale) {
        double energy = 0.0;
        for (auto& v : response.values) {
          const double z = v;
          energy += z * z;
          v = static_cast<float>((1.0 - alpha) * z);
        }
        response.potential = 0.5 * alpha * energy;
      }
      if (fault == "nan" && !response.values.empty()) response.values[0] = std::numeric_limits<float>::quiet_NaN();

      auto reply = bridge::encode_denoise_response(response);
      if (fault == "bad-magic") reply[0] = 'X';
      if (fault == "truncate-response") {
        reply.resize(bridge::kDenoiseResponseHeaderBytes + 4 * (response.values.size() / 2));
        channel.write_all(reply);
        return 0;
      }
      channel.write_all(reply);
      ++served;
    }
  } catch (const fdecon::Error&) {
    // Client went away.
    return 0;
  }
}
