#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fdecon/imaging.hpp"
#include "fdecon/regularizers.hpp"

// Client side of the external denoiser protocol (v1).
//
// Every frame starts with the magic "DNZ1". All integers and floats are
// little-endian.
//
//   handshake request   magic, u8 type=3
//   handshake response  magic, u8 status, u16 version, u8 flags
//   denoise request     magic, u8 type=1, f64 sigma, u32 h, u32 w, h*w f32
//   denoise response    magic, u8 status, f64 potential, h*w f32
//   shutdown            magic, u8 type=2 (no response)
//
// A response with a nonzero status ends after the status byte.
namespace fdecon::bridge {

inline constexpr std::uint16_t kProtocolVersion = 1;
inline constexpr std::uint8_t kFlagReturnsPotential = 0x01;

enum class MessageType : std::uint8_t { Denoise = 1, Shutdown = 2, Handshake = 3 };
enum class Status : std::uint8_t { Ok = 0, Error = 1 };

inline constexpr std::size_t kMagicBytes = 4;
inline constexpr std::size_t kHandshakeRequestBytes = 5;
inline constexpr std::size_t kHandshakeResponseBytes = 8;
inline constexpr std::size_t kDenoiseRequestHeaderBytes = 21;
inline constexpr std::size_t kDenoiseResponseHeaderBytes = 13;
inline constexpr std::size_t kErrorResponseBytes = 5;

struct Capabilities {
  std::uint16_t version = kProtocolVersion;
  bool returns_potential = false;
};

struct DenoiseRequest {
  double sigma = 0.0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<float> values;
};

struct DenoiseResponse {
  double potential = 0.0;  // NaN when unavailable
  std::vector<float> values;
};

std::vector<std::uint8_t> encode_handshake_request();
std::vector<std::uint8_t> encode_handshake_response(const Capabilities& caps);
std::vector<std::uint8_t> encode_denoise_request(const Image& z, double sigma);
std::vector<std::uint8_t> encode_denoise_request(const DenoiseRequest& request);
std::vector<std::uint8_t> encode_denoise_response(const DenoiseResponse& response);
std::vector<std::uint8_t> encode_error_response();
std::vector<std::uint8_t> encode_shutdown();

// Bidirectional byte stream with a per-call deadline.
class Channel {
public:
  virtual ~Channel() = default;
  virtual void write_all(std::span<const std::uint8_t> bytes) = 0;
  virtual void read_exact(std::span<std::uint8_t> bytes) = 0;
  virtual void close() = 0;
  virtual bool is_open() const = 0;
};

// Socket-backed channel. timeout_ms < 0 waits indefinitely. Owns the
// descriptor(s) and, for spawned servers, the child process.
class SocketChannel : public Channel {
public:
  SocketChannel(int read_fd, int write_fd, int timeout_ms, int child_pid = -1);
  ~SocketChannel() override;
  SocketChannel(const SocketChannel&) = delete;
  SocketChannel& operator=(const SocketChannel&) = delete;

  void write_all(std::span<const std::uint8_t> bytes) override;
  void read_exact(std::span<std::uint8_t> bytes) override;
  void close() override;
  bool is_open() const override { return read_fd_ >= 0; }

  std::size_t bytes_written() const noexcept { return bytes_written_; }
  std::size_t bytes_read() const noexcept { return bytes_read_; }

private:
  int read_fd_;
  int write_fd_;
  int timeout_ms_;
  int child_pid_;
  std::size_t bytes_written_ = 0;
  std::size_t bytes_read_ = 0;
};

struct Endpoint {
  enum class Transport { Subprocess, Tcp };
  Transport transport = Transport::Subprocess;
  std::vector<std::string> command;  // argv of the spawned server
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  int timeout_ms = 30000;
};

// Spawns endpoint.command with its stdin and stdout joined to one end of a
// socket pair, or connects over TCP.
std::unique_ptr<SocketChannel> open_channel(const Endpoint& endpoint);

// Synchronous client: one outstanding request. Any transport or framing
// failure closes the connection and throws BridgeError.
class Client {
public:
  explicit Client(std::unique_ptr<Channel> channel);
  explicit Client(const Endpoint& endpoint);
  ~Client();
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  Capabilities handshake();
  DenoiseResult denoise(const Image& z, double sigma);
  // Sends the shutdown frame (best effort) and closes.
  void shutdown();

  bool is_open() const { return channel_ && channel_->is_open(); }
  const std::optional<Capabilities>& capabilities() const { return caps_; }
  Channel& channel() { return *channel_; }

private:
  template <class F>
  auto guarded(F&& body);

  std::unique_ptr<Channel> channel_;
  std::optional<Capabilities> caps_;
};

// Denoiser backed by a bridge client; performs the handshake on construction.
class BridgeDenoiser : public Denoiser {
public:
  explicit BridgeDenoiser(const Endpoint& endpoint);
  explicit BridgeDenoiser(std::unique_ptr<Channel> channel);

  std::string name() const override;
  DenoiserCapabilities capabilities() const override;
  DenoiseResult denoise(const Image& z, double sigma) override;
  Client& client() { return client_; }

private:
  Client client_;
  Capabilities caps_;
};

// Server loop for one connection: answers handshakes with `caps` and
// denoise requests with `handler` until shutdown or end of stream. Returns
// the number of denoise requests served.
using Handler = std::function<DenoiseResponse(const DenoiseRequest&)>;
std::size_t serve(Channel& channel, const Capabilities& caps, const Handler& handler);

// Reads the remainder of a frame after its magic and type byte.
DenoiseRequest read_denoise_request_body(Channel& channel);

}  // namespace fdecon::bridge
