#include "fdecon/bridge.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <thread>

#include "fdecon/error.hpp"

namespace fdecon::bridge {

namespace {

constexpr std::uint8_t kMagic[kMagicBytes] = {'D', 'N', 'Z', '1'};

using Clock = std::chrono::steady_clock;

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }
double get_f64(const std::uint8_t* p) { return std::bit_cast<double>(get_u64(p)); }

std::vector<std::uint8_t> frame_start(std::uint8_t second) {
  std::vector<std::uint8_t> out(kMagic, kMagic + kMagicBytes);
  out.push_back(second);
  return out;
}

void check_magic(const std::uint8_t* p) {
  for (std::size_t i = 0; i < kMagicBytes; ++i) {
    if (p[i] != kMagic[i]) {
      std::ostringstream msg;
      msg << "malformed frame: bad magic byte 0x" << std::hex << static_cast<int>(p[i]) << std::dec << " at offset "
          << i;
      throw BridgeError(msg.str());
    }
  }
}

std::vector<float> read_values(Channel& channel, std::size_t count) {
  std::vector<std::uint8_t> raw(count * 4);
  channel.read_exact(raw);
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) values[i] = get_f32(raw.data() + 4 * i);
  return values;
}

int remaining_ms(Clock::time_point deadline, int timeout_ms) {
  if (timeout_ms < 0) return -1;
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left > 0 ? static_cast<int>(left) : 0;
}

void set_nonblocking(int fd) {
  const int flags = fcntl(fd, F_GETFL, 0);
  if (flags < 0 || fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0) throw BridgeError(errno_text("fcntl"));
}

std::unique_ptr<SocketChannel> spawn(const Endpoint& endpoint) {
  if (endpoint.command.empty()) throw InvalidArgument("bridge endpoint has no server command");
  int sv[2];
  if (socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) throw BridgeError(errno_text("socketpair"));
  int status_pipe[2];
  if (pipe2(status_pipe, O_CLOEXEC) != 0) {
    ::close(sv[0]);
    ::close(sv[1]);
    throw BridgeError(errno_text("pipe"));
  }

  std::vector<char*> argv;
  for (const auto& a : endpoint.command) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);

  const pid_t pid = fork();
  if (pid < 0) {
    for (int fd : {sv[0], sv[1], status_pipe[0], status_pipe[1]}) ::close(fd);
    throw BridgeError(errno_text("fork"));
  }
  if (pid == 0) {
    ::close(sv[0]);
    ::close(status_pipe[0]);
    if (dup2(sv[1], STDIN_FILENO) < 0 || dup2(sv[1], STDOUT_FILENO) < 0) {
      const int err = errno;
      (void)!write(status_pipe[1], &err, sizeof err);
      _exit(127);
    }
    execvp(argv[0], argv.data());
    const int err = errno;
    (void)!write(status_pipe[1], &err, sizeof err);
    _exit(127);
  }

  ::close(sv[1]);
  ::close(status_pipe[1]);
  int child_errno = 0;
  ssize_t got;
  do {
    got = read(status_pipe[0], &child_errno, sizeof child_errno);
  } while (got < 0 && errno == EINTR);
  ::close(status_pipe[0]);
  if (got > 0) {
    ::close(sv[0]);
    waitpid(pid, nullptr, 0);
    throw BridgeError("cannot start denoiser server '" + endpoint.command[0] + "': " + std::strerror(child_errno));
  }
  set_nonblocking(sv[0]);
  return std::make_unique<SocketChannel>(sv[0], sv[0], endpoint.timeout_ms, pid);
}

std::unique_ptr<SocketChannel> connect_tcp(const Endpoint& endpoint) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* found = nullptr;
  const std::string port = std::to_string(endpoint.port);
  if (const int rc = getaddrinfo(endpoint.host.c_str(), port.c_str(), &hints, &found); rc != 0) {
    throw BridgeError("cannot resolve " + endpoint.host + ": " + gai_strerror(rc));
  }
  std::string last_error = "no addresses";
  const auto deadline = Clock::now() + std::chrono::milliseconds(std::max(endpoint.timeout_ms, 0));
  for (addrinfo* a = found; a; a = a->ai_next) {
    const int fd = socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, a->ai_protocol);
    if (fd < 0) {
      last_error = errno_text("socket");
      continue;
    }
    int rc = connect(fd, a->ai_addr, a->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd p{fd, POLLOUT, 0};
      rc = poll(&p, 1, remaining_ms(deadline, endpoint.timeout_ms));
      if (rc == 0) {
        last_error = "connect timed out";
        ::close(fd);
        continue;
      }
      int err = 0;
      socklen_t len = sizeof err;
      getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
      errno = err;
      rc = err == 0 ? 0 : -1;
    }
    if (rc != 0) {
      last_error = errno_text("connect");
      ::close(fd);
      continue;
    }
    const int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    freeaddrinfo(found);
    return std::make_unique<SocketChannel>(fd, fd, endpoint.timeout_ms);
  }
  freeaddrinfo(found);
  throw BridgeError("cannot connect to " + endpoint.host + ":" + port + ": " + last_error);
}

}  // namespace

std::vector<std::uint8_t> encode_handshake_request() {
  return frame_start(static_cast<std::uint8_t>(MessageType::Handshake));
}

std::vector<std::uint8_t> encode_handshake_response(const Capabilities& caps) {
  auto out = frame_start(static_cast<std::uint8_t>(Status::Ok));
  put_u16(out, caps.version);
  put_u8(out, caps.returns_potential ? kFlagReturnsPotential : 0);
  return out;
}

std::vector<std::uint8_t> encode_denoise_request(const DenoiseRequest& request) {
  if (request.values.size() != static_cast<std::size_t>(request.height) * request.width) {
    throw InvalidArgument("denoise request payload does not match its shape");
  }
  auto out = frame_start(static_cast<std::uint8_t>(MessageType::Denoise));
  out.reserve(kDenoiseRequestHeaderBytes + 4 * request.values.size());
  put_f64(out, request.sigma);
  put_u32(out, request.height);
  put_u32(out, request.width);
  for (float v : request.values) put_f32(out, v);
  return out;
}

std::vector<std::uint8_t> encode_denoise_request(const Image& z, double sigma) {
  constexpr auto limit = std::numeric_limits<std::uint32_t>::max();
  if (z.height() > limit || z.width() > limit) throw InvalidArgument("image too large for the wire format");
  DenoiseRequest request{sigma, static_cast<std::uint32_t>(z.height()), static_cast<std::uint32_t>(z.width()), {}};
  request.values.reserve(z.size());
  for (double v : z.pixels()) request.values.push_back(static_cast<float>(v));
  return encode_denoise_request(request);
}

std::vector<std::uint8_t> encode_denoise_response(const DenoiseResponse& response) {
  auto out = frame_start(static_cast<std::uint8_t>(Status::Ok));
  out.reserve(kDenoiseResponseHeaderBytes + 4 * response.values.size());
  put_f64(out, response.potential);
  for (float v : response.values) put_f32(out, v);
  return out;
}

std::vector<std::uint8_t> encode_error_response() { return frame_start(static_cast<std::uint8_t>(Status::Error)); }

std::vector<std::uint8_t> encode_shutdown() { return frame_start(static_cast<std::uint8_t>(MessageType::Shutdown)); }

SocketChannel::SocketChannel(int read_fd, int write_fd, int timeout_ms, int child_pid)
    : read_fd_(read_fd), write_fd_(write_fd), timeout_ms_(timeout_ms), child_pid_(child_pid) {}

SocketChannel::~SocketChannel() { close(); }

void SocketChannel::write_all(std::span<const std::uint8_t> bytes) {
  if (!is_open()) throw BridgeError("write on a closed bridge connection");
  const auto deadline = Clock::now() + std::chrono::milliseconds(std::max(timeout_ms_, 0));
  std::size_t done = 0;
  while (done < bytes.size()) {
    pollfd p{write_fd_, POLLOUT, 0};
    const int rc = poll(&p, 1, remaining_ms(deadline, timeout_ms_));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw BridgeError(errno_text("poll"));
    }
    if (rc == 0) {
      throw BridgeError("bridge write timed out after " + std::to_string(timeout_ms_) + " ms (" +
                        std::to_string(done) + " of " + std::to_string(bytes.size()) + " bytes sent)");
    }
    ssize_t n = send(write_fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
    if (n < 0 && errno == ENOTSOCK) n = write(write_fd_, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
      throw BridgeError(errno_text("bridge write failed"));
    }
    done += static_cast<std::size_t>(n);
  }
  bytes_written_ += done;
}

void SocketChannel::read_exact(std::span<std::uint8_t> bytes) {
  if (!is_open()) throw BridgeError("read on a closed bridge connection");
  const auto deadline = Clock::now() + std::chrono::milliseconds(std::max(timeout_ms_, 0));
  std::size_t done = 0;
  while (done < bytes.size()) {
    pollfd p{read_fd_, POLLIN, 0};
    const int rc = poll(&p, 1, remaining_ms(deadline, timeout_ms_));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw BridgeError(errno_text("poll"));
    }
    if (rc == 0) {
      throw BridgeError("bridge read timed out after " + std::to_string(timeout_ms_) + " ms (" +
                        std::to_string(done) + " of " + std::to_string(bytes.size()) + " bytes received)");
    }
    ssize_t n = recv(read_fd_, bytes.data() + done, bytes.size() - done, 0);
    if (n < 0 && errno == ENOTSOCK) n = read(read_fd_, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
      throw BridgeError(errno_text("bridge read failed"));
    }
    if (n == 0) {
      throw BridgeError("connection closed by peer (" + std::to_string(done) + " of " +
                        std::to_string(bytes.size()) + " bytes received)");
    }
    done += static_cast<std::size_t>(n);
  }
  bytes_read_ += done;
}

void SocketChannel::close() {
  if (read_fd_ >= 0) ::close(read_fd_);
  if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  read_fd_ = write_fd_ = -1;
  if (child_pid_ > 0) {
    // The server sees end of stream; give it a moment before forcing it down.
    for (int i = 0; i < 50; ++i) {
      if (waitpid(child_pid_, nullptr, WNOHANG) != 0) {
        child_pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    kill(child_pid_, SIGKILL);
    waitpid(child_pid_, nullptr, 0);
    child_pid_ = -1;
  }
}

std::unique_ptr<SocketChannel> open_channel(const Endpoint& endpoint) {
  if (endpoint.timeout_ms <= 0) throw InvalidArgument("bridge timeout must be a positive number of milliseconds");
  return endpoint.transport == Endpoint::Transport::Subprocess ? spawn(endpoint) : connect_tcp(endpoint);
}

Client::Client(std::unique_ptr<Channel> channel) : channel_(std::move(channel)) {
  if (!channel_) throw InvalidArgument("bridge client needs a channel");
}

Client::Client(const Endpoint& endpoint) : Client(open_channel(endpoint)) {}

Client::~Client() {
  if (is_open()) {
    try {
      shutdown();
    } catch (...) {
    }
  }
}

template <class F>
auto Client::guarded(F&& body) {
  if (!is_open()) throw BridgeError("bridge connection is closed");
  try {
    return body();
  } catch (const BridgeError&) {
    channel_->close();
    throw;
  } catch (const Error& e) {
    channel_->close();
    throw BridgeError(e.what());
  }
}

Capabilities Client::handshake() {
  return guarded([&] {
    channel_->write_all(encode_handshake_request());
    std::uint8_t head[kHandshakeResponseBytes];
    channel_->read_exact(std::span(head, kErrorResponseBytes));
    check_magic(head);
    if (head[4] != static_cast<std::uint8_t>(Status::Ok)) {
      throw BridgeError("server rejected the handshake (status " + std::to_string(head[4]) + ")");
    }
    channel_->read_exact(std::span(head + kErrorResponseBytes, kHandshakeResponseBytes - kErrorResponseBytes));
    Capabilities caps;
    caps.version = get_u16(head + 5);
    caps.returns_potential = (head[7] & kFlagReturnsPotential) != 0;
    if (caps.version != kProtocolVersion) {
      throw BridgeError("protocol version mismatch: server speaks v" + std::to_string(caps.version) + ", client v" +
                        std::to_string(kProtocolVersion));
    }
    caps_ = caps;
    return caps;
  });
}

DenoiseResult Client::denoise(const Image& z, double sigma) {
  if (!caps_) throw BridgeError("denoise requested before the handshake");
  z.require_finite("bridge input");
  return guarded([&] {
    channel_->write_all(encode_denoise_request(z, sigma));
    std::uint8_t head[kDenoiseResponseHeaderBytes];
    channel_->read_exact(std::span(head, kErrorResponseBytes));
    check_magic(head);
    if (head[4] != static_cast<std::uint8_t>(Status::Ok)) {
      throw BridgeError("server reported a denoise error (status " + std::to_string(head[4]) + ")");
    }
    channel_->read_exact(std::span(head + kErrorResponseBytes, kDenoiseResponseHeaderBytes - kErrorResponseBytes));
    const double potential = get_f64(head + 5);
    const std::vector<float> values = read_values(*channel_, z.size());

    std::vector<double> pixels(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) {
        throw BridgeError("protocol error: non-finite value in response payload at pixel " + std::to_string(i));
      }
      pixels[i] = values[i];
    }
    DenoiseResult out{Image(z.height(), z.width(), std::move(pixels)), std::nullopt};
    if (caps_->returns_potential) {
      if (!std::isfinite(potential)) throw BridgeError("protocol error: server advertised a potential but sent none");
      out.potential = potential;
    } else if (!std::isnan(potential)) {
      throw BridgeError("protocol error: potential sent without the capability flag");
    }
    return out;
  });
}

void Client::shutdown() {
  if (!is_open()) return;
  try {
    channel_->write_all(encode_shutdown());
  } catch (const Error&) {
  }
  channel_->close();
}

BridgeDenoiser::BridgeDenoiser(const Endpoint& endpoint) : client_(endpoint), caps_(client_.handshake()) {}

BridgeDenoiser::BridgeDenoiser(std::unique_ptr<Channel> channel)
    : client_(std::move(channel)), caps_(client_.handshake()) {}

std::string BridgeDenoiser::name() const {
  return std::string("bridge(v") + std::to_string(caps_.version) + (caps_.returns_potential ? ", potential)" : ")");
}

DenoiserCapabilities BridgeDenoiser::capabilities() const { return {caps_.returns_potential, false}; }

DenoiseResult BridgeDenoiser::denoise(const Image& z, double sigma) { return client_.denoise(z, sigma); }

DenoiseRequest read_denoise_request_body(Channel& channel) {
  std::uint8_t head[kDenoiseRequestHeaderBytes - kErrorResponseBytes];
  channel.read_exact(head);
  DenoiseRequest request;
  request.sigma = get_f64(head);
  request.height = get_u32(head + 8);
  request.width = get_u32(head + 12);
  const std::uint64_t count = static_cast<std::uint64_t>(request.height) * request.width;
  if (count > (std::uint64_t{1} << 28)) throw BridgeError("denoise request shape is too large");
  request.values = read_values(channel, static_cast<std::size_t>(count));
  return request;
}

std::size_t serve(Channel& channel, const Capabilities& caps, const Handler& handler) {
  std::size_t served = 0;
  while (channel.is_open()) {
    std::uint8_t head[kErrorResponseBytes];
    try {
      channel.read_exact(head);
    } catch (const BridgeError&) {
      return served;
    }
    check_magic(head);
    switch (static_cast<MessageType>(head[4])) {
      case MessageType::Handshake:
        channel.write_all(encode_handshake_response(caps));
        break;
      case MessageType::Shutdown:
        return served;
      case MessageType::Denoise: {
        const DenoiseRequest request = read_denoise_request_body(channel);
        std::vector<std::uint8_t> reply;
        try {
          const DenoiseResponse response = handler(request);
          if (response.values.size() != request.values.size()) throw BridgeError("handler changed the image size");
          reply = encode_denoise_response(response);
        } catch (const std::exception&) {
          reply = encode_error_response();
        }
        channel.write_all(reply);
        ++served;
        break;
      }
      default:
        channel.write_all(encode_error_response());
        throw BridgeError("unknown message type " + std::to_string(head[4]));
    }
  }
  return served;
}

}  // namespace fdecon::bridge
