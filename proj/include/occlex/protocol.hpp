#pragma once

// MLPRED/1: little-endian length-implied binary protocol for external
// predictors over a byte stream (subprocess stdio or TCP).
//
//   handshake  client: "MLPRED" u32 version      server: u32 version, u32 n_frames, u32 n_bands
//   request    u32 type=1, u32 batch_size, batch_size * n_frames * n_bands f32
//   response   u32 type=2, u32 batch_size, batch_size f32 probabilities
//   error      u32 type=255, u32 code, u32 len, len bytes UTF-8

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "occlex/core.hpp"
#include "occlex/predictor.hpp"

namespace occlex::mlpred {

inline constexpr std::string_view kMagic = "MLPRED";
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kRequest = 1;
inline constexpr std::uint32_t kResponse = 2;
inline constexpr std::uint32_t kError = 255;

enum ErrorCode : std::uint32_t {
  kUnsupportedVersion = 1,
  kMalformedFrame = 2,
  kShapeMismatch = 3,
  kModelFailure = 4,
};

/// Blocking reads/writes over a pair of file descriptors with a read timeout.
class FdStream {
 public:
  FdStream(int in_fd, int out_fd, std::chrono::milliseconds timeout = std::chrono::seconds(30))
      : in_(in_fd), out_(out_fd), timeout_(timeout) {}

  void write_all(std::string_view bytes) {
    std::size_t done = 0;
    while (done < bytes.size()) {
      ssize_t n = is_socket(out_) ? ::send(out_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL)
                                  : ::write(out_, bytes.data() + done, bytes.size() - done);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw TransportError(std::string("write failed: ") + std::strerror(errno));
      done += static_cast<std::size_t>(n);
    }
  }

  /// Reads exactly n bytes. Returns false on clean EOF before the first byte
  /// when `eof_ok`; any other short read is a transport error.
  bool read_exact(char* dst, std::size_t n, bool eof_ok = false) {
    std::size_t done = 0;
    while (done < n) {
      pollfd pfd{in_, POLLIN, 0};
      int ready = ::poll(&pfd, 1, static_cast<int>(timeout_.count()));
      if (ready < 0 && errno == EINTR) continue;
      if (ready == 0) throw TransportError("timed out waiting for predictor");
      if (ready < 0) throw TransportError(std::string("poll failed: ") + std::strerror(errno));
      ssize_t got = ::read(in_, dst + done, n - done);
      if (got < 0 && errno == EINTR) continue;
      if (got < 0) throw TransportError(std::string("read failed: ") + std::strerror(errno));
      if (got == 0) {
        if (done == 0 && eof_ok) return false;
        throw TransportError("connection closed after " + std::to_string(done) + " of " + std::to_string(n) +
                             " bytes");
      }
      done += static_cast<std::size_t>(got);
    }
    return true;
  }

  std::uint32_t read_u32() {
    char b[4];
    read_exact(b, 4);
    return le::get<std::uint32_t>(b);
  }

 private:
  static bool is_socket(int fd) {
    int type = 0;
    socklen_t len = sizeof type;
    return ::getsockopt(fd, SOL_SOCKET, SO_TYPE, &type, &len) == 0;
  }

  int in_, out_;
  std::chrono::milliseconds timeout_;
};

inline std::string encode_error(std::uint32_t code, std::string_view message) {
  std::string out;
  le::put<std::uint32_t>(out, kError);
  le::put<std::uint32_t>(out, code);
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(message.size()));
  out.append(message);
  return out;
}

inline std::string encode_request(std::span<const MelSpectrogram> batch) {
  std::string out;
  std::size_t cells = batch.empty() ? 0 : batch.size() * batch.front().size();
  out.reserve(8 + 4 * cells);
  le::put<std::uint32_t>(out, kRequest);
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(batch.size()));
  for (const auto& s : batch)
    for (float v : s.values()) le::put<float>(out, v);
  return out;
}

/// Reads the rest of an error frame (after its type word) and throws it.
[[noreturn]] inline void throw_remote_error(FdStream& s) {
  std::uint32_t code = s.read_u32();
  std::uint32_t len = s.read_u32();
  if (len > (1U << 20)) throw ProtocolError("oversized error message from predictor");
  std::string msg(len, '\0');
  if (len) s.read_exact(msg.data(), len);
  throw ProtocolError("predictor error " + std::to_string(code) + ": " + msg);
}

// ---------------------------------------------------------------------------
// Client

class Connection {
 public:
  virtual ~Connection() = default;
  virtual FdStream& stream() = 0;
  virtual std::string describe() const = 0;
};

class FdConnection : public Connection {
 public:
  FdConnection(int in_fd, int out_fd, std::string name, std::chrono::milliseconds timeout)
      : in_(in_fd), out_(out_fd), stream_(in_fd, out_fd, timeout), name_(std::move(name)) {}
  ~FdConnection() override {
    if (in_ >= 0) ::close(in_);
    if (out_ >= 0 && out_ != in_) ::close(out_);
  }
  FdStream& stream() override { return stream_; }
  std::string describe() const override { return name_; }

 protected:
  void close_fds() {
    if (in_ >= 0) ::close(in_);
    if (out_ >= 0 && out_ != in_) ::close(out_);
    in_ = out_ = -1;
  }

 private:
  int in_, out_;
  FdStream stream_;
  std::string name_;
};

/// Child process speaking the protocol on its stdin/stdout.
class SubprocessConnection final : public FdConnection {
 public:
  SubprocessConnection(int in_fd, int out_fd, pid_t pid, std::string name, std::chrono::milliseconds timeout)
      : FdConnection(in_fd, out_fd, std::move(name), timeout), pid_(pid) {}
  ~SubprocessConnection() override {
    close_fds();
    for (int i = 0; i < 100; ++i) {
      if (::waitpid(pid_, nullptr, WNOHANG) != 0) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
  }

 private:
  pid_t pid_;
};

inline std::unique_ptr<Connection> spawn_subprocess(const std::string& command,
                                                    std::chrono::milliseconds timeout) {
  std::signal(SIGPIPE, SIG_IGN);
  int to_child[2], from_child[2];
  if (::pipe(to_child) != 0) throw TransportError("pipe failed");
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw TransportError("pipe failed");
  }
  pid_t pid = ::fork();
  if (pid < 0) throw TransportError("fork failed");
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  ::fcntl(to_child[1], F_SETFD, FD_CLOEXEC);
  ::fcntl(from_child[0], F_SETFD, FD_CLOEXEC);
  return std::make_unique<SubprocessConnection>(from_child[0], to_child[1], pid, "exec:" + command, timeout);
}

inline std::unique_ptr<Connection> connect_tcp(const std::string& host, const std::string& port,
                                               std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw TransportError("cannot resolve " + host + ":" + port + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  for (auto* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw TransportError("cannot connect to " + host + ":" + port);
  return std::make_unique<FdConnection>(fd, fd, "tcp:" + host + ":" + port, timeout);
}

/// Predictor handle over one connection. Batches are serialised on the
/// connection; open several handles for parallel dispatch.
class ExternalPredictor final : public Predictor {
 public:
  explicit ExternalPredictor(std::unique_ptr<Connection> conn) : conn_(std::move(conn)) {
    auto& s = conn_->stream();
    std::string hello(kMagic);
    le::put<std::uint32_t>(hello, kVersion);
    s.write_all(hello);
    std::uint32_t version = s.read_u32();
    if (version == kError) throw_remote_error(s);
    if (version != kVersion) {
      throw ProtocolError("handshake failed: server speaks MLPRED/" + std::to_string(version) +
                          ", client speaks MLPRED/" + std::to_string(kVersion));
    }
    shape_.n_frames = s.read_u32();
    shape_.n_bands = s.read_u32();
    if (shape_.n_frames == 0 || shape_.n_bands == 0) throw ProtocolError("handshake advertised an empty shape");
  }

  std::optional<GridShape> expected_shape() const override { return shape_; }
  std::string describe() const override { return conn_->describe(); }

 protected:
  void predict_raw(std::span<const MelSpectrogram> specs, std::span<double> out) const override {
    std::lock_guard lock(mutex_);
    if (broken_) throw TransportError("connection to " + conn_->describe() + " is no longer usable");
    try {
      auto& s = conn_->stream();
      s.write_all(encode_request(specs));
      std::uint32_t type = s.read_u32();
      if (type == kError) throw_remote_error(s);
      if (type != kResponse) throw ProtocolError("unexpected message type " + std::to_string(type));
      std::uint32_t n = s.read_u32();
      if (n != specs.size()) {
        throw ProtocolError("response carries " + std::to_string(n) + " probabilities for a batch of " +
                            std::to_string(specs.size()));
      }
      std::string payload(4 * std::size_t{n}, '\0');
      if (n) s.read_exact(payload.data(), payload.size());
      for (std::size_t i = 0; i < n; ++i) out[i] = le::get<float>(payload.data() + 4 * i);
    } catch (const Error&) {
      broken_ = true;
      throw;
    }
  }

 private:
  std::unique_ptr<Connection> conn_;
  GridShape shape_;
  mutable std::mutex mutex_;
  mutable bool broken_ = false;
};

inline std::shared_ptr<ExternalPredictor> connect_external(
    std::string_view endpoint, std::chrono::milliseconds timeout = std::chrono::seconds(30)) {
  if (endpoint.rfind("exec:", 0) == 0) {
    return std::make_shared<ExternalPredictor>(spawn_subprocess(std::string(endpoint.substr(5)), timeout));
  }
  if (endpoint.rfind("tcp:", 0) == 0) {
    auto addr = endpoint.substr(4);
    auto colon = addr.rfind(':');
    if (colon == std::string_view::npos) throw UsageError("tcp endpoint needs host:port");
    return std::make_shared<ExternalPredictor>(
        connect_tcp(std::string(addr.substr(0, colon)), std::string(addr.substr(colon + 1)), timeout));
  }
  throw UsageError("unknown predictor endpoint '" + std::string(endpoint) + "'");
}

// ---------------------------------------------------------------------------
// Server

/// Handles one connection until EOF. Malformed input produces an error
/// frame and ends the session (returns false); clean EOF returns true.
inline bool serve(FdStream& s, const Predictor& predictor, GridShape shape) {
  char magic[6];
  if (!s.read_exact(magic, sizeof magic, true)) return true;
  if (std::string_view(magic, 6) != kMagic) {
    s.write_all(encode_error(kMalformedFrame, "bad handshake magic"));
    return false;
  }
  std::uint32_t version = s.read_u32();
  if (version != kVersion) {
    s.write_all(encode_error(kUnsupportedVersion, "unsupported protocol version " + std::to_string(version)));
    return false;
  }
  std::string reply;
  le::put<std::uint32_t>(reply, kVersion);
  le::put<std::uint32_t>(reply, static_cast<std::uint32_t>(shape.n_frames));
  le::put<std::uint32_t>(reply, static_cast<std::uint32_t>(shape.n_bands));
  s.write_all(reply);

  const std::size_t cells = shape.n_frames * shape.n_bands;
  while (true) {
    char word[4];
    if (!s.read_exact(word, 4, true)) return true;
    std::uint32_t type = le::get<std::uint32_t>(word);
    if (type != kRequest) {
      s.write_all(encode_error(kMalformedFrame, "unexpected message type " + std::to_string(type)));
      return false;
    }
    std::uint32_t n = s.read_u32();
    if (n > 65536) {
      s.write_all(encode_error(kMalformedFrame, "batch size " + std::to_string(n) + " too large"));
      return false;
    }
    std::string payload(std::size_t{n} * cells * 4, '\0');
    if (!payload.empty()) s.read_exact(payload.data(), payload.size());
    std::vector<MelSpectrogram> batch;
    batch.reserve(n);
    std::string response;
    try {
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<float> v(cells);
        for (std::size_t k = 0; k < cells; ++k) v[k] = le::get<float>(payload.data() + 4 * (i * cells + k));
        batch.emplace_back(shape.n_frames, shape.n_bands, std::move(v));
      }
      auto preds = predictor.predict_batch(batch);
      le::put<std::uint32_t>(response, kResponse);
      le::put<std::uint32_t>(response, n);
      for (auto p : preds) le::put<float>(response, static_cast<float>(p.probability));
    } catch (const std::exception& e) {
      s.write_all(encode_error(kModelFailure, e.what()));
      return false;
    }
    s.write_all(response);
  }
}

}  // namespace occlex::mlpred

namespace occlex {

/// Resolves "builtin:<spec>", "exec:<command>" or "tcp:<host:port>".
inline PredictorPtr open_predictor(std::string_view spec) {
  if (spec.rfind("builtin:", 0) == 0) return parse_builtin_predictor(spec.substr(8));
  if (spec.rfind("exec:", 0) == 0 || spec.rfind("tcp:", 0) == 0) return mlpred::connect_external(spec);
  throw UsageError("predictor must be builtin:<spec>, exec:<cmd> or tcp:<host:port>, got '" + std::string(spec) +
                   "'");
}

}  // namespace occlex
