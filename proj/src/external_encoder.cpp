#include "embkit/external_encoder.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <thread>

#include "embkit/error.hpp"

namespace embkit::encoder {

namespace {

// Replaces bare NaN / Infinity tokens (outside strings) with null so that
// responses from permissive JSON writers still parse and can be rejected
// with a precise non-finite error.
std::string neutralize_nonfinite_tokens(const std::string& line) {
  std::string out;
  out.reserve(line.size());
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (in_string) {
      out.push_back(ch);
      if (ch == '\\' && i + 1 < line.size()) {
        out.push_back(line[++i]);
      } else if (ch == '"') {
        in_string = false;
      }
      continue;
    }
    if (ch == '"') {
      in_string = true;
      out.push_back(ch);
      continue;
    }
    bool replaced = false;
    for (std::string_view tok : {"-Infinity", "Infinity", "-inf", "inf", "-NaN", "NaN", "nan"}) {
      if (line.compare(i, tok.size(), tok) == 0) {
        out += "null";
        i += tok.size() - 1;
        replaced = true;
        break;
      }
    }
    if (!replaced) out.push_back(ch);
  }
  return out;
}

}  // namespace

EmbeddingMatrix parse_embedding_response(const std::string& line, std::size_t expected_rows, std::size_t dim) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::exception&) {
    try {
      j = Json::parse(neutralize_nonfinite_tokens(line));
    } catch (const Json::exception& e) {
      throw ProtocolError(std::string("external encoder sent malformed JSON: ") + e.what());
    }
  }
  if (!j.is_object() || !j.contains("embeddings") || !j["embeddings"].is_array()) {
    throw ProtocolError("external encoder response lacks an \"embeddings\" array");
  }
  const Json& rows = j["embeddings"];
  if (rows.size() != expected_rows) {
    throw ProtocolError("external encoder returned " + std::to_string(rows.size()) + " rows for " +
                        std::to_string(expected_rows) + " texts");
  }
  std::vector<float> data;
  data.reserve(expected_rows * dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Json& row = rows[r];
    if (!row.is_array() || row.size() != dim) {
      throw ProtocolError("external encoder row " + std::to_string(r) + " does not have width " + std::to_string(dim));
    }
    for (std::size_t c = 0; c < dim; ++c) {
      const Json& v = row[c];
      double x = std::numeric_limits<double>::quiet_NaN();
      if (v.is_number()) {
        x = v.get<double>();
      } else if (!v.is_null() && !v.is_string()) {
        throw ProtocolError("external encoder value at (" + std::to_string(r) + "," + std::to_string(c) +
                            ") is not a number");
      }
      const auto f = static_cast<float>(x);
      if (!std::isfinite(f)) {
        throw NonFiniteError("external encoder returned a non-finite value at row " + std::to_string(r) +
                             ", col " + std::to_string(c));
      }
      data.push_back(f);
    }
  }
  return EmbeddingMatrix(expected_rows, dim, std::move(data));
}

struct ExternalEncoder::Process {
  pid_t pid = -1;
  int to_child = -1;    // socket end; child's stdin
  int from_child = -1;  // pipe read end; child's stdout
  std::string buffer;

  ~Process() { shutdown(); }

  void shutdown() {
    if (to_child >= 0) ::close(to_child);
    to_child = -1;
    if (from_child >= 0) ::close(from_child);
    from_child = -1;
    if (pid > 0) {
      int status = 0;
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid, &status, WNOHANG) == pid) {
          pid = -1;
          return;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      pid = -1;
    }
  }

  void send_line(const std::string& line) {
    std::size_t off = 0;
    while (off < line.size()) {
      const ssize_t n = ::send(to_child, line.data() + off, line.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("external encoder closed its input: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line(int timeout_ms) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
      if (auto pos = buffer.find('\n'); pos != std::string::npos) {
        std::string line = buffer.substr(0, pos);
        buffer.erase(0, pos + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw TimeoutError("external encoder timed out after " + std::to_string(timeout_ms) + " ms");
      pollfd pfd{from_child, POLLIN, 0};
      const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
      }
      if (rc == 0) continue;
      char chunk[65536];
      const ssize_t n = ::read(from_child, chunk, sizeof(chunk));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("read from external encoder failed: ") + std::strerror(errno));
      }
      if (n == 0) throw ProtocolError("external encoder exited before answering");
      buffer.append(chunk, static_cast<std::size_t>(n));
    }
  }
};

ExternalEncoder::ExternalEncoder(ExternalConfig cfg) : cfg_(std::move(cfg)), proc_(std::make_unique<Process>()) {
  int in_pair[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, in_pair) != 0) {
    throw Error(std::string("socketpair failed: ") + std::strerror(errno));
  }
  int out_pipe[2];
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pair[0]);
    ::close(in_pair[1]);
    throw Error(std::string("pipe failed: ") + std::strerror(errno));
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {in_pair[0], in_pair[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    throw Error(std::string("fork failed: ") + std::strerror(errno));
  }
  if (pid == 0) {
    ::dup2(in_pair[1], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", cfg_.command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pair[1]);
  ::close(out_pipe[1]);
  proc_->pid = pid;
  proc_->to_child = in_pair[0];
  proc_->from_child = out_pipe[0];

  const std::string hello = proc_->read_line(cfg_.timeout_ms);
  Json j;
  try {
    j = Json::parse(hello);
  } catch (const Json::exception&) {
    throw ProtocolError("external encoder handshake is not JSON: " + hello);
  }
  if (!j.is_object() || !j.contains("dim") || !j["dim"].is_number_integer() || j["dim"].get<long long>() < 1) {
    throw ProtocolError("external encoder handshake must be {\"dim\": int>=1}, got: " + hello);
  }
  dim_ = j["dim"].get<std::size_t>();
}

ExternalEncoder::~ExternalEncoder() = default;

EmbeddingMatrix ExternalEncoder::encode(std::span<const std::string> texts, Side side) const {
  std::lock_guard lock(mu_);
  if (broken_) throw ProtocolError("external encoder is unusable after an earlier protocol failure");
  try {
    const Json request{{"texts", Json(std::vector<std::string>(texts.begin(), texts.end()))},
                       {"side", std::string(side_name(side))}};
    proc_->send_line(request.dump() + "\n");
    const std::string line = proc_->read_line(cfg_.timeout_ms);
    return normalize_rows(parse_embedding_response(line, texts.size(), dim_));
  } catch (const ProtocolError&) {
    broken_ = true;
    throw;
  } catch (const ValidationError& e) {
    broken_ = true;
    throw ProtocolError(std::string("external encoder output rejected: ") + e.what());
  }
}

EmbeddingMatrix encode_external(const ExternalConfig& cfg, std::span<const std::string> texts, Side side) {
  ExternalEncoder enc(cfg);
  return enc.encode(texts, side);
}

void serve(const EncoderHandle& enc, std::istream& in, std::ostream& out) {
  out << Json{{"dim", enc.dim()}}.dump() << "\n" << std::flush;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const Json req = Json::parse(line);
    const auto texts = req.at("texts").get<std::vector<std::string>>();
    const auto side = parse_side(req.value("side", std::string("passage")));
    if (!side) throw ProtocolError("request side must be \"query\" or \"passage\"");
    const EmbeddingMatrix m = enc.encode(texts, *side);
    Json rows = Json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
      Json row = Json::array();
      for (float x : m.row(r)) row.push_back(static_cast<double>(x));
      rows.push_back(std::move(row));
    }
    out << Json{{"embeddings", std::move(rows)}}.dump() << "\n" << std::flush;
  }
}

}  // namespace embkit::encoder
