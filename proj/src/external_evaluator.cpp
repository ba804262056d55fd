#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <iostream>

#include "hotsearch/errors.hpp"
#include "hotsearch/evalbridge.hpp"

namespace hotsearch {

ExternalEvaluator::ExternalEvaluator(std::vector<std::string> command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {
  if (command_.empty()) throw ConfigError("external evaluator: empty command");
  // A child that dies mid-request must surface as a write error, not kill us.
  signal(SIGPIPE, SIG_IGN);
}

ExternalEvaluator::~ExternalEvaluator() { stop(); }

void ExternalEvaluator::start() {
  int in_pipe[2], out_pipe[2];
  if (pipe(in_pipe) != 0) throw Error(std::string("external evaluator: pipe: ") + std::strerror(errno));
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw Error(std::string("external evaluator: pipe: ") + std::strerror(errno));
  }
  const pid_t pid = fork();
  if (pid < 0) throw Error(std::string("external evaluator: fork: ") + std::strerror(errno));
  if (pid == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    std::vector<char*> argv;
    for (auto& a : command_) argv.push_back(a.data());
    argv.push_back(nullptr);
    execvp(argv[0], argv.data());
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  fcntl(to_child_, F_SETFD, FD_CLOEXEC);
  fcntl(from_child_, F_SETFD, FD_CLOEXEC);
  buffer_.clear();

  const auto line = read_line(timeout_);
  if (!line) {
    stop();
    throw ProtocolError("external evaluator: no handshake from " + command_.front());
  }
  nlohmann::json hello;
  try {
    hello = nlohmann::json::parse(*line);
  } catch (const nlohmann::json::exception&) {
    std::cerr << "external evaluator: raw handshake line: " << *line << "\n";
    stop();
    throw ProtocolError("external evaluator: handshake is not JSON");
  }
  if (!hello.is_object() || hello.value("protocol", std::string()) != kEvalProtocol ||
      hello.value("version", 0) != kEvalProtocolVersion) {
    std::cerr << "external evaluator: raw handshake line: " << *line << "\n";
    stop();
    throw ProtocolError("external evaluator: unexpected handshake");
  }
}

void ExternalEvaluator::stop() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    int status = 0;
    if (waitpid(pid_, &status, WNOHANG) == 0) {
      kill(pid_, SIGTERM);
      waitpid(pid_, &status, 0);
    }
  }
  pid_ = -1;
}

std::optional<std::string> ExternalEvaluator::read_line(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return std::nullopt;
    pollfd pfd{from_child_, POLLIN, 0};
    const int ready = poll(&pfd, 1, static_cast<int>(std::min<std::int64_t>(left.count(), 1 << 30)));
    if (ready < 0) {
      if (errno == EINTR) continue;
      return std::nullopt;
    }
    if (ready == 0) return std::nullopt;
    char chunk[4096];
    const ssize_t got = read(from_child_, chunk, sizeof chunk);
    if (got < 0 && errno == EINTR) continue;
    if (got <= 0) return std::nullopt;
    buffer_.append(chunk, static_cast<std::size_t>(got));
  }
}

void ExternalEvaluator::write_line(const std::string& line) {
  const std::string data = line + "\n";
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = write(to_child_, data.data() + sent, data.size() - sent);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw ProtocolError("external evaluator: write to child failed");
    sent += static_cast<std::size_t>(n);
  }
}

EvalResponse ExternalEvaluator::evaluate(const EvalRequest& request) {
  std::lock_guard lock(mutex_);
  if (pid_ < 0) start();
  try {
    write_line(canonical_json(to_json(request)));
  } catch (const ProtocolError& e) {
    stop();
    return EvalResponse::error(e.what());
  }
  const auto line = read_line(timeout_);
  if (!line) {
    stop();
    return EvalResponse::error("external evaluator: timed out or exited before replying");
  }
  try {
    return response_from_json(nlohmann::json::parse(*line));
  } catch (const nlohmann::json::exception&) {
    std::cerr << "external evaluator: raw response line: " << *line << "\n";
    throw ProtocolError("external evaluator: response is not JSON");
  } catch (const ProtocolError&) {
    std::cerr << "external evaluator: raw response line: " << *line << "\n";
    throw;
  }
}

}  // namespace hotsearch
