#include "videxp/bridge.hpp"

#include <bit>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cctype>
#include <cstring>
#include <limits>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

namespace videxp {

namespace {

using json = nlohmann::json;

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return v;
}

std::uint64_t payload_len(const json& header) {
  auto it = header.find("payload_len");
  if (it == header.end() || it->is_null()) return 0;
  if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0)) {
    throw ProtocolError("payload_len must be a non-negative integer");
  }
  return it->get<std::uint64_t>();
}

json dims_json(const VideoTensor::Dims& d) { return json::array({d[0], d[1], d[2], d[3]}); }

std::vector<float> to_payload(const VideoTensor& x) {
  std::vector<float> out(static_cast<std::size_t>(x.size()));
  for (Index i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(x.data()[i]);
  return out;
}

void ignore_sigpipe() {
  struct sigaction current {};
  if (sigaction(SIGPIPE, nullptr, &current) == 0 && current.sa_handler == SIG_DFL) {
    std::signal(SIGPIPE, SIG_IGN);
  }
}

}  // namespace

std::string BridgeFrame::msg() const {
  auto it = header.find("msg");
  if (it == header.end() || !it->is_string()) throw ProtocolError("frame header has no string 'msg'");
  return it->get<std::string>();
}

std::uint64_t BridgeFrame::id() const {
  auto it = header.find("id");
  if (it == header.end() || !it->is_number_integer() || it->get<std::int64_t>() < 0) {
    throw ProtocolError("frame header has no unsigned 'id'");
  }
  return it->get<std::uint64_t>();
}

std::string encode_frame(const BridgeFrame& frame) {
  if (!frame.header.is_object()) throw ProtocolError("frame header must be a JSON object");
  json header = frame.header;
  if (frame.payload.empty()) {
    header.erase("payload_len");
  } else {
    header["payload_len"] = frame.payload.size();
  }
  const std::string text = header.dump();
  if (text.size() > kMaxHeaderBytes) throw ProtocolError("frame header too large");
  std::string out;
  out.reserve(4 + text.size() + 4 * frame.payload.size());
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (float f : frame.payload) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

void FrameDecoder::feed(const char* data, std::size_t size) {
  if (pos_ > 0 && pos_ == buffer_.size()) {
    buffer_.clear();
    pos_ = 0;
  }
  buffer_.append(data, size);
}

std::optional<BridgeFrame> FrameDecoder::next() {
  const std::size_t avail = buffer_.size() - pos_;
  if (avail < 4) return std::nullopt;
  const char* base = buffer_.data() + pos_;
  const std::uint32_t header_len = get_u32(base);
  if (header_len == 0 || header_len > kMaxHeaderBytes) {
    throw ProtocolError("invalid header length " + std::to_string(header_len));
  }
  if (avail < 4 + std::size_t{header_len}) return std::nullopt;

  BridgeFrame frame;
  try {
    frame.header = json::parse(base + 4, base + 4 + header_len);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("malformed frame header: ") + e.what());
  }
  if (!frame.header.is_object()) throw ProtocolError("frame header must be a JSON object");
  const std::uint64_t n = payload_len(frame.header);
  if (n > (std::numeric_limits<std::uint32_t>::max() / 4)) throw ProtocolError("payload_len too large");
  const std::size_t total = 4 + std::size_t{header_len} + 4 * n;
  if (avail < total) return std::nullopt;

  frame.payload.resize(n);
  const char* p = base + 4 + header_len;
  for (std::uint64_t i = 0; i < n; ++i) frame.payload[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  pos_ += total;
  return frame;
}

std::vector<BridgeFrame> decode_frames(const std::string& bytes) {
  FrameDecoder decoder;
  decoder.feed(bytes);
  std::vector<BridgeFrame> frames;
  while (auto f = decoder.next()) frames.push_back(std::move(*f));
  if (decoder.buffered() != 0) throw ProtocolError("truncated frame at end of stream");
  return frames;
}

std::vector<std::string> split_command(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool have = false;
  char quote = 0;
  for (char ch : line) {
    if (quote) {
      if (ch == quote) {
        quote = 0;
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '\'' || ch == '"') {
      quote = ch;
      have = true;
    } else if (std::isspace(static_cast<unsigned char>(ch))) {
      if (have) out.push_back(std::move(cur));
      cur.clear();
      have = false;
    } else {
      cur.push_back(ch);
      have = true;
    }
  }
  if (quote) throw ValidationError("unterminated quote in command: " + line);
  if (have) out.push_back(std::move(cur));
  return out;
}

std::unique_ptr<BridgeModel> spawn_bridge(const std::vector<std::string>& command, const BridgeOptions& options) {
  if (command.empty()) throw ValidationError("bridge command is empty");
  ignore_sigpipe();

  int in_pipe[2], out_pipe[2];
  if (pipe2(in_pipe, O_CLOEXEC) != 0) throw ModelError(std::string("pipe: ") + std::strerror(errno));
  if (pipe2(out_pipe, O_CLOEXEC) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw ModelError(std::string("pipe: ") + std::strerror(errno));
  }

  std::vector<char*> argv;
  for (const auto& a : command) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);

  const pid_t pid = fork();
  if (pid < 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) close(fd);
    throw ModelError(std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    execvp(argv[0], argv.data());
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);

  std::unique_ptr<BridgeModel> model(new BridgeModel());
  model->pid_ = pid;
  model->to_child_ = in_pipe[1];
  model->from_child_ = out_pipe[0];
  model->options_ = options;

  BridgeFrame hello;
  hello.header = {{"msg", "hello"}, {"id", 0}};
  BridgeFrame reply;
  try {
    reply = model->call(hello, options.handshake_timeout);
  } catch (const Error& e) {
    throw ModelError(std::string("bridge startup failed: ") + e.what());
  }
  const json& h = reply.header;
  try {
    if (reply.msg() != "hello") throw ProtocolError("expected hello reply, got '" + reply.msg() + "'");
    const auto cc = h.at("class_count").get<Index>();
    const auto dims = h.at("input_dims").get<std::vector<Index>>();
    if (cc < 1) throw ProtocolError("class_count must be positive");
    if (dims.size() != 4) throw ProtocolError("input_dims must have 4 entries (T,H,W,C)");
    for (Index d : dims)
      if (d < 1) throw ProtocolError("input_dims entries must be positive");
    if (h.value("concurrency_safe", false)) throw ProtocolError("bridge servers must announce concurrency_safe=false");
    model->class_count_ = cc;
    model->input_dims_ = {dims[0], dims[1], dims[2], dims[3]};
    model->server_name_ = h.value("name", std::string{});
  } catch (const json::exception& e) {
    model->shutdown();
    throw ModelError(std::string("bridge startup failed: bad hello: ") + e.what());
  } catch (const ProtocolError& e) {
    model->shutdown();
    throw ModelError(std::string("bridge startup failed: ") + e.what());
  }
  return model;
}

BridgeModel::~BridgeModel() { shutdown(); }

void BridgeModel::shutdown() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    int status = 0;
    if (waitpid(pid_, &status, WNOHANG) == 0) {
      // closed stdin is the polite request; give the child a moment, then kill
      for (int i = 0; i < 50; ++i) {
        usleep(10'000);
        if (waitpid(pid_, &status, WNOHANG) != 0) {
          pid_ = -1;
          return;
        }
      }
      kill(pid_, SIGKILL);
      waitpid(pid_, &status, 0);
    }
    pid_ = -1;
  }
}

bool BridgeModel::poisoned() const {
  std::lock_guard lock(mutex_);
  return !poison_reason_.empty();
}

void BridgeModel::poison(const std::string& why, bool protocol_violation) {
  poison_reason_ = why;
  shutdown();
  if (protocol_violation) throw ProtocolError("bridge protocol violation: " + why);
  throw ModelError("bridge: " + why);
}

void BridgeModel::send(const BridgeFrame& frame) {
  const std::string bytes = encode_frame(frame);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = write(to_child_, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      poison(std::string("write to server failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

BridgeFrame BridgeModel::receive(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  char buf[65536];
  while (true) {
    try {
      if (auto f = decoder_.next()) return std::move(*f);
    } catch (const ProtocolError& e) {
      poison(e.what(), true);
    }
    const auto left =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) poison("timed out after " + std::to_string(timeout.count()) + " ms");
    pollfd pfd{from_child_, POLLIN, 0};
    const int r = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1'000'000)));
    if (r < 0) {
      if (errno == EINTR) continue;
      poison(std::string("poll failed: ") + std::strerror(errno));
    }
    if (r == 0) continue;
    const ssize_t n = read(from_child_, buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR) continue;
      poison(std::string("read from server failed: ") + std::strerror(errno));
    }
    if (n == 0) poison("server exited");
    decoder_.feed(buf, static_cast<std::size_t>(n));
  }
}

BridgeFrame BridgeModel::call(BridgeFrame request, std::chrono::milliseconds timeout) {
  if (!poison_reason_.empty()) throw ModelError("bridge unusable: " + poison_reason_);
  const std::uint64_t id = request.id();
  send(request);
  BridgeFrame reply = receive(timeout);
  std::uint64_t reply_id = 0;
  try {
    reply_id = reply.id();
    (void)reply.msg();
  } catch (const ProtocolError& e) {
    poison(e.what(), true);
  }
  if (reply_id != id) {
    poison("response id " + std::to_string(reply_id) + " does not match request id " + std::to_string(id), true);
  }
  if (reply.msg() == "error") {
    // the server stays usable after reporting an error
    throw ModelError("bridge server error: " + reply.header.value("message", std::string("(no message)")));
  }
  return reply;
}

ScoreVector BridgeModel::forward(const VideoTensor& x) {
  check_input(x);
  std::lock_guard lock(mutex_);
  BridgeFrame req;
  req.header = {{"msg", "forward"}, {"id", next_id_++}, {"dims", dims_json(x.dims())}};
  req.payload = to_payload(x);
  const BridgeFrame reply = call(std::move(req), options_.call_timeout);
  if (reply.msg() != "result") poison("expected result frame, got '" + reply.msg() + "'", true);
  if (reply.payload.size() != static_cast<std::size_t>(class_count_)) {
    throw ValidationError("bridge forward returned " + std::to_string(reply.payload.size()) + " scores, expected " +
                          std::to_string(class_count_));
  }
  ScoreVector s(class_count_);
  for (Index i = 0; i < class_count_; ++i) {
    const double v = reply.payload[static_cast<std::size_t>(i)];
    if (!std::isfinite(v)) throw ValidationError("bridge forward returned a non-finite score");
    s[i] = v;
  }
  return s;
}

VideoTensor BridgeModel::gradient(const VideoTensor& x, Index c) {
  check_input(x);
  check_class(c);
  std::lock_guard lock(mutex_);
  BridgeFrame req;
  req.header = {{"msg", "grad"}, {"id", next_id_++}, {"dims", dims_json(x.dims())}, {"class", c}};
  req.payload = to_payload(x);
  const BridgeFrame reply = call(std::move(req), options_.call_timeout);
  if (reply.msg() != "result") poison("expected result frame, got '" + reply.msg() + "'", true);
  if (reply.payload.size() != static_cast<std::size_t>(x.size())) {
    throw ValidationError("bridge gradient payload has " + std::to_string(reply.payload.size()) +
                          " values, expected " + std::to_string(x.size()));
  }
  VideoTensor g(x.dims());
  for (Index i = 0; i < x.size(); ++i) {
    const double v = reply.payload[static_cast<std::size_t>(i)];
    if (!std::isfinite(v)) throw ValidationError("bridge gradient contains NaN or Inf");
    g.data()[i] = v;
  }
  return g;
}

}  // namespace videxp
