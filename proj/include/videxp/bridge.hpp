#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "videxp/errors.hpp"
#include "videxp/models.hpp"

namespace videxp {

/// One message on the bridge: u32 LE header length, UTF-8 JSON header, then
/// header["payload_len"] little-endian f32 values.
struct BridgeFrame {
  nlohmann::json header = nlohmann::json::object();
  std::vector<float> payload;

  std::string msg() const;
  std::uint64_t id() const;
};

/// Largest header accepted by the decoder.
inline constexpr std::uint32_t kMaxHeaderBytes = 1u << 20;

/// Serializes a frame. payload_len is written from payload.size().
std::string encode_frame(const BridgeFrame& frame);

/// Incremental parser for a byte stream of frames.
class FrameDecoder {
 public:
  void feed(const char* data, std::size_t size);
  void feed(const std::string& bytes) { feed(bytes.data(), bytes.size()); }
  /// Next complete frame, or nullopt until more bytes arrive.
  std::optional<BridgeFrame> next();
  std::size_t buffered() const { return buffer_.size() - pos_; }

 private:
  std::string buffer_;
  std::size_t pos_ = 0;
};

/// All frames in a complete byte sequence; trailing partial data is a ProtocolError.
std::vector<BridgeFrame> decode_frames(const std::string& bytes);

struct BridgeOptions {
  std::chrono::milliseconds handshake_timeout{30'000};
  std::chrono::milliseconds call_timeout{120'000};
};

/// Model served by a child process over its standard streams.
///
/// Calls are serialized by an internal mutex and strictly alternate request
/// and response. Once the child exits, a read times out or a frame is
/// malformed, the adapter is poisoned and every later call throws ModelError.
class BridgeModel final : public ModelAdapter {
 public:
  BridgeModel(const BridgeModel&) = delete;
  BridgeModel& operator=(const BridgeModel&) = delete;
  ~BridgeModel() override;

  Index class_count() const override { return class_count_; }
  VideoTensor::Dims input_dims() const override { return input_dims_; }
  bool concurrency_safe() const override { return false; }

  ScoreVector forward(const VideoTensor& x) override;
  VideoTensor gradient(const VideoTensor& x, Index c) override;

  bool poisoned() const;
  const std::string& server_name() const { return server_name_; }
  int child_pid() const { return pid_; }

  friend std::unique_ptr<BridgeModel> spawn_bridge(const std::vector<std::string>& command,
                                                   const BridgeOptions& options);

 private:
  BridgeModel() = default;
  BridgeFrame call(BridgeFrame request, std::chrono::milliseconds timeout);
  void send(const BridgeFrame& frame);
  BridgeFrame receive(std::chrono::milliseconds timeout);
  /// Shuts the child down and throws: ProtocolError for a malformed or
  /// mismatched frame, ModelError for exits, timeouts and I/O failures.
  [[noreturn]] void poison(const std::string& why, bool protocol_violation = false);
  void shutdown();

  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  BridgeOptions options_;
  FrameDecoder decoder_;
  std::uint64_t next_id_ = 1;
  Index class_count_ = 0;
  VideoTensor::Dims input_dims_{};
  std::string server_name_;
  std::string poison_reason_;
  mutable std::mutex mutex_;
};

/// Launches `command` (argv[0] searched on PATH) and performs the hello handshake.
std::unique_ptr<BridgeModel> spawn_bridge(const std::vector<std::string>& command,
                                          const BridgeOptions& options = {});

/// Splits a command line on whitespace, honouring single and double quotes.
std::vector<std::string> split_command(const std::string& line);

}  // namespace videxp
