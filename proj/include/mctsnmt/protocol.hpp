#pragma once

#include <stdexcept>
#include <string>

namespace mctsnmt::protocol {

/// Frames are a 4-byte big-endian payload length followed by UTF-8 JSON.
inline constexpr std::size_t kMaxFrame = 64u << 20;

class FrameError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_frame(int fd, const std::string& payload);
std::string read_frame(int fd);

}  // namespace mctsnmt::protocol
