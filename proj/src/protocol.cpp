#include "mctsnmt/protocol.hpp"

#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>

namespace mctsnmt::protocol {

namespace {

void write_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw FrameError(std::string("send failed: ") + std::strerror(errno));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

void read_all(int fd, char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t r = ::recv(fd, data, n, 0);
    if (r == 0) throw FrameError("connection closed by peer");
    if (r < 0) {
      if (errno == EINTR) continue;
      throw FrameError(std::string("recv failed: ") + std::strerror(errno));
    }
    data += r;
    n -= static_cast<std::size_t>(r);
  }
}

}  // namespace

void write_frame(int fd, const std::string& payload) {
  if (payload.size() > kMaxFrame) throw FrameError("frame too large");
  const auto n = static_cast<std::uint32_t>(payload.size());
  const char header[4] = {static_cast<char>((n >> 24) & 0xff),
                          static_cast<char>((n >> 16) & 0xff),
                          static_cast<char>((n >> 8) & 0xff),
                          static_cast<char>(n & 0xff)};
  write_all(fd, header, 4);
  write_all(fd, payload.data(), payload.size());
}

std::string read_frame(int fd) {
  unsigned char header[4];
  read_all(fd, reinterpret_cast<char*>(header), 4);
  const std::uint32_t n = (std::uint32_t{header[0]} << 24) |
                          (std::uint32_t{header[1]} << 16) |
                          (std::uint32_t{header[2]} << 8) | header[3];
  if (n > kMaxFrame) throw FrameError("frame too large");
  std::string payload(n, '\0');
  read_all(fd, payload.data(), n);
  return payload;
}

}  // namespace mctsnmt::protocol
