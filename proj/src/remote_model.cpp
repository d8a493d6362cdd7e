#include <arpa/inet.h>
#include <netdb.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <json.hpp>

#include "mctsnmt/model.hpp"
#include "mctsnmt/protocol.hpp"

namespace mctsnmt {

using nlohmann::json;

namespace {

int connect_unix(const std::string& path) {
  sockaddr_un addr{};
  if (path.size() >= sizeof(addr.sun_path)) return -1;
  addr.sun_family = AF_UNIX;
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (fd < 0) return -1;
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd);
    return -1;
  }
  return fd;
}

int connect_tcp(const std::string& host, const std::string& port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0) return -1;
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  return fd;
}

json state_json(const State& s) {
  return json{{"src", s.src}, {"prefix", s.prefix}};
}

}  // namespace

struct RemoteModel::Connection {
  int fd = -1;
  ~Connection() {
    if (fd >= 0) ::close(fd);
  }
};

RemoteModel::RemoteModel(std::string endpoint, std::size_t vocab_size,
                         std::string vocab_fingerprint)
    : endpoint_(std::move(endpoint)),
      vocab_size_(vocab_size),
      conn_(std::make_unique<Connection>()) {
  set_vocab_fingerprint(std::move(vocab_fingerprint));
  if (endpoint_.rfind("unix:", 0) == 0) {
    conn_->fd = connect_unix(endpoint_.substr(5));
  } else if (endpoint_.rfind("tcp:", 0) == 0) {
    const std::string hp = endpoint_.substr(4);
    const auto colon = hp.rfind(':');
    if (colon == std::string::npos) fail("endpoint lacks a port");
    conn_->fd = connect_tcp(hp.substr(0, colon), hp.substr(colon + 1));
  } else {
    fail("endpoint must start with unix: or tcp:");
  }
  if (conn_->fd < 0) fail(std::string("unreachable: ") + std::strerror(errno));

  const json hello{{"type", "hello"},
                   {"id", next_id_++},
                   {"vocab_size", vocab_size_},
                   {"fingerprint", this->vocab_fingerprint()}};
  const json reply = json::parse(request(hello.dump()));
  if (reply.value("type", "") != "hello_ok") fail("handshake rejected");
}

RemoteModel::~RemoteModel() = default;

void RemoteModel::fail(const std::string& what) const {
  throw Error("remote model " + endpoint_ + ": " + what);
}

std::string RemoteModel::request(const std::string& payload) const {
  const int fd = conn_->fd;
  if (fd < 0) fail("connection closed");
  try {
    protocol::write_frame(fd, payload);
    std::string reply = protocol::read_frame(fd);
    const json j = json::parse(reply);
    if (j.value("type", "") == "error") {
      fail("error " + j.value("code", std::string("?")) + ": " +
           j.value("message", std::string()));
    }
    const json sent = json::parse(payload);
    if (!j.contains("id") || j["id"] != sent["id"]) {
      fail("response id does not match request id");
    }
    return reply;
  } catch (const json::exception& e) {
    fail(std::string("malformed response: ") + e.what());
  } catch (const protocol::FrameError& e) {
    fail(e.what());
  }
}

std::vector<Evaluation> RemoteModel::evaluate_batch(
    std::span<const State> states) const {
  if (states.empty()) throw Error("evaluate_batch: empty batch");
  std::lock_guard lock(mutex_);
  json msg{{"type", "eval"}, {"id", next_id_++}, {"states", json::array()}};
  for (const State& s : states) msg["states"].push_back(state_json(s));
  const json reply = json::parse(request(msg.dump()));
  if (reply.value("type", "") != "eval_ok") fail("unexpected reply type");
  try {
    const auto& priors = reply.at("priors");
    const auto& values = reply.at("values");
    if (priors.size() != states.size() || values.size() != states.size()) {
      fail("reply batch size mismatch");
    }
    std::vector<Evaluation> out;
    out.reserve(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
      Evaluation ev{priors[i].get<std::vector<double>>(), values[i].get<double>()};
      if (ev.priors.size() != vocab_size_) fail("prior vector length mismatch");
      if (ev.value < 0.0 || ev.value > 1.0) fail("value outside [0, 1]");
      out.push_back(std::move(ev));
    }
    return out;
  } catch (const json::exception& e) {
    fail(std::string("malformed eval reply: ") + e.what());
  }
}

LossReport RemoteModel::apply_update(std::span<const TrainingSample> batch,
                                     const TrainParams& params) {
  params.validate();
  std::lock_guard lock(mutex_);
  json msg{{"type", "train"},
           {"id", next_id_++},
           {"lr", params.learning_rate},
           {"c", params.l2},
           {"value_weight", params.value_loss_weight},
           {"samples", json::array()}};
  for (const TrainingSample& s : batch) {
    json probs = json::object();
    for (const ActionProb& ap : s.visit_probs) {
      probs[std::to_string(ap.action)] = ap.prob;
    }
    msg["samples"].push_back(json{{"src", s.state.src},
                                  {"prefix", s.state.prefix},
                                  {"probs", probs},
                                  {"bleu", s.bleu}});
  }
  const json reply = json::parse(request(msg.dump()));
  if (reply.value("type", "") != "train_ok") fail("unexpected reply type");
  try {
    const auto& loss = reply.at("loss");
    return LossReport{loss.value("total", 0.0), loss.value("value_term", 0.0),
                      loss.value("policy_term", 0.0), loss.value("l2_term", 0.0)};
  } catch (const json::exception& e) {
    fail(std::string("malformed train reply: ") + e.what());
  }
}

void RemoteModel::remote_save(const std::string& path) {
  std::lock_guard lock(mutex_);
  const json msg{{"type", "save"}, {"id", next_id_++}, {"path", path}};
  request(msg.dump());
}

void RemoteModel::remote_load(const std::string& path) {
  std::lock_guard lock(mutex_);
  const json msg{{"type", "load"}, {"id", next_id_++}, {"path", path}};
  request(msg.dump());
}

void RemoteModel::shutdown() {
  std::lock_guard lock(mutex_);
  if (conn_->fd < 0) return;
  const json msg{{"type", "shutdown"}, {"id", next_id_++}};
  try {
    protocol::write_frame(conn_->fd, msg.dump());
  } catch (const protocol::FrameError&) {
    // Server may already be gone.
  }
  ::close(conn_->fd);
  conn_->fd = -1;
}

}  // namespace mctsnmt
