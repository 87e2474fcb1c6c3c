#include "fedstr/net/websocket.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/evp.h>
#include <openssl/rand.h>
#include <openssl/sha.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <sstream>

#include "fedstr/errors.hpp"

namespace fedstr::net {

namespace {

constexpr char kWsGuid[] = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

std::string base64(const std::uint8_t* data, std::size_t len) {
  std::string out;
  out.resize(4 * ((len + 2) / 3) + 1);
  int n = EVP_EncodeBlock(reinterpret_cast<std::uint8_t*>(out.data()), data,
                          static_cast<int>(len));
  out.resize(n);
  return out;
}

std::string ws_accept_token(const std::string& key) {
  std::string joined = key + kWsGuid;
  std::uint8_t digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const std::uint8_t*>(joined.data()), joined.size(), digest);
  return base64(digest, sizeof(digest));
}

// Reads an HTTP header block terminated by CRLFCRLF, with a size cap.
bool read_http_headers(int fd, std::string& out) {
  out.clear();
  char c;
  while (out.size() < 16384) {
    ssize_t n = ::recv(fd, &c, 1, 0);
    if (n <= 0) return false;
    out.push_back(c);
    if (out.size() >= 4 && out.compare(out.size() - 4, 4, "\r\n\r\n") == 0) return true;
  }
  return false;
}

std::string find_header(const std::string& block, const std::string& name) {
  std::istringstream in(block);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = line.substr(0, colon);
    for (auto& ch : key) ch = static_cast<char>(::tolower(ch));
    std::string lname = name;
    for (auto& ch : lname) ch = static_cast<char>(::tolower(ch));
    if (key == lname) {
      std::string value = line.substr(colon + 1);
      while (!value.empty() && value.front() == ' ') value.erase(value.begin());
      while (!value.empty() && (value.back() == ' ' || value.back() == '\r'))
        value.pop_back();
      return value;
    }
  }
  return {};
}

int tcp_connect(const std::string& host, std::uint16_t port,
                std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  std::string port_str = std::to_string(port);
  if (::getaddrinfo(host.c_str(), port_str.c_str(), &hints, &res) != 0) return -1;
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    timeval tv{};
    tv.tv_sec = static_cast<long>(timeout.count() / 1000);
    tv.tv_usec = static_cast<long>((timeout.count() % 1000) * 1000);
    ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd >= 0) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  return fd;
}

}  // namespace

std::optional<WsUrl> parse_ws_url(const std::string& url) {
  std::string rest;
  if (url.rfind("ws://", 0) == 0) {
    rest = url.substr(5);
  } else {
    return std::nullopt;  // wss:// (TLS) intentionally unsupported
  }
  WsUrl out;
  auto slash = rest.find('/');
  std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
  out.path = slash == std::string::npos ? "/" : rest.substr(slash);
  auto colon = hostport.rfind(':');
  if (colon == std::string::npos) {
    out.host = hostport;
    out.port = 80;
  } else {
    out.host = hostport.substr(0, colon);
    int p = ::atoi(hostport.substr(colon + 1).c_str());
    if (p <= 0 || p > 65535) return std::nullopt;
    out.port = static_cast<std::uint16_t>(p);
  }
  if (out.host.empty()) return std::nullopt;
  return out;
}

WsConnection::WsConnection(int fd, bool is_client) : fd_(fd), is_client_(is_client) {}

WsConnection::~WsConnection() { close(); }

bool WsConnection::read_exact(std::uint8_t* buf, std::size_t len) {
  std::size_t got = 0;
  while (got < len) {
    ssize_t n = ::recv(fd_, buf + got, len - got, 0);
    if (n <= 0) return false;
    got += static_cast<std::size_t>(n);
  }
  return true;
}

bool WsConnection::write_all(const std::uint8_t* buf, std::size_t len) {
  std::size_t sent = 0;
  while (sent < len) {
    ssize_t n = ::send(fd_, buf + sent, len - sent, MSG_NOSIGNAL);
    if (n <= 0) return false;
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

bool WsConnection::send_frame(std::uint8_t opcode, const std::uint8_t* payload,
                              std::size_t len) {
  std::lock_guard lk(write_mu_);
  if (closed_.load()) return false;
  std::uint8_t header[14];
  std::size_t header_len = 0;
  header[0] = static_cast<std::uint8_t>(0x80 | opcode);  // FIN set
  std::uint8_t mask_bit = is_client_ ? 0x80 : 0x00;
  if (len < 126) {
    header[1] = static_cast<std::uint8_t>(mask_bit | len);
    header_len = 2;
  } else if (len <= 0xffff) {
    header[1] = static_cast<std::uint8_t>(mask_bit | 126);
    header[2] = static_cast<std::uint8_t>(len >> 8);
    header[3] = static_cast<std::uint8_t>(len & 0xff);
    header_len = 4;
  } else {
    header[1] = static_cast<std::uint8_t>(mask_bit | 127);
    std::uint64_t l = len;
    for (int i = 0; i < 8; ++i)
      header[2 + i] = static_cast<std::uint8_t>(l >> (56 - 8 * i));
    header_len = 10;
  }
  std::uint8_t mask[4] = {0, 0, 0, 0};
  if (is_client_) {
    RAND_bytes(mask, 4);
    std::memcpy(header + header_len, mask, 4);
    header_len += 4;
  }
  if (!write_all(header, header_len)) return false;
  if (len == 0) return true;
  if (!is_client_) return write_all(payload, len);
  std::vector<std::uint8_t> masked(len);
  for (std::size_t i = 0; i < len; ++i) masked[i] = payload[i] ^ mask[i % 4];
  return write_all(masked.data(), len);
}

bool WsConnection::send_text(const std::string& payload) {
  return send_frame(0x1, reinterpret_cast<const std::uint8_t*>(payload.data()),
                    payload.size());
}

std::optional<std::string> WsConnection::receive() {
  std::string message;
  bool in_fragment = false;
  for (;;) {
    std::uint8_t hdr[2];
    if (!read_exact(hdr, 2)) return std::nullopt;
    bool fin = hdr[0] & 0x80;
    std::uint8_t opcode = hdr[0] & 0x0f;
    bool masked = hdr[1] & 0x80;
    std::uint64_t len = hdr[1] & 0x7f;
    if (len == 126) {
      std::uint8_t ext[2];
      if (!read_exact(ext, 2)) return std::nullopt;
      len = (std::uint64_t(ext[0]) << 8) | ext[1];
    } else if (len == 127) {
      std::uint8_t ext[8];
      if (!read_exact(ext, 8)) return std::nullopt;
      len = 0;
      for (int i = 0; i < 8; ++i) len = (len << 8) | ext[i];
    }
    if (len > kMaxMessageBytes || message.size() + len > kMaxMessageBytes) {
      close();
      return std::nullopt;
    }
    std::uint8_t mask[4] = {0, 0, 0, 0};
    if (masked && !read_exact(mask, 4)) return std::nullopt;
    std::string payload(len, '\0');
    if (len && !read_exact(reinterpret_cast<std::uint8_t*>(payload.data()), len))
      return std::nullopt;
    if (masked)
      for (std::size_t i = 0; i < payload.size(); ++i) payload[i] ^= mask[i % 4];

    switch (opcode) {
      case 0x0:  // continuation
        if (!in_fragment) return std::nullopt;
        message += payload;
        if (fin) return message;
        break;
      case 0x1:
      case 0x2:
        if (fin) return payload;
        in_fragment = true;
        message = std::move(payload);
        break;
      case 0x8:  // close: echo once and end
        send_frame(0x8, reinterpret_cast<const std::uint8_t*>(payload.data()),
                   std::min<std::size_t>(payload.size(), 125));
        close();
        return std::nullopt;
      case 0x9:  // ping
        send_frame(0xA, reinterpret_cast<const std::uint8_t*>(payload.data()),
                   payload.size());
        break;
      case 0xA:  // pong
        break;
      default:
        close();
        return std::nullopt;
    }
  }
}

void WsConnection::close() {
  bool expected = false;
  if (!closed_.compare_exchange_strong(expected, true)) return;
  {
    // best-effort close frame; ignore failures
    std::lock_guard lk(write_mu_);
    std::uint8_t hdr[6] = {0x88, 0x00, 0, 0, 0, 0};
    std::size_t n = 2;
    if (is_client_) {
      hdr[1] = 0x80;
      n = 6;
    }
    write_all(hdr, n);
  }
  ::shutdown(fd_, SHUT_RDWR);
  ::close(fd_);
}

WsConnectionPtr ws_connect(const std::string& url, std::chrono::milliseconds timeout) {
  auto parsed = parse_ws_url(url);
  if (!parsed) {
    if (url.rfind("wss://", 0) == 0)
      throw RelayError("wss:// relays are not supported by this client (tls): " + url);
    throw RelayError("invalid ws url: " + url);
  }
  int fd = tcp_connect(parsed->host, parsed->port, timeout);
  if (fd < 0) throw RelayError("cannot connect to " + url);

  std::uint8_t key_raw[16];
  RAND_bytes(key_raw, sizeof(key_raw));
  std::string key = base64(key_raw, sizeof(key_raw));

  std::ostringstream req;
  req << "GET " << parsed->path << " HTTP/1.1\r\n"
      << "Host: " << parsed->host << ":" << parsed->port << "\r\n"
      << "Upgrade: websocket\r\nConnection: Upgrade\r\n"
      << "Sec-WebSocket-Key: " << key << "\r\n"
      << "Sec-WebSocket-Version: 13\r\n\r\n";
  std::string req_str = req.str();
  if (::send(fd, req_str.data(), req_str.size(), MSG_NOSIGNAL) !=
      static_cast<ssize_t>(req_str.size())) {
    ::close(fd);
    throw RelayError("handshake write failed: " + url);
  }
  std::string response;
  if (!read_http_headers(fd, response) || response.find(" 101 ") == std::string::npos ||
      find_header(response, "Sec-WebSocket-Accept") != ws_accept_token(key)) {
    ::close(fd);
    throw RelayError("websocket handshake rejected by " + url);
  }
  return std::make_shared<WsConnection>(fd, /*is_client=*/true);
}

WsServer::WsServer(const std::string& bind_address, Handler handler)
    : handler_(std::move(handler)) {
  auto colon = bind_address.rfind(':');
  if (colon == std::string::npos)
    throw ConfigError("bind address must be host:port, got " + bind_address);
  bind_host_ = bind_address.substr(0, colon);
  bind_port_ = static_cast<std::uint16_t>(::atoi(bind_address.substr(colon + 1).c_str()));
}

WsServer::~WsServer() { stop(); }

void WsServer::start() {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw RelayError("socket() failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(bind_port_);
  if (::inet_pton(AF_INET, bind_host_.c_str(), &addr.sin_addr) != 1)
    throw RelayError("unparseable bind host: " + bind_host_);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw RelayError("cannot bind " + bind_host_ + ":" + std::to_string(bind_port_));
  }
  if (::listen(listen_fd_, 64) != 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw RelayError("listen() failed");
  }
  sockaddr_in bound{};
  socklen_t blen = sizeof(bound);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
  port_ = ntohs(bound.sin_port);
  accept_thread_ = std::thread([this] { accept_loop(); });
}

void WsServer::accept_loop() {
  for (;;) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (stopping_.load()) return;
      continue;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    std::string headers;
    if (!read_http_headers(fd, headers)) {
      ::close(fd);
      continue;
    }
    std::string key = find_header(headers, "Sec-WebSocket-Key");
    if (key.empty()) {
      const char* resp = "HTTP/1.1 400 Bad Request\r\n\r\n";
      ::send(fd, resp, std::strlen(resp), MSG_NOSIGNAL);
      ::close(fd);
      continue;
    }
    std::ostringstream resp;
    resp << "HTTP/1.1 101 Switching Protocols\r\n"
         << "Upgrade: websocket\r\nConnection: Upgrade\r\n"
         << "Sec-WebSocket-Accept: " << ws_accept_token(key) << "\r\n\r\n";
    std::string resp_str = resp.str();
    if (::send(fd, resp_str.data(), resp_str.size(), MSG_NOSIGNAL) !=
        static_cast<ssize_t>(resp_str.size())) {
      ::close(fd);
      continue;
    }
    auto conn = std::make_shared<WsConnection>(fd, /*is_client=*/false);
    std::lock_guard lk(sessions_mu_);
    sessions_.emplace_back(conn);
    session_threads_.emplace_back([this, conn] { handler_(conn); });
  }
}

void WsServer::stop() {
  bool expected = false;
  if (!stopping_.compare_exchange_strong(expected, true)) return;
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  {
    std::lock_guard lk(sessions_mu_);
    for (auto& weak : sessions_)
      if (auto conn = weak.lock()) conn->close();
  }
  std::vector<std::thread> threads;
  {
    std::lock_guard lk(sessions_mu_);
    threads.swap(session_threads_);
  }
  for (auto& t : threads)
    if (t.joinable()) t.join();
  listen_fd_ = -1;
}

std::string WsServer::url() const {
  return "ws://" + bind_host_ + ":" + std::to_string(port_);
}

}  // namespace fedstr::net
