#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstring>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "prag/common.hpp"
#include "prag/perfmodel.hpp"
#include "prag/pipeline.hpp"

namespace prag {

// Length-prefixed little-endian binary frames over TCP:
//   magic "PRAGRPC1" (8 bytes), u32 frame length (type byte + payload),
//   u8 message type, payload.
// Message types: 0x01 RetrievalRequest, 0x81 RetrievalResponse, 0xFF Error.

inline constexpr char kWireMagic[8] = {'P', 'R', 'A', 'G', 'R', 'P', 'C', '1'};
inline constexpr std::uint8_t kMsgRequest = 0x01;
inline constexpr std::uint8_t kMsgResponse = 0x81;
inline constexpr std::uint8_t kMsgError = 0xFF;
inline constexpr std::uint32_t kMaxFrameLen = 64u << 20;

// Error frame codes.
inline constexpr std::uint32_t kErrBadMagic = 1;
inline constexpr std::uint32_t kErrBadVersion = 2;
inline constexpr std::uint32_t kErrBadType = 3;
inline constexpr std::uint32_t kErrBadPayload = 4;

struct RetrievalRequest {
    std::uint64_t request_id = 0;
    std::uint32_t k = 2;
    NprobeDirective directive;
    TokenChunk query_tokens;

    bool operator==(const RetrievalRequest& o) const {
        return request_id == o.request_id && k == o.k &&
               directive.auto_mode == o.directive.auto_mode &&
               directive.nprobe == o.directive.nprobe &&
               directive.budget_s == o.directive.budget_s && query_tokens == o.query_tokens;
    }
};

struct RetrievalResponse {
    std::uint64_t request_id = 0;
    std::uint32_t nprobe_used = 0;
    double server_latency_s = 0.0;
    std::vector<Neighbor> neighbors;

    bool operator==(const RetrievalResponse&) const = default;
};

struct WireError {
    std::uint32_t code = 0;
    std::string message;
};

struct TimeoutError : std::runtime_error {
    TimeoutError(const std::string& what, double elapsed)
        : std::runtime_error(what), elapsed_s(elapsed) {}
    double elapsed_s;
};

namespace wire {

inline void put_bytes(std::vector<std::uint8_t>& buf, const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
}

template <typename T>
void put(std::vector<std::uint8_t>& buf, T v) {
    put_bytes(buf, &v, sizeof(T));
}

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    template <typename T>
    T get() {
        if (pos_ + sizeof(T) > size_) throw FormatError("wire payload truncated");
        T v;
        std::memcpy(&v, data_ + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    void get_bytes(void* out, std::size_t n) {
        if (pos_ + n > size_) throw FormatError("wire payload truncated");
        std::memcpy(out, data_ + pos_, n);
        pos_ += n;
    }

    bool exhausted() const { return pos_ == size_; }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

}  // namespace wire

inline std::vector<std::uint8_t> encode_request(const RetrievalRequest& req) {
    std::vector<std::uint8_t> payload;
    wire::put(payload, req.request_id);
    wire::put(payload, req.k);
    wire::put<std::uint8_t>(payload, req.directive.auto_mode ? 1 : 0);
    wire::put(payload, req.directive.nprobe);
    wire::put(payload, req.directive.budget_s);
    wire::put<std::uint32_t>(payload, static_cast<std::uint32_t>(req.query_tokens.size()));
    wire::put_bytes(payload, req.query_tokens.data(), req.query_tokens.size() * sizeof(TokenId));
    return payload;
}

inline RetrievalRequest decode_request(const std::vector<std::uint8_t>& payload) {
    wire::Reader r(payload.data(), payload.size());
    RetrievalRequest req;
    req.request_id = r.get<std::uint64_t>();
    req.k = r.get<std::uint32_t>();
    req.directive.auto_mode = r.get<std::uint8_t>() != 0;
    req.directive.nprobe = r.get<std::uint32_t>();
    req.directive.budget_s = r.get<double>();
    std::uint32_t m = r.get<std::uint32_t>();
    req.query_tokens.resize(m);
    r.get_bytes(req.query_tokens.data(), m * sizeof(TokenId));
    return req;
}

inline std::vector<std::uint8_t> encode_response(const RetrievalResponse& resp) {
    std::vector<std::uint8_t> payload;
    wire::put(payload, resp.request_id);
    wire::put(payload, resp.nprobe_used);
    wire::put(payload, resp.server_latency_s);
    wire::put<std::uint32_t>(payload, static_cast<std::uint32_t>(resp.neighbors.size()));
    for (const auto& n : resp.neighbors) {
        wire::put(payload, n.distance);
        wire::put<std::uint32_t>(payload, static_cast<std::uint32_t>(n.chunk_tokens.size()));
        wire::put_bytes(payload, n.chunk_tokens.data(), n.chunk_tokens.size() * sizeof(TokenId));
        wire::put<std::uint32_t>(payload, static_cast<std::uint32_t>(n.continuation_tokens.size()));
        wire::put_bytes(payload, n.continuation_tokens.data(),
                        n.continuation_tokens.size() * sizeof(TokenId));
    }
    return payload;
}

inline RetrievalResponse decode_response(const std::vector<std::uint8_t>& payload) {
    wire::Reader r(payload.data(), payload.size());
    RetrievalResponse resp;
    resp.request_id = r.get<std::uint64_t>();
    resp.nprobe_used = r.get<std::uint32_t>();
    resp.server_latency_s = r.get<double>();
    std::uint32_t count = r.get<std::uint32_t>();
    resp.neighbors.resize(count);
    for (auto& n : resp.neighbors) {
        n.distance = r.get<float>();
        std::uint32_t mc = r.get<std::uint32_t>();
        n.chunk_tokens.resize(mc);
        r.get_bytes(n.chunk_tokens.data(), mc * sizeof(TokenId));
        std::uint32_t mf = r.get<std::uint32_t>();
        n.continuation_tokens.resize(mf);
        r.get_bytes(n.continuation_tokens.data(), mf * sizeof(TokenId));
    }
    return resp;
}

inline std::vector<std::uint8_t> encode_error(const WireError& err) {
    std::vector<std::uint8_t> payload;
    wire::put(payload, err.code);
    wire::put<std::uint32_t>(payload, static_cast<std::uint32_t>(err.message.size()));
    wire::put_bytes(payload, err.message.data(), err.message.size());
    return payload;
}

inline WireError decode_error(const std::vector<std::uint8_t>& payload) {
    wire::Reader r(payload.data(), payload.size());
    WireError err;
    err.code = r.get<std::uint32_t>();
    std::uint32_t len = r.get<std::uint32_t>();
    err.message.resize(len);
    r.get_bytes(err.message.data(), len);
    return err;
}

namespace detail {

inline bool write_all(int fd, const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    while (n > 0) {
        ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
        if (w <= 0) return false;
        p += w;
        n -= static_cast<std::size_t>(w);
    }
    return true;
}

// Reads exactly n bytes; timeout_ms < 0 means block indefinitely.
// Returns 0 on success, -1 on EOF/error, -2 on timeout.
inline int read_exact(int fd, void* out, std::size_t n, int timeout_ms = -1) {
    auto* p = static_cast<std::uint8_t*>(out);
    while (n > 0) {
        if (timeout_ms >= 0) {
            pollfd pfd{fd, POLLIN, 0};
            int rc = ::poll(&pfd, 1, timeout_ms);
            if (rc == 0) return -2;
            if (rc < 0) return -1;
        }
        ssize_t r = ::recv(fd, p, n, 0);
        if (r <= 0) return -1;
        p += r;
        n -= static_cast<std::size_t>(r);
    }
    return 0;
}

inline bool send_frame(int fd, std::uint8_t type, const std::vector<std::uint8_t>& payload) {
    std::vector<std::uint8_t> frame;
    frame.reserve(13 + payload.size());
    wire::put_bytes(frame, kWireMagic, 8);
    wire::put<std::uint32_t>(frame, static_cast<std::uint32_t>(1 + payload.size()));
    wire::put(frame, type);
    wire::put_bytes(frame, payload.data(), payload.size());
    return write_all(fd, frame.data(), frame.size());
}

}  // namespace detail

// Serves retrieval over loopback/LAN TCP. The database, index, and perf
// model are immutable shared reads; each connection gets its own thread.
class RetrievalService {
public:
    RetrievalService(const Database& db, const IvfIndex& index, const PqCodebook& codebook,
                     std::uint64_t embed_seed, RetrievalPerfModel perf = {},
                     double safety_margin = 0.10)
        : retriever_(db, index, codebook, embed_seed, perf, safety_margin) {}

    ~RetrievalService() { stop(); }

    // Binds and starts accepting; port 0 picks an ephemeral port. Returns
    // the bound port.
    std::uint16_t start(const std::string& address = "127.0.0.1", std::uint16_t port = 0) {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) throw ConfigError("service: socket() failed");
        int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        if (::inet_pton(AF_INET, address.c_str(), &addr.sin_addr) != 1) {
            throw ConfigError("service: invalid bind address " + address);
        }
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            throw ConfigError("service: bind failed on " + address + ":" + std::to_string(port));
        }
        if (::listen(listen_fd_, 16) != 0) throw ConfigError("service: listen failed");
        socklen_t len = sizeof(addr);
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
        running_ = true;
        accept_thread_ = std::thread([this] { accept_loop(); });
        return port_;
    }

    std::uint16_t port() const { return port_; }

    void stop() {
        if (!running_.exchange(false)) return;
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        {
            std::lock_guard lock(conn_mu_);
            for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
        }
        if (accept_thread_.joinable()) accept_thread_.join();
        for (auto& t : conn_threads_) {
            if (t.joinable()) t.join();
        }
        conn_threads_.clear();
    }

private:
    void accept_loop() {
        while (running_) {
            int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd < 0) break;
            {
                std::lock_guard lock(conn_mu_);
                conn_fds_.insert(fd);
            }
            conn_threads_.emplace_back([this, fd] { handle_connection(fd); });
        }
    }

    void handle_connection(int fd) {
        for (;;) {
            char magic[8];
            if (detail::read_exact(fd, magic, 8) != 0) break;
            if (std::memcmp(magic, kWireMagic, 8) != 0) {
                bool version_mismatch = std::memcmp(magic, kWireMagic, 7) == 0;
                WireError err{version_mismatch ? kErrBadVersion : kErrBadMagic,
                              version_mismatch ? "unsupported protocol version"
                                               : "bad frame magic"};
                detail::send_frame(fd, kMsgError, encode_error(err));
                if (version_mismatch) break;  // framing is lost for good on version skew
                continue;
            }
            std::uint32_t frame_len;
            if (detail::read_exact(fd, &frame_len, 4) != 0) break;
            if (frame_len < 1 || frame_len > kMaxFrameLen) {
                detail::send_frame(fd, kMsgError, encode_error({kErrBadPayload, "bad frame length"}));
                break;
            }
            std::vector<std::uint8_t> body(frame_len);
            if (detail::read_exact(fd, body.data(), frame_len) != 0) break;
            std::uint8_t type = body[0];
            std::vector<std::uint8_t> payload(body.begin() + 1, body.end());
            if (type != kMsgRequest) {
                detail::send_frame(fd, kMsgError,
                                   encode_error({kErrBadType, "unexpected message type"}));
                continue;
            }
            try {
                auto req = decode_request(payload);
                Stopwatch clock;
                auto outcome = retriever_.retrieve(req.query_tokens, req.k, req.directive);
                RetrievalResponse resp;
                resp.request_id = req.request_id;
                resp.nprobe_used = outcome.nprobe_used;
                resp.server_latency_s = clock.elapsed_s();
                resp.neighbors = std::move(outcome.neighbors);
                if (!detail::send_frame(fd, kMsgResponse, encode_response(resp))) break;
            } catch (const std::exception& e) {
                detail::send_frame(fd, kMsgError, encode_error({kErrBadPayload, e.what()}));
            }
        }
        ::close(fd);
        std::lock_guard lock(conn_mu_);
        conn_fds_.erase(fd);
    }

    LocalRetriever retriever_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::vector<std::thread> conn_threads_;
    std::mutex conn_mu_;
    std::set<int> conn_fds_;
};

// Blocking client over one TCP connection. Round trips are measured on a
// monotonic clock; T_Network can be estimated as round_trip - server_latency.
class RetrievalClient {
public:
    RetrievalClient(const std::string& host, std::uint16_t port) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw ConfigError("client: socket() failed");
        int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
            throw ConfigError("client: invalid host " + host);
        }
        if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            ::close(fd_);
            fd_ = -1;
            throw ConfigError("client: connect failed to " + host + ":" + std::to_string(port));
        }
    }

    ~RetrievalClient() {
        if (fd_ >= 0) ::close(fd_);
    }

    RetrievalClient(const RetrievalClient&) = delete;
    RetrievalClient& operator=(const RetrievalClient&) = delete;

    struct Result {
        RetrievalResponse response;
        double round_trip_s = 0.0;
    };

    // Sends one request and waits for its response. A timeout raises
    // TimeoutError carrying the elapsed time.
    Result retrieve(const RetrievalRequest& request, double timeout_s = 30.0) {
        Stopwatch clock;
        if (!detail::send_frame(fd_, kMsgRequest, encode_request(request))) {
            throw ConfigError("client: send failed");
        }
        int timeout_ms = timeout_s < 0 ? -1 : static_cast<int>(std::max(1.0, timeout_s * 1000.0));
        auto [type, payload] = read_frame(timeout_ms, clock);
        if (type == kMsgError) {
            auto err = decode_error(payload);
            throw ConfigError("server error " + std::to_string(err.code) + ": " + err.message);
        }
        if (type != kMsgResponse) throw FormatError("client: unexpected message type");
        Result result;
        result.response = decode_response(payload);
        result.round_trip_s = clock.elapsed_s();
        if (result.response.request_id != request.request_id) {
            throw FormatError("client: response id does not echo request id");
        }
        return result;
    }

private:
    std::pair<std::uint8_t, std::vector<std::uint8_t>> read_frame(int timeout_ms,
                                                                  const Stopwatch& clock) {
        char magic[8];
        check(detail::read_exact(fd_, magic, 8, timeout_ms), clock);
        if (std::memcmp(magic, kWireMagic, 8) != 0) throw FormatError("client: bad frame magic");
        std::uint32_t frame_len;
        check(detail::read_exact(fd_, &frame_len, 4, timeout_ms), clock);
        if (frame_len < 1 || frame_len > kMaxFrameLen) throw FormatError("client: bad frame length");
        std::vector<std::uint8_t> body(frame_len);
        check(detail::read_exact(fd_, body.data(), frame_len, timeout_ms), clock);
        return {body[0], std::vector<std::uint8_t>(body.begin() + 1, body.end())};
    }

    void check(int rc, const Stopwatch& clock) {
        if (rc == -2) throw TimeoutError("client: request timed out", clock.elapsed_s());
        if (rc != 0) throw ConfigError("client: connection closed");
    }

    int fd_ = -1;
};

// Retriever adapter so the pipeline can run against a remote service. A
// retrieval timeout surfaces as an exception, which the pipeline converts
// into an aborted run with the partial trace attached.
class NetworkRetriever : public Retriever {
public:
    NetworkRetriever(const std::string& host, std::uint16_t port, std::uint32_t nlist,
                     double timeout_s = 30.0)
        : client_(host, port), nlist_(nlist), timeout_s_(timeout_s) {}

    RetrievalOutcome retrieve(const TokenChunk& query_tokens, std::uint32_t k,
                              NprobeDirective directive) override {
        RetrievalRequest req;
        req.request_id = next_id_++;
        req.k = k;
        req.directive = directive;
        req.query_tokens = query_tokens;
        auto result = client_.retrieve(req, timeout_s_);
        return {std::move(result.response.neighbors), result.response.nprobe_used,
                result.response.server_latency_s};
    }

    std::uint32_t nlist() const override { return nlist_; }

private:
    RetrievalClient client_;
    std::uint32_t nlist_;
    double timeout_s_;
    std::uint64_t next_id_ = 1;
};

}  // namespace prag
