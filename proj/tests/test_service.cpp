#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "prag/service.hpp"

using namespace prag;

namespace {

struct ServiceFixture {
    Database db;
    IvfIndex index;
    PqCodebook codebook;

    ServiceFixture() {
        SplitMix64 rng(31);
        Corpus corpus;
        for (int d = 0; d < 6; ++d) {
            std::vector<TokenId> doc(320);
            for (auto& t : doc) t = 1 + static_cast<TokenId>(rng.next_below(256));
            corpus.documents.push_back(std::move(doc));
        }
        db = build_database(corpus, 64, 32, 7);
        TrainParams params;
        params.nlist = 8;
        std::tie(index, codebook) = train_index(db.embeddings, params);
    }

    TokenChunk random_query(SplitMix64& rng) const {
        TokenChunk q(64);
        for (auto& t : q) t = 1 + static_cast<TokenId>(rng.next_below(256));
        return q;
    }
};

RetrievalRequest random_request(SplitMix64& rng) {
    RetrievalRequest req;
    req.request_id = rng.next_u64();
    req.k = 1 + static_cast<std::uint32_t>(rng.next_below(8));
    req.directive.auto_mode = rng.next_below(2) == 1;
    req.directive.nprobe = static_cast<std::uint32_t>(rng.next_below(256));
    req.directive.budget_s = rng.next_double();
    req.query_tokens.resize(rng.next_below(128));
    for (auto& t : req.query_tokens) t = static_cast<TokenId>(rng.next_below(257));
    return req;
}

RetrievalResponse random_response(SplitMix64& rng) {
    RetrievalResponse resp;
    resp.request_id = rng.next_u64();
    resp.nprobe_used = static_cast<std::uint32_t>(rng.next_below(256));
    resp.server_latency_s = rng.next_double();
    resp.neighbors.resize(rng.next_below(5));
    for (auto& n : resp.neighbors) {
        n.distance = static_cast<float>(rng.next_gaussian());
        n.chunk_tokens.resize(rng.next_below(64));
        for (auto& t : n.chunk_tokens) t = static_cast<TokenId>(rng.next_below(257));
        n.continuation_tokens.resize(rng.next_below(64));
        for (auto& t : n.continuation_tokens) t = static_cast<TokenId>(rng.next_below(257));
    }
    return resp;
}

// Raw client socket for protocol-violation tests.
int raw_connect(std::uint16_t port) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(fd >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
    return fd;
}

std::pair<std::uint8_t, std::vector<std::uint8_t>> raw_read_frame(int fd) {
    char magic[8];
    REQUIRE(detail::read_exact(fd, magic, 8, 5000) == 0);
    REQUIRE(std::memcmp(magic, kWireMagic, 8) == 0);
    std::uint32_t len;
    REQUIRE(detail::read_exact(fd, &len, 4, 5000) == 0);
    std::vector<std::uint8_t> body(len);
    REQUIRE(detail::read_exact(fd, body.data(), len, 5000) == 0);
    return {body[0], std::vector<std::uint8_t>(body.begin() + 1, body.end())};
}

}  // namespace

TEST_CASE("request and response encoding round-trips 1000 random messages") {
    SplitMix64 rng(41);
    for (int i = 0; i < 1000; ++i) {
        auto req = random_request(rng);
        CHECK(decode_request(encode_request(req)) == req);
        auto resp = random_response(rng);
        CHECK(decode_response(encode_response(resp)) == resp);
    }
    WireError err{kErrBadPayload, "broken frame"};
    auto decoded = decode_error(encode_error(err));
    CHECK(decoded.code == err.code);
    CHECK(decoded.message == err.message);
}

TEST_CASE("truncated payloads are rejected") {
    SplitMix64 rng(42);
    auto payload = encode_request(random_request(rng));
    payload.resize(payload.size() / 2);
    CHECK_THROWS_AS(decode_request(payload), FormatError);
    CHECK_THROWS_AS(decode_response(std::vector<std::uint8_t>{1, 2, 3}), FormatError);
}

TEST_CASE("loopback retrieval matches the in-process retriever") {
    ServiceFixture fx;
    RetrievalService service(fx.db, fx.index, fx.codebook, 7);
    auto port = service.start();
    REQUIRE(port != 0);

    LocalRetriever local(fx.db, fx.index, fx.codebook, 7);
    RetrievalClient client("127.0.0.1", port);
    SplitMix64 rng(43);
    for (int q = 0; q < 20; ++q) {
        auto query = fx.random_query(rng);
        RetrievalRequest req;
        req.request_id = 1000 + q;
        req.k = 2;
        req.directive = NprobeDirective::fixed(4);
        req.query_tokens = query;
        auto remote = client.retrieve(req);
        auto in_process = local.retrieve(query, 2, NprobeDirective::fixed(4));
        CHECK(remote.response.request_id == req.request_id);
        CHECK(remote.response.nprobe_used == in_process.nprobe_used);
        CHECK(remote.response.neighbors == in_process.neighbors);
        CHECK(remote.round_trip_s >= remote.response.server_latency_s);
    }
    service.stop();
}

TEST_CASE("a garbage frame gets an error reply and the connection survives") {
    ServiceFixture fx;
    RetrievalService service(fx.db, fx.index, fx.codebook, 7);
    auto port = service.start();

    int fd = raw_connect(port);
    const char garbage[8] = {'X', 'X', 'X', 'X', 'X', 'X', 'X', 'X'};
    REQUIRE(detail::write_all(fd, garbage, 8));
    auto [type, payload] = raw_read_frame(fd);
    CHECK(type == kMsgError);
    CHECK(decode_error(payload).code == kErrBadMagic);

    // Same connection accepts a valid request afterwards.
    RetrievalRequest req;
    req.request_id = 7;
    req.k = 1;
    req.directive = NprobeDirective::fixed(1);
    req.query_tokens.assign(64, 5);
    REQUIRE(detail::send_frame(fd, kMsgRequest, encode_request(req)));
    auto [type2, payload2] = raw_read_frame(fd);
    CHECK(type2 == kMsgResponse);
    CHECK(decode_response(payload2).request_id == 7);
    ::close(fd);
    service.stop();
}

TEST_CASE("version skew closes the connection after an error frame") {
    ServiceFixture fx;
    RetrievalService service(fx.db, fx.index, fx.codebook, 7);
    auto port = service.start();

    int fd = raw_connect(port);
    const char skewed[8] = {'P', 'R', 'A', 'G', 'R', 'P', 'C', '2'};
    REQUIRE(detail::write_all(fd, skewed, 8));
    auto [type, payload] = raw_read_frame(fd);
    CHECK(type == kMsgError);
    CHECK(decode_error(payload).code == kErrBadVersion);
    char byte;
    CHECK(detail::read_exact(fd, &byte, 1, 3000) == -1);  // server closed
    ::close(fd);
    service.stop();
}

TEST_CASE("unexpected message types are reported") {
    ServiceFixture fx;
    RetrievalService service(fx.db, fx.index, fx.codebook, 7);
    auto port = service.start();

    int fd = raw_connect(port);
    REQUIRE(detail::send_frame(fd, kMsgResponse, encode_response({})));
    auto [type, payload] = raw_read_frame(fd);
    CHECK(type == kMsgError);
    CHECK(decode_error(payload).code == kErrBadType);

    REQUIRE(detail::send_frame(fd, kMsgRequest, std::vector<std::uint8_t>{1, 2}));
    auto [type2, payload2] = raw_read_frame(fd);
    CHECK(type2 == kMsgError);
    CHECK(decode_error(payload2).code == kErrBadPayload);
    ::close(fd);
    service.stop();
}

TEST_CASE("client times out against a silent server") {
    int listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(listen_fd >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    REQUIRE(::bind(listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
    REQUIRE(::listen(listen_fd, 1) == 0);
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd, reinterpret_cast<sockaddr*>(&addr), &len);

    RetrievalClient client("127.0.0.1", ntohs(addr.sin_port));
    RetrievalRequest req;
    req.query_tokens.assign(64, 1);
    try {
        client.retrieve(req, 0.2);
        FAIL("expected TimeoutError");
    } catch (const TimeoutError& e) {
        CHECK(e.elapsed_s >= 0.15);
        CHECK(e.elapsed_s < 2.0);
    }
    ::close(listen_fd);
}

TEST_CASE("network retriever slots into the pipeline contract") {
    ServiceFixture fx;
    RetrievalService service(fx.db, fx.index, fx.codebook, 7);
    auto port = service.start();

    NetworkRetriever remote("127.0.0.1", port, fx.index.nlist);
    LocalRetriever local(fx.db, fx.index, fx.codebook, 7);
    CHECK(remote.nlist() == local.nlist());

    SplitMix64 rng(44);
    auto query = fx.random_query(rng);
    auto a = remote.retrieve(query, 2, NprobeDirective::fixed(8));
    auto b = local.retrieve(query, 2, NprobeDirective::fixed(8));
    CHECK(a.neighbors == b.neighbors);
    CHECK(a.nprobe_used == b.nprobe_used);
    service.stop();
}

TEST_CASE("soak: 100 sequential requests over one connection") {
    ServiceFixture fx;
    RetrievalService service(fx.db, fx.index, fx.codebook, 7);
    auto port = service.start();

    RetrievalClient client("127.0.0.1", port);
    SplitMix64 rng(45);
    for (int i = 0; i < 100; ++i) {
        RetrievalRequest req;
        req.request_id = static_cast<std::uint64_t>(i);
        req.k = 2;
        req.directive = NprobeDirective::fixed(1 + static_cast<std::uint32_t>(rng.next_below(8)));
        req.query_tokens = fx.random_query(rng);
        auto result = client.retrieve(req);
        CHECK(result.response.request_id == req.request_id);
        CHECK(result.response.neighbors.size() == 2);
    }
    service.stop();
}

TEST_CASE("concurrent clients are served independently") {
    ServiceFixture fx;
    RetrievalService service(fx.db, fx.index, fx.codebook, 7);
    auto port = service.start();

    std::atomic<int> failures{0};
    std::vector<std::thread> clients;
    for (int c = 0; c < 4; ++c) {
        clients.emplace_back([&, c] {
            try {
                RetrievalClient client("127.0.0.1", port);
                SplitMix64 rng(100 + c);
                for (int i = 0; i < 25; ++i) {
                    RetrievalRequest req;
                    req.request_id = static_cast<std::uint64_t>(c * 1000 + i);
                    req.k = 2;
                    req.directive = NprobeDirective::fixed(2);
                    req.query_tokens = fx.random_query(rng);
                    auto result = client.retrieve(req);
                    if (result.response.request_id != req.request_id) ++failures;
                }
            } catch (...) {
                ++failures;
            }
        });
    }
    for (auto& t : clients) t.join();
    CHECK(failures == 0);
    service.stop();
}
