#include "kllime/adapter.hpp"

#include "kllime/pipeline.hpp"
#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <json.hpp>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <thread>

using namespace kllime;
using nlohmann::json;

namespace {

std::vector<std::string> echo_cmd(std::initializer_list<std::string> extra) {
    std::vector<std::string> argv = {ECHO_ADAPTER_PATH};
    argv.insert(argv.end(), extra.begin(), extra.end());
    return argv;
}

Eigen::MatrixXd small_inputs(int n = 3, int d = 2) {
    Eigen::MatrixXd Z(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) Z(i, j) = 0.1 * (i + 1) + j;
    return Z;
}

// Minimal protocol server on an ephemeral port for the TCP transport test.
struct TcpEchoServer {
    int listen_fd = -1;
    int port = 0;
    std::thread thread;

    TcpEchoServer() {
        listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
        REQUIRE(listen_fd >= 0);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = 0;
        REQUIRE(::bind(listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
        REQUIRE(::listen(listen_fd, 1) == 0);
        socklen_t len = sizeof(addr);
        REQUIRE(::getsockname(listen_fd, reinterpret_cast<sockaddr*>(&addr), &len) == 0);
        port = ntohs(addr.sin_port);
        thread = std::thread([fd = listen_fd] {
            const int conn = ::accept(fd, nullptr, nullptr);
            if (conn < 0) return;
            std::string buffer;
            char chunk[4096];
            auto send_line = [&](const std::string& s) {
                const std::string out = s + "\n";
                (void)!::write(conn, out.data(), out.size());
            };
            for (;;) {
                const auto nl = buffer.find('\n');
                if (nl == std::string::npos) {
                    const ssize_t n = ::read(conn, chunk, sizeof(chunk));
                    if (n <= 0) break;
                    buffer.append(chunk, static_cast<std::size_t>(n));
                    continue;
                }
                const std::string line = buffer.substr(0, nl);
                buffer.erase(0, nl + 1);
                const json msg = json::parse(line, nullptr, false);
                if (msg.is_discarded()) break;
                const std::string type = msg.value("type", "");
                if (type == "handshake") {
                    send_line(json{{"type", "handshake"},
                                   {"version", 1},
                                   {"family", "gaussian"},
                                   {"num_posterior_samples", 2}}
                                  .dump());
                } else if (type == "predict") {
                    const std::size_t n_inputs = msg.at("inputs").size();
                    json params = json::array();
                    for (int l = 0; l < 2; ++l) {
                        json row = json::array();
                        for (std::size_t i = 0; i < n_inputs; ++i)
                            row.push_back({{"mu", 0.5 * l}, {"sigma2", 1.0 + l}});
                        params.push_back(std::move(row));
                    }
                    send_line(json{{"type", "predictions"}, {"params", params}}.dump());
                } else {
                    break;
                }
            }
            ::close(conn);
        });
    }

    ~TcpEchoServer() {
        if (thread.joinable()) thread.join();
        if (listen_fd >= 0) ::close(listen_fd);
    }
};

} // namespace

TEST_CASE("echo adapter round trip") {
    AdapterClient client = AdapterClient::spawn(echo_cmd({}));
    REQUIRE(client.family() == Family::bernoulli);
    REQUIRE(client.num_posterior_samples() == 1);
    const PredictionMatrix preds = client.predict(small_inputs());
    REQUIRE(preds.samples() == 1);
    REQUIRE(preds.points() == 3);
    REQUIRE((preds.location.array() == 0.5).all());
    client.shutdown();
}

TEST_CASE("echo adapter in gaussian mode") {
    AdapterClient client = AdapterClient::spawn(
        echo_cmd({"--family", "gaussian", "--num-posterior-samples", "3", "--mu", "1.25",
                  "--sigma2", "0.5"}));
    const PredictionMatrix preds = client.predict(small_inputs(4));
    REQUIRE(preds.samples() == 3);
    REQUIRE((preds.location.array() == 1.25).all());
    REQUIRE((preds.sigma2.array() == 0.5).all());
}

TEST_CASE("out-of-range probability names the offending index") {
    AdapterClient client = AdapterClient::spawn(echo_cmd({"--p", "1.5"}));
    try {
        client.predict(small_inputs());
        FAIL("expected ProtocolError");
    } catch (const ProtocolError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("sample 0") != std::string::npos);
        REQUIRE(msg.find("index 0") != std::string::npos);
        REQUIRE(msg.find("1.5") != std::string::npos);
    }
}

TEST_CASE("malformed reply raises a protocol error") {
    AdapterClient client = AdapterClient::spawn(echo_cmd({"--malformed"}));
    REQUIRE_THROWS_AS(client.predict(small_inputs()), ProtocolError);
}

TEST_CASE("wrong entry count raises a protocol error") {
    AdapterClient client = AdapterClient::spawn(echo_cmd({"--wrong-count"}));
    REQUIRE_THROWS_AS(client.predict(small_inputs()), ProtocolError);
}

TEST_CASE("version mismatch is rejected at handshake") {
    REQUIRE_THROWS_AS(AdapterClient::spawn(echo_cmd({"--version", "2"})), ProtocolError);
}

TEST_CASE("negative sigma2 is rejected with its index") {
    AdapterClient client = AdapterClient::spawn(
        echo_cmd({"--family", "gaussian", "--sigma2", "-1.0"}));
    try {
        client.predict(small_inputs());
        FAIL("expected ProtocolError");
    } catch (const ProtocolError& e) {
        REQUIRE(std::string(e.what()).find("sigma2") != std::string::npos);
        REQUIRE(std::string(e.what()).find("index") != std::string::npos);
    }
}

TEST_CASE("dead command surfaces as a transport error") {
    REQUIRE_THROWS_AS(AdapterClient::spawn({"/nonexistent-adapter-binary"}), TransportError);
}

TEST_CASE("loopback adapter reproduces in-process predictions bit for bit") {
    const auto dir = testsup::test_tmp_dir("loopback");
    RandomStream rs = derive_stream(55, "loopback-model");
    const int n = 25, d = 3;
    json model;
    model["type"] = "bayes_logistic";
    model["alpha"] = 1.0;
    model["num_posterior_samples"] = 4;
    json X = json::array(), y = json::array();
    for (int i = 0; i < n; ++i) {
        json row = json::array();
        double eta = 0.0;
        for (int j = 0; j < d; ++j) {
            const double v = rs.normal();
            row.push_back(v);
            eta += (j == 0 ? 1.5 : -0.5) * v;
        }
        X.push_back(std::move(row));
        y.push_back(rs.bernoulli(1.0 / (1.0 + std::exp(-eta))) ? 1.0 : 0.0);
    }
    model["X"] = std::move(X);
    model["y"] = std::move(y);
    const auto model_path = dir / "model.json";
    testsup::write_file(model_path, model.dump());

    const BuiltinModel builtin = load_builtin_model(model_path.string());
    const Eigen::MatrixXd Z = small_inputs(6, d);
    const PredictionMatrix direct = builtin.predict(Z, 0);

    AdapterClient client =
        AdapterClient::spawn({LOOPBACK_ADAPTER_PATH, model_path.string(), "0"});
    REQUIRE(client.family() == Family::bernoulli);
    REQUIRE(client.num_posterior_samples() == 4);
    const PredictionMatrix wired = client.predict(Z);
    REQUIRE((wired.location.array() == direct.location.array()).all());
}

TEST_CASE("tcp transport speaks the same protocol") {
    TcpEchoServer server;
    AdapterClient client =
        AdapterClient::connect_tcp("127.0.0.1:" + std::to_string(server.port));
    REQUIRE(client.family() == Family::gaussian);
    REQUIRE(client.num_posterior_samples() == 2);
    const PredictionMatrix preds = client.predict(small_inputs());
    REQUIRE(preds.samples() == 2);
    REQUIRE(preds.location(0, 0) == 0.0);
    REQUIRE(preds.location(1, 0) == 0.5);
    REQUIRE(preds.sigma2(1, 2) == 2.0);
    client.shutdown();
}

TEST_CASE("predict after shutdown fails cleanly") {
    AdapterClient client = AdapterClient::spawn(echo_cmd({}));
    client.shutdown();
    REQUIRE_THROWS_AS(client.predict(small_inputs()), TransportError);
}
