#pragma once

// Wire-protocol client for external black-box prediction models.
//
// Line-delimited JSON over a subprocess's stdio or a TCP socket, one object
// per line, flushed after each line:
//
//   -> {"type":"handshake","version":1}
//   <- {"type":"handshake","version":1,"family":"bernoulli"|"gaussian",
//       "num_posterior_samples":L}
//   -> {"type":"predict","inputs":[[f64,...],...]}          (N rows, d cols)
//   <- {"type":"predictions","params":[...]}                 (L rows of N objects,
//       {"p":x} or {"mu":x,"sigma2":x})
//   -> {"type":"shutdown"}
//
// Any other line is a protocol error. One request is in flight at a time;
// callers needing concurrency serialize externally.

#include "kllime/divergence.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace kllime {

struct AdapterError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ProtocolError : AdapterError {
    using AdapterError::AdapterError;
};
struct TransportError : AdapterError {
    using AdapterError::AdapterError;
};

namespace detail {

inline void ignore_sigpipe_once() {
    static const bool done = [] {
        std::signal(SIGPIPE, SIG_IGN);
        return true;
    }();
    (void)done;
}

// Blocking line I/O over a pair of file descriptors with a poll() timeout on
// reads. Owns the descriptors.
class FdLineIo {
public:
    FdLineIo(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) {
        ignore_sigpipe_once();
    }
    FdLineIo(const FdLineIo&) = delete;
    FdLineIo& operator=(const FdLineIo&) = delete;
    ~FdLineIo() { close_fds(); }

    void close_fds() {
        if (read_fd_ >= 0 && read_fd_ != write_fd_) ::close(read_fd_);
        if (write_fd_ >= 0) ::close(write_fd_);
        read_fd_ = write_fd_ = -1;
    }

    void close_write() {
        if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
        write_fd_ = -1;
    }

    void write_line(const std::string& line) {
        std::string payload = line;
        payload.push_back('\n');
        std::size_t off = 0;
        while (off < payload.size()) {
            const ssize_t n = ::write(write_fd_, payload.data() + off, payload.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw TransportError(std::string("adapter transport: write failed: ") +
                                     std::strerror(errno));
            }
            off += static_cast<std::size_t>(n);
        }
    }

    // One line without the trailing newline; nullopt on clean EOF at a line
    // boundary.
    std::optional<std::string> read_line(double timeout_seconds) {
        for (;;) {
            const auto nl = buffer_.find('\n');
            if (nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                return line;
            }
            if (eof_) {
                if (buffer_.empty()) return std::nullopt;
                throw TransportError("adapter transport: EOF inside a line");
            }
            struct pollfd pfd{read_fd_, POLLIN, 0};
            const int timeout_ms =
                timeout_seconds <= 0 ? -1 : static_cast<int>(timeout_seconds * 1000.0);
            const int pr = ::poll(&pfd, 1, timeout_ms);
            if (pr < 0) {
                if (errno == EINTR) continue;
                throw TransportError(std::string("adapter transport: poll failed: ") +
                                     std::strerror(errno));
            }
            if (pr == 0) throw TransportError("adapter transport: timed out waiting for reply");
            char chunk[4096];
            const ssize_t n = ::read(read_fd_, chunk, sizeof(chunk));
            if (n < 0) {
                if (errno == EINTR) continue;
                throw TransportError(std::string("adapter transport: read failed: ") +
                                     std::strerror(errno));
            }
            if (n == 0)
                eof_ = true;
            else
                buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

private:
    int read_fd_;
    int write_fd_;
    std::string buffer_;
    bool eof_ = false;
};

} // namespace detail

struct AdapterOptions {
    double timeout_seconds = 120.0; // per request
    int protocol_version = 1;
};

// A connected adapter session: declared family, declared L, and the
// transport. Exclusive access required; one request/response in flight.
class AdapterClient {
public:
    static AdapterClient spawn(const std::vector<std::string>& argv,
                               const AdapterOptions& opts = {}) {
        if (argv.empty()) throw std::invalid_argument("adapter: empty command");
        int to_child[2], from_child[2];
        if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
            throw TransportError("adapter: pipe() failed");
        const pid_t pid = ::fork();
        if (pid < 0) throw TransportError("adapter: fork() failed");
        if (pid == 0) {
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            ::close(to_child[0]);
            ::close(to_child[1]);
            ::close(from_child[0]);
            ::close(from_child[1]);
            std::vector<char*> args;
            args.reserve(argv.size() + 1);
            for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
            args.push_back(nullptr);
            ::execvp(args[0], args.data());
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        AdapterClient client(
            std::make_unique<detail::FdLineIo>(from_child[0], to_child[1]), opts);
        client.child_pid_ = pid;
        client.handshake();
        return client;
    }

    // address is "host:port"
    static AdapterClient connect_tcp(const std::string& address, const AdapterOptions& opts = {}) {
        const auto colon = address.rfind(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("adapter: tcp address must be host:port");
        const std::string host = address.substr(0, colon);
        const std::string port = address.substr(colon + 1);
        struct addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        struct addrinfo* res = nullptr;
        if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0 || res == nullptr)
            throw TransportError("adapter: cannot resolve " + address);
        int fd = -1;
        for (struct addrinfo* it = res; it != nullptr; it = it->ai_next) {
            fd = ::socket(it->ai_family, it->ai_socktype, it->ai_protocol);
            if (fd < 0) continue;
            if (::connect(fd, it->ai_addr, it->ai_addrlen) == 0) break;
            ::close(fd);
            fd = -1;
        }
        ::freeaddrinfo(res);
        if (fd < 0) throw TransportError("adapter: cannot connect to " + address);
        AdapterClient client(std::make_unique<detail::FdLineIo>(fd, fd), opts);
        client.handshake();
        return client;
    }

    AdapterClient(AdapterClient&&) = default;
    AdapterClient& operator=(AdapterClient&&) = default;

    ~AdapterClient() {
        if (!io_) return;
        try {
            shutdown();
        } catch (...) {
        }
    }

    Family family() const { return family_; }
    int num_posterior_samples() const { return num_posterior_samples_; }
    int version() const { return version_; }

    PredictionMatrix predict(const Eigen::MatrixXd& inputs) {
        if (!io_) throw TransportError("adapter: session is closed");
        nlohmann::json req;
        req["type"] = "predict";
        auto rows = nlohmann::json::array();
        for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
            auto row = nlohmann::json::array();
            for (Eigen::Index j = 0; j < inputs.cols(); ++j) row.push_back(inputs(i, j));
            rows.push_back(std::move(row));
        }
        req["inputs"] = std::move(rows);
        io_->write_line(req.dump());
        const nlohmann::json resp = read_json();
        if (resp.value("type", "") != "predictions")
            throw ProtocolError("adapter protocol: expected predictions, got '" +
                                resp.value("type", "<missing>") + "'");
        if (!resp.contains("params") || !resp["params"].is_array())
            throw ProtocolError("adapter protocol: predictions missing params array");
        const auto& params = resp["params"];
        const auto L = static_cast<Eigen::Index>(num_posterior_samples_);
        const Eigen::Index n = inputs.rows();
        if (static_cast<Eigen::Index>(params.size()) != L)
            throw ProtocolError("adapter protocol: expected " + std::to_string(L) +
                                " posterior sample rows, got " + std::to_string(params.size()));
        Eigen::MatrixXd loc(L, n), s2;
        if (family_ == Family::gaussian) s2.resize(L, n);
        for (Eigen::Index l = 0; l < L; ++l) {
            const auto& row = params[static_cast<std::size_t>(l)];
            if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n)
                throw ProtocolError("adapter protocol: sample " + std::to_string(l) +
                                    " has wrong entry count");
            for (Eigen::Index i = 0; i < n; ++i) {
                const auto& e = row[static_cast<std::size_t>(i)];
                const std::string where =
                    " at sample " + std::to_string(l) + ", index " + std::to_string(i);
                if (family_ == Family::bernoulli) {
                    if (!e.is_object() || !e.contains("p") || !e["p"].is_number())
                        throw ProtocolError("adapter protocol: missing numeric 'p'" + where);
                    const double p = e["p"].get<double>();
                    if (!(p >= 0.0) || !(p <= 1.0))
                        throw ProtocolError("adapter protocol: p=" + std::to_string(p) +
                                            " outside [0,1]" + where);
                    loc(l, i) = p;
                } else {
                    if (!e.is_object() || !e.contains("mu") || !e["mu"].is_number() ||
                        !e.contains("sigma2") || !e["sigma2"].is_number())
                        throw ProtocolError("adapter protocol: missing numeric 'mu'/'sigma2'" +
                                            where);
                    const double mu = e["mu"].get<double>();
                    const double v = e["sigma2"].get<double>();
                    if (!std::isfinite(mu))
                        throw ProtocolError("adapter protocol: non-finite mu" + where);
                    if (!(v > 0.0))
                        throw ProtocolError("adapter protocol: sigma2=" + std::to_string(v) +
                                            " must be > 0" + where);
                    loc(l, i) = mu;
                    s2(l, i) = v;
                }
            }
        }
        return family_ == Family::gaussian
                   ? PredictionMatrix::gaussian(std::move(loc), std::move(s2))
                   : PredictionMatrix::bernoulli(std::move(loc));
    }

    void shutdown() {
        if (!io_) return;
        try {
            io_->write_line(R"({"type":"shutdown"})");
        } catch (...) {
            // already gone
        }
        io_->close_fds();
        io_.reset();
        if (child_pid_ > 0) {
            int status = 0;
            for (int spin = 0; spin < 200; ++spin) {
                const pid_t r = ::waitpid(child_pid_, &status, WNOHANG);
                if (r == child_pid_ || r < 0) {
                    child_pid_ = -1;
                    return;
                }
                ::usleep(10000);
            }
            ::kill(child_pid_, SIGKILL);
            ::waitpid(child_pid_, &status, 0);
            child_pid_ = -1;
        }
    }

private:
    AdapterClient(std::unique_ptr<detail::FdLineIo> io, const AdapterOptions& opts)
        : io_(std::move(io)), opts_(opts) {}

    nlohmann::json read_json() {
        const auto line = io_->read_line(opts_.timeout_seconds);
        if (!line) throw TransportError("adapter transport: connection closed");
        const nlohmann::json parsed = nlohmann::json::parse(*line, nullptr, false);
        if (parsed.is_discarded())
            throw ProtocolError("adapter protocol: malformed JSON line: " +
                                (line->size() > 120 ? line->substr(0, 120) + "..." : *line));
        return parsed;
    }

    void handshake() {
        nlohmann::json req;
        req["type"] = "handshake";
        req["version"] = opts_.protocol_version;
        io_->write_line(req.dump());
        const nlohmann::json resp = read_json();
        if (resp.value("type", "") != "handshake")
            throw ProtocolError("adapter protocol: expected handshake reply, got '" +
                                resp.value("type", "<missing>") + "'");
        if (!resp.contains("version") || !resp["version"].is_number_integer())
            throw ProtocolError("adapter protocol: handshake missing version");
        version_ = resp["version"].get<int>();
        if (version_ != opts_.protocol_version)
            throw ProtocolError("adapter protocol: version mismatch (wanted " +
                                std::to_string(opts_.protocol_version) + ", got " +
                                std::to_string(version_) + ")");
        if (!resp.contains("family") || !resp["family"].is_string())
            throw ProtocolError("adapter protocol: handshake missing family");
        try {
            family_ = parse_family(resp["family"].get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw ProtocolError(std::string("adapter protocol: ") + e.what());
        }
        if (!resp.contains("num_posterior_samples") ||
            !resp["num_posterior_samples"].is_number_integer())
            throw ProtocolError("adapter protocol: handshake missing num_posterior_samples");
        num_posterior_samples_ = resp["num_posterior_samples"].get<int>();
        if (num_posterior_samples_ < 1)
            throw ProtocolError("adapter protocol: num_posterior_samples must be >= 1");
    }

    std::unique_ptr<detail::FdLineIo> io_;
    AdapterOptions opts_;
    pid_t child_pid_ = -1;
    Family family_ = Family::bernoulli;
    int num_posterior_samples_ = 1;
    int version_ = 1;
};

} // namespace kllime
