#include "traffic/detector.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <mutex>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <absl/strings/escaping.h>
#include <nlohmann/json.hpp>

#include "traffic/image.hpp"

namespace traffic {

using json = nlohmann::json;

namespace {

// splitmix64 finalizer; stable across platforms.
std::uint64_t mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

std::vector<Detection> stub_detections(const ClassCounts& counts) {
    std::vector<Detection> out;
    for (auto cls : kAllVehicleClasses) {
        for (std::uint32_t k = 0; k < counts[cls]; ++k) {
            auto h = mix((static_cast<std::uint64_t>(cls) << 32) | k);
            double u = static_cast<double>(h >> 11) / static_cast<double>(1ull << 53);
            out.push_back({cls, 0.30 + 0.69 * u});
        }
    }
    return out;
}

ClassCounts stub_detect(const Frame& frame) {
    auto image = decode_jpeg(frame.payload);
    return pattern::decode(image).value_or(ClassCounts{});
}

StubBackend::StubBackend(std::size_t max_batch) : cap_{max_batch, kDetectorInputSize, "stub-pattern-v1"} {
    if (max_batch < 1) throw std::invalid_argument("max_batch must be >= 1");
}

std::vector<FrameCounts> StubBackend::infer(std::span<const Frame> frames, double threshold) {
    std::vector<FrameCounts> out;
    out.reserve(frames.size());
    for (const auto& f : frames) {
        FrameCounts fc;
        try {
            for (const auto& d : stub_detections(stub_detect(f)))
                if (d.confidence >= threshold) ++fc.counts[d.cls];
        } catch (const InvalidImage&) {
            fc.corrupt = true;
        }
        out.push_back(fc);
    }
    return out;
}

std::vector<DetectionResult> detect_batch(const FrameBatch& batch, DetectorBackend& backend,
                                          double threshold) {
    const auto& cap = backend.capability();
    if (batch.frames.size() > cap.max_batch)
        throw std::invalid_argument("batch of " + std::to_string(batch.frames.size()) +
                                    " exceeds backend max_batch " + std::to_string(cap.max_batch));
    if (!(threshold > 0.0 && threshold <= 1.0))
        throw std::invalid_argument("confidence threshold must be in (0, 1]");

    auto counts = backend.infer(batch.frames, threshold);
    if (counts.size() != batch.frames.size())
        throw BackendError("backend returned " + std::to_string(counts.size()) + " results for " +
                           std::to_string(batch.frames.size()) + " frames");

    std::vector<DetectionResult> out;
    out.reserve(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const auto& f = batch.frames[i];
        out.push_back({f.source, f.captured_at, counts[i].counts, threshold, cap.model_id,
                       counts[i].corrupt});
    }
    return out;
}

namespace wire {

namespace {

json counts_to_json(const ClassCounts& c) {
    json j = json::object();
    for (auto cls : kAllVehicleClasses) j[std::string(to_string(cls))] = c[cls];
    return j;
}

ClassCounts counts_from_json(const json& j) {
    ClassCounts c;
    for (auto& [k, v] : j.items()) {
        auto cls = parse_vehicle_class(k);
        if (!cls) throw BackendError("unknown vehicle class '" + k + "'");
        auto n = v.get<std::int64_t>();
        if (n < 0) throw BackendError("negative count for '" + k + "'");
        c[*cls] = static_cast<std::uint32_t>(n);
    }
    return c;
}

json parse_json(std::string_view line) {
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        throw BackendError(std::string("malformed protocol line: ") + e.what());
    }
}

}  // namespace

std::string make_request(std::int64_t batch_id, std::span<const Frame> frames) {
    json arr = json::array();
    for (const auto& f : frames) {
        absl::string_view raw(reinterpret_cast<const char*>(f.payload.data()), f.payload.size());
        arr.push_back({{"source", f.source.str()},
                       {"captured_at", format_iso8601(f.captured_at)},
                       {"format", f.payload_format},
                       {"data", absl::Base64Escape(raw)}});
    }
    return json{{"type", "detect"}, {"batch_id", batch_id}, {"frames", std::move(arr)}}.dump();
}

std::string make_hello(const Hello& hello) {
    return json{{"type", "hello"}, {"max_batch", hello.max_batch}, {"model_id", hello.model_id}}.dump();
}

std::string make_result(const Result& result) {
    json arr = json::array();
    for (const auto& r : result.results)
        arr.push_back({{"source", r.source}, {"captured_at", r.captured_at}, {"counts", counts_to_json(r.counts)}});
    return json{{"type", "result"}, {"batch_id", result.batch_id}, {"results", std::move(arr)}}.dump();
}

std::string make_error(const Error& error) {
    return json{{"type", "error"}, {"batch_id", error.batch_id}, {"message", error.message}}.dump();
}

Message parse_message(std::string_view line) {
    auto j = parse_json(line);
    try {
        auto type = j.at("type").get<std::string>();
        if (type == "hello")
            return Hello{j.at("max_batch").get<std::size_t>(), j.at("model_id").get<std::string>()};
        if (type == "error")
            return Error{j.at("batch_id").get<std::int64_t>(), j.value("message", std::string{})};
        if (type == "result") {
            Result r{j.at("batch_id").get<std::int64_t>(), {}};
            for (const auto& item : j.at("results"))
                r.results.push_back({item.at("source").get<std::string>(),
                                     item.at("captured_at").get<std::string>(),
                                     counts_from_json(item.at("counts"))});
            return r;
        }
        throw BackendError("unknown message type '" + type + "'");
    } catch (const json::exception& e) {
        throw BackendError(std::string("invalid protocol message: ") + e.what());
    }
}

Request parse_request(std::string_view line) {
    auto j = parse_json(line);
    try {
        if (j.at("type").get<std::string>() != "detect") throw BackendError("expected a detect request");
        Request req{j.at("batch_id").get<std::int64_t>(), {}};
        for (const auto& f : j.at("frames")) {
            std::string raw;
            if (!absl::Base64Unescape(f.at("data").get<std::string>(), &raw))
                throw BackendError("frame data is not valid base64");
            Frame frame;
            frame.source = SourceId{f.at("source").get<std::string>()};
            frame.captured_at = parse_iso8601(f.at("captured_at").get<std::string>());
            frame.payload_format = f.value("format", std::string("jpeg"));
            frame.payload.assign(raw.begin(), raw.end());
            req.frames.push_back(std::move(frame));
        }
        return req;
    } catch (const json::exception& e) {
        throw BackendError(std::string("invalid detect request: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw BackendError(std::string("invalid detect request: ") + e.what());
    }
}

}  // namespace wire

class ExternalWorkerBackend::Process {
public:
    explicit Process(const std::string& command) {
        int to_child[2];
        int from_child[2];
        if (pipe2(to_child, O_CLOEXEC) != 0) throw BackendError(std::strerror(errno));
        if (pipe2(from_child, O_CLOEXEC) != 0) {
            ::close(to_child[0]);
            ::close(to_child[1]);
            throw BackendError(std::strerror(errno));
        }
        pid_ = fork();
        if (pid_ < 0) throw BackendError(std::string("fork failed: ") + std::strerror(errno));
        if (pid_ == 0) {
            setpgid(0, 0);
            dup2(to_child[0], STDIN_FILENO);
            dup2(from_child[1], STDOUT_FILENO);
            execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            _exit(127);
        }
        setpgid(pid_, pid_);
        ::close(to_child[0]);
        ::close(from_child[1]);
        in_ = to_child[1];
        out_ = from_child[0];
    }

    ~Process() {
        if (in_ >= 0) ::close(in_);
        if (out_ >= 0) ::close(out_);
        if (pid_ > 0) {
            // Closing stdin asks the worker to exit; escalate if it lingers.
            bool exited = false;
            for (int i = 0; i < 50 && !exited; ++i) {
                exited = waitpid(pid_, nullptr, WNOHANG) == pid_;
                if (!exited) usleep(10000);
            }
            kill(-pid_, SIGKILL);
            if (!exited) waitpid(pid_, nullptr, 0);
        }
    }

    void write_line(const std::string& line) {
        std::string data = line + "\n";
        std::size_t off = 0;
        while (off < data.size()) {
            auto n = ::write(in_, data.data() + off, data.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw BackendError(std::string("worker write failed: ") + std::strerror(errno));
            }
            off += static_cast<std::size_t>(n);
        }
    }

    std::string read_line(std::chrono::milliseconds timeout) {
        auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            auto nl = buffer_.find('\n');
            if (nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                return line;
            }
            auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) throw BackendError("timed out waiting for detector worker");
            pollfd pfd{out_, POLLIN, 0};
            int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
            if (rc < 0 && errno == EINTR) continue;
            if (rc <= 0) continue;
            char chunk[65536];
            auto n = ::read(out_, chunk, sizeof chunk);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) throw BackendError("detector worker closed its output");
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

private:
    pid_t pid_ = -1;
    int in_ = -1;
    int out_ = -1;
    std::string buffer_;
};

ExternalWorkerBackend::ExternalWorkerBackend(Options options) : options_(std::move(options)) {
    static std::once_flag sigpipe_once;
    std::call_once(sigpipe_once, [] { std::signal(SIGPIPE, SIG_IGN); });
    if (options_.command.empty()) throw BackendError("detector worker command is empty");
    start();
}

ExternalWorkerBackend::~ExternalWorkerBackend() = default;

void ExternalWorkerBackend::start() {
    process_ = std::make_unique<Process>(options_.command);
    auto msg = wire::parse_message(process_->read_line(options_.startup_timeout));
    const auto* hello = std::get_if<wire::Hello>(&msg);
    if (!hello) throw BackendError("detector worker did not start with a hello message");
    if (hello->max_batch < options_.batch_size)
        throw BackendError("detector worker max_batch " + std::to_string(hello->max_batch) +
                           " does not accept batches of " + std::to_string(options_.batch_size));
    cap_ = BackendCapability{hello->max_batch, kDetectorInputSize, hello->model_id};
}

std::vector<FrameCounts> ExternalWorkerBackend::infer(std::span<const Frame> frames, double) {
    if (!process_) start();
    const auto batch_id = next_batch_id_++;
    try {
        process_->write_line(wire::make_request(batch_id, frames));
        auto msg = wire::parse_message(process_->read_line(options_.batch_timeout));
        if (const auto* err = std::get_if<wire::Error>(&msg))
            throw BackendError("detector worker error for batch " + std::to_string(err->batch_id) +
                               ": " + err->message);
        const auto* result = std::get_if<wire::Result>(&msg);
        if (!result) throw BackendError("unexpected message from detector worker");
        if (result->batch_id != batch_id)
            throw BackendError("batch_id mismatch: sent " + std::to_string(batch_id) + ", got " +
                               std::to_string(result->batch_id));
        if (result->results.size() != frames.size())
            throw BackendError("detector worker returned the wrong number of results");
        std::vector<FrameCounts> out;
        out.reserve(frames.size());
        for (std::size_t i = 0; i < frames.size(); ++i) {
            if (result->results[i].source != frames[i].source.str())
                throw BackendError("detector worker results are not order-aligned");
            out.push_back({result->results[i].counts, false});
        }
        return out;
    } catch (const BackendError&) {
        // The stream may be desynchronized; the next call restarts the worker.
        process_.reset();
        throw;
    }
}

}  // namespace traffic
