#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "traffic/core.hpp"
#include "traffic/frame.hpp"

namespace traffic {

inline constexpr double kDefaultConfidenceThreshold = 0.25;
inline constexpr std::size_t kDefaultBatchSize = 64;

/// Whole-batch failure (worker crash, timeout, protocol error). Retriable.
class BackendError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DetectionResult {
    SourceId source;
    Instant captured_at;
    ClassCounts counts;
    double confidence_threshold = kDefaultConfidenceThreshold;
    std::string model_id;
    bool corrupt = false;
};

struct BackendCapability {
    std::size_t max_batch = kDefaultBatchSize;
    int input_size = 352;
    std::string model_id;
};

/// Per-frame output of a backend: counts already filtered by the threshold.
struct FrameCounts {
    ClassCounts counts;
    bool corrupt = false;
};

class DetectorBackend {
public:
    virtual ~DetectorBackend() = default;
    virtual const BackendCapability& capability() const = 0;
    /// Must return exactly one entry per frame, in order. Throws BackendError.
    virtual std::vector<FrameCounts> infer(std::span<const Frame> frames, double threshold) = 0;
};

struct Detection {
    VehicleClass cls;
    double confidence;
};

/// Deterministic pseudo-detections for the counts encoded in a camsim frame.
/// Confidences lie in [0.3, 0.99], so any threshold <= 0.3 keeps every detection.
std::vector<Detection> stub_detections(const ClassCounts& counts);

/// Counts encoded in the frame's pattern header; all zeros for non-pattern images.
/// Throws InvalidImage if the payload is not decodable.
ClassCounts stub_detect(const Frame& frame);

class StubBackend final : public DetectorBackend {
public:
    explicit StubBackend(std::size_t max_batch = kDefaultBatchSize);
    const BackendCapability& capability() const override { return cap_; }
    std::vector<FrameCounts> infer(std::span<const Frame> frames, double threshold) override;

private:
    BackendCapability cap_;
};

/// Runs the backend over a batch and attaches source/timestamp/model metadata.
/// Throws std::invalid_argument if the batch exceeds the backend's max_batch
/// or the threshold is outside (0, 1].
std::vector<DetectionResult> detect_batch(const FrameBatch& batch, DetectorBackend& backend,
                                          double threshold = kDefaultConfidenceThreshold);

/// Newline-delimited JSON messages exchanged with external detector workers.
namespace wire {

struct Hello {
    std::size_t max_batch = 0;
    std::string model_id;
};

struct ResultItem {
    std::string source;
    std::string captured_at;
    ClassCounts counts;
};

struct Result {
    std::int64_t batch_id = 0;
    std::vector<ResultItem> results;
};

struct Error {
    std::int64_t batch_id = 0;
    std::string message;
};

using Message = std::variant<Hello, Result, Error>;

std::string make_request(std::int64_t batch_id, std::span<const Frame> frames);
std::string make_hello(const Hello& hello);
std::string make_result(const Result& result);
std::string make_error(const Error& error);

/// Throws BackendError on malformed JSON or an unknown message type.
Message parse_message(std::string_view line);

struct Request {
    std::int64_t batch_id = 0;
    std::vector<Frame> frames;
};
/// Worker-side decoding of a detect request. Throws BackendError.
Request parse_request(std::string_view line);

}  // namespace wire

/// Child process speaking the wire protocol on stdin/stdout.
/// The protocol has no threshold field; the worker applies its own.
class ExternalWorkerBackend final : public DetectorBackend {
public:
    struct Options {
        std::string command;  // run via /bin/sh -c
        std::size_t batch_size = kDefaultBatchSize;
        std::chrono::milliseconds startup_timeout{10000};
        std::chrono::milliseconds batch_timeout{30000};
    };

    /// Starts the worker and validates its hello. Throws BackendError when the
    /// worker cannot start or advertises max_batch smaller than batch_size.
    explicit ExternalWorkerBackend(Options options);
    ~ExternalWorkerBackend() override;

    ExternalWorkerBackend(const ExternalWorkerBackend&) = delete;
    ExternalWorkerBackend& operator=(const ExternalWorkerBackend&) = delete;

    const BackendCapability& capability() const override { return cap_; }
    std::vector<FrameCounts> infer(std::span<const Frame> frames, double threshold) override;

private:
    class Process;

    void start();

    Options options_;
    BackendCapability cap_;
    std::unique_ptr<Process> process_;
    std::int64_t next_batch_id_ = 1;
};

}  // namespace traffic
