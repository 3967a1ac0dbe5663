#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "traffic/core.hpp"
#include "traffic/frame.hpp"

namespace traffic {

inline constexpr std::size_t kDefaultWorkers = 16;
inline constexpr double kDefaultDownloadTimeoutMs = 100.0;
inline constexpr double kDefaultBatchMaxWaitMs = 250.0;
inline constexpr std::chrono::milliseconds kDefaultPollInterval{2000};

/// Response header carrying the camera's own capture instant (ms since epoch).
inline constexpr const char* kCaptureTimeHeader = "X-Capture-Time-Ms";

struct CameraEndpoint {
    SourceId source;
    std::string url;
    int expected_width = 352;
    int expected_height = 240;
    std::chrono::milliseconds poll_interval = kDefaultPollInterval;

    /// Throws ConfigError on a malformed URL or non-positive interval.
    void validate() const;
};

/// Parses the camera list: JSON array of {id, url, width, height, poll_interval_ms}.
std::vector<CameraEndpoint> parse_cameras_json(const std::string& text);
std::vector<CameraEndpoint> load_cameras_file(const std::filesystem::path& path);

struct CollectorConfig {
    std::size_t workers = kDefaultWorkers;
    std::size_t batch_size = 64;
    double download_timeout_ms = kDefaultDownloadTimeoutMs;
    double batch_max_wait_ms = kDefaultBatchMaxWaitMs;
    std::size_t queue_capacity = 256;
    /// Attempts per batch before the sink's batch is dropped.
    int sink_attempts = 3;
    std::chrono::milliseconds sink_retry_backoff{50};
    /// Take captured_at from kCaptureTimeHeader when the camera sends it.
    bool use_source_timestamp = false;

    /// Throws ConfigError when a bound is violated.
    void validate() const;
};

enum class DiscardReason { timeout, error };

struct Discarded {
    DiscardReason reason;
    std::string detail;
    double elapsed_ms = 0.0;
};

using FetchOutcome = std::variant<Frame, Discarded>;

/// Downloads one frame; anything slower than timeout_ms is discarded and the
/// connection aborted. Never throws for network conditions.
FetchOutcome fetch_frame(const CameraEndpoint& cam, double timeout_ms,
                         bool use_source_timestamp = false);

/// Multi-producer bounded FIFO. Full pushes are rejected (drop-newest).
template <typename T>
class BoundedQueue {
public:
    using Clock = std::chrono::steady_clock;

    struct Entry {
        T item;
        Clock::time_point enqueued_at;
    };

    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

    bool try_push(T item) {
        {
            std::lock_guard lock(mutex_);
            if (closed_ || items_.size() >= capacity_) return false;
            items_.push_back({std::move(item), Clock::now()});
        }
        cv_.notify_one();
        return true;
    }

    /// Waits until an item arrives, the deadline passes, or the queue is closed and empty.
    std::optional<Entry> pop_until(Clock::time_point deadline) {
        std::unique_lock lock(mutex_);
        cv_.wait_until(lock, deadline, [&] { return !items_.empty() || closed_; });
        return take();
    }

    std::optional<Entry> pop() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return !items_.empty() || closed_; });
        return take();
    }

    void close() {
        {
            std::lock_guard lock(mutex_);
            closed_ = true;
        }
        cv_.notify_all();
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return items_.size();
    }
    std::size_t capacity() const noexcept { return capacity_; }

private:
    std::optional<Entry> take() {
        if (items_.empty()) return std::nullopt;
        Entry e = std::move(items_.front());
        items_.pop_front();
        return e;
    }

    const std::size_t capacity_;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<Entry> items_;
    bool closed_ = false;
};

/// Groups queued frames into batches: a batch is emitted when batch_size
/// frames are buffered or max_wait has elapsed since the oldest buffered frame.
class BatchFormer {
public:
    BatchFormer(BoundedQueue<Frame>& queue, std::size_t batch_size, double max_wait_ms);

    /// Blocks for the next batch. Once the queue is closed, remaining frames are
    /// flushed immediately; returns nullopt when nothing is left.
    std::optional<FrameBatch> next();

private:
    BoundedQueue<Frame>& queue_;
    std::size_t batch_size_;
    std::chrono::microseconds max_wait_;
    std::uint64_t next_id_ = 1;
};

struct SourceStats {
    std::uint64_t fetched = 0;
    std::uint64_t discarded_timeout = 0;
    std::uint64_t discarded_error = 0;
    std::uint64_t discarded_queue_full = 0;
    std::uint64_t batched = 0;
};

struct CollectorStats {
    std::uint64_t fetched = 0;  // fetch attempts
    std::uint64_t discarded_timeout = 0;
    std::uint64_t discarded_error = 0;
    std::uint64_t discarded_queue_full = 0;
    std::uint64_t batched = 0;
    std::uint64_t persisted = 0;
    std::uint64_t sink_dropped = 0;  // frames in batches the sink rejected
    std::uint64_t batches = 0;
    std::uint64_t in_flight = 0;  // fetching or queued
    std::uint64_t resident_frames = 0;
    std::uint64_t max_resident_frames = 0;
    std::map<SourceId, SourceStats> per_source;

    /// fetched == discarded_* + batched + in_flight
    bool conserved() const {
        return fetched == discarded_timeout + discarded_error + discarded_queue_full + batched + in_flight;
    }
};

/// Consumes one batch; throwing counts as a failed attempt.
using BatchSink = std::function<void(const FrameBatch&)>;

/// Polls every camera on its own fixed interval with N fetcher threads, gates
/// frames on download time, and feeds batches to a single sink thread.
class Collector {
public:
    /// Throws ConfigError on invalid config or camera list.
    Collector(std::vector<CameraEndpoint> cameras, CollectorConfig config, BatchSink sink);
    ~Collector();

    Collector(const Collector&) = delete;
    Collector& operator=(const Collector&) = delete;

    void start();
    /// Stops polling, drains queued frames through the sink, joins all threads. Idempotent.
    void stop();
    bool running() const noexcept { return running_.load(); }

    CollectorStats stats() const;

private:
    struct Counters;
    struct Due {
        std::chrono::steady_clock::time_point at;
        std::size_t camera;
        bool operator>(const Due& o) const { return at > o.at; }
    };

    void fetch_loop();
    void batch_loop();
    void release_frames(std::uint64_t n);

    std::vector<CameraEndpoint> cameras_;
    CollectorConfig config_;
    BatchSink sink_;
    std::unique_ptr<Counters> counters_;
    BoundedQueue<Frame> queue_;

    std::mutex schedule_mutex_;
    std::condition_variable schedule_cv_;
    std::vector<Due> schedule_;  // min-heap
    bool stopping_ = false;

    std::atomic<bool> running_{false};
    std::vector<std::thread> workers_;
    std::thread batcher_;
};

/// Runs a collector until `stop_requested` returns true (polled every 50ms).
CollectorStats run_collector(std::vector<CameraEndpoint> cameras, const CollectorConfig& config,
                             BatchSink sink, const std::function<bool()>& stop_requested);

}  // namespace traffic
