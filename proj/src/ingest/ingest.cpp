#include "traffic/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace traffic {

namespace {

struct ParsedUrl {
    std::string scheme_host_port;
    std::string path;
};

std::optional<ParsedUrl> parse_url(const std::string& url) {
    static const std::regex re(R"(^(https?)://([A-Za-z0-9.\-]+|\[[0-9A-Fa-f:.]+\])(?::(\d{1,5}))?(/[^\s]*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) return std::nullopt;
    if (m[3].matched && std::stoi(m[3].str()) > 65535) return std::nullopt;
    ParsedUrl out;
    out.scheme_host_port = m[1].str() + "://" + m[2].str() + (m[3].matched ? ":" + m[3].str() : "");
    out.path = m[4].matched ? m[4].str() : "/";
    return out;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

Instant now_instant() {
    return std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now());
}

}  // namespace

void CameraEndpoint::validate() const {
    if (source.str().empty()) throw ConfigError("camera id must be non-empty");
    if (!parse_url(url)) throw ConfigError("camera '" + source.str() + "' has malformed url '" + url + "'");
    if (poll_interval.count() <= 0) throw ConfigError("camera '" + source.str() + "' poll interval must be > 0");
    if (expected_width <= 0 || expected_height <= 0)
        throw ConfigError("camera '" + source.str() + "' dimensions must be positive");
}

std::vector<CameraEndpoint> parse_cameras_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("camera list is not valid JSON: ") + e.what());
    }
    if (!doc.is_array()) throw ConfigError("camera list must be a JSON array");

    std::vector<CameraEndpoint> cams;
    std::vector<std::string> seen;
    try {
        for (const auto& item : doc) {
            CameraEndpoint cam;
            auto id = item.at("id").get<std::string>();
            if (id.empty()) throw ConfigError("camera id must be non-empty");
            cam.source = SourceId{id};
            cam.url = item.at("url").get<std::string>();
            cam.expected_width = item.value("width", 352);
            cam.expected_height = item.value("height", 240);
            cam.poll_interval = std::chrono::milliseconds{
                item.value("poll_interval_ms", static_cast<std::int64_t>(kDefaultPollInterval.count()))};
            cam.validate();
            if (std::find(seen.begin(), seen.end(), id) != seen.end())
                throw ConfigError("duplicate camera id '" + id + "'");
            seen.push_back(id);
            cams.push_back(std::move(cam));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid camera entry: ") + e.what());
    }
    return cams;
}

std::vector<CameraEndpoint> load_cameras_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read camera file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_cameras_json(ss.str());
}

void CollectorConfig::validate() const {
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(download_timeout_ms > 0)) throw ConfigError("download timeout must be > 0");
    if (!(batch_max_wait_ms > 0)) throw ConfigError("batch max wait must be > 0");
    if (queue_capacity < batch_size) throw ConfigError("queue capacity must be >= batch size");
    if (sink_attempts < 1) throw ConfigError("sink attempts must be >= 1");
}

FetchOutcome fetch_frame(const CameraEndpoint& cam, double timeout_ms, bool use_source_timestamp) {
    auto url = parse_url(cam.url);
    if (!url) return Discarded{DiscardReason::error, "malformed url", 0.0};

    const auto started = std::chrono::steady_clock::now();
    const auto timeout_us = static_cast<long>(timeout_ms * 1000.0);

    httplib::Client client(url->scheme_host_port);
    client.set_connection_timeout(timeout_us / 1000000, timeout_us % 1000000);
    client.set_read_timeout(timeout_us / 1000000, timeout_us % 1000000);
    client.set_write_timeout(timeout_us / 1000000, timeout_us % 1000000);
    client.set_keep_alive(false);

    std::string body;
    bool too_slow = false;
    auto res = client.Get(url->path, httplib::Headers{}, [&](const char* data, std::size_t len) {
        if (elapsed_ms(started) > timeout_ms) {
            too_slow = true;
            return false;
        }
        body.append(data, len);
        return true;
    });
    const double took = elapsed_ms(started);

    if (too_slow || took > timeout_ms) return Discarded{DiscardReason::timeout, "exceeded download threshold", took};
    if (!res) return Discarded{DiscardReason::error, httplib::to_string(res.error()), took};
    if (res->status != 200)
        return Discarded{DiscardReason::error, "HTTP " + std::to_string(res->status), took};
    if (body.empty()) return Discarded{DiscardReason::error, "empty payload", took};

    Frame frame;
    frame.source = cam.source;
    frame.captured_at = now_instant();
    if (use_source_timestamp && res->has_header(kCaptureTimeHeader)) {
        auto v = res->get_header_value(kCaptureTimeHeader);
        std::int64_t ms = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), ms);
        if (ec == std::errc{} && p == v.data() + v.size()) frame.captured_at = instant_from_ms(ms);
    }
    frame.payload.assign(body.begin(), body.end());
    frame.payload_format = "jpeg";
    frame.download_ms = took;
    return frame;
}

BatchFormer::BatchFormer(BoundedQueue<Frame>& queue, std::size_t batch_size, double max_wait_ms)
    : queue_(queue),
      batch_size_(batch_size),
      max_wait_(static_cast<std::int64_t>(max_wait_ms * 1000.0)) {
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
}

std::optional<FrameBatch> BatchFormer::next() {
    FrameBatch batch;
    auto first = queue_.pop();
    if (!first) return std::nullopt;
    batch.frames.push_back(std::move(first->item));
    const auto deadline = first->enqueued_at + max_wait_;

    while (batch.frames.size() < batch_size_) {
        auto f = queue_.pop_until(deadline);
        if (!f) break;  // deadline passed or queue closed and drained
        batch.frames.push_back(std::move(f->item));
    }
    batch.batch_id = next_id_++;
    return batch;
}

struct Collector::Counters {
    explicit Counters(std::size_t n) : per_source(n) {}

    struct PerSource {
        std::atomic<std::uint64_t> fetched{0}, timeout{0}, error{0}, queue_full{0}, batched{0};
    };

    std::atomic<std::uint64_t> fetched{0}, discarded_timeout{0}, discarded_error{0},
        discarded_queue_full{0}, batched{0}, persisted{0}, sink_dropped{0}, batches{0}, in_flight{0},
        resident{0}, max_resident{0};
    std::vector<PerSource> per_source;

    void frame_created() {
        auto now = resident.fetch_add(1) + 1;
        auto prev = max_resident.load();
        while (prev < now && !max_resident.compare_exchange_weak(prev, now)) {}
    }
};

Collector::Collector(std::vector<CameraEndpoint> cameras, CollectorConfig config, BatchSink sink)
    : cameras_(std::move(cameras)),
      config_(std::move(config)),
      sink_(std::move(sink)),
      counters_(std::make_unique<Counters>(cameras_.size())),
      queue_(config_.queue_capacity) {
    config_.validate();
    if (cameras_.empty()) throw ConfigError("at least one camera is required");
    for (const auto& c : cameras_) c.validate();
    if (!sink_) throw ConfigError("a batch sink is required");
}

Collector::~Collector() { stop(); }

void Collector::start() {
    if (running_.exchange(true)) return;

    std::mt19937_64 rng{std::random_device{}()};
    const auto now = std::chrono::steady_clock::now();
    {
        std::lock_guard lock(schedule_mutex_);
        stopping_ = false;
        schedule_.clear();
        for (std::size_t i = 0; i < cameras_.size(); ++i) {
            // Random initial phase spreads the first polls across one interval.
            std::uniform_int_distribution<std::int64_t> phase(0, cameras_[i].poll_interval.count() * 1000 - 1);
            schedule_.push_back({now + std::chrono::microseconds{phase(rng)}, i});
        }
        std::make_heap(schedule_.begin(), schedule_.end(), std::greater<>{});
    }
    batcher_ = std::thread([this] { batch_loop(); });
    for (std::size_t i = 0; i < config_.workers; ++i) workers_.emplace_back([this] { fetch_loop(); });
}

void Collector::stop() {
    if (!running_.load()) return;
    {
        std::lock_guard lock(schedule_mutex_);
        stopping_ = true;
    }
    schedule_cv_.notify_all();
    for (auto& w : workers_) w.join();
    workers_.clear();
    queue_.close();
    if (batcher_.joinable()) batcher_.join();
    running_ = false;
}

void Collector::fetch_loop() {
    std::unique_lock lock(schedule_mutex_);
    for (;;) {
        schedule_cv_.wait(lock, [&] { return stopping_ || !schedule_.empty(); });
        if (stopping_) return;
        const auto due = schedule_.front().at;
        if (std::chrono::steady_clock::now() < due) {
            schedule_cv_.wait_until(lock, due, [&] { return stopping_ || schedule_.empty() || schedule_.front().at < due; });
            continue;
        }
        std::pop_heap(schedule_.begin(), schedule_.end(), std::greater<>{});
        const Due job = schedule_.back();
        schedule_.pop_back();
        lock.unlock();

        const auto& cam = cameras_[job.camera];
        auto& per = counters_->per_source[job.camera];
        counters_->fetched++;
        counters_->in_flight++;
        per.fetched++;

        auto outcome = fetch_frame(cam, config_.download_timeout_ms, config_.use_source_timestamp);
        if (auto* d = std::get_if<Discarded>(&outcome)) {
            if (d->reason == DiscardReason::timeout) {
                counters_->discarded_timeout++;
                per.timeout++;
            } else {
                counters_->discarded_error++;
                per.error++;
            }
            counters_->in_flight--;
        } else {
            counters_->frame_created();
            if (!queue_.try_push(std::move(std::get<Frame>(outcome)))) {
                counters_->discarded_queue_full++;
                per.queue_full++;
                counters_->in_flight--;
                counters_->resident--;
            }
        }

        lock.lock();
        auto next = job.at + cam.poll_interval;
        const auto now = std::chrono::steady_clock::now();
        while (next < now) next += cam.poll_interval;  // fell behind; skip missed polls
        schedule_.push_back({next, job.camera});
        std::push_heap(schedule_.begin(), schedule_.end(), std::greater<>{});
        lock.unlock();
        schedule_cv_.notify_one();
        lock.lock();
    }
}

void Collector::release_frames(std::uint64_t n) { counters_->resident -= n; }

void Collector::batch_loop() {
    BatchFormer former(queue_, config_.batch_size, config_.batch_max_wait_ms);
    std::map<SourceId, std::size_t> index;
    for (std::size_t i = 0; i < cameras_.size(); ++i) index.emplace(cameras_[i].source, i);

    while (auto batch = former.next()) {
        const auto n = batch->frames.size();
        for (const auto& f : batch->frames)
            if (auto it = index.find(f.source); it != index.end()) counters_->per_source[it->second].batched++;
        counters_->batched += n;
        counters_->in_flight -= n;
        counters_->batches++;

        bool delivered = false;
        for (int attempt = 0; attempt < config_.sink_attempts && !delivered; ++attempt) {
            try {
                sink_(*batch);
                delivered = true;
            } catch (const std::exception&) {
                if (attempt + 1 < config_.sink_attempts) std::this_thread::sleep_for(config_.sink_retry_backoff);
            }
        }
        if (delivered)
            counters_->persisted += n;
        else
            counters_->sink_dropped += n;
        batch.reset();  // frames are discarded once consumed
        release_frames(n);
    }
}

CollectorStats Collector::stats() const {
    CollectorStats s;
    const auto& c = *counters_;
    // Order the reads so conservation holds for a quiescent collector.
    s.batched = c.batched;
    s.persisted = c.persisted;
    s.sink_dropped = c.sink_dropped;
    s.batches = c.batches;
    s.discarded_queue_full = c.discarded_queue_full;
    s.discarded_timeout = c.discarded_timeout;
    s.discarded_error = c.discarded_error;
    s.in_flight = c.in_flight;
    s.fetched = c.fetched;
    s.resident_frames = c.resident;
    s.max_resident_frames = c.max_resident;
    for (std::size_t i = 0; i < cameras_.size(); ++i) {
        const auto& p = c.per_source[i];
        s.per_source[cameras_[i].source] =
            SourceStats{p.fetched, p.timeout, p.error, p.queue_full, p.batched};
    }
    return s;
}

CollectorStats run_collector(std::vector<CameraEndpoint> cameras, const CollectorConfig& config,
                             BatchSink sink, const std::function<bool()>& stop_requested) {
    Collector collector(std::move(cameras), config, std::move(sink));
    collector.start();
    while (!stop_requested()) std::this_thread::sleep_for(std::chrono::milliseconds{50});
    collector.stop();
    return collector.stats();
}

}  // namespace traffic
