#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "traffic/core.hpp"
#include "traffic/ingest.hpp"

namespace traffic::camsim {

struct ConstantLatency {
    double ms = 0.0;
};
struct UniformLatency {
    double lo_ms = 0.0;
    double hi_ms = 0.0;
};
struct BimodalLatency {
    double fast_ms = 20.0;
    double slow_ms = 200.0;
    double slow_fraction = 0.1;
};

using LatencyModel = std::variant<ConstantLatency, UniformLatency, BimodalLatency>;

/// Throws ConfigError on negative latencies or a fraction outside [0, 1].
void validate(const LatencyModel& model);
double sample_latency_ms(const LatencyModel& model, std::mt19937_64& rng);

/// Maps wall time onto simulated time: sim = start + elapsed * speed.
class VirtualClock {
public:
    VirtualClock();  // real time
    VirtualClock(Instant start, double speed);

    Instant now() const;
    Instant start() const noexcept { return start_; }
    double speed() const noexcept { return speed_; }

private:
    Instant start_;
    double speed_ = 1.0;
    std::chrono::steady_clock::time_point origin_;
};

/// Shift added to one class on selected hours/day types from `at` onwards.
struct StepChange {
    Instant at;
    bool weekday = true;
    bool weekend = false;
    HourOfDay first_hour{0};
    HourOfDay last_hour{23};
    VehicleClass cls = VehicleClass::car;
    int delta = 0;
};

/// Piecewise-constant-per-hour count script in a local timezone.
class CountScript {
public:
    using DayProfile = std::array<ClassCounts, 24>;

    CountScript(TimeZone tz, DayProfile weekday, DayProfile weekend, std::vector<StepChange> steps = {});

    static CountScript constant(TimeZone tz, const ClassCounts& counts);

    /// Counts at simulated instant t; clamped to [0, 255].
    ClassCounts at(Instant t) const;

    const DayProfile& weekday() const noexcept { return weekday_; }
    const DayProfile& weekend() const noexcept { return weekend_; }

private:
    TimeZone tz_;
    DayProfile weekday_;
    DayProfile weekend_;
    std::vector<StepChange> steps_;
};

/// Rounded cosine profile for one class: base + amplitude * cos(2*pi*(h - peak)/24),
/// other classes taken from `others`.
CountScript::DayProfile sinusoidal_profile(VehicleClass cls, double base, double amplitude,
                                           int peak_hour, const ClassCounts& others = {});

struct SimCameraSpec {
    SourceId source;
    int width = 352;
    int height = 240;
    LatencyModel latency = ConstantLatency{5.0};
    std::shared_ptr<const CountScript> script;
};

struct ScenarioConfig {
    std::string name = "flat";
    std::size_t cameras = 10;
    /// Signed shift applied after the split ("step-change": weekday Morning; "weekend-only-shift": weekend).
    double delta = -3.0;
    std::string timezone = std::string(kDefaultTimezone);
    std::string split_local = "2025-01-05T00:00:00";
    /// Virtual clock; speed 1 and no start means wall time.
    std::optional<std::string> clock_start_local;
    double clock_speed = 1.0;
    LatencyModel latency = ConstantLatency{5.0};
    std::string id_prefix = "cam";
    int width = 352;
    int height = 240;
    std::chrono::milliseconds poll_interval{2000};
};

/// Throws ConfigError for malformed JSON or unknown fields.
ScenarioConfig parse_scenario_json(const std::string& text);
ScenarioConfig load_scenario_file(const std::filesystem::path& path);

/// Known scenarios: "flat", "step-change", "weekend-only-shift". Throws ConfigError otherwise.
std::vector<SimCameraSpec> scripted_fleet(const ScenarioConfig& scenario);

VirtualClock make_clock(const ScenarioConfig& scenario);

struct RequestLogEntry {
    SourceId source;
    std::int64_t capture_ms = 0;   // value sent in the capture-time header
    double latency_ms = 0.0;       // sampled delay before responding
    ClassCounts counts;
};

/// HTTP server: GET /cam/{id} -> image/jpeg, GET /healthz -> 200.
class Server {
public:
    struct Options {
        std::string host = "127.0.0.1";
        int port = 0;  // 0 picks a free port
        std::size_t threads = 128;
        std::uint64_t seed = 0;  // 0 seeds from std::random_device
        int jpeg_quality = 85;
    };

    /// Binds and starts serving in a background thread. Throws ConfigError on bind failure.
    Server(std::vector<SimCameraSpec> specs, VirtualClock clock, Options options);
    ~Server();

    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    int port() const noexcept { return port_; }
    std::string base_url() const;
    /// Idempotent.
    void stop();

    std::vector<RequestLogEntry> request_log() const;

    /// Camera list for the collector pointing at this server.
    std::vector<CameraEndpoint> endpoints(std::chrono::milliseconds poll_interval) const;
    std::string cameras_json(std::chrono::milliseconds poll_interval) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
};

}  // namespace traffic::camsim
