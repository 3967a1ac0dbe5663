#include "traffic/camsim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "traffic/image.hpp"

namespace traffic::camsim {

using json = nlohmann::json;

void validate(const LatencyModel& model) {
    std::visit(
        [](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, ConstantLatency>) {
                if (m.ms < 0) throw ConfigError("latency must be >= 0");
            } else if constexpr (std::is_same_v<M, UniformLatency>) {
                if (m.lo_ms < 0 || m.hi_ms < m.lo_ms) throw ConfigError("uniform latency needs 0 <= lo <= hi");
            } else {
                if (m.fast_ms < 0 || m.slow_ms < 0) throw ConfigError("latency must be >= 0");
                if (m.slow_fraction < 0 || m.slow_fraction > 1)
                    throw ConfigError("slow_fraction must be in [0, 1]");
            }
        },
        model);
}

double sample_latency_ms(const LatencyModel& model, std::mt19937_64& rng) {
    return std::visit(
        [&](const auto& m) -> double {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, ConstantLatency>) {
                return m.ms;
            } else if constexpr (std::is_same_v<M, UniformLatency>) {
                return std::uniform_real_distribution<double>(m.lo_ms, m.hi_ms)(rng);
            } else {
                return std::bernoulli_distribution(m.slow_fraction)(rng) ? m.slow_ms : m.fast_ms;
            }
        },
        model);
}

VirtualClock::VirtualClock()
    : start_(std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now())),
      origin_(std::chrono::steady_clock::now()) {}

VirtualClock::VirtualClock(Instant start, double speed)
    : start_(start), speed_(speed), origin_(std::chrono::steady_clock::now()) {
    if (!(speed > 0)) throw ConfigError("clock speed must be > 0");
}

Instant VirtualClock::now() const {
    auto real = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - origin_).count();
    return start_ + std::chrono::milliseconds{static_cast<std::int64_t>(real * speed_)};
}

CountScript::CountScript(TimeZone tz, DayProfile weekday, DayProfile weekend, std::vector<StepChange> steps)
    : tz_(std::move(tz)), weekday_(weekday), weekend_(weekend), steps_(std::move(steps)) {}

CountScript CountScript::constant(TimeZone tz, const ClassCounts& counts) {
    DayProfile p;
    p.fill(counts);
    return CountScript{std::move(tz), p, p};
}

ClassCounts CountScript::at(Instant t) const {
    const auto hour = hour_of(t, tz_);
    const auto day = day_type_of(t, tz_);
    const auto& base = (day == DayType::weekday ? weekday_ : weekend_)[static_cast<std::size_t>(hour.value())];

    std::array<std::int64_t, kVehicleClassCount> v{};
    for (std::size_t c = 0; c < kVehicleClassCount; ++c) v[c] = base.values[c];
    for (const auto& s : steps_) {
        if (t < s.at) continue;
        if (day == DayType::weekday ? !s.weekday : !s.weekend) continue;
        if (hour < s.first_hour || s.last_hour < hour) continue;
        v[static_cast<std::size_t>(s.cls)] += s.delta;
    }
    ClassCounts out;
    for (std::size_t c = 0; c < kVehicleClassCount; ++c)
        out.values[c] = static_cast<std::uint32_t>(std::clamp<std::int64_t>(v[c], 0, 255));
    return out;
}

CountScript::DayProfile sinusoidal_profile(VehicleClass cls, double base, double amplitude, int peak_hour,
                                           const ClassCounts& others) {
    CountScript::DayProfile p;
    for (int h = 0; h < 24; ++h) {
        ClassCounts c = others;
        double v = base + amplitude * std::cos(2.0 * std::numbers::pi * (h - peak_hour) / 24.0);
        c[cls] = static_cast<std::uint32_t>(std::clamp(std::lround(v), 0L, 255L));
        p[static_cast<std::size_t>(h)] = c;
    }
    return p;
}

namespace {

LatencyModel parse_latency(const json& j) {
    auto kind = j.at("kind").get<std::string>();
    LatencyModel m;
    if (kind == "constant")
        m = ConstantLatency{j.at("ms").get<double>()};
    else if (kind == "uniform")
        m = UniformLatency{j.at("lo_ms").get<double>(), j.at("hi_ms").get<double>()};
    else if (kind == "bimodal")
        m = BimodalLatency{j.at("fast_ms").get<double>(), j.at("slow_ms").get<double>(),
                           j.at("slow_fraction").get<double>()};
    else
        throw ConfigError("unknown latency kind '" + kind + "'");
    validate(m);
    return m;
}

}  // namespace

ScenarioConfig parse_scenario_json(const std::string& text) {
    ScenarioConfig cfg;
    try {
        auto j = json::parse(text);
        static const std::vector<std::string> known{"scenario", "cameras", "delta", "timezone", "split",
                                                    "clock", "latency", "id_prefix", "width", "height",
                                                    "poll_interval_ms"};
        for (auto& [k, _] : j.items())
            if (std::find(known.begin(), known.end(), k) == known.end())
                throw ConfigError("unknown scenario field '" + k + "'");
        cfg.name = j.value("scenario", cfg.name);
        cfg.cameras = j.value("cameras", cfg.cameras);
        cfg.delta = j.value("delta", cfg.delta);
        cfg.timezone = j.value("timezone", cfg.timezone);
        cfg.split_local = j.value("split", cfg.split_local);
        cfg.id_prefix = j.value("id_prefix", cfg.id_prefix);
        cfg.width = j.value("width", cfg.width);
        cfg.height = j.value("height", cfg.height);
        cfg.poll_interval = std::chrono::milliseconds{j.value("poll_interval_ms", std::int64_t{2000})};
        if (j.contains("clock")) {
            const auto& c = j.at("clock");
            if (c.contains("start")) cfg.clock_start_local = c.at("start").get<std::string>();
            cfg.clock_speed = c.value("speed", 1.0);
        }
        if (j.contains("latency")) cfg.latency = parse_latency(j.at("latency"));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid scenario: ") + e.what());
    }
    return cfg;
}

ScenarioConfig load_scenario_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read scenario file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario_json(ss.str());
}

std::vector<SimCameraSpec> scripted_fleet(const ScenarioConfig& scenario) {
    static const std::vector<std::string> known{"flat", "step-change", "weekend-only-shift"};
    if (std::find(known.begin(), known.end(), scenario.name) == known.end())
        throw ConfigError("unknown scenario '" + scenario.name + "'");
    if (scenario.cameras < 1) throw ConfigError("scenario needs at least one camera");
    validate(scenario.latency);
    if (std::lround(scenario.delta) != scenario.delta || std::abs(scenario.delta) > 255)
        throw ConfigError("scenario delta must be an integer count shift");

    auto tz = TimeZone::load(scenario.timezone);
    const auto split = tz.local_to_instant(scenario.split_local);
    const int delta = static_cast<int>(std::lround(scenario.delta));

    std::vector<SimCameraSpec> specs;
    for (std::size_t i = 0; i < scenario.cameras; ++i) {
        // Cameras differ by a small per-camera offset so sources are distinguishable.
        const double offset = static_cast<double>(i % 3);
        ClassCounts others;
        others[VehicleClass::bus] = 1;
        others[VehicleClass::truck] = 2;
        others[VehicleClass::bicycle] = static_cast<std::uint32_t>(i % 2);

        std::shared_ptr<const CountScript> script;
        if (scenario.name == "flat") {
            ClassCounts c = others;
            c[VehicleClass::car] = static_cast<std::uint32_t>(8 + offset);
            script = std::make_shared<CountScript>(CountScript::constant(tz, c));
        } else {
            // Weekday peak at 17:00 keeps the Day/Midday/Afternoon peaks outside
            // the Morning window; weekend peaks at 13:00.
            auto weekday = sinusoidal_profile(VehicleClass::car, 10 + offset, 6, 17, others);
            auto weekend = sinusoidal_profile(VehicleClass::car, 8 + offset, 4, 13, others);
            StepChange step;
            step.at = split;
            step.cls = VehicleClass::car;
            step.delta = delta;
            if (scenario.name == "step-change") {
                step.weekday = true;
                step.weekend = false;
                step.first_hour = HourOfDay{6};
                step.last_hour = HourOfDay{9};
            } else {
                step.weekday = false;
                step.weekend = true;
            }
            script = std::make_shared<CountScript>(tz, weekday, weekend, std::vector<StepChange>{step});
        }
        char id[64];
        std::snprintf(id, sizeof id, "%s%03zu", scenario.id_prefix.c_str(), i);
        specs.push_back(SimCameraSpec{SourceId{id}, scenario.width, scenario.height, scenario.latency, script});
    }
    return specs;
}

VirtualClock make_clock(const ScenarioConfig& scenario) {
    if (!scenario.clock_start_local) {
        if (scenario.clock_speed == 1.0) return VirtualClock{};
        return VirtualClock{std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now()),
                            scenario.clock_speed};
    }
    auto tz = TimeZone::load(scenario.timezone);
    return VirtualClock{tz.local_to_instant(*scenario.clock_start_local), scenario.clock_speed};
}

struct Server::Impl {
    std::vector<SimCameraSpec> specs;
    std::map<std::string, std::size_t> by_id;
    VirtualClock clock;
    Options options;
    httplib::Server http;
    std::thread thread;
    bool stopped = false;
    std::mutex stop_mutex;

    std::mutex rng_mutex;
    std::mt19937_64 rng;

    mutable std::mutex log_mutex;
    std::vector<RequestLogEntry> log;

    std::mutex cache_mutex;
    std::map<std::tuple<int, int, std::array<std::uint32_t, kVehicleClassCount>>,
             std::shared_ptr<const std::string>>
        jpeg_cache;

    std::shared_ptr<const std::string> jpeg_for(const SimCameraSpec& spec, const ClassCounts& counts) {
        auto key = std::make_tuple(spec.width, spec.height, counts.values);
        {
            std::lock_guard lock(cache_mutex);
            if (auto it = jpeg_cache.find(key); it != jpeg_cache.end()) return it->second;
        }
        auto bytes = encode_jpeg(pattern::render_frame(spec.width, spec.height, counts), options.jpeg_quality);
        auto body = std::make_shared<const std::string>(bytes.begin(), bytes.end());
        std::lock_guard lock(cache_mutex);
        return jpeg_cache.emplace(key, body).first->second;
    }

    void serve_camera(const httplib::Request& req, httplib::Response& res) {
        auto it = by_id.find(req.matches[1].str());
        if (it == by_id.end()) {
            res.status = 404;
            res.set_content("unknown camera", "text/plain");
            return;
        }
        const auto& spec = specs[it->second];
        double latency;
        {
            std::lock_guard lock(rng_mutex);
            latency = sample_latency_ms(spec.latency, rng);
        }
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(latency));

        const auto now = clock.now();
        const auto counts = spec.script->at(now);
        auto body = jpeg_for(spec, counts);
        res.set_header(kCaptureTimeHeader, std::to_string(to_ms(now)));
        res.set_content(*body, "image/jpeg");
        std::lock_guard lock(log_mutex);
        log.push_back({spec.source, to_ms(now), latency, counts});
    }
};

Server::Server(std::vector<SimCameraSpec> specs, VirtualClock clock, Options options)
    : impl_(std::make_unique<Impl>()) {
    impl_->specs = std::move(specs);
    impl_->clock = clock;
    impl_->options = options;
    impl_->rng.seed(options.seed ? options.seed : std::random_device{}());
    for (std::size_t i = 0; i < impl_->specs.size(); ++i) {
        const auto& s = impl_->specs[i];
        validate(s.latency);
        if (!s.script) throw ConfigError("camera '" + s.source.str() + "' has no count script");
        if (!impl_->by_id.emplace(s.source.str(), i).second)
            throw ConfigError("duplicate camera id '" + s.source.str() + "'");
    }

    auto threads = options.threads;
    impl_->http.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    impl_->http.Get(R"(/cam/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        impl_->serve_camera(req, res);
    });
    impl_->http.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("ok", "text/plain");
    });

    impl_->http.set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    if (options.port == 0)
        port_ = impl_->http.bind_to_any_port(options.host);
    else if (impl_->http.bind_to_port(options.host, options.port))
        port_ = options.port;
    else
        port_ = -1;
    if (port_ <= 0) throw ConfigError("camsim cannot bind " + options.host + ":" + std::to_string(options.port));

    impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
    impl_->http.wait_until_ready();
}

Server::~Server() { stop(); }

void Server::stop() {
    std::lock_guard lock(impl_->stop_mutex);
    if (impl_->stopped) return;
    impl_->stopped = true;
    impl_->http.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

std::string Server::base_url() const { return "http://" + impl_->options.host + ":" + std::to_string(port_); }

std::vector<RequestLogEntry> Server::request_log() const {
    std::lock_guard lock(impl_->log_mutex);
    return impl_->log;
}

std::vector<CameraEndpoint> Server::endpoints(std::chrono::milliseconds poll_interval) const {
    std::vector<CameraEndpoint> out;
    for (const auto& s : impl_->specs)
        out.push_back(CameraEndpoint{s.source, base_url() + "/cam/" + s.source.str(), s.width, s.height, poll_interval});
    return out;
}

std::string Server::cameras_json(std::chrono::milliseconds poll_interval) const {
    json arr = json::array();
    for (const auto& e : endpoints(poll_interval))
        arr.push_back({{"id", e.source.str()},
                       {"url", e.url},
                       {"width", e.expected_width},
                       {"height", e.expected_height},
                       {"poll_interval_ms", e.poll_interval.count()}});
    return arr.dump(2);
}

}  // namespace traffic::camsim
