#include <gtest/gtest.h>

#include <thread>

#include <httplib.h>

#include "traffic/camsim.hpp"
#include "traffic/detector.hpp"
#include "traffic/ingest.hpp"

using namespace traffic;
using namespace std::chrono_literals;

namespace {

using SteadyClock = std::chrono::steady_clock;

camsim::SimCameraSpec sim_camera(const std::string& id, camsim::LatencyModel latency, std::uint32_t cars = 5) {
    ClassCounts c;
    c[VehicleClass::car] = cars;
    return {SourceId{id}, 352, 240, latency, std::make_shared<camsim::CountScript>(
                                                 camsim::CountScript::constant(TimeZone::load("UTC"), c))};
}

CameraEndpoint endpoint(const camsim::Server& server, const std::string& id, std::chrono::milliseconds poll = 1000ms) {
    return {SourceId{id}, server.base_url() + "/cam/" + id, 352, 240, poll};
}

Frame dummy_frame(int i) {
    return Frame{SourceId{"cam"}, instant_from_ms(i), {0xFF}, "jpeg", 1.0};
}

double ms_since(SteadyClock::time_point t) {
    return std::chrono::duration<double, std::milli>(SteadyClock::now() - t).count();
}

}  // namespace

TEST(FetchFrame, FastCameraYieldsFrame) {
    camsim::Server server{{sim_camera("fast", camsim::ConstantLatency{20})}, camsim::VirtualClock{}, {}};
    auto out = fetch_frame(endpoint(server, "fast"), 100);
    ASSERT_TRUE(std::holds_alternative<Frame>(out)) << std::get<Discarded>(out).detail;
    const auto& f = std::get<Frame>(out);
    EXPECT_GE(f.download_ms, 20.0);
    EXPECT_LE(f.download_ms, 20.0 + 60.0);
    EXPECT_EQ(f.source.str(), "fast");
    EXPECT_EQ(f.payload_format, "jpeg");
    EXPECT_EQ(stub_detect(f)[VehicleClass::car], 5u);
}

TEST(FetchFrame, SlowCameraIsDiscardedAndAborted) {
    camsim::Server server{{sim_camera("slow", camsim::ConstantLatency{150})}, camsim::VirtualClock{}, {}};
    const auto started = SteadyClock::now();
    auto out = fetch_frame(endpoint(server, "slow"), 100);
    const double took = ms_since(started);
    ASSERT_TRUE(std::holds_alternative<Discarded>(out));
    EXPECT_EQ(std::get<Discarded>(out).reason, DiscardReason::timeout);
    // The client gives up near the threshold rather than waiting for the body.
    EXPECT_LT(took, 145.0);
}

TEST(FetchFrame, ServerErrorIsDiscardedAsError) {
    httplib::Server http;
    http.Get("/cam/x", [](const httplib::Request&, httplib::Response& res) {
        res.status = 500;
        res.set_content("boom", "text/plain");
    });
    int port = http.bind_to_any_port("127.0.0.1");
    std::thread t([&] { http.listen_after_bind(); });
    http.wait_until_ready();
    CameraEndpoint cam{SourceId{"x"}, "http://127.0.0.1:" + std::to_string(port) + "/cam/x"};
    auto out = fetch_frame(cam, 100);
    http.stop();
    t.join();
    ASSERT_TRUE(std::holds_alternative<Discarded>(out));
    EXPECT_EQ(std::get<Discarded>(out).reason, DiscardReason::error);
    EXPECT_EQ(std::get<Discarded>(out).detail, "HTTP 500");
}

TEST(FetchFrame, UnknownCameraAndClosedPortAreErrors) {
    camsim::Server server{{sim_camera("a", camsim::ConstantLatency{0})}, camsim::VirtualClock{}, {}};
    auto missing = fetch_frame(endpoint(server, "nope"), 100);
    ASSERT_TRUE(std::holds_alternative<Discarded>(missing));
    EXPECT_EQ(std::get<Discarded>(missing).reason, DiscardReason::error);

    const std::string dead_url = server.base_url() + "/cam/a";
    server.stop();
    auto dead = fetch_frame({SourceId{"a"}, dead_url}, 100);
    ASSERT_TRUE(std::holds_alternative<Discarded>(dead));
    EXPECT_EQ(std::get<Discarded>(dead).reason, DiscardReason::error);
}

TEST(FetchFrame, SourceTimestampFromHeader) {
    auto start = parse_iso8601("2025-01-06T12:00:00Z");
    camsim::Server server{{sim_camera("v", camsim::ConstantLatency{0})}, camsim::VirtualClock{start, 1.0}, {}};
    auto out = fetch_frame(endpoint(server, "v"), 100, true);
    ASSERT_TRUE(std::holds_alternative<Frame>(out));
    auto captured = std::get<Frame>(out).captured_at;
    EXPECT_GE(captured, start);
    EXPECT_LT(captured, start + 5s);
    auto log = server.request_log();
    ASSERT_EQ(log.size(), 1u);
    EXPECT_EQ(log[0].capture_ms, to_ms(captured));
}

TEST(CameraEndpoint, Validation) {
    EXPECT_NO_THROW((CameraEndpoint{SourceId{"a"}, "http://10.0.0.1:8080/img.jpg"}.validate()));
    EXPECT_NO_THROW((CameraEndpoint{SourceId{"a"}, "https://webcams.example.org/api/cameras/7/image"}.validate()));
    EXPECT_THROW((CameraEndpoint{SourceId{"a"}, "ftp://x/y"}.validate()), ConfigError);
    EXPECT_THROW((CameraEndpoint{SourceId{"a"}, "not a url"}.validate()), ConfigError);
    EXPECT_THROW((CameraEndpoint{SourceId{"a"}, "http://x/", 352, 240, 0ms}.validate()), ConfigError);
}

TEST(CameraList, ParsesAndRejects) {
    auto cams = parse_cameras_json(
        R"([{"id":"c1","url":"http://h/c1","width":352,"height":240,"poll_interval_ms":500},
            {"id":"c2","url":"http://h/c2"}])");
    ASSERT_EQ(cams.size(), 2u);
    EXPECT_EQ(cams[0].poll_interval, 500ms);
    EXPECT_EQ(cams[1].poll_interval, kDefaultPollInterval);
    EXPECT_THROW(parse_cameras_json("{}"), ConfigError);
    EXPECT_THROW(parse_cameras_json("[{\"id\":\"c\",\"url\":\"bad\"}]"), ConfigError);
    EXPECT_THROW(parse_cameras_json(R"([{"id":"c","url":"http://h/1"},{"id":"c","url":"http://h/2"}])"),
                 ConfigError);
    EXPECT_THROW(parse_cameras_json("[oops"), ConfigError);
}

TEST(CollectorConfig, DefaultsAndBounds) {
    CollectorConfig cfg;
    EXPECT_EQ(cfg.workers, 16u);
    EXPECT_EQ(cfg.batch_size, 64u);
    EXPECT_EQ(cfg.download_timeout_ms, 100.0);
    EXPECT_EQ(cfg.batch_max_wait_ms, 250.0);
    EXPECT_NO_THROW(cfg.validate());
    auto bad = cfg;
    bad.workers = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = cfg;
    bad.queue_capacity = 10;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = cfg;
    bad.download_timeout_ms = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(BoundedQueue, DropsNewestWhenFull) {
    BoundedQueue<int> q{2};
    EXPECT_TRUE(q.try_push(1));
    EXPECT_TRUE(q.try_push(2));
    EXPECT_FALSE(q.try_push(3));
    EXPECT_EQ(q.pop()->item, 1);
    EXPECT_EQ(q.pop()->item, 2);
    q.close();
    EXPECT_FALSE(q.pop());
    EXPECT_FALSE(q.try_push(4));
}

TEST(BatchFormer, SixtyFourRapidFramesFormOneBatch) {
    BoundedQueue<Frame> q{256};
    for (int i = 0; i < 64; ++i) q.try_push(dummy_frame(i));
    BatchFormer former{q, 64, 250};
    const auto started = SteadyClock::now();
    auto b = former.next();
    ASSERT_TRUE(b);
    EXPECT_EQ(b->frames.size(), 64u);
    EXPECT_LT(ms_since(started), 100.0);
    for (int i = 0; i < 64; ++i) EXPECT_EQ(to_ms(b->frames[static_cast<std::size_t>(i)].captured_at), i);
}

TEST(BatchFormer, PartialBatchFlushesAfterMaxWait) {
    BoundedQueue<Frame> q{256};
    const auto started = SteadyClock::now();
    for (int i = 0; i < 3; ++i) q.try_push(dummy_frame(i));
    BatchFormer former{q, 64, 250};
    auto b = former.next();
    const double took = ms_since(started);
    ASSERT_TRUE(b);
    EXPECT_EQ(b->frames.size(), 3u);
    EXPECT_GE(took, 249.0);
    EXPECT_LT(took, 250.0 + 50.0);
}

TEST(BatchFormer, OneHundredThirtyFrames) {
    BoundedQueue<Frame> q{256};
    for (int i = 0; i < 130; ++i) q.try_push(dummy_frame(i));
    BatchFormer former{q, 64, 50};
    std::vector<std::size_t> sizes;
    std::vector<std::uint64_t> ids;
    int expected = 0;
    for (int k = 0; k < 3; ++k) {
        auto b = former.next();
        ASSERT_TRUE(b);
        sizes.push_back(b->frames.size());
        ids.push_back(b->batch_id);
        for (const auto& f : b->frames) EXPECT_EQ(to_ms(f.captured_at), expected++);
    }
    EXPECT_EQ(sizes, (std::vector<std::size_t>{64, 64, 2}));
    EXPECT_EQ(ids, (std::vector<std::uint64_t>{1, 2, 3}));
}

TEST(BatchFormer, CloseFlushesImmediatelyThenEnds) {
    BoundedQueue<Frame> q{16};
    q.try_push(dummy_frame(0));
    q.close();
    BatchFormer former{q, 64, 10'000};
    const auto started = SteadyClock::now();
    auto b = former.next();
    ASSERT_TRUE(b);
    EXPECT_EQ(b->frames.size(), 1u);
    EXPECT_LT(ms_since(started), 100.0);
    EXPECT_FALSE(former.next());
}

TEST(Collector, StopDrainsAndConserves) {
    std::vector<camsim::SimCameraSpec> specs;
    for (int i = 0; i < 4; ++i) specs.push_back(sim_camera("c" + std::to_string(i), camsim::ConstantLatency{2}));
    camsim::Server server{specs, camsim::VirtualClock{}, {}};
    std::vector<CameraEndpoint> cams;
    for (int i = 0; i < 4; ++i) cams.push_back(endpoint(server, "c" + std::to_string(i), 50ms));

    std::atomic<std::size_t> received{0};
    CollectorConfig cfg;
    cfg.workers = 4;
    Collector collector{cams, cfg, [&](const FrameBatch& b) {
                            EXPECT_LE(b.frames.size(), cfg.batch_size);
                            EXPECT_FALSE(b.frames.empty());
                            received += b.frames.size();
                        }};
    collector.start();
    std::this_thread::sleep_for(1s);
    const auto stop_started = SteadyClock::now();
    collector.stop();
    EXPECT_LT(ms_since(stop_started), 2 * cfg.download_timeout_ms + cfg.batch_max_wait_ms + 100);
    auto s = collector.stats();
    EXPECT_GT(s.fetched, 40u);
    EXPECT_EQ(s.in_flight, 0u);
    EXPECT_EQ(s.persisted, s.batched);
    EXPECT_EQ(received.load(), s.persisted);
    EXPECT_EQ(s.resident_frames, 0u);
    EXPECT_TRUE(s.conserved());
    std::uint64_t per_source_fetched = 0;
    for (const auto& [src, p] : s.per_source) per_source_fetched += p.fetched;
    EXPECT_EQ(per_source_fetched, s.fetched);
    collector.stop();  // idempotent
}

TEST(Collector, StalledSinkBoundsMemory) {
    std::vector<camsim::SimCameraSpec> specs;
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) {
        ids.push_back("c" + std::to_string(i));
        specs.push_back(sim_camera(ids.back(), camsim::ConstantLatency{0}));
    }
    camsim::Server server{specs, camsim::VirtualClock{}, {}};
    std::vector<CameraEndpoint> cams;
    for (const auto& id : ids) cams.push_back(endpoint(server, id, 20ms));

    CollectorConfig cfg;
    cfg.workers = 4;
    cfg.queue_capacity = 64;
    std::atomic<bool> release{false};
    Collector collector{cams, cfg, [&](const FrameBatch&) {
                            while (!release) std::this_thread::sleep_for(5ms);
                        }};
    collector.start();
    std::uint64_t max_seen = 0;
    for (int i = 0; i < 40; ++i) {
        std::this_thread::sleep_for(50ms);
        auto s = collector.stats();
        max_seen = std::max(max_seen, s.resident_frames);
    }
    auto mid = collector.stats();
    release = true;
    collector.stop();
    auto s = collector.stats();
    EXPECT_GT(mid.discarded_queue_full, 0u);
    EXPECT_LE(s.max_resident_frames, cfg.queue_capacity + cfg.batch_size + cfg.workers);
    EXPECT_LE(max_seen, cfg.queue_capacity + cfg.batch_size + cfg.workers);
    EXPECT_TRUE(s.conserved());
}

TEST(Collector, FailingSinkRetriesThenDrops) {
    camsim::Server server{{sim_camera("c", camsim::ConstantLatency{0})}, camsim::VirtualClock{}, {}};
    CollectorConfig cfg;
    cfg.workers = 1;
    cfg.batch_size = 1;
    cfg.queue_capacity = 8;
    cfg.sink_retry_backoff = 1ms;
    std::atomic<int> calls{0};
    Collector collector{{endpoint(server, "c", 100ms)}, cfg, [&](const FrameBatch&) {
                            ++calls;
                            throw std::runtime_error("disk full");
                        }};
    collector.start();
    std::this_thread::sleep_for(550ms);
    collector.stop();
    auto s = collector.stats();
    EXPECT_GT(s.batches, 0u);
    EXPECT_EQ(s.persisted, 0u);
    EXPECT_EQ(s.sink_dropped, s.batched);
    EXPECT_EQ(static_cast<std::uint64_t>(calls.load()), s.batches * 3);
    EXPECT_TRUE(s.conserved());
}

TEST(Collector, SlowFramesNeverReachSink) {
    std::vector<camsim::SimCameraSpec> specs;
    for (int i = 0; i < 8; ++i)
        specs.push_back(sim_camera("c" + std::to_string(i), camsim::UniformLatency{40, 160}));
    camsim::Server server{specs, camsim::VirtualClock{}, {}};
    std::vector<CameraEndpoint> cams;
    for (int i = 0; i < 8; ++i) cams.push_back(endpoint(server, "c" + std::to_string(i), 200ms));
    CollectorConfig cfg;
    cfg.workers = 8;
    std::atomic<std::size_t> over{0}, seen{0};
    Collector collector{cams, cfg, [&](const FrameBatch& b) {
                            for (const auto& f : b.frames) {
                                ++seen;
                                if (f.download_ms > cfg.download_timeout_ms) ++over;
                            }
                        }};
    collector.start();
    std::this_thread::sleep_for(2s);
    collector.stop();
    auto s = collector.stats();
    EXPECT_GT(seen.load(), 0u);
    EXPECT_GT(s.discarded_timeout, 0u);
    EXPECT_EQ(over.load(), 0u);
    EXPECT_TRUE(s.conserved());
}

TEST(Collector, RejectsBadSetup) {
    CollectorConfig cfg;
    auto sink = [](const FrameBatch&) {};
    EXPECT_THROW((Collector{{}, cfg, sink}), ConfigError);
    EXPECT_THROW((Collector{{CameraEndpoint{SourceId{"a"}, "nope"}}, cfg, sink}), ConfigError);
    EXPECT_THROW((Collector{{CameraEndpoint{SourceId{"a"}, "http://h/x"}}, cfg, nullptr}), ConfigError);
}

TEST(RunCollector, ReturnsFinalStats) {
    camsim::Server server{{sim_camera("c", camsim::ConstantLatency{1})}, camsim::VirtualClock{}, {}};
    CollectorConfig cfg;
    cfg.workers = 2;
    const auto deadline = SteadyClock::now() + 400ms;
    auto s = run_collector({endpoint(server, "c", 50ms)}, cfg, [](const FrameBatch&) {},
                           [&] { return SteadyClock::now() >= deadline; });
    EXPECT_GT(s.fetched, 3u);
    EXPECT_EQ(s.persisted, s.batched);
    EXPECT_TRUE(s.conserved());
}
