#include "traffic/traffic.h"

#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <string>

#include <nlohmann/json.hpp>

#include "traffic/camsim.hpp"
#include "traffic/detector.hpp"
#include "traffic/image.hpp"
#include "traffic/ingest.hpp"
#include "traffic/phd.hpp"
#include "traffic/report.hpp"
#include "traffic/storage.hpp"

struct tp_store {
    std::unique_ptr<traffic::DetectionStore> impl;
};

struct tp_collector {
    tp_store* store = nullptr;
    std::unique_ptr<traffic::DetectorBackend> backend;
    std::unique_ptr<traffic::Collector> impl;
    double threshold = traffic::kDefaultConfidenceThreshold;
    std::atomic<std::uint64_t> rows_written{0};
    std::atomic<std::uint64_t> rows_skipped{0};
};

struct tp_camsim {
    std::unique_ptr<traffic::camsim::Server> server;
    traffic::camsim::VirtualClock clock;
};

namespace {

thread_local std::string g_last_error;

tp_status fail(tp_status code, const std::string& message) {
    g_last_error = message;
    return code;
}

/// Maps the C++ exception hierarchy onto status codes.
template <typename F>
tp_status guarded(F&& body) {
    try {
        g_last_error.clear();
        body();
        return TP_OK;
    } catch (const traffic::ConfigError& e) {
        return fail(TP_ERR_CONFIG, e.what());
    } catch (const traffic::StorageError& e) {
        return fail(TP_ERR_IO, e.what());
    } catch (const traffic::BackendError& e) {
        return fail(TP_ERR_BACKEND, e.what());
    } catch (const traffic::MalformedReport& e) {
        return fail(TP_ERR_IO, e.what());
    } catch (const traffic::InvalidImage& e) {
        return fail(TP_ERR_INVALID_ARGUMENT, e.what());
    } catch (const std::invalid_argument& e) {
        return fail(TP_ERR_INVALID_ARGUMENT, e.what());
    } catch (const std::out_of_range& e) {
        return fail(TP_ERR_INVALID_ARGUMENT, e.what());
    } catch (const std::exception& e) {
        return fail(TP_ERR_RUNTIME, e.what());
    } catch (...) {
        return fail(TP_ERR_RUNTIME, "unknown error");
    }
}

void require(const void* p, const char* what) {
    if (!p) throw std::invalid_argument(std::string(what) + " must not be null");
}

traffic::AnalysisConfig to_config(const tp_analysis_options* o) {
    traffic::AnalysisConfig cfg;
    if (!o) return cfg;
    cfg.window_size = o->window_size;

    auto tz = traffic::TimeZone::load(o->timezone ? o->timezone : std::string(traffic::kDefaultTimezone));
    traffic::Instant split;
    const std::string split_text = o->split ? o->split : "2025-01-05T00:00:00";
    try {
        split = traffic::parse_iso8601(split_text);
    } catch (const std::invalid_argument&) {
        try {
            split = tz.local_to_instant(split_text);
        } catch (const std::invalid_argument&) {
            throw traffic::ConfigError("invalid split timestamp '" + split_text + "'");
        }
    }
    cfg.split = traffic::SplitConfig{split, tz};

    if (o->windows && o->window_count > 0) {
        cfg.windows.clear();
        for (std::size_t i = 0; i < o->window_count; ++i) {
            require(o->windows[i], "window");
            try {
                cfg.windows.push_back(traffic::parse_time_window(o->windows[i]));
            } catch (const std::exception& e) {
                throw traffic::ConfigError(e.what());
            }
        }
    }
    const std::string sel = o->class_selector ? o->class_selector : "total";
    if (sel == "total") {
        cfg.selector = traffic::ClassSelector::total();
    } else if (auto cls = traffic::parse_vehicle_class(sel)) {
        cfg.selector = traffic::ClassSelector::only(*cls);
    } else {
        throw traffic::ConfigError("unknown class selector '" + sel + "'");
    }
    if (cfg.window_size < 1) throw traffic::ConfigError("window size must be >= 1");
    return cfg;
}

std::ofstream open_out(const char* path) {
    require(path, "output path");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw traffic::StorageError(std::string("cannot write '") + path + "'");
    return out;
}

std::unique_ptr<traffic::DetectorBackend> make_backend(const std::string& spec, std::size_t batch_size) {
    if (spec.empty() || spec == "stub") return std::make_unique<traffic::StubBackend>(batch_size);
    constexpr std::string_view prefix = "exec:";
    if (spec.rfind(prefix, 0) == 0) {
        traffic::ExternalWorkerBackend::Options opts;
        opts.command = spec.substr(prefix.size());
        opts.batch_size = batch_size;
        return std::make_unique<traffic::ExternalWorkerBackend>(opts);
    }
    throw traffic::ConfigError("unknown detector '" + spec + "' (expected stub or exec:<command>)");
}

}  // namespace

extern "C" {

const char* tp_last_error(void) { return g_last_error.c_str(); }
const char* tp_version(void) { return "0.1.0"; }

tp_status tp_store_open(const char* path, tp_store** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        auto s = std::make_unique<tp_store>();
        s->impl = std::make_unique<traffic::DetectionStore>(path);
        *out = s.release();
    });
}

void tp_store_close(tp_store* store) { delete store; }

tp_status tp_store_row_count(const tp_store* store, uint64_t* rows) {
    return guarded([&] {
        require(store, "store");
        require(rows, "rows");
        *rows = store->impl->row_count();
    });
}

tp_status tp_store_export_csv(const tp_store* store, const char* csv_path, uint64_t* rows) {
    return guarded([&] {
        require(store, "store");
        auto out = open_out(csv_path);
        store->impl->export_csv(out);
        if (rows) *rows = store->impl->row_count();
    });
}

tp_status tp_store_import_csv(tp_store* store, const char* csv_path, uint64_t* written, uint64_t* skipped) {
    return guarded([&] {
        require(store, "store");
        require(csv_path, "csv path");
        std::ifstream in(csv_path, std::ios::binary);
        if (!in) throw traffic::StorageError(std::string("cannot read '") + csv_path + "'");
        auto r = store->impl->import_csv(in);
        if (written) *written = r.written;
        if (skipped) *skipped = r.skipped;
    });
}

void tp_analysis_options_default(tp_analysis_options* o) {
    if (!o) return;
    *o = tp_analysis_options{static_cast<uint32_t>(traffic::kDefaultRollingWindow), "2025-01-05T00:00:00",
                             "America/New_York", nullptr, 0, "total"};
}

tp_status tp_analyze(const tp_store* store, const tp_analysis_options* options, const char* out_csv_path,
                     uint64_t* report_rows, uint64_t* observations) {
    return guarded([&] {
        require(store, "store");
        auto cfg = to_config(options);
        auto out = open_out(out_csv_path);
        auto series = store->impl->query_series({}, traffic::TimeRange::all(), cfg.selector);
        std::uint64_t n = 0;
        for (const auto& s : series) n += s.size();
        auto report = traffic::process_traffic_data(series, cfg);
        traffic::write_report_csv(out, report);
        if (!out) throw traffic::StorageError("failed writing analysis CSV");
        if (report_rows) *report_rows = report.rows.size();
        if (observations) *observations = n;
    });
}

tp_status tp_write_hourly_means(const tp_store* store, const tp_analysis_options* options, const char* out_csv_path,
                                uint64_t* rows) {
    return guarded([&] {
        require(store, "store");
        auto cfg = to_config(options);
        auto out = open_out(out_csv_path);
        auto series = store->impl->query_series({}, traffic::TimeRange::all(), cfg.selector);
        std::vector<traffic::SmoothedSeries> smoothed;
        std::vector<traffic::SourceId> sources;
        for (const auto& s : series) {
            smoothed.push_back(traffic::rolling_mean(s, cfg.window_size, cfg.selector));
            sources.push_back(s.source());
        }
        auto table = traffic::partitioned_means(smoothed, cfg.split);
        traffic::write_hourly_means_csv(out, table, sources, cfg.windows);
        if (rows) {
            std::uint64_t n = 0;
            for (const auto& w : cfg.windows) n += static_cast<std::uint64_t>(w.end().value() - w.start().value() + 1);
            *rows = n * 2 * sources.size();
        }
    });
}

tp_status tp_report(const char* analysis_csv_path, tp_report_format format, const char* out_path, uint64_t* rows) {
    return guarded([&] {
        require(analysis_csv_path, "analysis path");
        std::ifstream in(analysis_csv_path, std::ios::binary);
        if (!in) throw traffic::StorageError(std::string("cannot read '") + analysis_csv_path + "'");
        auto report = traffic::read_report_csv(in);
        auto fmt = format == TP_REPORT_CSV ? traffic::SummaryFormat::csv : traffic::SummaryFormat::table;
        if (out_path) {
            auto out = open_out(out_path);
            traffic::write_summary(out, report, fmt);
        } else {
            traffic::write_summary(std::cout, report, fmt);
            std::cout.flush();
        }
        if (rows) *rows = report.rows.size();
    });
}

void tp_collector_options_default(tp_collector_options* o) {
    if (!o) return;
    traffic::CollectorConfig d;
    *o = tp_collector_options{static_cast<uint32_t>(d.workers), static_cast<uint32_t>(d.batch_size),
                              d.download_timeout_ms, d.batch_max_wait_ms, static_cast<uint32_t>(d.queue_capacity),
                              traffic::kDefaultConfidenceThreshold, 0, "stub"};
}

tp_status tp_collector_create(const char* cameras_json_path, const tp_collector_options* options, tp_store* store,
                              tp_collector** out) {
    return guarded([&] {
        require(cameras_json_path, "camera file");
        require(store, "store");
        require(out, "out");
        tp_collector_options o;
        tp_collector_options_default(&o);
        if (options) o = *options;

        traffic::CollectorConfig cfg;
        cfg.workers = o.workers;
        cfg.batch_size = o.batch_size;
        cfg.download_timeout_ms = o.download_timeout_ms;
        cfg.batch_max_wait_ms = o.batch_max_wait_ms;
        cfg.queue_capacity = o.queue_capacity;
        cfg.use_source_timestamp = o.use_source_timestamp != 0;
        cfg.validate();
        if (!(o.confidence_threshold > 0 && o.confidence_threshold <= 1))
            throw traffic::ConfigError("confidence threshold must be in (0, 1]");

        auto cams = traffic::load_cameras_file(cameras_json_path);
        auto c = std::make_unique<tp_collector>();
        c->store = store;
        c->threshold = o.confidence_threshold;
        c->backend = make_backend(o.detector ? o.detector : "stub", cfg.batch_size);
        auto* raw = c.get();
        c->impl = std::make_unique<traffic::Collector>(std::move(cams), cfg, [raw](const traffic::FrameBatch& batch) {
            auto results = traffic::detect_batch(batch, *raw->backend, raw->threshold);
            auto r = raw->store->impl->append(results);
            raw->rows_written += r.written;
            raw->rows_skipped += r.skipped;
        });
        *out = c.release();
    });
}

tp_status tp_collector_start(tp_collector* collector) {
    return guarded([&] {
        require(collector, "collector");
        collector->impl->start();
    });
}

tp_status tp_collector_stop(tp_collector* collector) {
    return guarded([&] {
        require(collector, "collector");
        collector->impl->stop();
    });
}

tp_status tp_collector_get_stats(const tp_collector* collector, tp_collector_stats* stats) {
    return guarded([&] {
        require(collector, "collector");
        require(stats, "stats");
        auto s = collector->impl->stats();
        *stats = tp_collector_stats{s.fetched,        s.discarded_timeout,  s.discarded_error,
                                    s.discarded_queue_full, s.batched,      s.persisted,
                                    s.sink_dropped,   s.batches,            s.in_flight,
                                    s.resident_frames, s.max_resident_frames, collector->rows_written.load(),
                                    collector->rows_skipped.load()};
    });
}

void tp_collector_destroy(tp_collector* collector) {
    if (!collector) return;
    collector->impl.reset();  // joins threads before the backend goes away
    delete collector;
}

tp_status tp_camsim_start(const char* scenario_json, const char* host, int port, tp_camsim** out) {
    return guarded([&] {
        require(scenario_json, "scenario");
        require(out, "out");
        auto scenario = traffic::camsim::parse_scenario_json(scenario_json);
        auto specs = traffic::camsim::scripted_fleet(scenario);
        auto sim = std::make_unique<tp_camsim>();
        sim->clock = traffic::camsim::make_clock(scenario);
        traffic::camsim::Server::Options opts;
        if (host) opts.host = host;
        opts.port = port;
        sim->server = std::make_unique<traffic::camsim::Server>(std::move(specs), sim->clock, opts);
        *out = sim.release();
    });
}

tp_status tp_camsim_port(const tp_camsim* sim, int* port) {
    return guarded([&] {
        require(sim, "camsim");
        require(port, "port");
        *port = sim->server->port();
    });
}

tp_status tp_camsim_virtual_now_ms(const tp_camsim* sim, int64_t* now_ms) {
    return guarded([&] {
        require(sim, "camsim");
        require(now_ms, "now_ms");
        *now_ms = traffic::to_ms(sim->clock.now());
    });
}

tp_status tp_camsim_write_cameras(const tp_camsim* sim, const char* path, uint32_t poll_interval_ms) {
    return guarded([&] {
        require(sim, "camsim");
        if (poll_interval_ms == 0) throw traffic::ConfigError("poll interval must be > 0");
        auto out = open_out(path);
        out << sim->server->cameras_json(std::chrono::milliseconds{poll_interval_ms}) << '\n';
    });
}

tp_status tp_camsim_write_request_log(const tp_camsim* sim, const char* path, uint64_t* entries) {
    return guarded([&] {
        require(sim, "camsim");
        auto out = open_out(path);
        auto log = sim->server->request_log();
        for (const auto& e : log) {
            nlohmann::json counts = nlohmann::json::object();
            for (auto cls : traffic::kAllVehicleClasses) counts[std::string(traffic::to_string(cls))] = e.counts[cls];
            out << nlohmann::json{{"source", e.source.str()},
                                  {"capture_ms", e.capture_ms},
                                  {"latency_ms", e.latency_ms},
                                  {"counts", counts}}
                       .dump()
                << '\n';
        }
        if (entries) *entries = log.size();
    });
}

tp_status tp_camsim_stop(tp_camsim* sim) {
    return guarded([&] {
        require(sim, "camsim");
        sim->server->stop();
    });
}

void tp_camsim_destroy(tp_camsim* sim) { delete sim; }

}  // extern "C"
