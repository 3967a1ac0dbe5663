// trafficctl: operator entry point over the libtraffic C API.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "traffic/traffic.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

/// Reads `--config` JSON. Top-level scalars apply to the active subcommand;
/// an object keyed by a subcommand name applies to that subcommand.
class JsonConfig : public CLI::Config {
public:
    explicit JsonConfig(std::string active) : active_(std::move(active)) {}

    std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        nlohmann::json doc;
        try {
            input >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
        }
        if (!doc.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
        std::vector<CLI::ConfigItem> items;
        for (auto& [key, value] : doc.items()) {
            if (value.is_object()) {
                for (auto& [k, v] : value.items()) items.push_back(item({key}, k, v));
            } else if (!active_.empty()) {
                items.push_back(item({active_}, key, value));
            }
        }
        return items;
    }

private:
    static CLI::ConfigItem item(std::vector<std::string> parents, std::string name, const nlohmann::json& v) {
        CLI::ConfigItem it;
        it.parents = std::move(parents);
        for (auto& ch : name)
            if (ch == '_') ch = '-';
        it.name = std::move(name);
        auto scalar = [](const nlohmann::json& x) { return x.is_string() ? x.get<std::string>() : x.dump(); };
        if (v.is_array())
            for (const auto& x : v) it.inputs.push_back(scalar(x));
        else
            it.inputs.push_back(scalar(v));
        return it;
    }

    std::string active_;
};

int status_exit(tp_status st) {
    return (st == TP_ERR_CONFIG || st == TP_ERR_INVALID_ARGUMENT) ? kExitUsage : kExitRuntime;
}

int report_error(const char* what, tp_status st) {
    std::cerr << "trafficctl: " << what << ": " << tp_last_error() << '\n';
    return status_exit(st);
}

void print_stats(const tp_collector_stats& s) {
    std::fprintf(stderr,
                 "stats fetched=%llu discarded_timeout=%llu discarded_error=%llu discarded_queue_full=%llu "
                 "batched=%llu persisted=%llu sink_dropped=%llu batches=%llu in_flight=%llu rows_written=%llu "
                 "rows_skipped=%llu\n",
                 static_cast<unsigned long long>(s.fetched), static_cast<unsigned long long>(s.discarded_timeout),
                 static_cast<unsigned long long>(s.discarded_error),
                 static_cast<unsigned long long>(s.discarded_queue_full), static_cast<unsigned long long>(s.batched),
                 static_cast<unsigned long long>(s.persisted), static_cast<unsigned long long>(s.sink_dropped),
                 static_cast<unsigned long long>(s.batches), static_cast<unsigned long long>(s.in_flight),
                 static_cast<unsigned long long>(s.rows_written), static_cast<unsigned long long>(s.rows_skipped));
}

/// RAII wrapper for the store handle.
struct Store {
    tp_store* handle = nullptr;
    ~Store() { tp_store_close(handle); }
};

struct CollectArgs {
    std::string cameras;
    std::string db;
    std::string detector = "stub";
    unsigned workers = 16;
    unsigned batch_size = 64;
    double download_timeout_ms = 100;
    double batch_max_wait_ms = 250;
    unsigned queue_capacity = 256;
    double threshold = 0.25;
    bool source_time = false;
    unsigned stats_interval_ms = 5000;
    double duration_s = 0;
    bool dry_run = false;
};

struct AnalysisArgs {
    std::string db;
    std::string split = "2025-01-05";
    std::string tz = "America/New_York";
    unsigned window_size = 12;
    std::vector<std::string> windows;
    std::string class_selector = "total";
};

struct AnalyzeArgs {
    AnalysisArgs analysis;
    std::string out;
};

struct ReportArgs {
    AnalysisArgs analysis;
    std::string input;
    std::string format = "table";
    std::string out;
    std::string hourly_out;
};

struct CamsimArgs {
    std::string scenario;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string write_cameras;
    unsigned poll_interval_ms = 2000;
    std::string request_log;
    double duration_s = 0;
};

void add_analysis_flags(CLI::App* cmd, AnalysisArgs& a, bool db_required) {
    auto* db = cmd->add_option("--db", a.db, "Detection database file");
    if (db_required) db->required();
    cmd->add_option("--split", a.split, "Split instant: RFC 3339, or local date/time in --tz")->capture_default_str();
    cmd->add_option("--tz", a.tz, "IANA timezone for hour/day-type bucketing")
        ->envname("TRAFFIC_TZ")
        ->capture_default_str();
    cmd->add_option("--window-size", a.window_size, "Rolling mean length in observations")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--window", a.windows, "Time window Label:h1-h2 (repeatable; replaces the defaults)");
    cmd->add_option("--class", a.class_selector, "total or one of bicycle,car,motorcycle,bus,truck")
        ->capture_default_str();
}

tp_analysis_options analysis_options(const AnalysisArgs& a, std::vector<const char*>& window_ptrs) {
    tp_analysis_options o;
    tp_analysis_options_default(&o);
    o.window_size = a.window_size;
    o.split = a.split.c_str();
    o.timezone = a.tz.c_str();
    o.class_selector = a.class_selector.c_str();
    window_ptrs.clear();
    for (const auto& w : a.windows) window_ptrs.push_back(w.c_str());
    o.windows = window_ptrs.empty() ? nullptr : window_ptrs.data();
    o.window_count = window_ptrs.size();
    return o;
}

bool file_exists(const std::string& path) {
    std::error_code ec;
    return std::filesystem::is_regular_file(path, ec);
}

int run_collect(const CollectArgs& a) {
    std::fprintf(stderr,
                 "config workers=%u batch_size=%u download_timeout_ms=%g batch_max_wait_ms=%g queue_capacity=%u "
                 "threshold=%g detector=%s\n",
                 a.workers, a.batch_size, a.download_timeout_ms, a.batch_max_wait_ms, a.queue_capacity, a.threshold,
                 a.detector.c_str());
    if (!file_exists(a.cameras)) {
        std::cerr << "trafficctl: camera file '" << a.cameras << "' not found\n";
        return kExitUsage;
    }

    Store store;
    if (auto st = tp_store_open(a.db.c_str(), &store.handle); st != TP_OK) return report_error("open database", st);

    tp_collector_options opts;
    tp_collector_options_default(&opts);
    opts.workers = a.workers;
    opts.batch_size = a.batch_size;
    opts.download_timeout_ms = a.download_timeout_ms;
    opts.batch_max_wait_ms = a.batch_max_wait_ms;
    opts.queue_capacity = a.queue_capacity;
    opts.confidence_threshold = a.threshold;
    opts.use_source_timestamp = a.source_time ? 1 : 0;
    opts.detector = a.detector.c_str();

    tp_collector* collector = nullptr;
    if (auto st = tp_collector_create(a.cameras.c_str(), &opts, store.handle, &collector); st != TP_OK)
        return report_error("collector", st);
    if (a.dry_run) {
        tp_collector_destroy(collector);
        return kExitOk;
    }
    if (auto st = tp_collector_start(collector); st != TP_OK) {
        tp_collector_destroy(collector);
        return report_error("start collector", st);
    }

    const auto started = std::chrono::steady_clock::now();
    auto last_stats = started;
    tp_collector_stats stats{};
    while (!g_interrupted) {
        std::this_thread::sleep_for(std::chrono::milliseconds{50});
        const auto now = std::chrono::steady_clock::now();
        if (a.duration_s > 0 && now - started >= std::chrono::duration<double>(a.duration_s)) break;
        if (now - last_stats >= std::chrono::milliseconds{a.stats_interval_ms}) {
            last_stats = now;
            if (tp_collector_get_stats(collector, &stats) == TP_OK) print_stats(stats);
        }
    }
    auto st = tp_collector_stop(collector);
    if (tp_collector_get_stats(collector, &stats) == TP_OK) print_stats(stats);
    tp_collector_destroy(collector);
    if (st != TP_OK) return report_error("stop collector", st);
    return kExitOk;
}

int run_analyze(const AnalyzeArgs& a) {
    if (!file_exists(a.analysis.db)) {
        std::cerr << "trafficctl: database '" << a.analysis.db << "' not found\n";
        return kExitUsage;
    }
    Store store;
    if (auto st = tp_store_open(a.analysis.db.c_str(), &store.handle); st != TP_OK)
        return report_error("open database", st);
    std::vector<const char*> windows;
    auto opts = analysis_options(a.analysis, windows);
    uint64_t rows = 0;
    uint64_t observations = 0;
    if (auto st = tp_analyze(store.handle, &opts, a.out.c_str(), &rows, &observations); st != TP_OK)
        return report_error("analyze", st);
    if (observations == 0) std::cerr << "trafficctl: warning: database holds no observations; report is empty\n";
    std::cerr << "wrote " << rows << " report rows from " << observations << " observations to " << a.out << '\n';
    return kExitOk;
}

int run_report(const ReportArgs& a) {
    if (a.format != "table" && a.format != "csv") {
        std::cerr << "trafficctl: --format must be table or csv\n";
        return kExitUsage;
    }
    if (!file_exists(a.input)) {
        std::cerr << "trafficctl: analysis file '" << a.input << "' not found\n";
        return kExitUsage;
    }
    const char* out = a.out.empty() ? nullptr : a.out.c_str();
    uint64_t rows = 0;
    {
        std::ifstream probe(a.input);
        if (probe.peek() == std::char_traits<char>::eof()) {
            std::cout << "no data\n";
            return kExitOk;
        }
    }
    if (auto st = tp_report(a.input.c_str(), a.format == "csv" ? TP_REPORT_CSV : TP_REPORT_TABLE, out, &rows);
        st != TP_OK)
        return report_error("report", st == TP_ERR_IO ? TP_ERR_RUNTIME : st);
    if (rows == 0) std::cout << "no data\n";

    if (!a.hourly_out.empty()) {
        if (a.analysis.db.empty() || !file_exists(a.analysis.db)) {
            std::cerr << "trafficctl: --hourly-out needs an existing --db\n";
            return kExitUsage;
        }
        Store store;
        if (auto st = tp_store_open(a.analysis.db.c_str(), &store.handle); st != TP_OK)
            return report_error("open database", st);
        std::vector<const char*> windows;
        auto opts = analysis_options(a.analysis, windows);
        uint64_t hourly = 0;
        if (auto st = tp_write_hourly_means(store.handle, &opts, a.hourly_out.c_str(), &hourly); st != TP_OK)
            return report_error("hourly means", st);
    }
    return kExitOk;
}

int run_camsim(const CamsimArgs& a) {
    std::ifstream in(a.scenario);
    if (!in) {
        std::cerr << "trafficctl: cannot read scenario '" << a.scenario << "'\n";
        return kExitUsage;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    tp_camsim* sim = nullptr;
    if (auto st = tp_camsim_start(ss.str().c_str(), a.host.c_str(), a.port, &sim); st != TP_OK)
        return report_error("camsim", st);
    int port = 0;
    tp_camsim_port(sim, &port);
    std::cerr << "camsim listening on " << a.host << ':' << port << '\n';
    if (!a.write_cameras.empty()) {
        if (auto st = tp_camsim_write_cameras(sim, a.write_cameras.c_str(), a.poll_interval_ms); st != TP_OK) {
            tp_camsim_destroy(sim);
            return report_error("write cameras", st);
        }
    }
    const auto started = std::chrono::steady_clock::now();
    while (!g_interrupted) {
        std::this_thread::sleep_for(std::chrono::milliseconds{50});
        if (a.duration_s > 0 && std::chrono::steady_clock::now() - started >= std::chrono::duration<double>(a.duration_s))
            break;
    }
    tp_camsim_stop(sim);
    int rc = kExitOk;
    if (!a.request_log.empty()) {
        uint64_t n = 0;
        if (auto st = tp_camsim_write_request_log(sim, a.request_log.c_str(), &n); st != TP_OK)
            rc = report_error("request log", st);
    }
    tp_camsim_destroy(sim);
    return rc;
}

bool flag_on_command_line(int argc, char** argv, const std::string& flag) {
    for (int i = 1; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg == flag || arg.rfind(flag + "=", 0) == 0) return true;
    }
    return false;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Camera-to-metric traffic analytics pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    static const std::vector<std::string> subcommands{"collect", "analyze", "report", "camsim", "export", "import"};
    std::string active;
    for (int i = 1; i < argc && active.empty(); ++i)
        if (std::find(subcommands.begin(), subcommands.end(), argv[i]) != subcommands.end()) active = argv[i];
    app.config_formatter(std::make_shared<JsonConfig>(active));
    app.set_config("--config", "", "JSON file with flag values");

    CollectArgs collect;
    auto* c = app.add_subcommand("collect", "Poll cameras, detect, and store per-class counts");
    c->add_option("--cameras", collect.cameras, "Camera list JSON")->required();
    c->add_option("--db", collect.db, "Detection database file")->required();
    c->add_option("--detector", collect.detector, "stub or exec:<command>")->capture_default_str();
    c->add_option("--workers", collect.workers, "Parallel fetch workers (env COLLECTOR_WORKERS)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    c->add_option("--batch-size", collect.batch_size, "Frames per detector batch")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    c->add_option("--download-timeout-ms", collect.download_timeout_ms, "Discard frames slower than this")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    c->add_option("--batch-max-wait-ms", collect.batch_max_wait_ms, "Flush partial batches after this wait")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    c->add_option("--queue-capacity", collect.queue_capacity, "Bounded frame queue size")->capture_default_str();
    c->add_option("--threshold", collect.threshold, "Detector confidence threshold")->capture_default_str();
    c->add_flag("--source-time", collect.source_time, "Use the camera's capture-time header as captured_at");
    c->add_option("--stats-interval-ms", collect.stats_interval_ms, "Stats line period")->capture_default_str();
    c->add_option("--duration-s", collect.duration_s, "Stop after this many seconds (0 = until interrupted)");
    c->add_flag("--dry-run", collect.dry_run, "Validate configuration and exit");

    AnalyzeArgs analyze;
    auto* an = app.add_subcommand("analyze", "Compute peak hour differentials into a CSV");
    add_analysis_flags(an, analyze.analysis, true);
    an->add_option("--out", analyze.out, "Output CSV path")->required();

    ReportArgs report;
    auto* rp = app.add_subcommand("report", "Summarize an analysis CSV");
    rp->add_option("--input", report.input, "Analysis CSV from `analyze`")->required();
    rp->add_option("--format", report.format, "table or csv")->capture_default_str();
    rp->add_option("--out", report.out, "Summary output path (default stdout)");
    rp->add_option("--hourly-out", report.hourly_out, "Also write hourly bucket means CSV (needs --db)");
    add_analysis_flags(rp, report.analysis, false);

    CamsimArgs camsim;
    auto* cs = app.add_subcommand("camsim", "Serve a simulated camera fleet");
    cs->add_option("--scenario", camsim.scenario, "Scenario JSON")->required();
    cs->add_option("--host", camsim.host)->capture_default_str();
    cs->add_option("--port", camsim.port, "0 picks a free port")->capture_default_str();
    cs->add_option("--write-cameras", camsim.write_cameras, "Write the collector camera list here");
    cs->add_option("--poll-interval-ms", camsim.poll_interval_ms, "Poll interval for the written camera list")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cs->add_option("--request-log", camsim.request_log, "Write served-request log (JSON lines) on exit");
    cs->add_option("--duration-s", camsim.duration_s, "Stop after this many seconds (0 = until interrupted)");

    std::string export_db, export_out;
    auto* ex = app.add_subcommand("export", "Export the detections table as CSV");
    ex->add_option("--db", export_db)->required();
    ex->add_option("--out", export_out)->required();

    std::string import_db, import_in;
    auto* im = app.add_subcommand("import", "Import detections from CSV");
    im->add_option("--db", import_db)->required();
    im->add_option("--in", import_in)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::signal(SIGPIPE, SIG_IGN);

    if (*c) {
        if (const char* env = std::getenv("COLLECTOR_WORKERS"); env && !flag_on_command_line(argc, argv, "--workers")) {
            try {
                auto v = std::stoul(env);
                if (v == 0) throw std::invalid_argument("zero");
                collect.workers = static_cast<unsigned>(v);
            } catch (const std::exception&) {
                std::cerr << "trafficctl: COLLECTOR_WORKERS must be a positive integer\n";
                return kExitUsage;
            }
        }
        return run_collect(collect);
    }
    if (*an) return run_analyze(analyze);
    if (*rp) return run_report(report);
    if (*cs) return run_camsim(camsim);
    if (*ex) {
        if (!file_exists(export_db)) {
            std::cerr << "trafficctl: database '" << export_db << "' not found\n";
            return kExitUsage;
        }
        Store store;
        if (auto st = tp_store_open(export_db.c_str(), &store.handle); st != TP_OK) return report_error("open", st);
        uint64_t rows = 0;
        if (auto st = tp_store_export_csv(store.handle, export_out.c_str(), &rows); st != TP_OK)
            return report_error("export", st);
        std::cerr << "exported " << rows << " rows\n";
        return kExitOk;
    }
    if (*im) {
        Store store;
        if (auto st = tp_store_open(import_db.c_str(), &store.handle); st != TP_OK) return report_error("open", st);
        uint64_t written = 0, skipped = 0;
        if (auto st = tp_store_import_csv(store.handle, import_in.c_str(), &written, &skipped); st != TP_OK)
            return report_error("import", st);
        std::cerr << "imported " << written << " rows (" << skipped << " duplicates skipped)\n";
        return kExitOk;
    }
    return kExitUsage;
}
