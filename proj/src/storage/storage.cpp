#include "traffic/storage.hpp"

#include <charconv>
#include <istream>
#include <map>
#include <ostream>

#include <fmt/format.h>
#include <sqlite3.h>

#include "traffic/csv.hpp"

namespace traffic {

namespace {

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS detections (
    row_id INTEGER PRIMARY KEY AUTOINCREMENT,
    source TEXT NOT NULL,
    captured_at_ms INTEGER NOT NULL,
    bicycle INTEGER NOT NULL,
    car INTEGER NOT NULL,
    motorcycle INTEGER NOT NULL,
    bus INTEGER NOT NULL,
    truck INTEGER NOT NULL,
    total INTEGER NOT NULL,
    threshold REAL NOT NULL,
    model_id TEXT NOT NULL
);
CREATE UNIQUE INDEX IF NOT EXISTS detections_identity
    ON detections (source, captured_at_ms, model_id);
)sql";

class Statement {
public:
    Statement(sqlite3* db, const char* sql) : db_(db) {
        if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK)
            throw StorageError(std::string("prepare failed: ") + sqlite3_errmsg(db));
    }
    ~Statement() { sqlite3_finalize(stmt_); }
    Statement(const Statement&) = delete;
    Statement& operator=(const Statement&) = delete;

    void bind(int i, std::int64_t v) { check(sqlite3_bind_int64(stmt_, i, v)); }
    void bind(int i, double v) { check(sqlite3_bind_double(stmt_, i, v)); }
    void bind(int i, const std::string& v) {
        check(sqlite3_bind_text(stmt_, i, v.c_str(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
    }

    /// True while rows remain.
    bool step() {
        int rc = sqlite3_step(stmt_);
        if (rc == SQLITE_ROW) return true;
        if (rc == SQLITE_DONE) return false;
        throw StorageError(std::string("step failed: ") + sqlite3_errmsg(db_));
    }
    void reset() {
        sqlite3_reset(stmt_);
        sqlite3_clear_bindings(stmt_);
    }

    std::int64_t int64(int col) const { return sqlite3_column_int64(stmt_, col); }
    double real(int col) const { return sqlite3_column_double(stmt_, col); }
    std::string text(int col) const {
        const auto* p = sqlite3_column_text(stmt_, col);
        return p ? std::string(reinterpret_cast<const char*>(p), static_cast<std::size_t>(sqlite3_column_bytes(stmt_, col)))
                 : std::string();
    }

private:
    void check(int rc) {
        if (rc != SQLITE_OK) throw StorageError(std::string("bind failed: ") + sqlite3_errmsg(db_));
    }
    sqlite3* db_;
    sqlite3_stmt* stmt_ = nullptr;
};

void exec(sqlite3* db, const char* sql) {
    char* err = nullptr;
    if (sqlite3_exec(db, sql, nullptr, nullptr, &err) != SQLITE_OK) {
        std::string msg = err ? err : "unknown error";
        sqlite3_free(err);
        throw StorageError(msg);
    }
}

sqlite3* open_db(const std::filesystem::path& path, int flags) {
    sqlite3* db = nullptr;
    if (sqlite3_open_v2(path.c_str(), &db, flags, nullptr) != SQLITE_OK) {
        std::string msg = db ? sqlite3_errmsg(db) : "out of memory";
        sqlite3_close(db);
        throw StorageError("cannot open '" + path.string() + "': " + msg);
    }
    sqlite3_busy_timeout(db, 5000);
    return db;
}

struct ReadConnection {
    explicit ReadConnection(const std::filesystem::path& path)
        : db(open_db(path, SQLITE_OPEN_READONLY | SQLITE_OPEN_NOMUTEX)) {}
    ~ReadConnection() { sqlite3_close(db); }
    sqlite3* db;
};

constexpr const char* kSelectColumns =
    "SELECT row_id, source, captured_at_ms, bicycle, car, motorcycle, bus, truck, total, threshold, model_id "
    "FROM detections ";

StoredRecord read_record(const Statement& st) {
    StoredRecord r;
    r.row_id = st.int64(0);
    r.source = SourceId{st.text(1)};
    r.captured_at = instant_from_ms(st.int64(2));
    for (std::size_t c = 0; c < kVehicleClassCount; ++c)
        r.counts.values[c] = static_cast<std::uint32_t>(st.int64(3 + static_cast<int>(c)));
    r.threshold = st.real(9);
    r.model_id = st.text(10);
    return r;
}

std::int64_t parse_int(const std::string& s, const char* what) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw StorageError(fmt::format("invalid {} '{}'", what, s));
    return v;
}

}  // namespace

DetectionStore::DetectionStore(std::filesystem::path path) : path_(std::move(path)) {
    db_ = open_db(path_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX);
    try {
        exec(db_, "PRAGMA journal_mode=WAL;");
        exec(db_, "PRAGMA synchronous=FULL;");
        exec(db_, kSchema);
    } catch (...) {
        sqlite3_close(db_);
        throw;
    }
}

DetectionStore::~DetectionStore() { sqlite3_close(db_); }

void DetectionStore::set_insert_hook(std::function<void(std::size_t)> hook) {
    std::lock_guard lock(write_mutex_);
    insert_hook_ = std::move(hook);
}

AppendOutcome DetectionStore::append(std::span<const DetectionResult> results) {
    std::lock_guard lock(write_mutex_);
    AppendOutcome outcome;
    exec(db_, "BEGIN IMMEDIATE;");
    try {
        Statement ins(db_,
                      "INSERT OR IGNORE INTO detections (source, captured_at_ms, bicycle, car, motorcycle, bus, "
                      "truck, total, threshold, model_id) VALUES (?,?,?,?,?,?,?,?,?,?)");
        for (std::size_t i = 0; i < results.size(); ++i) {
            const auto& r = results[i];
            ins.bind(1, r.source.str());
            ins.bind(2, to_ms(r.captured_at));
            for (std::size_t c = 0; c < kVehicleClassCount; ++c)
                ins.bind(3 + static_cast<int>(c), static_cast<std::int64_t>(r.counts.values[c]));
            ins.bind(8, static_cast<std::int64_t>(r.counts.total()));
            ins.bind(9, r.confidence_threshold);
            ins.bind(10, r.model_id);
            ins.step();
            if (sqlite3_changes(db_) > 0)
                ++outcome.written;
            else
                ++outcome.skipped;
            ins.reset();
            if (insert_hook_) insert_hook_(i + 1);
        }
        exec(db_, "COMMIT;");
    } catch (...) {
        sqlite3_exec(db_, "ROLLBACK;", nullptr, nullptr, nullptr);
        throw;
    }
    return outcome;
}

std::vector<ObservationSeries> DetectionStore::query_series(const std::vector<SourceId>& sources,
                                                            const TimeRange& range,
                                                            const ClassSelector& selector) const {
    if (range.end < range.start) throw std::invalid_argument("query range start must not exceed end");

    std::map<SourceId, std::vector<Observation>> grouped;
    for (const auto& s : sources) grouped[s];

    for (auto& rec : records(range)) {
        if (!sources.empty() && !grouped.contains(rec.source)) continue;
        Observation obs{rec.source, rec.captured_at, {}};
        if (auto cls = selector.vehicle_class())
            obs.counts[*cls] = rec.counts[*cls];
        else
            obs.counts = rec.counts;
        grouped[rec.source].push_back(std::move(obs));
    }

    std::vector<ObservationSeries> out;
    for (auto& [src, items] : grouped) out.emplace_back(src, std::move(items));
    return out;
}

std::vector<StoredRecord> DetectionStore::records(const TimeRange& range) const {
    ReadConnection conn(path_);
    Statement st(conn.db, (std::string(kSelectColumns) +
                           "WHERE captured_at_ms >= ? AND captured_at_ms < ? "
                           "ORDER BY source, captured_at_ms, model_id")
                              .c_str());
    st.bind(1, to_ms(range.start));
    st.bind(2, to_ms(range.end));
    std::vector<StoredRecord> out;
    while (st.step()) out.push_back(read_record(st));
    return out;
}

std::size_t DetectionStore::row_count() const {
    ReadConnection conn(path_);
    Statement st(conn.db, "SELECT COUNT(*) FROM detections");
    st.step();
    return static_cast<std::size_t>(st.int64(0));
}

void DetectionStore::export_csv(std::ostream& out) const {
    ReadConnection conn(path_);
    Statement st(conn.db, (std::string(kSelectColumns) + "ORDER BY row_id").c_str());
    std::vector<std::string> header(kDetectionColumns.begin(), kDetectionColumns.end());
    out << csv::join_row(header) << "\r\n";
    while (st.step()) {
        auto r = read_record(st);
        std::vector<std::string> row{std::to_string(r.row_id), r.source.str(),
                                     std::to_string(to_ms(r.captured_at))};
        for (auto v : r.counts.values) row.push_back(std::to_string(v));
        row.push_back(std::to_string(st.int64(8)));
        row.push_back(fmt::format("{}", r.threshold));
        row.push_back(r.model_id);
        out << csv::join_row(row) << "\r\n";
    }
}

AppendOutcome DetectionStore::import_csv(std::istream& in) {
    std::vector<DetectionResult> results;
    try {
        auto header = csv::read_row(in);
        if (!header || header->size() != kDetectionColumns.size() ||
            !std::equal(header->begin(), header->end(), kDetectionColumns.begin()))
            throw StorageError("CSV header does not match the detections schema");
        std::size_t line = 1;
        while (auto row = csv::read_row(in)) {
            ++line;
            if (row->size() == 1 && row->front().empty()) continue;
            if (row->size() != kDetectionColumns.size())
                throw StorageError(fmt::format("CSV line {}: expected {} fields", line, kDetectionColumns.size()));
            const auto& f = *row;
            DetectionResult r;
            r.source = SourceId{f[1]};
            r.captured_at = instant_from_ms(parse_int(f[2], "captured_at_ms"));
            for (std::size_t c = 0; c < kVehicleClassCount; ++c) {
                auto v = parse_int(f[3 + c], "count");
                if (v < 0) throw StorageError(fmt::format("CSV line {}: negative count", line));
                r.counts.values[c] = static_cast<std::uint32_t>(v);
            }
            if (static_cast<std::uint64_t>(parse_int(f[8], "total")) != r.counts.total())
                throw StorageError(fmt::format("CSV line {}: total does not match class counts", line));
            try {
                r.confidence_threshold = std::stod(f[9]);
            } catch (const std::exception&) {
                throw StorageError(fmt::format("CSV line {}: invalid threshold", line));
            }
            r.model_id = f[10];
            results.push_back(std::move(r));
        }
    } catch (const std::invalid_argument& e) {
        throw StorageError(e.what());
    } catch (const std::runtime_error& e) {
        if (dynamic_cast<const StorageError*>(&e)) throw;
        throw StorageError(e.what());
    }
    return append(results);
}

}  // namespace traffic
