#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "traffic/core.hpp"
#include "traffic/detector.hpp"

struct sqlite3;

namespace traffic {

/// I/O or database failure. The failed call left no visible partial write.
class StorageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct StoredRecord {
    std::int64_t row_id = 0;
    SourceId source;
    Instant captured_at;
    ClassCounts counts;
    double threshold = 0.0;
    std::string model_id;

    std::uint64_t total() const { return counts.total(); }
};

struct AppendOutcome {
    std::size_t written = 0;
    std::size_t skipped = 0;
};

struct TimeRange {
    Instant start = instant_from_ms(std::numeric_limits<std::int64_t>::min());
    Instant end = instant_from_ms(std::numeric_limits<std::int64_t>::max());  // exclusive

    static TimeRange all() { return {}; }
};

/// Column order of the detections table and its CSV export.
inline constexpr std::array<std::string_view, 11> kDetectionColumns{
    "row_id", "source", "captured_at_ms", "bicycle", "car", "motorcycle", "bus", "truck",
    "total", "threshold", "model_id"};

/// Append-only detection store in a single SQLite file.
/// One writer at a time (serialized internally); queries use their own connections.
class DetectionStore {
public:
    /// Creates the file and schema when missing. Throws StorageError.
    explicit DetectionStore(std::filesystem::path path);
    ~DetectionStore();

    DetectionStore(const DetectionStore&) = delete;
    DetectionStore& operator=(const DetectionStore&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }

    /// All-or-nothing. Duplicates on (source, captured_at, model_id) are skipped.
    AppendOutcome append(std::span<const DetectionResult> results);

    /// Per-source series ordered by captured_at, restricted to [range.start, range.end).
    /// An empty `sources` list means every source.
    std::vector<ObservationSeries> query_series(const std::vector<SourceId>& sources,
                                                const TimeRange& range,
                                                const ClassSelector& selector) const;

    std::vector<StoredRecord> records(const TimeRange& range = TimeRange::all()) const;
    std::size_t row_count() const;

    void export_csv(std::ostream& out) const;
    /// Imports rows with the export's columns; row_id is reassigned. Throws StorageError.
    AppendOutcome import_csv(std::istream& in);

    /// Test hook, called after each row insert inside the append transaction.
    void set_insert_hook(std::function<void(std::size_t rows_inserted)> hook);

private:
    std::filesystem::path path_;
    sqlite3* db_ = nullptr;
    mutable std::mutex write_mutex_;
    std::function<void(std::size_t)> insert_hook_;
};

}  // namespace traffic
