#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "traffic/core.hpp"

namespace traffic {

struct SmoothedPoint {
    Instant captured_at;
    double value = 0.0;
};

/// Rolling mean of one source. Only full windows are emitted.
struct SmoothedSeries {
    SourceId source;
    std::vector<SmoothedPoint> items;
};

struct BucketKey {
    SourceId source;
    HourOfDay hour;
    DayType day_type = DayType::weekday;
    Period period = Period::before;

    auto operator<=>(const BucketKey&) const = default;
};

struct BucketMean {
    double mean = 0.0;
    std::size_t sample_count = 0;

    bool operator==(const BucketMean&) const = default;
};

/// Bucket means keyed by (source, local hour, day type, period). Empty buckets are absent.
class PartitionedMeanTable {
public:
    using Map = std::map<BucketKey, BucketMean>;

    PartitionedMeanTable() = default;
    explicit PartitionedMeanTable(Map entries) : entries_(std::move(entries)) {}

    const Map& entries() const noexcept { return entries_; }
    std::optional<BucketMean> find(const BucketKey& key) const;
    std::size_t size() const noexcept { return entries_.size(); }

    bool operator==(const PartitionedMeanTable&) const = default;

private:
    Map entries_;
};

struct PeakValue {
    bool defined = false;
    double value = 0.0;
    HourOfDay at_hour;

    static PeakValue undefined() { return {}; }
};

struct PhdResult {
    PeakValue before;
    PeakValue after;
    std::optional<double> delta;
};

struct PhdRow {
    SourceId source;
    DayType day_type = DayType::weekday;
    std::string window_label;
    PeakValue peak_before;
    PeakValue peak_after;
    std::optional<double> delta;
};

struct PhdReport {
    std::vector<PhdRow> rows;
};

inline constexpr std::size_t kDefaultRollingWindow = 12;

struct AnalysisConfig {
    std::size_t window_size = kDefaultRollingWindow;
    SplitConfig split = SplitConfig::defaults();
    std::vector<TimeWindow> windows = default_time_windows();
    ClassSelector selector = ClassSelector::total();

    /// Throws std::invalid_argument on window_size 0 or empty windows.
    void validate() const;
};

/// Observation-indexed moving average over the last `window_size` samples.
/// Throws std::invalid_argument when window_size < 1.
SmoothedSeries rolling_mean(const ObservationSeries& series, std::size_t window_size,
                            const ClassSelector& selector);

/// Group-by mean of smoothed values, accumulated in timestamp order per bucket.
PartitionedMeanTable partitioned_means(std::span<const SmoothedSeries> smoothed,
                                       const SplitConfig& split);

/// Max bucket mean over the inclusive window; ties go to the smallest hour.
PeakValue peak(const PartitionedMeanTable& table, const SourceId& source, DayType day_type,
               Period period, const TimeWindow& window);

PhdResult phd(const PartitionedMeanTable& table, const SourceId& source, DayType day_type,
              const TimeWindow& window);

/// Full pipeline: smoothing, bucket means, and peak differentials for every
/// (source, day type, window). Rows sorted by (source, day_type, window_label).
PhdReport process_traffic_data(std::span<const ObservationSeries> observations,
                               const AnalysisConfig& config);

/// Emits `source,day_type,window,peak_before,hour_before,peak_after,hour_after,delta`.
void write_report_csv(std::ostream& out, const PhdReport& report);

/// Formats a real with 6 decimals; negative zero prints as zero.
std::string format_real(double v);

}  // namespace traffic
