#pragma once

#include <array>
#include <chrono>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <absl/time/time.h>

namespace traffic {

/// Raised for bad configuration (unknown timezone, malformed URL, invalid
/// knobs). Surfaces as exit code 2 / TP_ERR_CONFIG.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Absolute UTC instant with millisecond precision.
using Instant = std::chrono::sys_time<std::chrono::milliseconds>;

inline Instant instant_from_ms(std::int64_t ms) { return Instant{std::chrono::milliseconds{ms}}; }
inline std::int64_t to_ms(Instant t) { return t.time_since_epoch().count(); }

/// RFC 3339 with milliseconds, always UTC ("2025-01-10T13:30:00.000Z").
std::string format_iso8601(Instant t);
/// Accepts RFC 3339 with an explicit offset or Z. Throws std::invalid_argument.
Instant parse_iso8601(std::string_view text);

class SourceId {
public:
    SourceId() = default;
    explicit SourceId(std::string id);

    const std::string& str() const noexcept { return id_; }
    auto operator<=>(const SourceId&) const = default;

private:
    std::string id_;
};

enum class VehicleClass : std::uint8_t { bicycle = 0, car = 1, motorcycle = 2, bus = 3, truck = 4 };

inline constexpr std::size_t kVehicleClassCount = 5;
inline constexpr std::array<VehicleClass, kVehicleClassCount> kAllVehicleClasses{
    VehicleClass::bicycle, VehicleClass::car, VehicleClass::motorcycle, VehicleClass::bus,
    VehicleClass::truck};

std::string_view to_string(VehicleClass c);
std::optional<VehicleClass> parse_vehicle_class(std::string_view name);

/// Per-class counts indexed by the stable ordinal of VehicleClass.
struct ClassCounts {
    std::array<std::uint32_t, kVehicleClassCount> values{};

    std::uint32_t& operator[](VehicleClass c) { return values[static_cast<std::size_t>(c)]; }
    std::uint32_t operator[](VehicleClass c) const { return values[static_cast<std::size_t>(c)]; }
    std::uint64_t total() const;

    bool operator==(const ClassCounts&) const = default;
};

/// Either the all-class total or one vehicle class.
class ClassSelector {
public:
    static ClassSelector total() { return ClassSelector{}; }
    static ClassSelector only(VehicleClass c) { return ClassSelector{c}; }

    bool is_total() const noexcept { return !cls_.has_value(); }
    std::optional<VehicleClass> vehicle_class() const noexcept { return cls_; }
    std::uint64_t pick(const ClassCounts& counts) const;
    std::string name() const;

    bool operator==(const ClassSelector&) const = default;

private:
    ClassSelector() = default;
    explicit ClassSelector(VehicleClass c) : cls_(c) {}
    std::optional<VehicleClass> cls_;
};

/// One timestamped count observation for a source.
struct Observation {
    SourceId source;
    Instant captured_at;
    ClassCounts counts;

    std::uint64_t total() const { return counts.total(); }
};

/// Observations of a single source, ordered by captured_at.
class ObservationSeries {
public:
    ObservationSeries() = default;
    /// Throws std::invalid_argument when items are out of order or belong to another source.
    ObservationSeries(SourceId source, std::vector<Observation> items);

    const SourceId& source() const noexcept { return source_; }
    const std::vector<Observation>& items() const noexcept { return items_; }
    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }

private:
    SourceId source_;
    std::vector<Observation> items_;
};

class HourOfDay {
public:
    constexpr HourOfDay() = default;
    /// Throws std::out_of_range outside [0, 23].
    explicit HourOfDay(int value);

    constexpr int value() const noexcept { return value_; }
    auto operator<=>(const HourOfDay&) const = default;

private:
    int value_ = 0;
};

enum class DayType : std::uint8_t { weekday = 0, weekend = 1 };
enum class Period : std::uint8_t { before = 0, after = 1 };

std::string_view to_string(DayType d);
std::string_view to_string(Period p);
std::optional<DayType> parse_day_type(std::string_view s);

inline constexpr std::string_view kDefaultTimezone = "America/New_York";

/// Resolved IANA zone. Cheap to copy; immutable.
class TimeZone {
public:
    /// Throws ConfigError when the zone cannot be loaded.
    static TimeZone load(const std::string& name);

    const std::string& name() const noexcept { return name_; }
    const absl::TimeZone& zone() const noexcept { return zone_; }

    /// Interprets a local wall-clock string "YYYY-MM-DD[THH:MM[:SS]]" in this zone.
    Instant local_to_instant(std::string_view local) const;

private:
    TimeZone(std::string name, absl::TimeZone zone) : name_(std::move(name)), zone_(zone) {}
    std::string name_;
    absl::TimeZone zone_;
};

struct SplitConfig {
    Instant split_at;
    TimeZone timezone;

    /// 2025-01-05T00:00 America/New_York.
    static SplitConfig defaults();
};

/// Inclusive hour interval [start, end] with a label.
class TimeWindow {
public:
    /// Throws std::invalid_argument when start > end.
    TimeWindow(HourOfDay start, HourOfDay end, std::string label);

    HourOfDay start() const noexcept { return start_; }
    HourOfDay end() const noexcept { return end_; }
    const std::string& label() const noexcept { return label_; }
    bool contains(HourOfDay h) const noexcept { return start_ <= h && h <= end_; }

    bool operator==(const TimeWindow&) const = default;

private:
    HourOfDay start_;
    HourOfDay end_;
    std::string label_;
};

/// Day [0,23], Morning [6,9], Midday [9,15], Afternoon [15,18].
std::vector<TimeWindow> default_time_windows();

/// Parses "Label:h1-h2" (e.g. "Evening:18-22").
TimeWindow parse_time_window(std::string_view text);

HourOfDay hour_of(Instant t, const TimeZone& tz);
DayType day_type_of(Instant t, const TimeZone& tz);
Period period_of(Instant t, const SplitConfig& split);

}  // namespace traffic
