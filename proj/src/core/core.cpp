#include "traffic/core.hpp"

#include <charconv>
#include <numeric>

#include <absl/time/civil_time.h>

namespace traffic {

namespace {

constexpr std::array<std::string_view, kVehicleClassCount> kClassNames{
    "bicycle", "car", "motorcycle", "bus", "truck"};

absl::Time to_absl(Instant t) { return absl::FromUnixMillis(to_ms(t)); }

absl::CivilSecond local_civil(Instant t, const TimeZone& tz) {
    return absl::ToCivilSecond(to_absl(t), tz.zone());
}

}  // namespace

std::string format_iso8601(Instant t) {
    return absl::FormatTime("%Y-%m-%dT%H:%M:%E3SZ", to_absl(t), absl::UTCTimeZone());
}

Instant parse_iso8601(std::string_view text) {
    absl::Time parsed;
    std::string err;
    if (!absl::ParseTime(absl::RFC3339_full, std::string(text), &parsed, &err))
        throw std::invalid_argument("invalid timestamp '" + std::string(text) + "': " + err);
    return instant_from_ms(absl::ToUnixMillis(parsed));
}

SourceId::SourceId(std::string id) : id_(std::move(id)) {
    if (id_.empty()) throw std::invalid_argument("source id must be non-empty");
}

std::string_view to_string(VehicleClass c) { return kClassNames[static_cast<std::size_t>(c)]; }

std::optional<VehicleClass> parse_vehicle_class(std::string_view name) {
    for (std::size_t i = 0; i < kClassNames.size(); ++i)
        if (kClassNames[i] == name) return static_cast<VehicleClass>(i);
    return std::nullopt;
}

std::uint64_t ClassCounts::total() const {
    return std::accumulate(values.begin(), values.end(), std::uint64_t{0});
}

std::uint64_t ClassSelector::pick(const ClassCounts& counts) const {
    return cls_ ? counts[*cls_] : counts.total();
}

std::string ClassSelector::name() const { return cls_ ? std::string(to_string(*cls_)) : "total"; }

ObservationSeries::ObservationSeries(SourceId source, std::vector<Observation> items)
    : source_(std::move(source)), items_(std::move(items)) {
    for (std::size_t i = 0; i < items_.size(); ++i) {
        if (items_[i].source != source_)
            throw std::invalid_argument("observation source does not match series source");
        if (i > 0 && items_[i].captured_at < items_[i - 1].captured_at)
            throw std::invalid_argument("observations must be ordered by captured_at");
    }
}

HourOfDay::HourOfDay(int value) : value_(value) {
    if (value < 0 || value > 23) throw std::out_of_range("hour must be in [0, 23]");
}

std::string_view to_string(DayType d) { return d == DayType::weekday ? "weekday" : "weekend"; }
std::string_view to_string(Period p) { return p == Period::before ? "before" : "after"; }

std::optional<DayType> parse_day_type(std::string_view s) {
    if (s == "weekday") return DayType::weekday;
    if (s == "weekend") return DayType::weekend;
    return std::nullopt;
}

TimeZone TimeZone::load(const std::string& name) {
    absl::TimeZone zone;
    if (name.empty() || !absl::LoadTimeZone(name, &zone))
        throw ConfigError("unknown timezone '" + name + "'");
    return TimeZone{name, zone};
}

Instant TimeZone::local_to_instant(std::string_view local) const {
    const absl::string_view text(local.data(), local.size());
    absl::CivilSecond civil;
    bool ok = absl::ParseCivilTime(text, &civil);
    if (!ok) {
        absl::CivilMinute m;
        absl::CivilDay d;
        if ((ok = absl::ParseCivilTime(text, &m)))
            civil = absl::CivilSecond(m);
        else if ((ok = absl::ParseCivilTime(text, &d)))
            civil = absl::CivilSecond(d);
    }
    if (!ok) throw std::invalid_argument("invalid local time '" + std::string(local) + "'");
    // Gaps and overlaps resolve to the pre-transition offset.
    return instant_from_ms(absl::ToUnixMillis(zone_.At(civil).pre));
}

SplitConfig SplitConfig::defaults() {
    auto tz = TimeZone::load(std::string(kDefaultTimezone));
    return SplitConfig{tz.local_to_instant("2025-01-05T00:00:00"), tz};
}

TimeWindow::TimeWindow(HourOfDay start, HourOfDay end, std::string label)
    : start_(start), end_(end), label_(std::move(label)) {
    if (start_ > end_) throw std::invalid_argument("time window start must not exceed end");
    if (label_.empty()) throw std::invalid_argument("time window label must be non-empty");
}

std::vector<TimeWindow> default_time_windows() {
    return {
        TimeWindow{HourOfDay{0}, HourOfDay{23}, "Day"},
        TimeWindow{HourOfDay{6}, HourOfDay{9}, "Morning"},
        TimeWindow{HourOfDay{9}, HourOfDay{15}, "Midday"},
        TimeWindow{HourOfDay{15}, HourOfDay{18}, "Afternoon"},
    };
}

TimeWindow parse_time_window(std::string_view text) {
    auto colon = text.find(':');
    auto dash = text.find('-', colon == std::string_view::npos ? 0 : colon);
    if (colon == std::string_view::npos || dash == std::string_view::npos)
        throw std::invalid_argument("window must look like Label:h1-h2, got '" + std::string(text) + "'");
    auto parse_int = [&](std::string_view s) {
        int v = -1;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || p != s.data() + s.size())
            throw std::invalid_argument("bad hour '" + std::string(s) + "'");
        return v;
    };
    int h1 = parse_int(text.substr(colon + 1, dash - colon - 1));
    int h2 = parse_int(text.substr(dash + 1));
    return TimeWindow{HourOfDay{h1}, HourOfDay{h2}, std::string(text.substr(0, colon))};
}

HourOfDay hour_of(Instant t, const TimeZone& tz) { return HourOfDay{local_civil(t, tz).hour()}; }

DayType day_type_of(Instant t, const TimeZone& tz) {
    auto wd = absl::GetWeekday(absl::CivilDay(local_civil(t, tz)));
    return (wd == absl::Weekday::saturday || wd == absl::Weekday::sunday) ? DayType::weekend
                                                                         : DayType::weekday;
}

Period period_of(Instant t, const SplitConfig& split) {
    return t < split.split_at ? Period::before : Period::after;
}

}  // namespace traffic
