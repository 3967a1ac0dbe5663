#include "traffic/phd.hpp"

#include <algorithm>
#include <ostream>
#include <tuple>

#include <fmt/format.h>

#include "traffic/csv.hpp"

namespace traffic {

std::optional<BucketMean> PartitionedMeanTable::find(const BucketKey& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void AnalysisConfig::validate() const {
    if (window_size < 1) throw std::invalid_argument("rolling window size must be >= 1");
    if (windows.empty()) throw std::invalid_argument("at least one time window is required");
}

SmoothedSeries rolling_mean(const ObservationSeries& series, std::size_t window_size,
                            const ClassSelector& selector) {
    if (window_size < 1) throw std::invalid_argument("rolling window size must be >= 1");

    SmoothedSeries out{series.source(), {}};
    const auto& items = series.items();
    if (items.size() < window_size) return out;
    out.items.reserve(items.size() - window_size + 1);

    // Counts are integers, so the running sum is exact.
    std::uint64_t sum = 0;
    for (std::size_t j = 0; j < items.size(); ++j) {
        sum += selector.pick(items[j].counts);
        if (j >= window_size) sum -= selector.pick(items[j - window_size].counts);
        if (j + 1 >= window_size)
            out.items.push_back({items[j].captured_at,
                                 static_cast<double>(sum) / static_cast<double>(window_size)});
    }
    return out;
}

PartitionedMeanTable partitioned_means(std::span<const SmoothedSeries> smoothed,
                                       const SplitConfig& split) {
    struct Acc {
        double sum = 0.0;
        std::size_t n = 0;
    };
    std::map<BucketKey, Acc> acc;
    for (const auto& series : smoothed) {
        for (const auto& pt : series.items) {
            BucketKey key{series.source, hour_of(pt.captured_at, split.timezone),
                          day_type_of(pt.captured_at, split.timezone),
                          period_of(pt.captured_at, split)};
            auto& a = acc[key];
            a.sum += pt.value;
            ++a.n;
        }
    }
    PartitionedMeanTable::Map entries;
    for (auto& [key, a] : acc)
        entries.emplace_hint(entries.end(), key,
                             BucketMean{a.sum / static_cast<double>(a.n), a.n});
    return PartitionedMeanTable{std::move(entries)};
}

PeakValue peak(const PartitionedMeanTable& table, const SourceId& source, DayType day_type,
               Period period, const TimeWindow& window) {
    PeakValue best;
    for (int h = window.start().value(); h <= window.end().value(); ++h) {
        auto m = table.find(BucketKey{source, HourOfDay{h}, day_type, period});
        if (!m) continue;
        if (!best.defined || m->mean > best.value) best = PeakValue{true, m->mean, HourOfDay{h}};
    }
    return best;
}

PhdResult phd(const PartitionedMeanTable& table, const SourceId& source, DayType day_type,
              const TimeWindow& window) {
    PhdResult r{peak(table, source, day_type, Period::before, window),
                peak(table, source, day_type, Period::after, window), std::nullopt};
    if (r.before.defined && r.after.defined) r.delta = r.after.value - r.before.value;
    return r;
}

PhdReport process_traffic_data(std::span<const ObservationSeries> observations,
                               const AnalysisConfig& config) {
    config.validate();

    std::vector<SmoothedSeries> smoothed;
    smoothed.reserve(observations.size());
    for (const auto& s : observations)
        smoothed.push_back(rolling_mean(s, config.window_size, config.selector));
    auto table = partitioned_means(smoothed, config.split);

    std::vector<SourceId> sources;
    for (const auto& s : observations) sources.push_back(s.source());
    std::sort(sources.begin(), sources.end());
    sources.erase(std::unique(sources.begin(), sources.end()), sources.end());

    PhdReport report;
    for (const auto& src : sources) {
        for (DayType dt : {DayType::weekday, DayType::weekend}) {
            for (const auto& win : config.windows) {
                auto r = phd(table, src, dt, win);
                report.rows.push_back(PhdRow{src, dt, win.label(), r.before, r.after, r.delta});
            }
        }
    }
    std::stable_sort(report.rows.begin(), report.rows.end(), [](const PhdRow& a, const PhdRow& b) {
        return std::tie(a.source, a.day_type, a.window_label) <
               std::tie(b.source, b.day_type, b.window_label);
    });
    return report;
}

std::string format_real(double v) {
    auto s = fmt::format("{:.6f}", v);
    if (s == "-0.000000") s.erase(0, 1);
    return s;
}

void write_report_csv(std::ostream& out, const PhdReport& report) {
    out << "source,day_type,window,peak_before,hour_before,peak_after,hour_after,delta\n";
    auto peak_fields = [](const PeakValue& p) {
        if (!p.defined) return std::string(",");
        return format_real(p.value) + "," + std::to_string(p.at_hour.value());
    };
    for (const auto& row : report.rows) {
        out << csv::escape(row.source.str()) << ',' << to_string(row.day_type) << ',' << csv::escape(row.window_label) << ','
            << peak_fields(row.peak_before) << ',' << peak_fields(row.peak_after) << ','
            << (row.delta ? format_real(*row.delta) : std::string()) << '\n';
    }
}

}  // namespace traffic
