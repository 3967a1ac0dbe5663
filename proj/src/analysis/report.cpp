#include "traffic/report.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "traffic/csv.hpp"

namespace traffic {

namespace {

constexpr std::array<std::string_view, 8> kReportHeader{
    "source", "day_type", "window", "peak_before", "hour_before", "peak_after", "hour_after", "delta"};

double parse_real(const std::string& s, std::size_t line) {
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw MalformedReport(fmt::format("line {}: '{}' is not a number", line, s));
    return v;
}

PeakValue parse_peak(const std::string& value, const std::string& hour, std::size_t line) {
    if (value.empty() != hour.empty())
        throw MalformedReport(fmt::format("line {}: peak and hour must both be present or both empty", line));
    if (value.empty()) return PeakValue::undefined();
    auto h = parse_real(hour, line);
    if (h != static_cast<int>(h) || h < 0 || h > 23)
        throw MalformedReport(fmt::format("line {}: invalid hour '{}'", line, hour));
    return PeakValue{true, parse_real(value, line), HourOfDay{static_cast<int>(h)}};
}

std::string peak_text(const PeakValue& p) {
    return p.defined ? fmt::format("{} @{:02d}h", format_real(p.value), p.at_hour.value()) : "-";
}

}  // namespace

PhdReport read_report_csv(std::istream& in) {
    PhdReport report;
    std::optional<std::vector<std::string>> header;
    try {
        header = csv::read_row(in);
    } catch (const std::runtime_error& e) {
        throw MalformedReport(e.what());
    }
    if (!header) return report;  // empty file
    if (!std::equal(header->begin(), header->end(), kReportHeader.begin(), kReportHeader.end()))
        throw MalformedReport("unexpected analysis CSV header");

    std::size_t line = 1;
    for (;;) {
        std::optional<std::vector<std::string>> row;
        try {
            row = csv::read_row(in);
        } catch (const std::runtime_error& e) {
            throw MalformedReport(e.what());
        }
        if (!row) break;
        ++line;
        if (row->size() == 1 && row->front().empty()) continue;
        if (row->size() != kReportHeader.size())
            throw MalformedReport(fmt::format("line {}: expected {} fields, got {}", line, kReportHeader.size(), row->size()));
        const auto& f = *row;
        auto day = parse_day_type(f[1]);
        if (!day) throw MalformedReport(fmt::format("line {}: unknown day type '{}'", line, f[1]));
        if (f[0].empty() || f[2].empty()) throw MalformedReport(fmt::format("line {}: empty source or window", line));
        PhdRow r{SourceId{f[0]}, *day, f[2], parse_peak(f[3], f[4], line), parse_peak(f[5], f[6], line), std::nullopt};
        if (!f[7].empty()) r.delta = parse_real(f[7], line);
        if (r.delta.has_value() != (r.peak_before.defined && r.peak_after.defined))
            throw MalformedReport(fmt::format("line {}: delta must be present exactly when both peaks are", line));
        report.rows.push_back(std::move(r));
    }
    return report;
}

void write_summary(std::ostream& out, const PhdReport& report, SummaryFormat format) {
    const std::vector<std::string> header{"source", "day_type", "window", "peak_before", "peak_after", "delta"};
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : report.rows)
        rows.push_back({r.source.str(), std::string(to_string(r.day_type)), r.window_label, peak_text(r.peak_before),
                        peak_text(r.peak_after), r.delta ? format_real(*r.delta) : "-"});

    if (format == SummaryFormat::csv) {
        out << csv::join_row(header) << '\n';
        for (const auto& r : rows) out << csv::join_row(r) << '\n';
        return;
    }

    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        width[c] = header[c].size();
        for (const auto& r : rows) width[c] = std::max(width[c], r[c].size());
    }
    auto emit = [&](const std::vector<std::string>& r) {
        for (std::size_t c = 0; c < r.size(); ++c) {
            // Text columns left-aligned, numeric columns right-aligned.
            if (c < 3)
                out << fmt::format("{:<{}}", r[c], width[c]);
            else
                out << fmt::format("{:>{}}", r[c], width[c]);
            out << (c + 1 < r.size() ? "  " : "\n");
        }
    };
    emit(header);
    std::size_t total = 0;
    for (auto w : width) total += w + 2;
    out << std::string(total - 2, '-') << '\n';
    for (const auto& r : rows) emit(r);
}

void write_hourly_means_csv(std::ostream& out, const PartitionedMeanTable& table,
                            const std::vector<SourceId>& sources, const std::vector<TimeWindow>& windows) {
    out << "source,window,day_type,hour,mean_before,samples_before,mean_after,samples_after\n";
    for (const auto& src : sources) {
        for (const auto& win : windows) {
            for (DayType dt : {DayType::weekday, DayType::weekend}) {
                for (int h = win.start().value(); h <= win.end().value(); ++h) {
                    auto before = table.find({src, HourOfDay{h}, dt, Period::before});
                    auto after = table.find({src, HourOfDay{h}, dt, Period::after});
                    out << csv::escape(src.str()) << ',' << csv::escape(win.label()) << ',' << to_string(dt) << ','
                        << h << ',' << (before ? format_real(before->mean) : "") << ','
                        << (before ? std::to_string(before->sample_count) : "") << ','
                        << (after ? format_real(after->mean) : "") << ','
                        << (after ? std::to_string(after->sample_count) : "") << '\n';
                }
            }
        }
    }
}

}  // namespace traffic
