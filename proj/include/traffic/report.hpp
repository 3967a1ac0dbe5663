#pragma once

#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "traffic/phd.hpp"

namespace traffic {

class MalformedReport : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Reads the CSV written by write_report_csv. Throws MalformedReport.
PhdReport read_report_csv(std::istream& in);

enum class SummaryFormat { table, csv };

/// One line per report row. Both formats carry the same 6-decimal numbers.
void write_summary(std::ostream& out, const PhdReport& report, SummaryFormat format);

/// Hourly bucket means for every (source, window, day type, hour in window),
/// with before/after side by side for plotting.
void write_hourly_means_csv(std::ostream& out, const PartitionedMeanTable& table,
                            const std::vector<SourceId>& sources, const std::vector<TimeWindow>& windows);

}  // namespace traffic
