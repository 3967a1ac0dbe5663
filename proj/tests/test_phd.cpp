#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "traffic/phd.hpp"
#include "support/oracle.hpp"

using namespace traffic;

namespace {

const SourceId kA{"A"};

ObservationSeries series_of(const SourceId& s, const std::vector<std::uint32_t>& cars, std::int64_t start_ms = 0,
                            std::int64_t step_ms = 60'000) {
    std::vector<Observation> obs;
    for (std::size_t i = 0; i < cars.size(); ++i) {
        ClassCounts c;
        c[VehicleClass::car] = cars[i];
        obs.push_back({s, instant_from_ms(start_ms + static_cast<std::int64_t>(i) * step_ms), c});
    }
    return ObservationSeries{s, obs};
}

std::vector<double> values(const SmoothedSeries& s) {
    std::vector<double> v;
    for (const auto& p : s.items) v.push_back(p.value);
    return v;
}

Instant local(const char* text) { return SplitConfig::defaults().timezone.local_to_instant(text); }

PartitionedMeanTable table_of(std::initializer_list<std::pair<int, double>> hour_means, DayType d = DayType::weekday,
                              Period p = Period::before) {
    PartitionedMeanTable::Map m;
    for (auto [h, v] : hour_means) m[{kA, HourOfDay{h}, d, p}] = {v, 1};
    return PartitionedMeanTable{m};
}

}  // namespace

TEST(RollingMean, ConstantSeries) {
    EXPECT_EQ(values(rolling_mean(series_of(kA, {4, 4, 4, 4}), 3, ClassSelector::total())),
              (std::vector<double>{4, 4}));
}

TEST(RollingMean, WindowOneIsIdentity) {
    EXPECT_EQ(values(rolling_mean(series_of(kA, {1, 2, 3}), 1, ClassSelector::total())),
              (std::vector<double>{1, 2, 3}));
}

TEST(RollingMean, TwoPoint) {
    EXPECT_EQ(values(rolling_mean(series_of(kA, {1, 2, 3, 4}), 2, ClassSelector::total())),
              (std::vector<double>{1.5, 2.5, 3.5}));
}

TEST(RollingMean, KeepsTimestampOfLastSample) {
    auto s = rolling_mean(series_of(kA, {1, 2, 3, 4}, 1000, 10), 3, ClassSelector::total());
    ASSERT_EQ(s.items.size(), 2u);
    EXPECT_EQ(to_ms(s.items[0].captured_at), 1020);
    EXPECT_EQ(to_ms(s.items[1].captured_at), 1030);
}

TEST(RollingMean, ShortAndEmptySeries) {
    EXPECT_TRUE(rolling_mean(series_of(kA, {5, 5}), 3, ClassSelector::total()).items.empty());
    EXPECT_TRUE(rolling_mean(ObservationSeries{}, 3, ClassSelector::total()).items.empty());
    EXPECT_THROW(rolling_mean(series_of(kA, {1}), 0, ClassSelector::total()), std::invalid_argument);
}

TEST(RollingMean, MatchesPrefixSumOracle) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::uint32_t> count(0, 200);
    std::uniform_int_distribution<std::size_t> len(0, 400), win(1, 40);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::uint32_t> xs(len(rng));
        for (auto& x : xs) x = count(rng);
        const std::size_t w = win(rng);
        std::vector<std::uint64_t> prefix{0};
        for (auto x : xs) prefix.push_back(prefix.back() + x);
        auto got = values(rolling_mean(series_of(kA, xs), w, ClassSelector::total()));
        ASSERT_EQ(got.size(), xs.size() >= w ? xs.size() - w + 1 : 0);
        for (std::size_t j = 0; j < got.size(); ++j) {
            double expected = static_cast<double>(prefix[j + w] - prefix[j]) / static_cast<double>(w);
            ASSERT_NEAR(got[j], expected, 1e-12);
            auto [lo, hi] = std::minmax_element(xs.begin() + j, xs.begin() + j + w);
            ASSERT_GE(got[j], *lo);
            ASSERT_LE(got[j], *hi);
        }
    }
}

TEST(RollingMean, SingleClassSelector) {
    std::vector<Observation> obs;
    for (int i = 0; i < 3; ++i) {
        ClassCounts c;
        c[VehicleClass::car] = 10;
        c[VehicleClass::bus] = static_cast<std::uint32_t>(i);
        obs.push_back({kA, instant_from_ms(i), c});
    }
    ObservationSeries s{kA, obs};
    EXPECT_EQ(values(rolling_mean(s, 1, ClassSelector::only(VehicleClass::bus))), (std::vector<double>{0, 1, 2}));
    EXPECT_EQ(values(rolling_mean(s, 1, ClassSelector::total())), (std::vector<double>{10, 11, 12}));
}

TEST(PartitionedMeans, Singleton) {
    SmoothedSeries s{kA, {{local("2025-01-02T08:15:00"), 7.0}}};
    auto t = partitioned_means(std::span(&s, 1), SplitConfig::defaults());
    ASSERT_EQ(t.size(), 1u);
    auto m = t.find({kA, HourOfDay{8}, DayType::weekday, Period::before});
    ASSERT_TRUE(m);
    EXPECT_EQ(*m, (BucketMean{7.0, 1}));
}

TEST(PartitionedMeans, TwoPointMean) {
    SmoothedSeries s{kA, {{local("2025-01-02T08:15:00"), 4.0}, {local("2025-01-02T08:45:00"), 6.0}}};
    auto t = partitioned_means(std::span(&s, 1), SplitConfig::defaults());
    EXPECT_EQ(t.find({kA, HourOfDay{8}, DayType::weekday, Period::before}), (BucketMean{5.0, 2}));
    EXPECT_FALSE(t.find({kA, HourOfDay{9}, DayType::weekday, Period::before}));
}

TEST(PartitionedMeans, MatchesGroupByOracle) {
    std::mt19937_64 rng(5);
    const auto split = SplitConfig::defaults();
    const auto split_ms = to_ms(split.split_at);
    std::uniform_int_distribution<std::int64_t> when(split_ms - 7LL * 86'400'000, split_ms + 7LL * 86'400'000);
    std::uniform_real_distribution<double> val(0, 50);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<SmoothedSeries> in;
        std::vector<oracle::Raw> raw;
        for (const char* name : {"A", "B", "C"}) {
            std::vector<std::int64_t> stamps(500 / 3);
            for (auto& t : stamps) t = when(rng);
            std::sort(stamps.begin(), stamps.end());
            SmoothedSeries s{SourceId{name}, {}};
            for (auto t : stamps) {
                double v = val(rng);
                s.items.push_back({instant_from_ms(t), v});
                raw.push_back({name, t, v});
            }
            in.push_back(std::move(s));
        }
        // Per-bucket sums accumulate in timestamp order on both sides, so equality is exact.
        std::stable_sort(raw.begin(), raw.end(), [](auto& a, auto& b) { return a.source < b.source; });
        auto ref = oracle::group(raw, split.timezone.zone(), split_ms);
        auto got = partitioned_means(in, split);
        ASSERT_EQ(got.size(), ref.size());
        for (const auto& [key, sum_n] : ref) {
            const auto& [src, h, weekend, after] = key;
            auto m = got.find({SourceId{src}, HourOfDay{h}, weekend ? DayType::weekend : DayType::weekday,
                               after ? Period::after : Period::before});
            ASSERT_TRUE(m);
            EXPECT_EQ(m->sample_count, sum_n.second);
            EXPECT_EQ(m->mean, sum_n.first / static_cast<double>(sum_n.second));
        }
    }
}

TEST(Peak, MaxOverOccupiedHours) {
    auto t = table_of({{7, 3.0}, {8, 9.0}, {9, 5.0}});
    auto p = peak(t, kA, DayType::weekday, Period::before, TimeWindow{HourOfDay{6}, HourOfDay{9}, "Morning"});
    ASSERT_TRUE(p.defined);
    EXPECT_EQ(p.value, 9.0);
    EXPECT_EQ(p.at_hour.value(), 8);
}

TEST(Peak, SingletonWindow) {
    auto t = table_of({{8, 9.0}});
    auto p = peak(t, kA, DayType::weekday, Period::before, TimeWindow{HourOfDay{8}, HourOfDay{8}, "h8"});
    ASSERT_TRUE(p.defined);
    EXPECT_EQ(p.value, 9.0);
    EXPECT_EQ(p.at_hour.value(), 8);
}

TEST(Peak, EmptyWindowUndefined) {
    auto t = table_of({{8, 9.0}});
    EXPECT_FALSE(peak(t, kA, DayType::weekday, Period::before, TimeWindow{HourOfDay{0}, HourOfDay{5}, "night"}).defined);
    EXPECT_FALSE(peak(t, kA, DayType::weekend, Period::before, TimeWindow{HourOfDay{0}, HourOfDay{23}, "Day"}).defined);
}

TEST(Peak, TiesGoToSmallestHour) {
    auto t = table_of({{10, 4.0}, {12, 4.0}, {11, 1.0}});
    auto p = peak(t, kA, DayType::weekday, Period::before, TimeWindow{HourOfDay{9}, HourOfDay{15}, "Midday"});
    EXPECT_EQ(p.at_hour.value(), 10);
}

TEST(Phd, IdenticalPeriodsGiveZero) {
    PartitionedMeanTable::Map m;
    for (auto p : {Period::before, Period::after}) m[{kA, HourOfDay{8}, DayType::weekday, p}] = {6.5, 3};
    auto r = phd(PartitionedMeanTable{m}, kA, DayType::weekday, TimeWindow{HourOfDay{6}, HourOfDay{9}, "Morning"});
    ASSERT_TRUE(r.delta);
    EXPECT_EQ(*r.delta, 0.0);
}

TEST(Phd, StepChangeFixture) {
    PartitionedMeanTable::Map m;
    m[{kA, HourOfDay{8}, DayType::weekday, Period::before}] = {10.0, 4};
    m[{kA, HourOfDay{7}, DayType::weekday, Period::before}] = {6.0, 4};
    m[{kA, HourOfDay{8}, DayType::weekday, Period::after}] = {7.5, 4};
    m[{kA, HourOfDay{9}, DayType::weekday, Period::after}] = {2.0, 4};
    auto r = phd(PartitionedMeanTable{m}, kA, DayType::weekday, TimeWindow{HourOfDay{6}, HourOfDay{9}, "Morning"});
    ASSERT_TRUE(r.delta);
    EXPECT_DOUBLE_EQ(*r.delta, -2.5);
}

TEST(Phd, MissingAfterLeavesDeltaUndefined) {
    auto t = table_of({{8, 4.0}});
    auto r = phd(t, kA, DayType::weekday, TimeWindow{HourOfDay{6}, HourOfDay{9}, "Morning"});
    EXPECT_TRUE(r.before.defined);
    EXPECT_FALSE(r.after.defined);
    EXPECT_FALSE(r.delta);
}

TEST(ProcessTrafficData, RowCountAndOrder) {
    std::vector<ObservationSeries> in{series_of(SourceId{"b"}, {1, 2, 3}, to_ms(local("2025-01-02T08:00:00"))),
                                      series_of(SourceId{"a"}, {1, 2, 3}, to_ms(local("2025-01-02T08:00:00")))};
    AnalysisConfig cfg;
    cfg.window_size = 1;
    auto report = process_traffic_data(in, cfg);
    ASSERT_EQ(report.rows.size(), 2u * 2u * 4u);
    for (std::size_t i = 1; i < report.rows.size(); ++i) {
        const auto& p = report.rows[i - 1];
        const auto& q = report.rows[i];
        EXPECT_LT(std::tie(p.source, p.day_type, p.window_label), std::tie(q.source, q.day_type, q.window_label));
    }
}

TEST(ProcessTrafficData, EmptyInput) {
    EXPECT_TRUE(process_traffic_data({}, AnalysisConfig{}).rows.empty());
}

TEST(ProcessTrafficData, ConstantFieldGivesZeroDeltas) {
    std::vector<std::uint32_t> cars(14 * 24 * 4, 6);
    auto s = series_of(kA, cars, to_ms(local("2024-12-29T00:00:00")), 15 * 60'000);
    auto report = process_traffic_data(std::span(&s, 1), AnalysisConfig{});
    std::size_t defined = 0;
    for (const auto& r : report.rows) {
        if (!r.delta) continue;
        ++defined;
        EXPECT_EQ(*r.delta, 0.0);
    }
    EXPECT_EQ(defined, 8u);
}

TEST(ProcessTrafficData, TwoSourceInjectedShift) {
    // Hourly samples, constant within each hour, window 1: bucket means are exact.
    const auto start = local("2024-12-29T00:00:00");
    const auto split = SplitConfig::defaults();
    auto build = [&](const SourceId& s, bool shifted) {
        std::vector<Observation> obs;
        for (int i = 0; i < 14 * 24; ++i) {
            auto t = start + std::chrono::hours{i};
            auto h = hour_of(t, split.timezone).value();
            std::uint32_t v = 5 + static_cast<std::uint32_t>(h % 7);
            if (shifted && period_of(t, split) == Period::after && day_type_of(t, split.timezone) == DayType::weekday &&
                h >= 6 && h <= 9)
                v += 3;
            ClassCounts c;
            c[VehicleClass::car] = v;
            obs.push_back({s, t, c});
        }
        return ObservationSeries{s, obs};
    };
    std::vector<ObservationSeries> in{build(SourceId{"A"}, true), build(SourceId{"B"}, false)};
    AnalysisConfig cfg;
    cfg.window_size = 1;
    auto report = process_traffic_data(in, cfg);
    for (const auto& r : report.rows) {
        ASSERT_TRUE(r.delta);
        if (r.source.str() == "A" && r.day_type == DayType::weekday && r.window_label == "Morning")
            EXPECT_NEAR(*r.delta, 3.0, 1e-9);
        else if (r.source.str() == "B")
            EXPECT_EQ(*r.delta, 0.0);
    }
    auto ref = oracle::run(oracle::to_raw(in, cfg.selector), 1, split.timezone.zone(), to_ms(split.split_at),
                           oracle::to_windows(cfg.windows));
    ASSERT_EQ(ref.size(), report.rows.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(*report.rows[i].delta, *ref[i].delta, 1e-9);
}

TEST(ProcessTrafficData, CompositionIdentity) {
    std::mt19937_64 rng(3);
    AnalysisConfig cfg;
    cfg.window_size = 4;
    auto in = oracle::random_series(rng, to_ms(cfg.split.split_at));
    auto report = process_traffic_data(in, cfg);

    std::vector<SmoothedSeries> smoothed;
    for (const auto& s : in) smoothed.push_back(rolling_mean(s, cfg.window_size, cfg.selector));
    auto table = partitioned_means(smoothed, cfg.split);
    std::size_t i = 0;
    std::vector<ObservationSeries> sorted = in;
    std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.source() < b.source(); });
    auto windows = cfg.windows;
    std::sort(windows.begin(), windows.end(), [](auto& a, auto& b) { return a.label() < b.label(); });
    for (const auto& s : sorted) {
        for (auto d : {DayType::weekday, DayType::weekend}) {
            for (const auto& w : windows) {
                auto r = phd(table, s.source(), d, w);
                ASSERT_LT(i, report.rows.size());
                const auto& row = report.rows[i++];
                EXPECT_EQ(row.peak_before.defined, r.before.defined);
                EXPECT_EQ(row.peak_after.defined, r.after.defined);
                EXPECT_EQ(row.delta, r.delta);
                if (r.before.defined) EXPECT_EQ(row.peak_before.value, r.before.value);
            }
        }
    }
    EXPECT_EQ(i, report.rows.size());
}

TEST(AnalysisConfig, Validation) {
    AnalysisConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.window_size = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg.window_size = 1;
    cfg.windows.clear();
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(ReportCsv, HeaderAndFormatting) {
    PhdReport report;
    report.rows.push_back({kA, DayType::weekday, "Morning", PeakValue{true, 9.5, HourOfDay{8}},
                           PeakValue{true, 6.25, HourOfDay{9}}, -3.25});
    report.rows.push_back({kA, DayType::weekend, "Day", PeakValue{true, 1.0, HourOfDay{0}}, PeakValue::undefined(),
                           std::nullopt});
    report.rows.push_back({SourceId{"x,y"}, DayType::weekday, "Day", PeakValue{true, 0.1, HourOfDay{3}},
                           PeakValue{true, 0.1, HourOfDay{3}}, -0.0});
    std::ostringstream out;
    write_report_csv(out, report);
    EXPECT_EQ(out.str(),
              "source,day_type,window,peak_before,hour_before,peak_after,hour_after,delta\n"
              "A,weekday,Morning,9.500000,8,6.250000,9,-3.250000\n"
              "A,weekend,Day,1.000000,0,,,\n"
              "\"x,y\",weekday,Day,0.100000,3,0.100000,3,0.000000\n");
}

TEST(ProcessTrafficData, MatchesOracleForRandomWindowSizes) {
    std::mt19937_64 rng(11);
    const auto split = SplitConfig::defaults();
    std::size_t compared = 0;
    for (int c = 0; c < 40; ++c) {
        auto in = oracle::random_series(rng, to_ms(split.split_at));
        AnalysisConfig cfg;
        cfg.window_size = std::uniform_int_distribution<std::size_t>(1, 24)(rng);
        auto report = process_traffic_data(in, cfg);
        auto ref = oracle::run(oracle::to_raw(in, cfg.selector), cfg.window_size, split.timezone.zone(),
                               to_ms(split.split_at), oracle::to_windows(cfg.windows));
        ASSERT_EQ(ref.size(), report.rows.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            ASSERT_EQ(report.rows[i].delta.has_value(), ref[i].delta.has_value()) << c << " " << i;
            if (ref[i].delta) {
                EXPECT_NEAR(*report.rows[i].delta, *ref[i].delta, 1e-9);
                ++compared;
            }
        }
    }
    EXPECT_GT(compared, 100u);
}
