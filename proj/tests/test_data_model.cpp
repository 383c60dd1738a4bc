#include "sst/data_model.hpp"

#include "support/test_support.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

namespace sst {
namespace {

std::vector<TripRecord> trips_from(const std::string& body) {
  std::istringstream in(std::string(kTripsHeader) + "\n" + body);
  return parse_trips(in, "trips.csv");
}

std::vector<GpsPoint> gps_from(const std::string& body) {
  std::istringstream in(std::string(kGpsHeader) + "\n" + body);
  return parse_gps(in, "gps.csv");
}

std::vector<LabelRow> labels_from(const std::string& body) {
  std::istringstream in(std::string(kLabelsHeader) + "\n" + body);
  return parse_labels(in, "labels.csv");
}

Timestamp ts(const char* s) { return *parse_iso8601(s); }

TEST(Iso8601, ParsesAndFormatsUtc) {
  EXPECT_EQ(ts("1970-01-01T00:00:00Z"), 0);
  EXPECT_EQ(ts("2021-09-11T08:10:00Z") - ts("2021-09-11T08:00:00Z"), 600);
  EXPECT_EQ(ts("2000-03-01T00:00:00Z") - ts("2000-02-28T00:00:00Z"), 2 * 86400);  // leap year
  EXPECT_EQ(format_iso8601(ts("2021-09-11T08:00:05Z")), "2021-09-11T08:00:05Z");
}

TEST(Iso8601, RejectsOtherLayouts) {
  for (const char* s : {"11/09/2021", "2021-09-11 08:00:00", "2021-09-11T08:00:00", "2021-02-30T00:00:00Z",
                        "2021-09-11T24:00:00Z", "2021-09-11T08:00:00+08:00", ""})
    EXPECT_FALSE(parse_iso8601(s).has_value()) << s;
}

TEST(ParseTrips, HeaderOnlyIsEmpty) { EXPECT_TRUE(trips_from("").empty()); }

TEST(ParseTrips, ParsesReferenceRow) {
  const auto trips = trips_from("B001,2021-09-11T08:00:00Z,2021-09-11T08:10:00Z,30.66,104.06,30.67,104.07\n");
  ASSERT_EQ(trips.size(), 1u);
  EXPECT_EQ(trips[0].bike, "B001");
  EXPECT_EQ(trips[0].end_time - trips[0].start_time, 600);
  EXPECT_EQ(trips[0].start.lat, 30.66);
  EXPECT_EQ(trips[0].start.lon, 104.06);
  EXPECT_EQ(trips[0].end.lat, 30.67);
  EXPECT_EQ(trips[0].end.lon, 104.07);
}

TEST(ParseTrips, LatitudeOutOfRangeNamesLine) {
  try {
    trips_from("B001,2021-09-11T08:00:00Z,2021-09-11T08:10:00Z,91.0,104.06,30.67,104.07\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(e.field(), "start_lat");
  }
}

TEST(ParseTrips, RejectsReversedTimes) {
  EXPECT_THROW(trips_from("B001,2021-09-11T08:10:00Z,2021-09-11T08:00:00Z,30.66,104.06,30.67,104.07\n"),
               ParseError);
}

TEST(ParseTrips, RejectsWrongHeaderAndWidth) {
  std::istringstream bad_header("bike,start\n");
  EXPECT_THROW(parse_trips(bad_header), ParseError);
  try {
    trips_from("B001,2021-09-11T08:00:00Z\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(ParseTrips, AcceptsCrlfAndBom) {
  std::istringstream in("\xEF\xBB\xBF" + std::string(kTripsHeader) +
                        "\r\nB1,2021-09-11T08:00:00Z,2021-09-11T08:00:00Z,0,0,0,0\r\n");
  EXPECT_EQ(parse_trips(in).size(), 1u);
}

TEST(ParseGps, HeaderOnlyIsEmpty) { EXPECT_TRUE(gps_from("").empty()); }

TEST(ParseGps, ParsesReferenceRow) {
  const auto gps = gps_from("B001,2021-09-11T08:00:05Z,30.661,104.061\n");
  ASSERT_EQ(gps.size(), 1u);
  EXPECT_EQ(gps[0].bike, "B001");
  EXPECT_EQ(gps[0].timestamp, ts("2021-09-11T08:00:05Z"));
  EXPECT_EQ(gps[0].coord.lat, 30.661);
  EXPECT_EQ(gps[0].coord.lon, 104.061);
}

TEST(ParseGps, NonIsoTimestampNamesLine) {
  try {
    gps_from("B001,2021-09-11T08:00:05Z,30.661,104.061\nB001,11/09/2021,30.661,104.061\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_EQ(e.field(), "timestamp");
  }
}

TEST(ParseGps, RejectsLongitudeOutOfRangeAndGarbage) {
  EXPECT_THROW(gps_from("B001,2021-09-11T08:00:05Z,30.0,180.5\n"), ParseError);
  EXPECT_THROW(gps_from("B001,2021-09-11T08:00:05Z,30.0x,104\n"), ParseError);
  EXPECT_THROW(gps_from(",2021-09-11T08:00:05Z,30.0,104\n"), ParseError);
}

TEST(ParseLabels, ReadsBothStatuses) {
  const auto labels = labels_from("B001,0\nB002,1\n");
  ASSERT_EQ(labels.size(), 2u);
  EXPECT_EQ(labels[0], (LabelRow{"B001", Status::Normal}));
  EXPECT_EQ(labels[1], (LabelRow{"B002", Status::Unusable}));
}

TEST(ParseLabels, RejectsDuplicateIdByName) {
  try {
    labels_from("B001,0\nB001,1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("B001"), std::string::npos);
  }
}

TEST(ParseLabels, RejectsStatusOutsideBinary) {
  EXPECT_THROW(labels_from("B001,2\n"), ParseError);
  EXPECT_THROW(labels_from("B001,\n"), ParseError);
}

TEST(Assemble, EmptyInputs) {
  const auto r = assemble_records({}, {}, {});
  EXPECT_TRUE(r.records.empty());
  EXPECT_EQ(r.skipped, 0u);
}

TEST(Assemble, DropsTripOutsideWindow) {
  const auto trips = trips_from(
      "B1,2021-09-11T08:00:00Z,2021-09-11T08:10:00Z,30,104,30,104\n"
      "B1,2021-09-15T08:00:00Z,2021-09-15T08:10:00Z,30,104,30,104\n");
  const auto gps = gps_from("B1,2021-09-11T08:00:00Z,30,104\n");
  const TimeWindow w{ts("2021-09-11T00:00:00Z"), ts("2021-09-13T23:59:59Z")};
  const auto r = assemble_records(trips, gps, {}, w);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].trips.size(), 1u);
  EXPECT_FALSE(r.records[0].label.has_value());
}

TEST(Assemble, LabelsOnlyBikeIsSkipped) {
  const auto gps = gps_from("B1,2021-09-11T08:00:00Z,30,104\n");
  const auto r = assemble_records({}, gps, labels_from("B1,0\nB2,1\n"));
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].label, Status::Normal);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.skipped_ids, std::vector<std::string>{"B2"});
}

TEST(Assemble, BikeWithGpsButNoTripsIsKept) {
  const auto r = assemble_records({}, gps_from("B9,2021-09-11T08:00:00Z,30,104\n"), {});
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_TRUE(r.records[0].trips.empty());
}

TEST(Assemble, SortsMembersByTime) {
  std::mt19937_64 rng(7);
  std::vector<GpsPoint> gps;
  std::vector<TripRecord> trips;
  for (int i = 0; i < 200; ++i) {
    const std::string bike = "B" + std::to_string(rng() % 5);
    const Timestamp t = 1'600'000'000 + static_cast<Timestamp>(rng() % 100000);
    gps.push_back({bike, t, {30.0, 104.0}});
    trips.push_back({bike, t, t + static_cast<Timestamp>(rng() % 600), {30, 104}, {30, 104}});
  }
  const auto r = assemble_records(trips, gps, {});
  std::set<std::string> ids;
  for (const auto& rec : r.records) {
    ids.insert(rec.bike);
    for (std::size_t i = 1; i < rec.trajectory.size(); ++i)
      EXPECT_LE(rec.trajectory[i - 1].timestamp, rec.trajectory[i].timestamp);
    for (std::size_t i = 1; i < rec.trips.size(); ++i) EXPECT_LE(rec.trips[i - 1].start_time, rec.trips[i].start_time);
    for (const auto& p : rec.trajectory) EXPECT_EQ(p.bike, rec.bike);
    for (const auto& t : rec.trips) EXPECT_EQ(t.bike, rec.bike);
  }
  EXPECT_EQ(ids.size(), r.records.size());
}

std::vector<BikeRecord> labeled(std::size_t normal, std::size_t unusable) {
  std::vector<BikeRecord> out;
  for (std::size_t i = 0; i < normal + unusable; ++i) {
    BikeRecord r;
    r.bike = "B" + std::to_string(i);
    r.label = i < normal ? Status::Normal : Status::Unusable;
    out.push_back(r);
  }
  // Interleave classes so order preservation is observable.
  std::mt19937_64 rng(3);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

std::pair<std::size_t, std::size_t> class_counts(const std::vector<BikeRecord>& rs) {
  std::size_t n = 0, u = 0;
  for (const auto& r : rs) (*r.label == Status::Normal ? n : u)++;
  return {n, u};
}

TEST(StratifiedSplit, FloorCountsOnReferenceSizes) {
  const auto split = stratified_split(labeled(8860, 1870), 0.8, 42);
  EXPECT_EQ(class_counts(split.train), (std::pair<std::size_t, std::size_t>{7088, 1496}));
  EXPECT_EQ(class_counts(split.test), (std::pair<std::size_t, std::size_t>{1772, 374}));
}

TEST(StratifiedSplit, ExactHalves) {
  for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
    const auto split = stratified_split(labeled(10, 10), 0.5, seed);
    EXPECT_EQ(class_counts(split.train), (std::pair<std::size_t, std::size_t>{5, 5}));
    EXPECT_EQ(class_counts(split.test), (std::pair<std::size_t, std::size_t>{5, 5}));
  }
}

TEST(StratifiedSplit, DeterministicPerSeed) {
  const auto records = labeled(50, 20);
  EXPECT_EQ(stratified_split(records, 0.7, 5).train, stratified_split(records, 0.7, 5).train);
  EXPECT_NE(stratified_split(records, 0.7, 5).train, stratified_split(records, 0.7, 6).train);
}

TEST(StratifiedSplit, PartitionAndProportionForManySeeds) {
  const auto records = labeled(37, 11);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (double ratio : {0.1, 0.33, 0.8, 0.95}) {
      const auto split = stratified_split(records, ratio, seed);
      std::set<std::string> train_ids, test_ids;
      for (const auto& r : split.train) train_ids.insert(r.bike);
      for (const auto& r : split.test) test_ids.insert(r.bike);
      EXPECT_EQ(train_ids.size() + test_ids.size(), records.size());
      for (const auto& id : train_ids) EXPECT_FALSE(test_ids.contains(id));
      const auto [n, u] = class_counts(split.train);
      EXPECT_EQ(n, static_cast<std::size_t>(std::floor(37 * ratio + 1e-9)));
      EXPECT_EQ(u, static_cast<std::size_t>(std::floor(11 * ratio + 1e-9)));
      // Both halves keep input order.
      std::size_t ti = 0, si = 0;
      for (const auto& r : records) {
        if (ti < split.train.size() && split.train[ti].bike == r.bike) ++ti;
        else if (si < split.test.size() && split.test[si].bike == r.bike) ++si;
      }
      EXPECT_EQ(ti, split.train.size());
      EXPECT_EQ(si, split.test.size());
    }
  }
}

TEST(StratifiedSplit, Errors) {
  auto records = labeled(5, 5);
  records[2].label.reset();
  EXPECT_THROW(stratified_split(records, 0.8, 1), std::invalid_argument);
  EXPECT_THROW(stratified_split(labeled(5, 0), 0.8, 1), std::invalid_argument);
  EXPECT_THROW(stratified_split(labeled(5, 5), 1.0, 1), std::invalid_argument);
  EXPECT_THROW(stratified_split(labeled(5, 5), 0.0, 1), std::invalid_argument);
}

TEST(RawTables, WriteParseRoundTrip) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lat(-90, 90), lon(-180, 180);
  RawTables t;
  for (int i = 0; i < 50; ++i) {
    const std::string bike = "B" + std::to_string(i % 7);
    const Timestamp s = 1'600'000'000 + static_cast<Timestamp>(rng() % 1000000);
    t.trips.push_back({bike, s, s + 60, {lat(rng), lon(rng)}, {lat(rng), lon(rng)}});
    t.gps.push_back({bike, s, {lat(rng), lon(rng)}});
  }
  for (int i = 0; i < 7; ++i) t.labels.push_back({"B" + std::to_string(i), i % 2 ? Status::Unusable : Status::Normal});
  testing::TempDir dir("raw");
  write_raw_dir(dir.path(), t);
  const auto back = read_raw_dir(dir.path());
  EXPECT_EQ(back.trips, t.trips);
  EXPECT_EQ(back.gps, t.gps);
  EXPECT_EQ(back.labels, t.labels);
}

TEST(RawTables, LabelsFileOptional) {
  testing::TempDir dir("nolabels");
  write_raw_dir(dir.path(), {});
  std::filesystem::remove(dir / "labels.csv");
  EXPECT_TRUE(read_raw_dir(dir.path()).labels.empty());
}

}  // namespace
}  // namespace sst
