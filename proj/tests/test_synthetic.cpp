#include "sst/synthetic.hpp"

#include "support/test_support.hpp"

#include <gtest/gtest.h>

#include <map>

namespace sst {
namespace {

using testing::TempDir;

SynthConfig small(int n, std::uint64_t seed = 42) {
  SynthConfig c;
  c.n_bikes = n;
  c.seed = seed;
  return c;
}

std::map<std::string, Status> label_map(const SynthFleet& f) {
  std::map<std::string, Status> m;
  for (const auto& l : f.tables.labels) m[l.bike] = l.status;
  return m;
}

// Mean jitter per class over bikes with at least three GPS points.
std::pair<double, double> class_jitter(const SynthFleet& f) {
  std::map<std::string, std::vector<GpsPoint>> by_bike;
  for (const auto& p : f.tables.gps) by_bike[p.bike].push_back(p);
  const auto labels = label_map(f);
  double sum[2] = {0, 0};
  int count[2] = {0, 0};
  for (const auto& [id, pts] : by_bike) {
    if (pts.size() < 3) continue;
    const int c = static_cast<int>(labels.at(id));
    sum[c] += trajectory_jitter_m(pts);
    ++count[c];
  }
  return {sum[0] / count[0], sum[1] / count[1]};
}

TEST(Synth, ExactFaultyCount) {
  SynthConfig c = small(10);
  c.faulty_fraction = 0.2;
  const auto f = generate_fleet(c);
  ASSERT_EQ(f.tables.labels.size(), 10u);
  int faulty = 0;
  for (const auto& l : f.tables.labels) faulty += l.status == Status::Unusable;
  EXPECT_EQ(faulty, 2);
  for (int n : {1, 7, 33, 101}) {
    const auto g = generate_fleet(small(n, 3));
    int bad = 0;
    for (const auto& l : g.tables.labels) bad += l.status == Status::Unusable;
    EXPECT_EQ(bad, static_cast<int>(n * 0.15)) << n;
    EXPECT_EQ(g.tables.labels.size(), static_cast<std::size_t>(n));
  }
}

TEST(Synth, TripRatesWithinTenPercent) {
  const auto f = generate_fleet(small(2000));
  const auto& cls = f.manifest.at("classes");
  EXPECT_NEAR(cls.at("normal").at("mean_trip_count").get<double>(), 8.0, 0.8);
  EXPECT_NEAR(cls.at("unusable").at("mean_trip_count").get<double>(), 2.0, 0.2);
  // Manifest matches a recount from the trip table.
  const auto labels = label_map(f);
  double trips[2] = {0, 0};
  for (const auto& t : f.tables.trips) trips[static_cast<int>(labels.at(t.bike))] += 1;
  EXPECT_NEAR(trips[0] / cls.at("normal").at("count").get<double>(),
              cls.at("normal").at("mean_trip_count").get<double>(), 1e-9);
  EXPECT_EQ(cls.at("unusable").at("count").get<int>(), 300);
}

TEST(Synth, SameSeedByteIdenticalDifferentSeedDiffers) {
  TempDir a("synth_a"), b("synth_b"), c("synth_c");
  write_fleet(generate_fleet(small(60, 9)), a.path());
  write_fleet(generate_fleet(small(60, 9)), b.path());
  write_fleet(generate_fleet(small(60, 10)), c.path());
  EXPECT_EQ(testing::tree_bytes(a.path()), testing::tree_bytes(b.path()));
  EXPECT_NE(testing::slurp(a / "gps.csv"), testing::slurp(c / "gps.csv"));
}

TEST(Synth, FilesReparseAndStayInsideWindowAndBox) {
  TempDir dir("synth_parse");
  const SynthConfig cfg = small(200, 5);
  const auto f = generate_fleet(cfg);
  write_fleet(f, dir.path());
  const auto back = read_raw_dir(dir.path());
  EXPECT_EQ(back.trips.size(), f.tables.trips.size());
  EXPECT_EQ(back.gps.size(), f.tables.gps.size());
  EXPECT_EQ(back.labels.size(), 200u);
  const auto& box = cfg.bbox;
  auto inside = [&](const GeoCoord& p) {
    return p.lat >= box.lat_min && p.lat <= box.lat_max && p.lon >= box.lon_min && p.lon <= box.lon_max;
  };
  for (const auto& t : back.trips) {
    EXPECT_GE(t.start_time, f.window.begin);
    EXPECT_LE(t.end_time, f.window.end);
    EXPECT_LT(t.start_time, t.end_time);
    EXPECT_TRUE(inside(t.start) && inside(t.end)) << t.bike;
  }
  for (const auto& p : back.gps) {
    EXPECT_GE(p.timestamp, f.window.begin);
    EXPECT_LE(p.timestamp, f.window.end);
    EXPECT_TRUE(inside(p.coord)) << p.bike;
  }
  const auto assembled = assemble_records(back.trips, back.gps, back.labels, f.window);
  EXPECT_EQ(assembled.records.size(), 200u);
  EXPECT_EQ(assembled.skipped, 0u);
}

TEST(Synth, TripCountsCappedAtTwenty) {
  SynthConfig c = small(300, 6);
  c.lambda_normal = 30.0;
  const auto f = generate_fleet(c);
  std::map<std::string, int> per_bike;
  for (const auto& t : f.tables.trips) ++per_bike[t.bike];
  int at_cap = 0;
  for (const auto& [id, k] : per_bike) {
    EXPECT_LE(k, kMaxTripsPerWindow);
    at_cap += k == kMaxTripsPerWindow;
  }
  EXPECT_GT(at_cap, 100);
}

TEST(Synth, JitterMonotoneInFragmentationForFaultyFlatForNormal) {
  std::vector<std::pair<double, double>> j;
  for (double frag : {0.2, 0.5, 0.8}) {
    SynthConfig c = small(600, 7);
    c.fragmentation = frag;
    j.push_back(class_jitter(generate_fleet(c)));
  }
  EXPECT_LT(j[0].second, j[1].second);
  EXPECT_LT(j[1].second, j[2].second);
  for (const auto& [normal, faulty] : j) EXPECT_NEAR(normal, j[0].first, 0.01 * j[0].first);
}

TEST(Synth, FaultyHomesConcentrateInOuterRings) {
  const auto f = generate_fleet(small(2000, 8));
  const auto labels = label_map(f);
  const BoundingBox box;
  const double clat = (box.lat_min + box.lat_max) / 2, clon = (box.lon_min + box.lon_max) / 2;
  // The first fix of each bike is its home.
  std::map<std::string, GeoCoord> home;
  for (const auto& p : f.tables.gps)
    if (!home.contains(p.bike)) home[p.bike] = p.coord;
  double core[2] = {0, 0}, n[2] = {0, 0};
  for (const auto& [id, h] : home) {
    const int c = static_cast<int>(labels.at(id));
    const double r = std::hypot((h.lat - clat) / ((box.lat_max - box.lat_min) / 2),
                                (h.lon - clon) / ((box.lon_max - box.lon_min) / 2));
    core[c] += r < 1.0 / 3.0;
    ++n[c];
  }
  EXPECT_NEAR(core[0] / n[0], 1.0 / 3.0, 0.05);
  EXPECT_NEAR(core[1] / n[1], 0.1, 0.05);
}

TEST(Synth, HardPresetOverlapsMore) {
  const SynthConfig h = SynthConfig::hard();
  EXPECT_LT(h.lambda_normal - h.lambda_faulty, SynthConfig{}.lambda_normal - SynthConfig{}.lambda_faulty);
  EXPECT_LT(h.fragmentation, SynthConfig{}.fragmentation);
  EXPECT_NO_THROW(h.validate());
}

TEST(Synth, ConfigValidationAndJson) {
  SynthConfig c;
  c.faulty_fraction = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SynthConfig{};
  c.lambda_faulty = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SynthConfig{};
  c.bbox.lat_min = c.bbox.lat_max;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  const SynthConfig d = small(77, 3);
  EXPECT_EQ(synth_config_from_json(synth_config_to_json(d)), d);
  const auto hard = synth_config_from_json(nlohmann::json{{"preset", "hard"}, {"seed", 5}});
  EXPECT_EQ(hard.lambda_normal, SynthConfig::hard().lambda_normal);
  EXPECT_EQ(hard.seed, 5u);
  EXPECT_THROW(synth_config_from_json(nlohmann::json{{"bogus", 1}}), std::invalid_argument);
}

TEST(Synth, JitterOfStraightLineIsZero) {
  std::vector<GpsPoint> line;
  for (int i = 0; i < 5; ++i) line.push_back({"B", i * 60, {30.6 + 0.001 * i, 104.0}});
  EXPECT_NEAR(trajectory_jitter_m(line), 0.0, 1e-6);
  line[2].coord.lon += 0.001;
  EXPECT_GT(trajectory_jitter_m(line), 10.0);
  EXPECT_EQ(trajectory_jitter_m(std::span<const GpsPoint>(line).first(2)), 0.0);
}

}  // namespace
}  // namespace sst
