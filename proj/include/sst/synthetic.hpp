#pragma once

#include "sst/data_model.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace sst {

struct BoundingBox {
  double lat_min = 30.50;
  double lat_max = 30.82;
  double lon_min = 103.90;
  double lon_max = 104.22;
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Labeled fleet generator settings. Homes lie in the ellipse inscribed in
/// the box, split into three concentric rings (core, second, third). Normal
/// bikes fall in each ring with equal probability; faulty bikes pick a ring
/// by `faulty_ring_weights`.
struct SynthConfig {
  int n_bikes = 2000;
  double faulty_fraction = 0.15;
  int days = 3;
  double lambda_normal = 8.0;
  double lambda_faulty = 2.0;
  double fragmentation = 0.8;
  BoundingBox bbox;
  std::array<double, 3> faulty_ring_weights = {0.1, 0.45, 0.45};
  int gps_period_s = 60;
  std::uint64_t seed = 42;
  std::string start_time = "2021-09-11T00:00:00Z";

  void validate() const;
  /// Overlapping classes: close trip rates, weak fragmentation, flat rings.
  static SynthConfig hard();
  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

inline constexpr int kMaxTripsPerWindow = 20;

nlohmann::json synth_config_to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig base = {});

struct SynthFleet {
  RawTables tables;
  nlohmann::json manifest;  // config echo + per-class empirical statistics
  TimeWindow window;
};

SynthFleet generate_fleet(const SynthConfig& cfg);

/// trips.csv, gps.csv, labels.csv and manifest.json.
void write_fleet(const SynthFleet& fleet, const std::filesystem::path& dir);

/// Mean distance in metres between each interior point and the midpoint of
/// its two neighbours; 0 for fewer than three points.
double trajectory_jitter_m(std::span<const GpsPoint> points);

}  // namespace sst
