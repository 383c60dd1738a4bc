#include "sst/synthetic.hpp"

#include "sst/feature_engine.hpp"
#include "sst/io.hpp"
#include "sst/model.hpp"
#include "sst/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace sst {

void SynthConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("synth config: " + what);
  };
  require(n_bikes >= 1, "n_bikes must be >= 1");
  require(faulty_fraction > 0.0 && faulty_fraction < 1.0, "faulty_fraction must lie in (0, 1)");
  require(days >= 1, "days must be >= 1");
  require(lambda_normal > 0.0 && lambda_faulty > 0.0, "trip rates must be > 0");
  require(lambda_normal > lambda_faulty, "lambda_normal must exceed lambda_faulty");
  require(fragmentation >= 0.0 && fragmentation <= 1.0, "fragmentation must lie in [0, 1]");
  require(bbox.lat_min < bbox.lat_max && bbox.lon_min < bbox.lon_max, "bounding box is empty");
  require(bbox.lat_min >= -90.0 && bbox.lat_max <= 90.0 && bbox.lon_min >= -180.0 && bbox.lon_max <= 180.0,
          "bounding box outside valid coordinates");
  require(std::all_of(faulty_ring_weights.begin(), faulty_ring_weights.end(), [](double w) { return w >= 0.0; }) &&
              std::accumulate(faulty_ring_weights.begin(), faulty_ring_weights.end(), 0.0) > 0.0,
          "faulty_ring_weights must be nonnegative with a positive sum");
  require(gps_period_s >= 1 && gps_period_s <= 600, "gps_period_s must lie in [1, 600]");
  require(parse_iso8601(start_time).has_value(), "start_time must be YYYY-MM-DDTHH:MM:SSZ");
}

SynthConfig SynthConfig::hard() {
  SynthConfig c;
  c.lambda_normal = 5.0;
  c.lambda_faulty = 4.0;
  c.fragmentation = 0.2;
  c.faulty_ring_weights = {0.3, 0.35, 0.35};
  return c;
}

nlohmann::json synth_config_to_json(const SynthConfig& c) {
  return {{"n_bikes", c.n_bikes},
          {"faulty_fraction", c.faulty_fraction},
          {"days", c.days},
          {"lambda_normal", c.lambda_normal},
          {"lambda_faulty", c.lambda_faulty},
          {"fragmentation", c.fragmentation},
          {"bbox",
           {{"lat_min", c.bbox.lat_min}, {"lat_max", c.bbox.lat_max}, {"lon_min", c.bbox.lon_min},
            {"lon_max", c.bbox.lon_max}}},
          {"faulty_ring_weights", c.faulty_ring_weights},
          {"gps_period_s", c.gps_period_s},
          {"seed", c.seed},
          {"start_time", c.start_time}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig c) {
  if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
  static const std::set<std::string> known = {"n_bikes",       "faulty_fraction", "days",   "lambda_normal",
                                              "lambda_faulty", "fragmentation",   "bbox",   "faulty_ring_weights",
                                              "gps_period_s",  "seed",            "start_time", "preset"};
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("synth config: unknown field '" + key + "'");
  if (j.contains("preset")) {
    const auto preset = j.at("preset").get<std::string>();
    if (preset != "easy" && preset != "hard") throw ConfigError("synth config: preset must be 'easy' or 'hard'");
    // A preset only sets the class-separation knobs.
    const SynthConfig p = preset == "hard" ? SynthConfig::hard() : SynthConfig{};
    c.lambda_normal = p.lambda_normal;
    c.lambda_faulty = p.lambda_faulty;
    c.fragmentation = p.fragmentation;
    c.faulty_ring_weights = p.faulty_ring_weights;
  }
  auto read = [&](const nlohmann::json& obj, const char* key, auto& field) {
    if (!obj.contains(key)) return;
    try {
      field = obj.at(key).get<std::remove_reference_t<decltype(field)>>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("synth config: field '") + key + "' has the wrong type");
    }
  };
  read(j, "n_bikes", c.n_bikes);
  read(j, "faulty_fraction", c.faulty_fraction);
  read(j, "days", c.days);
  read(j, "lambda_normal", c.lambda_normal);
  read(j, "lambda_faulty", c.lambda_faulty);
  read(j, "fragmentation", c.fragmentation);
  if (j.contains("bbox")) {
    const auto& b = j.at("bbox");
    read(b, "lat_min", c.bbox.lat_min);
    read(b, "lat_max", c.bbox.lat_max);
    read(b, "lon_min", c.bbox.lon_min);
    read(b, "lon_max", c.bbox.lon_max);
  }
  read(j, "faulty_ring_weights", c.faulty_ring_weights);
  read(j, "gps_period_s", c.gps_period_s);
  read(j, "seed", c.seed);
  read(j, "start_time", c.start_time);
  c.validate();
  return c;
}

namespace {

constexpr double kKmPerDegree = kEarthRadiusKm * std::numbers::pi / 180.0;

double round6(double v) { return std::round(v * 1e6) / 1e6; }

struct Planar {
  double lat, lon;
};

class BikeSimulator {
 public:
  BikeSimulator(const SynthConfig& cfg, std::string id, bool faulty, Timestamp w0, Timestamp w1,
                std::uint64_t stream)
      : cfg_(cfg), id_(std::move(id)), faulty_(faulty), w0_(w0), w1_(w1), rng_(stream) {}

  void run(RawTables& out) {
    const Planar home = home_position();
    Planar here = home;
    emit(out, w0_, here);

    std::poisson_distribution<int> trips_dist(faulty_ ? cfg_.lambda_faulty : cfg_.lambda_normal);
    const int k = std::min(trips_dist(rng_), kMaxTripsPerWindow);
    const double slot = static_cast<double>(w1_ - w0_) / std::max(k, 1);
    constexpr Timestamp kMargin = 300;
    for (int i = 0; i < k; ++i) {
      const auto slot_begin = w0_ + static_cast<Timestamp>(std::floor(slot * i));
      const auto slot_end = w0_ + static_cast<Timestamp>(std::floor(slot * (i + 1)));
      std::uniform_real_distribution<double> minutes(8.0, 25.0);
      double duration_min = minutes(rng_);
      // Faulty rides end early; how early grows with fragmentation.
      if (faulty_) duration_min *= 1.0 - 0.8 * cfg_.fragmentation;
      const auto duration = std::max<Timestamp>(60, static_cast<Timestamp>(duration_min * 60.0));
      const Timestamp latest = slot_end - duration - kMargin;
      const Timestamp earliest = slot_begin + kMargin;
      std::uniform_int_distribution<Timestamp> start_dist(earliest, std::max(earliest, latest));
      const Timestamp start = start_dist(rng_);
      const Timestamp end = start + duration;

      std::uniform_real_distribution<double> speed_kmh(9.0, 15.0);
      std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
      const double km = speed_kmh(rng_) * static_cast<double>(duration) / 3600.0;
      const double theta = angle(rng_);
      const Planar dest = clamp({here.lat + km * std::sin(theta) / kKmPerDegree,
                                 here.lon + km * std::cos(theta) / (kKmPerDegree * std::cos(here.lat * std::numbers::pi / 180.0))});
      ride(out, here, dest, start, end);
      if (faulty_) linger(out, dest, end);
      here = dest;
    }
    emit(out, w1_, here);
  }

 private:
  Planar clamp(Planar p) const {
    return {std::clamp(p.lat, cfg_.bbox.lat_min, cfg_.bbox.lat_max),
            std::clamp(p.lon, cfg_.bbox.lon_min, cfg_.bbox.lon_max)};
  }

  Planar home_position() {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double r;
    if (!faulty_) {
      // Uniform radius fraction: equal share per ring, densest in the core.
      r = u(rng_);
    } else {
      std::discrete_distribution<int> ring(cfg_.faulty_ring_weights.begin(), cfg_.faulty_ring_weights.end());
      const int k = ring(rng_);
      const double lo = k / 3.0, hi = (k + 1) / 3.0;
      r = std::sqrt(lo * lo + u(rng_) * (hi * hi - lo * lo));
    }
    const double theta = 2.0 * std::numbers::pi * u(rng_);
    const double clat = 0.5 * (cfg_.bbox.lat_min + cfg_.bbox.lat_max);
    const double clon = 0.5 * (cfg_.bbox.lon_min + cfg_.bbox.lon_max);
    const double hlat = 0.5 * (cfg_.bbox.lat_max - cfg_.bbox.lat_min);
    const double hlon = 0.5 * (cfg_.bbox.lon_max - cfg_.bbox.lon_min);
    return clamp({clat + r * hlat * std::sin(theta), clon + r * hlon * std::cos(theta)});
  }

  Planar offset_m(Planar p, double sigma_m) {
    std::normal_distribution<double> g(0.0, sigma_m);
    const double dn = g(rng_), de = g(rng_);
    return clamp({p.lat + dn / (kKmPerDegree * 1000.0),
                  p.lon + de / (kKmPerDegree * 1000.0 * std::cos(p.lat * std::numbers::pi / 180.0))});
  }

  // Smooth ride: straight line with a gentle bow plus receiver noise;
  // faulty rides add noise proportional to fragmentation.
  void ride(RawTables& out, Planar from, Planar to, Timestamp start, Timestamp end) {
    out.trips.push_back({id_, start, end, {round6(from.lat), round6(from.lon)}, {round6(to.lat), round6(to.lon)}});
    std::uniform_real_distribution<double> bow_dist(-0.05, 0.05);
    const double bow = bow_dist(rng_);
    const double sigma = faulty_ ? 3.0 + 25.0 * cfg_.fragmentation : 3.0;
    const auto period = static_cast<Timestamp>(cfg_.gps_period_s);
    for (Timestamp t = start;; t = std::min(end, t + period)) {
      const double f = static_cast<double>(t - start) / static_cast<double>(end - start);
      const double side = bow * std::sin(std::numbers::pi * f);
      Planar p{from.lat + f * (to.lat - from.lat) - side * (to.lon - from.lon),
               from.lon + f * (to.lon - from.lon) + side * (to.lat - from.lat)};
      const bool endpoint = t == start || t == end;
      emit(out, t, endpoint ? (t == start ? from : to) : offset_m(clamp(p), sigma));
      if (t == end) break;
    }
  }

  // Dense cluster of fixes around the drop-off point after a faulty ride.
  void linger(RawTables& out, Planar at, Timestamp end) {
    const int points = static_cast<int>(std::lround(8.0 * cfg_.fragmentation));
    const double sigma = 40.0 * cfg_.fragmentation;
    for (int j = 1; j <= points; ++j) emit(out, end + 15 * j, offset_m(at, sigma));
  }

  void emit(RawTables& out, Timestamp t, Planar p) {
    out.gps.push_back({id_, t, {round6(p.lat), round6(p.lon)}});
  }

  const SynthConfig& cfg_;
  std::string id_;
  bool faulty_;
  Timestamp w0_, w1_;
  std::mt19937_64 rng_;
};

std::string bike_id(int index, int n) {
  const int width = std::max(4, static_cast<int>(std::to_string(n).size()));
  std::string digits = std::to_string(index + 1);
  return "B" + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(digits.size(), width), '0') + digits;
}

}  // namespace

double trajectory_jitter_m(std::span<const GpsPoint> points) {
  if (points.size() < 3) return 0.0;
  double total = 0.0;
  for (std::size_t i = 1; i + 1 < points.size(); ++i) {
    const GeoCoord mid{0.5 * (points[i - 1].coord.lat + points[i + 1].coord.lat),
                       0.5 * (points[i - 1].coord.lon + points[i + 1].coord.lon)};
    total += 1000.0 * haversine_km(points[i].coord, mid);
  }
  return total / static_cast<double>(points.size() - 2);
}

SynthFleet generate_fleet(const SynthConfig& cfg) {
  cfg.validate();
  SynthFleet fleet;
  const Timestamp w0 = *parse_iso8601(cfg.start_time);
  const Timestamp w1 = w0 + static_cast<Timestamp>(cfg.days) * 86400 - 1;
  fleet.window = {w0, w1};

  const auto n = static_cast<std::size_t>(cfg.n_bikes);
  const auto n_faulty = static_cast<std::size_t>(
      std::floor(static_cast<long double>(cfg.n_bikes) * cfg.faulty_fraction + 1e-9L));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 label_rng(derive_seed(cfg.seed, {0xfa01}));
  std::shuffle(order.begin(), order.end(), label_rng);
  std::vector<char> faulty(n, 0);
  for (std::size_t i = 0; i < n_faulty; ++i) faulty[order[i]] = 1;

  struct ClassStats {
    std::size_t count = 0;
    double trips = 0, minutes = 0, points = 0, jitter = 0, distance = 0;
  } stats[2];

  for (std::size_t i = 0; i < n; ++i) {
    const auto id = bike_id(static_cast<int>(i), cfg.n_bikes);
    RawTables bike;
    BikeSimulator(cfg, id, faulty[i], w0, w1, derive_seed(cfg.seed, {static_cast<std::uint64_t>(i) + 1}))
        .run(bike);
    auto& s = stats[faulty[i] ? 1 : 0];
    BikeRecord record{id, bike.trips, bike.gps, std::nullopt};
    const auto agg = compute_aggregates(record);
    ++s.count;
    s.trips += static_cast<double>(agg.trip_count);
    s.minutes += agg.total_time_min;
    s.points += static_cast<double>(bike.gps.size());
    s.jitter += trajectory_jitter_m(bike.gps);
    s.distance += agg.cum_distance_km;
    fleet.tables.trips.insert(fleet.tables.trips.end(), bike.trips.begin(), bike.trips.end());
    fleet.tables.gps.insert(fleet.tables.gps.end(), bike.gps.begin(), bike.gps.end());
    fleet.tables.labels.push_back({id, faulty[i] ? Status::Unusable : Status::Normal});
  }

  auto class_json = [](const ClassStats& s) {
    const double c = std::max<double>(1.0, static_cast<double>(s.count));
    return nlohmann::json{{"count", s.count},
                          {"mean_trip_count", s.trips / c},
                          {"mean_total_time_min", s.minutes / c},
                          {"mean_gps_points", s.points / c},
                          {"mean_jitter_m", s.jitter / c},
                          {"mean_cum_distance_km", s.distance / c}};
  };
  fleet.manifest = {{"config", synth_config_to_json(cfg)},
                    {"window", {{"begin", format_iso8601(w0)}, {"end", format_iso8601(w1)}}},
                    {"classes", {{"normal", class_json(stats[0])}, {"unusable", class_json(stats[1])}}}};
  return fleet;
}

void write_fleet(const SynthFleet& fleet, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const char* name, auto&& writer) {
    std::ostringstream os;
    writer(os);
    io::write_file_atomic(dir / name, os.str());
  };
  write("trips.csv", [&](std::ostream& os) { write_trips(os, fleet.tables.trips); });
  write("gps.csv", [&](std::ostream& os) { write_gps(os, fleet.tables.gps); });
  write("labels.csv", [&](std::ostream& os) { write_labels(os, fleet.tables.labels); });
  io::write_file_atomic(dir / "manifest.json", fleet.manifest.dump(2) + "\n");
}

}  // namespace sst
