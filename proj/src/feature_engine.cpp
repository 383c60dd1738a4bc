#include "sst/feature_engine.hpp"

#include "sst/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sst {

double haversine_km(const GeoCoord& a, const GeoCoord& b) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * rad;
  const double dlon = (b.lon - a.lon) * rad;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  const double h = s1 * s1 + std::cos(a.lat * rad) * std::cos(b.lat * rad) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(std::clamp(h, 0.0, 1.0)));
}

Eigen::Matrix<double, Eigen::Dynamic, 2> resample_trajectory(std::span<const GpsPoint> points,
                                                             int t_steps) {
  if (points.empty()) throw std::invalid_argument("resample_trajectory: empty trajectory");
  if (t_steps < 1) throw std::invalid_argument("resample_trajectory: t_steps must be >= 1");
  Eigen::Matrix<double, Eigen::Dynamic, 2> out(t_steps, 2);
  const auto& first = points.front();
  const auto& last = points.back();
  out.row(0) << first.coord.lat, first.coord.lon;
  if (t_steps == 1) return out;

  const double t0 = static_cast<double>(first.timestamp);
  const double span = static_cast<double>(last.timestamp - first.timestamp);
  for (int k = 1; k < t_steps - 1; ++k) {
    if (span == 0.0) {
      out.row(k) = out.row(0);
      continue;
    }
    const double q = t0 + span * k / (t_steps - 1);
    // First point strictly after q; q lies in [prev, next].
    auto next = std::upper_bound(points.begin(), points.end(), q, [](double v, const GpsPoint& p) {
      return v < static_cast<double>(p.timestamp);
    });
    if (next == points.end()) {
      out.row(k) << last.coord.lat, last.coord.lon;
      continue;
    }
    const auto& hi = *next;
    const auto& lo = *(next - 1);
    const double w = (q - lo.timestamp) / static_cast<double>(hi.timestamp - lo.timestamp);
    out(k, 0) = lo.coord.lat + w * (hi.coord.lat - lo.coord.lat);
    out(k, 1) = lo.coord.lon + w * (hi.coord.lon - lo.coord.lon);
  }
  out.row(t_steps - 1) << last.coord.lat, last.coord.lon;
  return out;
}

AggregateFeatures compute_aggregates(const BikeRecord& record) {
  AggregateFeatures f;
  for (std::size_t i = 1; i < record.trajectory.size(); ++i)
    f.cum_distance_km += haversine_km(record.trajectory[i - 1].coord, record.trajectory[i].coord);
  f.trip_count = static_cast<long>(record.trips.size());
  for (const auto& trip : record.trips)
    f.total_time_min += static_cast<double>(trip.end_time - trip.start_time) / 60.0;
  return f;
}

NormStats fit_normalizer(std::span<const double> values) {
  if (values.empty() || values.size() % kFeatureDim != 0)
    throw std::invalid_argument("fit_normalizer: need a nonempty [rows][5] array");
  const auto rows = static_cast<Eigen::Index>(values.size() / kFeatureDim);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, kFeatureDim, Eigen::RowMajor>> X(values.data(),
                                                                                          rows, kFeatureDim);
  NormStats s;
  for (int c = 0; c < kFeatureDim; ++c) {
    const double mu = X.col(c).mean();
    const double sd = std::sqrt((X.col(c).array() - mu).square().mean());
    s.mean[c] = mu;
    s.std[c] = std::max(sd, kStdFloor);
  }
  return s;
}

bool FeatureTensor::fully_labeled() const {
  return std::all_of(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); });
}

FeatureTensor FeatureTensor::subset(std::span<const std::size_t> rows) const {
  FeatureTensor out;
  out.n = static_cast<Eigen::Index>(rows.size());
  out.t = t;
  out.d = d;
  out.norm = norm;
  const auto stride = static_cast<std::size_t>(t * d);
  out.values.reserve(rows.size() * stride);
  for (std::size_t r : rows) {
    if (r >= static_cast<std::size_t>(n)) throw std::out_of_range("FeatureTensor::subset: row out of range");
    out.values.insert(out.values.end(), values.begin() + static_cast<std::ptrdiff_t>(r * stride),
                      values.begin() + static_cast<std::ptrdiff_t>((r + 1) * stride));
    out.labels.push_back(labels[r]);
    out.bike_ids.push_back(bike_ids[r]);
  }
  return out;
}

std::vector<double> raw_features(const std::vector<BikeRecord>& records, int t_steps) {
  if (t_steps < 1) throw std::invalid_argument("t_steps must be >= 1");
  const auto T = static_cast<std::size_t>(t_steps);
  std::vector<double> raw(records.size() * T * kFeatureDim);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto traj = resample_trajectory(records[i].trajectory, t_steps);
    const auto agg = compute_aggregates(records[i]);
    for (std::size_t k = 0; k < T; ++k) {
      double* row = raw.data() + (i * T + k) * kFeatureDim;
      row[0] = traj(static_cast<Eigen::Index>(k), 0);
      row[1] = traj(static_cast<Eigen::Index>(k), 1);
      row[2] = agg.cum_distance_km;
      row[3] = static_cast<double>(agg.trip_count);
      row[4] = agg.total_time_min;
    }
  }
  return raw;
}

int observed_t_steps(const std::vector<BikeRecord>& records, int cap) {
  std::size_t longest = 1;
  for (const auto& r : records) longest = std::max(longest, r.trajectory.size());
  return static_cast<int>(std::min<std::size_t>(longest, static_cast<std::size_t>(cap)));
}

FeatureTensor build_dataset(const std::vector<BikeRecord>& records, std::optional<NormStats> norm,
                            int t_steps) {
  if (t_steps < 1) throw std::invalid_argument("build_dataset: t_steps must be >= 1");
  const auto raw = raw_features(records, t_steps);
  FeatureTensor out;
  out.n = static_cast<Eigen::Index>(records.size());
  out.t = t_steps;
  out.norm = norm ? *norm : fit_normalizer(raw);
  out.values.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto c = i % kFeatureDim;
    out.values[i] = static_cast<float>((raw[i] - out.norm.mean[c]) / out.norm.std[c]);
    if (!std::isfinite(out.values[i]))
      throw std::runtime_error("build_dataset: non-finite feature for bike " +
                               records[i / (static_cast<std::size_t>(t_steps) * kFeatureDim)].bike);
  }
  for (const auto& r : records) {
    out.labels.push_back(r.label);
    out.bike_ids.push_back(r.bike);
  }
  return out;
}

void save_feature_tensor(const FeatureTensor& tensor, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["n"] = tensor.n;
  meta["t"] = tensor.t;
  meta["d"] = tensor.d;
  meta["channels"] = kChannelNames;
  meta["norm"] = {{"mean", tensor.norm.mean}, {"std", tensor.norm.std}};
  meta["bike_ids"] = tensor.bike_ids;
  std::string labels(static_cast<std::size_t>(tensor.n), '\0');
  std::size_t labeled = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& l = tensor.labels[i];
    labels[i] = static_cast<char>(l ? static_cast<std::uint8_t>(*l) : std::uint8_t{255});
    labeled += l.has_value();
  }
  meta["labeled"] = labeled;
  io::write_file_atomic(dir / "data.bin", io::float_bytes(tensor.values));
  io::write_file_atomic(dir / "labels.bin", labels);
  io::write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

FeatureTensor load_feature_tensor(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "meta.json"))
    throw std::runtime_error("feature tensor directory " + dir.string() + " has no meta.json");
  const auto meta = nlohmann::json::parse(io::read_file(dir / "meta.json"));
  FeatureTensor t;
  t.n = meta.at("n").get<Eigen::Index>();
  t.t = meta.at("t").get<Eigen::Index>();
  t.d = meta.at("d").get<Eigen::Index>();
  if (t.d != kFeatureDim || t.t < 1 || t.n < 0)
    throw std::runtime_error("feature tensor " + dir.string() + ": bad extents in meta.json");
  t.norm.mean = meta.at("norm").at("mean").get<std::array<double, kFeatureDim>>();
  t.norm.std = meta.at("norm").at("std").get<std::array<double, kFeatureDim>>();
  t.bike_ids = meta.at("bike_ids").get<std::vector<std::string>>();
  t.values = io::floats_from_bytes(io::read_file(dir / "data.bin"), (dir / "data.bin").string());
  const auto labels = io::read_file(dir / "labels.bin");
  const auto n = static_cast<std::size_t>(t.n);
  if (t.values.size() != n * static_cast<std::size_t>(t.t * t.d))
    throw std::runtime_error("feature tensor " + dir.string() + ": data.bin holds " +
                             std::to_string(t.values.size()) + " floats, meta.json implies " +
                             std::to_string(n * static_cast<std::size_t>(t.t * t.d)));
  if (labels.size() != n || t.bike_ids.size() != n)
    throw std::runtime_error("feature tensor " + dir.string() + ": labels/bike_ids length mismatch");
  for (char c : labels) {
    const auto b = static_cast<std::uint8_t>(c);
    if (b == 255) t.labels.emplace_back(std::nullopt);
    else if (b <= 1) t.labels.emplace_back(static_cast<Status>(b));
    else throw std::runtime_error("feature tensor " + dir.string() + ": invalid label byte");
  }
  return t;
}

}  // namespace sst
