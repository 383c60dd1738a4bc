#pragma once

#include "sst/data_model.hpp"

#include <Eigen/Core>

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sst {

inline constexpr int kFeatureDim = 5;
inline constexpr std::array<const char*, kFeatureDim> kChannelNames = {
    "lat", "lon", "cum_distance_km", "trip_count", "total_time_min"};
inline constexpr double kEarthRadiusKm = 6371.0;

/// Great-circle distance on a sphere of radius 6371 km.
double haversine_km(const GeoCoord& a, const GeoCoord& b);

/// T x 2 (lat, lon) samples at T evenly spaced instants spanning the
/// trajectory, by piecewise-linear interpolation in time. Points must be
/// time-sorted. A zero-length time span broadcasts the first point (the last
/// row still takes the last point).
Eigen::Matrix<double, Eigen::Dynamic, 2> resample_trajectory(std::span<const GpsPoint> points,
                                                             int t_steps);

struct AggregateFeatures {
  double cum_distance_km = 0.0;
  long trip_count = 0;
  double total_time_min = 0.0;
};

AggregateFeatures compute_aggregates(const BikeRecord& record);

struct NormStats {
  std::array<double, kFeatureDim> mean{};
  std::array<double, kFeatureDim> std{};
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

inline constexpr double kStdFloor = 1e-8;

/// Per-channel population mean/std over every (sample, step) row of
/// `values`, laid out row-major [rows][kFeatureDim].
NormStats fit_normalizer(std::span<const double> values);

/// Model input: values are standardized N x T x D floats, row-major.
struct FeatureTensor {
  Eigen::Index n = 0;
  Eigen::Index t = 0;
  Eigen::Index d = kFeatureDim;
  std::vector<float> values;
  std::vector<std::optional<Status>> labels;
  std::vector<std::string> bike_ids;
  NormStats norm;

  float at(Eigen::Index i, Eigen::Index step, Eigen::Index c) const {
    return values[static_cast<std::size_t>((i * t + step) * d + c)];
  }
  bool fully_labeled() const;
  /// Rows `rows` in the given order.
  FeatureTensor subset(std::span<const std::size_t> rows) const;
  friend bool operator==(const FeatureTensor&, const FeatureTensor&) = default;
};

/// Unstandardized N x T x D values (row-major) for the records.
std::vector<double> raw_features(const std::vector<BikeRecord>& records, int t_steps);

/// Largest trajectory length among `records`, clamped to [1, cap].
int observed_t_steps(const std::vector<BikeRecord>& records, int cap = 256);

/// Builds the standardized tensor. With `norm` empty the statistics are
/// fitted on these records and stored in the result.
FeatureTensor build_dataset(const std::vector<BikeRecord>& records, std::optional<NormStats> norm,
                            int t_steps);

/// Directory with meta.json, data.bin (f32 LE [n][t][d]) and labels.bin
/// (one byte per sample: 0, 1, or 255 when unlabeled).
void save_feature_tensor(const FeatureTensor& tensor, const std::filesystem::path& dir);
FeatureTensor load_feature_tensor(const std::filesystem::path& dir);

}  // namespace sst
