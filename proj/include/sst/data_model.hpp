#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sst {

/// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

enum class Status : std::uint8_t { Normal = 0, Unusable = 1 };

struct GeoCoord {
  double lat = 0.0;
  double lon = 0.0;
  friend bool operator==(const GeoCoord&, const GeoCoord&) = default;
};

struct TripRecord {
  std::string bike;
  Timestamp start_time = 0;
  Timestamp end_time = 0;
  GeoCoord start;
  GeoCoord end;
  friend bool operator==(const TripRecord&, const TripRecord&) = default;
};

struct GpsPoint {
  std::string bike;
  Timestamp timestamp = 0;
  GeoCoord coord;
  friend bool operator==(const GpsPoint&, const GpsPoint&) = default;
};

struct LabelRow {
  std::string bike;
  Status status = Status::Normal;
  friend bool operator==(const LabelRow&, const LabelRow&) = default;
};

struct BikeRecord {
  std::string bike;
  std::vector<TripRecord> trips;      // by start_time
  std::vector<GpsPoint> trajectory;   // by timestamp
  std::optional<Status> label;
  friend bool operator==(const BikeRecord&, const BikeRecord&) = default;
};

/// Closed observation interval [begin, end].
struct TimeWindow {
  Timestamp begin = 0;
  Timestamp end = 0;
};

/// Raised for malformed input rows. `line` is 1-based and counts the header.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& field,
             const std::string& message);
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

inline constexpr std::string_view kTripsHeader =
    "bike_id,start_time,end_time,start_lat,start_lon,end_lat,end_lon";
inline constexpr std::string_view kGpsHeader = "bike_id,timestamp,lat,lon";
inline constexpr std::string_view kLabelsHeader = "bike_id,status";

/// Strict "YYYY-MM-DDTHH:MM:SSZ"; std::nullopt for anything else.
std::optional<Timestamp> parse_iso8601(std::string_view text);
std::string format_iso8601(Timestamp t);

std::vector<TripRecord> parse_trips(std::istream& in, const std::string& name = "<trips>");
std::vector<GpsPoint> parse_gps(std::istream& in, const std::string& name = "<gps>");
std::vector<LabelRow> parse_labels(std::istream& in, const std::string& name = "<labels>");

std::vector<TripRecord> parse_trips(const std::filesystem::path& path);
std::vector<GpsPoint> parse_gps(const std::filesystem::path& path);
std::vector<LabelRow> parse_labels(const std::filesystem::path& path);

void write_trips(std::ostream& out, const std::vector<TripRecord>& trips);
void write_gps(std::ostream& out, const std::vector<GpsPoint>& points);
void write_labels(std::ostream& out, const std::vector<LabelRow>& labels);

struct AssembleResult {
  std::vector<BikeRecord> records;  // ordered by bike id
  std::size_t skipped = 0;          // bikes seen anywhere but without GPS points in the window
  std::vector<std::string> skipped_ids;
};

/// Joins the three feeds on bike id. Without an explicit window the span of
/// all trip and GPS timestamps is used. Trips must lie entirely inside the
/// window to be kept.
AssembleResult assemble_records(const std::vector<TripRecord>& trips,
                                const std::vector<GpsPoint>& gps,
                                const std::vector<LabelRow>& labels,
                                std::optional<TimeWindow> window = std::nullopt);

struct Split {
  std::vector<BikeRecord> train;
  std::vector<BikeRecord> test;
};

/// Per class c, floor(n_c * ratio) records go to train, picked by a seeded
/// shuffle. Both halves keep the input order.
Split stratified_split(const std::vector<BikeRecord>& records, double ratio, std::uint64_t seed);

/// Flattens records back into the three row lists (trips, gps, labels).
struct RawTables {
  std::vector<TripRecord> trips;
  std::vector<GpsPoint> gps;
  std::vector<LabelRow> labels;
};
RawTables flatten_records(const std::vector<BikeRecord>& records);

/// Reads `trips.csv`, `gps.csv` and `labels.csv` (labels optional) from a directory.
RawTables read_raw_dir(const std::filesystem::path& dir);
void write_raw_dir(const std::filesystem::path& dir, const RawTables& tables);

}  // namespace sst
