#include "sst/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <chrono>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace sst {

ParseError::ParseError(const std::string& file, std::size_t line, const std::string& field,
                       const std::string& message)
    : std::runtime_error(file + ":" + std::to_string(line) + ": field '" + field + "': " + message),
      line_(line),
      field_(field) {}

namespace {

bool parse_fixed_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  for (char c : s)
    if (c < '0' || c > '9') return false;
  std::from_chars(s.data(), s.data() + s.size(), out);
  return true;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

// Reads CSV rows after checking the header; calls `row(cells, line_no)`.
template <typename RowFn>
void read_csv(std::istream& in, const std::string& name, std::string_view header, std::size_t width,
              RowFn&& row) {
  std::string line;
  std::size_t line_no = 0;
  auto strip = [](std::string& s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
  };
  if (!std::getline(in, line)) throw ParseError(name, 1, "header", "missing header row");
  ++line_no;
  strip(line);
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (line != header)
    throw ParseError(name, 1, "header", "expected '" + std::string(header) + "', got '" + line + "'");
  while (std::getline(in, line)) {
    ++line_no;
    strip(line);
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != width)
      throw ParseError(name, line_no, "row",
                       "expected " + std::to_string(width) + " fields, got " +
                           std::to_string(cells.size()));
    row(cells, line_no);
  }
}

struct FieldReader {
  const std::string& name;
  std::size_t line;

  std::string bike(std::string_view s) const {
    if (s.empty()) throw ParseError(name, line, "bike_id", "empty bike id");
    return std::string(s);
  }
  double number(std::string_view s, const char* field) const {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
      throw ParseError(name, line, field, "not a finite number: '" + std::string(s) + "'");
    return v;
  }
  double lat(std::string_view s, const char* field) const {
    const double v = number(s, field);
    if (v < -90.0 || v > 90.0)
      throw ParseError(name, line, field, "latitude out of range [-90, 90]: " + std::string(s));
    return v;
  }
  double lon(std::string_view s, const char* field) const {
    const double v = number(s, field);
    if (v < -180.0 || v > 180.0)
      throw ParseError(name, line, field, "longitude out of range [-180, 180]: " + std::string(s));
    return v;
  }
  Timestamp time(std::string_view s, const char* field) const {
    auto t = parse_iso8601(s);
    if (!t)
      throw ParseError(name, line, field,
                       "expected ISO-8601 UTC timestamp YYYY-MM-DDTHH:MM:SSZ, got '" + std::string(s) + "'");
    return *t;
  }
};

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

}  // namespace

std::optional<Timestamp> parse_iso8601(std::string_view s) {
  // YYYY-MM-DDTHH:MM:SSZ
  if (s.size() != 20 || s[4] != '-' || s[7] != '-' || s[10] != 'T' || s[13] != ':' ||
      s[16] != ':' || s[19] != 'Z')
    return std::nullopt;
  int y, mo, d, h, mi, sec;
  if (!parse_fixed_int(s.substr(0, 4), y) || !parse_fixed_int(s.substr(5, 2), mo) ||
      !parse_fixed_int(s.substr(8, 2), d) || !parse_fixed_int(s.substr(11, 2), h) ||
      !parse_fixed_int(s.substr(14, 2), mi) || !parse_fixed_int(s.substr(17, 2), sec))
    return std::nullopt;
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 59) return std::nullopt;
  const auto days_since_epoch = sys_days{ymd}.time_since_epoch().count();
  return static_cast<Timestamp>(days_since_epoch) * 86400 + h * 3600 + mi * 60 + sec;
}

std::string format_iso8601(Timestamp t) {
  using namespace std::chrono;
  const auto dp = floor<days>(sys_seconds{seconds{t}});
  const year_month_day ymd{dp};
  const hh_mm_ss hms{sys_seconds{seconds{t}} - dp};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ldZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                static_cast<long>(hms.seconds().count()));
  return buf;
}

std::vector<TripRecord> parse_trips(std::istream& in, const std::string& name) {
  std::vector<TripRecord> out;
  read_csv(in, name, kTripsHeader, 7, [&](const auto& c, std::size_t line) {
    FieldReader f{name, line};
    TripRecord r;
    r.bike = f.bike(c[0]);
    r.start_time = f.time(c[1], "start_time");
    r.end_time = f.time(c[2], "end_time");
    r.start = {f.lat(c[3], "start_lat"), f.lon(c[4], "start_lon")};
    r.end = {f.lat(c[5], "end_lat"), f.lon(c[6], "end_lon")};
    if (r.end_time < r.start_time)
      throw ParseError(name, line, "end_time", "end_time precedes start_time");
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<GpsPoint> parse_gps(std::istream& in, const std::string& name) {
  std::vector<GpsPoint> out;
  read_csv(in, name, kGpsHeader, 4, [&](const auto& c, std::size_t line) {
    FieldReader f{name, line};
    GpsPoint p;
    p.bike = f.bike(c[0]);
    p.timestamp = f.time(c[1], "timestamp");
    p.coord = {f.lat(c[2], "lat"), f.lon(c[3], "lon")};
    out.push_back(std::move(p));
  });
  return out;
}

std::vector<LabelRow> parse_labels(std::istream& in, const std::string& name) {
  std::vector<LabelRow> out;
  std::set<std::string> seen;
  read_csv(in, name, kLabelsHeader, 2, [&](const auto& c, std::size_t line) {
    FieldReader f{name, line};
    LabelRow r;
    r.bike = f.bike(c[0]);
    if (c[1] == "0") r.status = Status::Normal;
    else if (c[1] == "1") r.status = Status::Unusable;
    else throw ParseError(name, line, "status", "status must be 0 or 1, got '" + std::string(c[1]) + "'");
    if (!seen.insert(r.bike).second)
      throw ParseError(name, line, "bike_id", "duplicate bike id " + r.bike);
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<TripRecord> parse_trips(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_trips(in, path.string());
}

std::vector<GpsPoint> parse_gps(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_gps(in, path.string());
}

std::vector<LabelRow> parse_labels(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_labels(in, path.string());
}

void write_trips(std::ostream& out, const std::vector<TripRecord>& trips) {
  out << kTripsHeader << '\n';
  for (const auto& r : trips)
    out << r.bike << ',' << format_iso8601(r.start_time) << ',' << format_iso8601(r.end_time) << ','
        << format_double(r.start.lat) << ',' << format_double(r.start.lon) << ','
        << format_double(r.end.lat) << ',' << format_double(r.end.lon) << '\n';
}

void write_gps(std::ostream& out, const std::vector<GpsPoint>& points) {
  out << kGpsHeader << '\n';
  for (const auto& p : points)
    out << p.bike << ',' << format_iso8601(p.timestamp) << ',' << format_double(p.coord.lat) << ','
        << format_double(p.coord.lon) << '\n';
}

void write_labels(std::ostream& out, const std::vector<LabelRow>& labels) {
  out << kLabelsHeader << '\n';
  for (const auto& l : labels) out << l.bike << ',' << static_cast<int>(l.status) << '\n';
}

AssembleResult assemble_records(const std::vector<TripRecord>& trips,
                                const std::vector<GpsPoint>& gps,
                                const std::vector<LabelRow>& labels,
                                std::optional<TimeWindow> window) {
  AssembleResult result;
  if (!window) {
    bool any = false;
    TimeWindow w{0, 0};
    auto extend = [&](Timestamp t) {
      if (!any) w = {t, t};
      w.begin = std::min(w.begin, t);
      w.end = std::max(w.end, t);
      any = true;
    };
    for (const auto& t : trips) {
      extend(t.start_time);
      extend(t.end_time);
    }
    for (const auto& p : gps) extend(p.timestamp);
    window = w;
  }
  if (window->end < window->begin) throw std::invalid_argument("observation window end precedes begin");

  std::map<std::string, BikeRecord> bikes;
  auto record_for = [&](const std::string& id) -> BikeRecord& {
    auto& r = bikes[id];
    r.bike = id;
    return r;
  };
  for (const auto& t : trips) {
    auto& r = record_for(t.bike);
    if (t.start_time >= window->begin && t.end_time <= window->end) r.trips.push_back(t);
  }
  for (const auto& p : gps) {
    auto& r = record_for(p.bike);
    if (p.timestamp >= window->begin && p.timestamp <= window->end) r.trajectory.push_back(p);
  }
  for (const auto& l : labels) record_for(l.bike).label = l.status;

  for (auto& [id, r] : bikes) {
    if (r.trajectory.empty()) {
      ++result.skipped;
      result.skipped_ids.push_back(id);
      continue;
    }
    std::stable_sort(r.trips.begin(), r.trips.end(),
                     [](const auto& a, const auto& b) { return a.start_time < b.start_time; });
    std::stable_sort(r.trajectory.begin(), r.trajectory.end(),
                     [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
    result.records.push_back(std::move(r));
  }
  return result;
}

Split stratified_split(const std::vector<BikeRecord>& records, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must lie in (0, 1)");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].label) throw std::invalid_argument("record " + records[i].bike + " has no label");
    by_class[static_cast<int>(*records[i].label)].push_back(i);
  }
  std::vector<char> in_train(records.size(), 0);
  std::mt19937_64 rng(seed);
  for (auto& members : by_class) {
    if (members.empty()) throw std::invalid_argument("stratified split: a class has no records");
    // Guard against products such as 8860 * 0.8 landing just under the integer.
    const auto take = static_cast<std::size_t>(
        std::floor(static_cast<long double>(members.size()) * ratio + 1e-9L));
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t j = 0; j < take; ++j) in_train[members[j]] = 1;
  }
  Split split;
  for (std::size_t i = 0; i < records.size(); ++i)
    (in_train[i] ? split.train : split.test).push_back(records[i]);
  return split;
}

RawTables flatten_records(const std::vector<BikeRecord>& records) {
  RawTables t;
  for (const auto& r : records) {
    t.trips.insert(t.trips.end(), r.trips.begin(), r.trips.end());
    t.gps.insert(t.gps.end(), r.trajectory.begin(), r.trajectory.end());
    if (r.label) t.labels.push_back({r.bike, *r.label});
  }
  return t;
}

RawTables read_raw_dir(const std::filesystem::path& dir) {
  RawTables t;
  t.trips = parse_trips(dir / "trips.csv");
  t.gps = parse_gps(dir / "gps.csv");
  if (std::filesystem::exists(dir / "labels.csv")) t.labels = parse_labels(dir / "labels.csv");
  return t;
}

void write_raw_dir(const std::filesystem::path& dir, const RawTables& tables) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    return out;
  };
  auto trips = open("trips.csv");
  write_trips(trips, tables.trips);
  auto gps = open("gps.csv");
  write_gps(gps, tables.gps);
  auto labels = open("labels.csv");
  write_labels(labels, tables.labels);
}

}  // namespace sst
