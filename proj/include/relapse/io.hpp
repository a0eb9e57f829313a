#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "relapse/features.hpp"

// CSV formats: 5-minute bin table + per-day sidecar (the on-disk dataset),
// the raw-sample table consumed by aggregate_raw, and the day-score /
// fused-score outputs. Floats are serialized with full precision.

namespace relapse {

// exit-code-mapped error categories (config errors reuse std::invalid_argument)
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StageOrderError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace io {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const char* what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || s.empty())
    throw DataError(std::string("bad numeric field '") + s + "' for " + what);
  return v;
}

inline int parse_int(const std::string& s, const char* what) {
  return static_cast<int>(parse_double(s, what));
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);  // '\n' endings everywhere
  if (!out) throw DataError("cannot open for writing: " + path.string());
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  return in;
}

// ---------------------------------------------------------------------------
// slot table + day sidecar
// ---------------------------------------------------------------------------

inline constexpr const char* kSlotsHeader =
    "patient_id,date_index,slot_index,accel_norm,gyro_norm,hr_mean,rr_mean,"
    "rmssd,sdnn,hf_lomb_power,steps,valid";
inline constexpr const char* kDaysHeader =
    "patient_id,date_index,sleep_onset_min,wake_min,label,split";
inline constexpr const char* kRawHeader = "patient_id,timestamp_ms,channel,value";

inline void write_slots_csv(const std::filesystem::path& path,
                            std::span<const DayRecord> days) {
  auto out = open_out(path);
  out << kSlotsHeader << '\n';
  for (const auto& day : days)
    for (const auto& s : day.slots)
      out << day.patient_id << ',' << day.date_index << ',' << s.slot_index
          << ',' << fmt_double(s.accel_norm) << ',' << fmt_double(s.gyro_norm)
          << ',' << fmt_double(s.hr_mean) << ',' << fmt_double(s.rr_mean)
          << ',' << fmt_double(s.rmssd) << ',' << fmt_double(s.sdnn) << ','
          << fmt_double(s.hf_lomb_power) << ',' << fmt_double(s.steps) << ','
          << (s.valid() ? 1 : 0) << '\n';
}

inline void write_days_csv(const std::filesystem::path& path,
                           std::span<const DayRecord> days) {
  auto out = open_out(path);
  out << kDaysHeader << '\n';
  for (const auto& day : days) {
    out << day.patient_id << ',' << day.date_index << ',';
    if (day.sleep_onset_min) out << fmt_double(*day.sleep_onset_min);
    out << ',';
    if (day.wake_min) out << fmt_double(*day.wake_min);
    out << ',' << to_string(day.label) << ',' << to_string(day.split) << '\n';
  }
}

// Reads the bin table + sidecar into per-day records. Slots missing from
// the table stay invalid; duplicate slots are rejected.
inline std::vector<DayRecord> read_dataset_csv(
    const std::filesystem::path& slots_path,
    const std::filesystem::path& days_path) {
  std::map<std::pair<std::string, int>, DayRecord> days;
  {
    auto in = open_in(days_path);
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line)[0] != "patient_id")
      throw DataError("missing header in " + days_path.string());
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = split_csv_line(line);
      if (f.size() != 6)
        throw DataError("expected 6 fields in " + days_path.string() + ": " +
                        line);
      DayRecord day;
      day.patient_id = f[0];
      day.date_index = parse_int(f[1], "date_index");
      if (!f[2].empty()) day.sleep_onset_min = parse_double(f[2], "sleep_onset_min");
      if (!f[3].empty()) day.wake_min = parse_double(f[3], "wake_min");
      try {
        day.label = day_label_from_string(f[4]);
        day.split = split_from_string(f[5]);
      } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
      }
      day.slots.resize(kSlotsPerDay);
      for (int i = 0; i < kSlotsPerDay; ++i) day.slots[i].slot_index = i;
      auto key = std::make_pair(day.patient_id, day.date_index);
      if (!days.emplace(key, std::move(day)).second)
        throw DataError("duplicate day row: " + f[0] + "/" + f[1]);
    }
  }
  {
    auto in = open_in(slots_path);
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line)[0] != "patient_id")
      throw DataError("missing header in " + slots_path.string());
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = split_csv_line(line);
      if (f.size() != 12)
        throw DataError("expected 12 fields in " + slots_path.string() + ": " +
                        line);
      const auto key = std::make_pair(f[0], parse_int(f[1], "date_index"));
      auto it = days.find(key);
      if (it == days.end())
        throw DataError("slot row without day sidecar entry: " + f[0] + "/" +
                        f[1]);
      const int slot = parse_int(f[2], "slot_index");
      if (slot < 0 || slot >= kSlotsPerDay)
        throw DataError("slot_index out of range: " + f[2]);
      auto& s = it->second.slots[slot];
      if (s.motion_valid || s.cardiac_valid)
        throw DataError("duplicate slot row: " + f[0] + "/" + f[1] + "/" + f[2]);
      s.accel_norm = parse_double(f[3], "accel_norm");
      s.gyro_norm = parse_double(f[4], "gyro_norm");
      s.hr_mean = parse_double(f[5], "hr_mean");
      s.rr_mean = parse_double(f[6], "rr_mean");
      s.rmssd = parse_double(f[7], "rmssd");
      s.sdnn = parse_double(f[8], "sdnn");
      s.hf_lomb_power = parse_double(f[9], "hf_lomb_power");
      s.steps = parse_double(f[10], "steps");
      const int valid = parse_int(f[11], "valid");
      s.motion_valid = s.cardiac_valid = (valid != 0);
    }
  }
  std::vector<DayRecord> out;
  out.reserve(days.size());
  for (auto& [key, day] : days) out.push_back(std::move(day));
  return out;
}

inline std::vector<DayRecord> read_dataset_csv_sidecar_only(
    const std::filesystem::path& days_path) {
  std::vector<DayRecord> days;
  auto in = open_in(days_path);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line)[0] != "patient_id")
    throw DataError("missing header in " + days_path.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6)
      throw DataError("expected 6 fields in " + days_path.string() + ": " + line);
    DayRecord day;
    day.patient_id = f[0];
    day.date_index = parse_int(f[1], "date_index");
    if (!f[2].empty()) day.sleep_onset_min = parse_double(f[2], "sleep_onset_min");
    if (!f[3].empty()) day.wake_min = parse_double(f[3], "wake_min");
    try {
      day.label = day_label_from_string(f[4]);
      day.split = split_from_string(f[5]);
    } catch (const std::invalid_argument& e) {
      throw DataError(e.what());
    }
    day.slots.resize(kSlotsPerDay);
    for (int i = 0; i < kSlotsPerDay; ++i) day.slots[i].slot_index = i;
    days.push_back(std::move(day));
  }
  return days;
}

// Raw-sample alternative: aggregates `patient_id,timestamp_ms,channel,value`
// rows into bins; day association and in-day offsets come from the absolute
// timestamp. The sidecar still provides sleep annotations and labels.
inline std::vector<DayRecord> read_raw_dataset_csv(
    const std::filesystem::path& raw_path,
    const std::filesystem::path& days_path) {
  std::map<std::pair<std::string, int>, std::vector<RawSample>> grouped;
  {
    auto in = open_in(raw_path);
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line)[0] != "patient_id")
      throw DataError("missing header in " + raw_path.string());
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = split_csv_line(line);
      if (f.size() != 4)
        throw DataError("expected 4 fields in " + raw_path.string() + ": " +
                        line);
      const auto ts =
          static_cast<std::int64_t>(parse_double(f[1], "timestamp_ms"));
      RawSample s;
      s.timestamp_ms = ts % kMsPerDay;
      s.channel = f[2];
      s.value = parse_double(f[3], "value");
      grouped[{f[0], static_cast<int>(ts / kMsPerDay)}].push_back(std::move(s));
    }
  }
  auto days = read_dataset_csv_sidecar_only(days_path);
  for (auto& day : days) {
    auto it = grouped.find({day.patient_id, day.date_index});
    if (it == grouped.end()) continue;  // no samples: all bins stay invalid
    try {
      day.slots = aggregate_raw(it->second);
    } catch (const std::invalid_argument& e) {
      throw DataError(std::string("raw aggregation failed for ") +
                      day.patient_id + "/" + std::to_string(day.date_index) +
                      ": " + e.what());
    }
  }
  return days;
}

// ---------------------------------------------------------------------------
// score tables
// ---------------------------------------------------------------------------

struct DayScoreRow {
  std::string patient_id;
  int date_index = 0;
  double u = 0.0;  // day-level uncertainty (combined variance for multitask)
  std::string pipeline;
  // multitask extras; unset for the forecasting pipeline
  std::optional<double> v_time, v_sleep, combined;
};

inline void write_day_scores_csv(const std::filesystem::path& path,
                                 std::span<const DayScoreRow> rows,
                                 bool multitask_columns) {
  auto out = open_out(path);
  out << "patient_id,date_index,U_d,pipeline";
  if (multitask_columns) out << ",V_time,V_sleep,combined";
  out << '\n';
  for (const auto& r : rows) {
    out << r.patient_id << ',' << r.date_index << ',' << fmt_double(r.u) << ','
        << r.pipeline;
    if (multitask_columns)
      out << ',' << fmt_double(r.v_time.value_or(0.0)) << ','
          << fmt_double(r.v_sleep.value_or(0.0)) << ','
          << fmt_double(r.combined.value_or(0.0));
    out << '\n';
  }
}

inline std::vector<DayScoreRow> read_day_scores_csv(
    const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line))
    throw DataError("empty day-score file: " + path.string());
  const auto header = split_csv_line(line);
  const bool multitask_columns = header.size() > 4;
  std::vector<DayScoreRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw DataError("ragged day-score row: " + line);
    DayScoreRow r;
    r.patient_id = f[0];
    r.date_index = parse_int(f[1], "date_index");
    r.u = parse_double(f[2], "U_d");
    r.pipeline = f[3];
    if (multitask_columns) {
      r.v_time = parse_double(f[4], "V_time");
      r.v_sleep = parse_double(f[5], "V_sleep");
      r.combined = parse_double(f[6], "combined");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

struct FusedScoreRow {
  std::string patient_id;
  int date_index = 0;
  double a_heart = 0.0;
  double a_sleep = 0.0;
  double fused = 0.0;
  int decision = 0;
};

inline void write_fused_csv(const std::filesystem::path& path,
                            std::span<const FusedScoreRow> rows) {
  auto out = open_out(path);
  out << "patient_id,date_index,A_heart,A_sleep,fused,decision\n";
  for (const auto& r : rows)
    out << r.patient_id << ',' << r.date_index << ',' << fmt_double(r.a_heart)
        << ',' << fmt_double(r.a_sleep) << ',' << fmt_double(r.fused) << ','
        << r.decision << '\n';
}

inline std::vector<FusedScoreRow> read_fused_csv(
    const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line))
    throw DataError("empty fused-score file: " + path.string());
  std::vector<FusedScoreRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw DataError("ragged fused row: " + line);
    rows.push_back({f[0], parse_int(f[1], "date_index"),
                    parse_double(f[2], "A_heart"), parse_double(f[3], "A_sleep"),
                    parse_double(f[4], "fused"), parse_int(f[5], "decision")});
  }
  return rows;
}



}  // namespace io
}  // namespace relapse
