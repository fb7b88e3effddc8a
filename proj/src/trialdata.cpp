#include "vecross/trialdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace vecross {

namespace {

std::string summarize(const std::vector<ValidationIssue>& issues) {
  std::ostringstream os;
  os << issues.size() << " invalid record(s)";
  for (const auto& issue : issues) {
    os << "\n  row " << issue.row + 1 << " (id " << issue.id << "): " << issue.rule;
  }
  return os.str();
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t begin = 0;
  while (true) {
    auto pos = line.find(',', begin);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(begin));
      break;
    }
    cells.push_back(line.substr(begin, pos - begin));
    begin = pos + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_double(std::string_view cell, std::size_t line, const char* column) {
  cell = trim(cell);
  if (cell == "inf" || cell == "Inf" || cell == "+inf") return kInfinity;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
    throw CsvError(line, std::string("column '") + column + "': cannot parse '" +
                             std::string(cell) + "' as a number");
  }
  return value;
}

std::int64_t parse_int(std::string_view cell, std::size_t line, const char* column) {
  cell = trim(cell);
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
    throw CsvError(line, std::string("column '") + column + "': cannot parse '" +
                             std::string(cell) + "' as an integer");
  }
  return value;
}

std::optional<double> parse_optional(std::string_view cell, std::size_t line, const char* column) {
  cell = trim(cell);
  if (cell.empty() || cell == "." || cell == "NA") return std::nullopt;
  return parse_double(cell, line, column);
}

void check_header(std::string_view header, const std::vector<std::string>& expected,
                  const char* kind) {
  auto cells = split_commas(trim(header));
  std::vector<std::string> got;
  for (auto c : cells) got.emplace_back(trim(c));
  if (got == expected) return;
  std::string want;
  for (std::size_t i = 0; i < expected.size(); ++i) want += (i ? "," : "") + expected[i];
  for (const auto& name : expected) {
    if (std::find(got.begin(), got.end(), name) == got.end()) {
      throw CsvError(1, std::string(kind) + " schema error: missing column '" + name +
                            "' (expected header " + want + ")");
    }
  }
  throw CsvError(1, std::string(kind) + " schema error: expected header " + want);
}

const std::vector<std::string> kRecordHeader = {"id", "arm", "entry", "Xstart",
                                                "Xend", "eventtime", "status"};
const std::vector<std::string> kIntervalHeader = {
    "id", "arm", "tstart", "tstop", "event", "vacc_status", "vacc_time", "stratum"};

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace

ValidationError::ValidationError(std::vector<ValidationIssue> issues)
    : std::runtime_error(summarize(issues)), issues_(std::move(issues)) {}

CsvError::CsvError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

std::vector<ValidationIssue> check_records(std::span<const ParticipantRecord> records) {
  std::vector<ValidationIssue> issues;
  std::unordered_set<std::int64_t> seen;
  for (std::size_t row = 0; row < records.size(); ++row) {
    const auto& r = records[row];
    auto flag = [&](std::string rule) { issues.push_back({r.id, row, std::move(rule)}); };
    if (!seen.insert(r.id).second) flag("duplicate id");
    if (r.arm != 0 && r.arm != 1) flag("arm must be 0 or 1");
    if (r.status != 0 && r.status != 1) flag("status must be 0 or 1");
    if (!std::isfinite(r.entry) || !std::isfinite(r.eventtime)) {
      flag("non-finite entry or eventtime");
      continue;
    }
    if (r.entry < 0.0) flag("negative entry");
    if (r.eventtime <= r.entry) flag("no positive risk time");
    if (r.xstart.has_value() != r.xend.has_value()) {
      flag("incomplete crossover window");
      continue;
    }
    if (!r.has_window()) continue;
    if (!std::isfinite(*r.xstart) || !std::isfinite(*r.xend)) {
      flag("non-finite crossover window");
      continue;
    }
    if (*r.xstart < r.entry) flag("crossover starts before entry");
    if (*r.xend <= *r.xstart) flag("empty crossover window");
    if (r.eventtime < *r.xstart) flag("event or censoring before crossover window");
  }
  return issues;
}

std::vector<ParticipantRecord> validate(std::vector<ParticipantRecord> records) {
  auto issues = check_records(records);
  if (!issues.empty()) throw ValidationError(std::move(issues));
  return records;
}

ReshapeResult reshape_counting_process(std::span<const ParticipantRecord> records,
                                       const ReshapeOptions& options) {
  {
    auto issues = check_records(records);
    if (!issues.empty()) throw ValidationError(std::move(issues));
  }
  std::vector<const ParticipantRecord*> order;
  order.reserve(records.size());
  for (const auto& r : records) order.push_back(&r);
  std::sort(order.begin(), order.end(),
            [](const auto* a, const auto* b) { return a->id < b->id; });

  ReshapeResult result;
  result.intervals.reserve(records.size() * 2);
  for (const auto* rp : order) {
    const auto& r = *rp;
    RiskInterval base;
    base.id = r.id;
    base.arm = r.arm;
    base.vacc_status = r.arm;
    base.tstart = r.entry;

    if (!r.has_window()) {
      base.tstop = r.eventtime;
      base.event = r.status;
      base.vacc_time = r.arm == 1 ? r.entry : kInfinity;
      result.intervals.push_back(base);
      continue;
    }

    const double xstart = *r.xstart;
    const double xend = *r.xend;
    base.vacc_time = r.arm == 1 ? r.entry : xend;
    const bool has_pre = xstart > r.entry;
    if (has_pre) {
      RiskInterval pre = base;
      pre.tstop = xstart;
      pre.event = 0;
      result.intervals.push_back(pre);
    }
    if (r.eventtime > xend) {
      RiskInterval post = base;
      post.tstart = xend;
      post.tstop = r.eventtime;
      post.event = r.status;
      post.vacc_status = 1;
      post.stratum = options.open_label_strata ? 1 : 0;
      result.intervals.push_back(post);
    } else if (!has_pre) {
      result.dropped_ids.push_back(r.id);
    }
  }
  return result;
}

std::vector<ParticipantRecord> censor_records_at(std::span<const ParticipantRecord> records,
                                                 double day) {
  std::vector<ParticipantRecord> out;
  out.reserve(records.size());
  for (auto r : records) {
    if (r.entry >= day) continue;
    if (r.eventtime > day) {
      r.eventtime = day;
      r.status = 0;
    }
    if (r.has_window() && *r.xstart >= day) {
      r.xstart.reset();
      r.xend.reset();
    }
    out.push_back(r);
  }
  return out;
}

std::vector<RiskInterval> align_on_entry(std::span<const RiskInterval> intervals) {
  std::map<std::int64_t, double> entry;
  for (const auto& iv : intervals) {
    auto [it, inserted] = entry.emplace(iv.id, iv.tstart);
    if (!inserted) it->second = std::min(it->second, iv.tstart);
  }
  std::vector<RiskInterval> out(intervals.begin(), intervals.end());
  for (auto& iv : out) {
    const double shift = entry.at(iv.id);
    iv.tstart -= shift;
    iv.tstop -= shift;
    iv.vacc_time -= shift;  // +inf stays +inf
  }
  return out;
}

std::string format_number(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (std::isnan(value)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::vector<ParticipantRecord> read_records(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw CsvError(1, "records schema error: empty input");
  check_header(line, kRecordHeader, "records");
  std::vector<ParticipantRecord> records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_commas(line);
    if (cells.size() != kRecordHeader.size()) {
      throw CsvError(lineno, "expected 7 fields, found " + std::to_string(cells.size()));
    }
    ParticipantRecord r;
    r.id = parse_int(cells[0], lineno, "id");
    r.arm = static_cast<int>(parse_int(cells[1], lineno, "arm"));
    r.entry = parse_double(cells[2], lineno, "entry");
    r.xstart = parse_optional(cells[3], lineno, "Xstart");
    r.xend = parse_optional(cells[4], lineno, "Xend");
    r.eventtime = parse_double(cells[5], lineno, "eventtime");
    r.status = static_cast<int>(parse_int(cells[6], lineno, "status"));
    records.push_back(r);
  }
  return records;
}

std::vector<ParticipantRecord> read_records(const std::string& path) {
  auto in = open_input(path);
  return read_records(in);
}

void write_records(std::ostream& out, std::span<const ParticipantRecord> records) {
  out << "id,arm,entry,Xstart,Xend,eventtime,status\n";
  for (const auto& r : records) {
    out << r.id << ',' << r.arm << ',' << format_number(r.entry) << ','
        << (r.xstart ? format_number(*r.xstart) : "") << ','
        << (r.xend ? format_number(*r.xend) : "") << ',' << format_number(r.eventtime) << ','
        << r.status << '\n';
  }
}

void write_records(const std::string& path, std::span<const ParticipantRecord> records) {
  auto out = open_output(path);
  write_records(out, records);
}

std::vector<RiskInterval> read_intervals(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw CsvError(1, "intervals schema error: empty input");
  check_header(line, kIntervalHeader, "intervals");
  std::vector<RiskInterval> intervals;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_commas(line);
    if (cells.size() != kIntervalHeader.size()) {
      throw CsvError(lineno, "expected 8 fields, found " + std::to_string(cells.size()));
    }
    RiskInterval iv;
    iv.id = parse_int(cells[0], lineno, "id");
    iv.arm = static_cast<int>(parse_int(cells[1], lineno, "arm"));
    iv.tstart = parse_double(cells[2], lineno, "tstart");
    iv.tstop = parse_double(cells[3], lineno, "tstop");
    iv.event = static_cast<int>(parse_int(cells[4], lineno, "event"));
    iv.vacc_status = static_cast<int>(parse_int(cells[5], lineno, "vacc_status"));
    iv.vacc_time = parse_double(cells[6], lineno, "vacc_time");
    iv.stratum = static_cast<int>(parse_int(cells[7], lineno, "stratum"));
    if (!(iv.tstart < iv.tstop)) throw CsvError(lineno, "tstart must be < tstop");
    if (iv.event != 0 && iv.event != 1) throw CsvError(lineno, "event must be 0 or 1");
    if (iv.vacc_status != 0 && iv.vacc_status != 1) {
      throw CsvError(lineno, "vacc_status must be 0 or 1");
    }
    intervals.push_back(iv);
  }
  return intervals;
}

std::vector<RiskInterval> read_intervals(const std::string& path) {
  auto in = open_input(path);
  return read_intervals(in);
}

void write_intervals(std::ostream& out, std::span<const RiskInterval> intervals) {
  out << "id,arm,tstart,tstop,event,vacc_status,vacc_time,stratum\n";
  for (const auto& iv : intervals) {
    out << iv.id << ',' << iv.arm << ',' << format_number(iv.tstart) << ','
        << format_number(iv.tstop) << ',' << iv.event << ',' << iv.vacc_status << ','
        << format_number(iv.vacc_time) << ',' << iv.stratum << '\n';
  }
}

void write_intervals(const std::string& path, std::span<const RiskInterval> intervals) {
  auto out = open_output(path);
  write_intervals(out, intervals);
}

}  // namespace vecross
