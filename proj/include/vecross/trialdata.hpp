#pragma once

// Trial records and their counting-process (start-stop) representation.
//
// Times are calendar days since study initiation. A participant's record
// holds the per-protocol entry day, the optional crossover window
// [xstart, xend] during which cases are not counted, and the day of the
// event or censoring. Reshaping turns each record into at most two risk
// intervals with a time-varying vaccination indicator.

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vecross {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();
inline constexpr double kDaysPerYear = 365.0;

struct ParticipantRecord {
  std::int64_t id = 0;
  int arm = 0;  // 0 = placebo, 1 = vaccine
  double entry = 0.0;
  std::optional<double> xstart;
  std::optional<double> xend;
  double eventtime = 0.0;
  int status = 0;

  bool has_window() const { return xstart.has_value() && xend.has_value(); }
  bool operator==(const ParticipantRecord&) const = default;
};

struct RiskInterval {
  std::int64_t id = 0;
  int arm = 0;
  double tstart = 0.0;
  double tstop = 0.0;
  int event = 0;
  int vacc_status = 0;
  double vacc_time = kInfinity;
  int stratum = 0;

  bool operator==(const RiskInterval&) const = default;
};

struct ValidationIssue {
  std::int64_t id = 0;
  std::size_t row = 0;  // zero-based position in the input
  std::string rule;
};

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<ValidationIssue> issues);
  const std::vector<ValidationIssue>& issues() const noexcept { return issues_; }

 private:
  std::vector<ValidationIssue> issues_;
};

/// Malformed CSV input. `line()` is one-based and counts the header.
class CsvError : public std::runtime_error {
 public:
  CsvError(std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Every violated rule for every row; empty when the input is valid.
std::vector<ValidationIssue> check_records(std::span<const ParticipantRecord> records);

/// Returns the records unchanged, or throws ValidationError listing all
/// problems.
std::vector<ParticipantRecord> validate(std::vector<ParticipantRecord> records);

struct ReshapeOptions {
  // Open-label crossover: post-blackout intervals go to stratum 1 so the
  // Cox fit can use a separate baseline hazard after unblinding.
  bool open_label_strata = false;
};

struct ReshapeResult {
  std::vector<RiskInterval> intervals;
  std::vector<std::int64_t> dropped_ids;  // follow-up entirely inside blackout
};

/// Wide-to-long conversion. Rows come out ordered by id, then tstart.
ReshapeResult reshape_counting_process(std::span<const ParticipantRecord> records,
                                       const ReshapeOptions& options = {});

/// Administrative censoring of every record at `day`: participants entering
/// at or after `day` are removed, later events become censorings at `day`
/// and crossover windows starting at or after `day` are cleared.
std::vector<ParticipantRecord> censor_records_at(std::span<const ParticipantRecord> records,
                                                 double day);

/// Re-indexes each participant's intervals on time since their own entry
/// (first tstart). This is the misaligned "study time" axis; it is only
/// useful to demonstrate the bias it induces under calendar-time hazards.
std::vector<RiskInterval> align_on_entry(std::span<const RiskInterval> intervals);

// CSV I/O. Wide header: id,arm,entry,Xstart,Xend,eventtime,status (empty
// cell = missing). Long header:
// id,arm,tstart,tstop,event,vacc_status,vacc_time,stratum ("inf" literal).
std::vector<ParticipantRecord> read_records(std::istream& in);
std::vector<ParticipantRecord> read_records(const std::string& path);
void write_records(std::ostream& out, std::span<const ParticipantRecord> records);
void write_records(const std::string& path, std::span<const ParticipantRecord> records);

std::vector<RiskInterval> read_intervals(std::istream& in);
std::vector<RiskInterval> read_intervals(const std::string& path);
void write_intervals(std::ostream& out, std::span<const RiskInterval> intervals);
void write_intervals(const std::string& path, std::span<const RiskInterval> intervals);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_number(double value);

}  // namespace vecross
