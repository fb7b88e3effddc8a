#pragma once

// The ten-participant example and its printed long table.

#include <vector>

#include "vecross/trialdata.hpp"

namespace vecross::testdata {

inline std::vector<ParticipantRecord> appendix_records() {
  auto rec = [](std::int64_t id, int arm, double entry, std::optional<double> xs,
                std::optional<double> xe, double ev, int st) {
    return ParticipantRecord{id, arm, entry, xs, xe, ev, st};
  };
  const std::optional<double> na;
  return {
      rec(1, 0, 35, 65, 95, 370, 0),  rec(2, 1, 45, 80, 110, 400, 0),
      rec(3, 0, 55, na, na, 150, 0),  rec(4, 1, 60, 170, 200, 310, 1),
      rec(5, 0, 65, na, na, 80, 1),   rec(6, 1, 80, 190, 210, 410, 0),
      rec(7, 0, 85, 215, 245, 420, 0), rec(8, 1, 70, na, na, 90, 1),
      rec(9, 0, 58, 160, 190, 180, 1), rec(10, 1, 71, 160, 190, 166, 0),
  };
}

// id arm tstart tstop event vacc vacc_time stratum
inline std::vector<RiskInterval> appendix_intervals() {
  const double inf = kInfinity;
  return {
      {1, 0, 35, 65, 0, 0, 95, 0},    {1, 0, 95, 370, 0, 1, 95, 0},
      {2, 1, 45, 80, 0, 1, 45, 0},    {2, 1, 110, 400, 0, 1, 45, 0},
      {3, 0, 55, 150, 0, 0, inf, 0},  {4, 1, 60, 170, 0, 1, 60, 0},
      {4, 1, 200, 310, 1, 1, 60, 0},  {5, 0, 65, 80, 1, 0, inf, 0},
      {6, 1, 80, 190, 0, 1, 80, 0},   {6, 1, 210, 410, 0, 1, 80, 0},
      {7, 0, 85, 215, 0, 0, 245, 0},  {7, 0, 245, 420, 0, 1, 245, 0},
      {8, 1, 70, 90, 1, 1, 70, 0},    {9, 0, 58, 160, 0, 0, 190, 0},
      {10, 1, 71, 160, 0, 1, 71, 0},
  };
}

}  // namespace vecross::testdata
