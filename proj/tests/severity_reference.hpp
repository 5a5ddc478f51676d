#pragma once

// Severity table transcribed as text, one row per type, "a/b" for the
// two-parameter types. Parsed with strtod so the comparison against the
// library table does not share any literals with it.

#include <array>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

namespace oracle {

struct SeverityRow {
  int id;
  std::string tag;
  std::vector<std::string> params;
  std::array<std::array<double, 10>, 2> values{};
};

inline const char* const kSeverityText[] = {
    "1 T1 sigma | .002 .004 .006 .009 .011 .013 .015 .018 .020 .022",
    "2 T3 sigma | .002 .005 .008 .011 .014 .018 .021 .024 .027 .030",
    "3 T5 gamma | .960 .958 .957 .955 .953 .952 .950 .948 .947 .945",
    "4 T6 gamma | 1.100 1.103 1.107 1.110 1.113 1.117 1.120 1.123 1.127 1.130",
    "5 T8 amp | 1.0 1.4 1.9 2.3 2.8 3.2 3.7 4.1 4.6 5.0",
    "6 T9 ps n | 4/1 5/2 5/2 6/3 7/3 7/4 8/4 9/5 9/5 10/6",
    "7 T10 factor | 2 2 2 2 2 3 3 3 3 3",
    "8 T11 bits | 8 8 7 7 7 6 6 6 5 5",
    "9 T12 alpha | .020 .030 .040 .050 .060 .070 .080 .090 .100 .110",
    "10 T13 s | .020 .027 .033 .040 .047 .053 .060 .067 .073 .080",
    "11 T15 shift | 1 1 1 2 2 2 2 3 3 3",
    "12 T16 frac | .010 .018 .026 .033 .041 .049 .057 .064 .072 .080",
    "13 T17 quality | 95 92 90 87 85 82 80 77 75 72",
    "14 T18 sigma | .200 .222 .244 .267 .289 .311 .333 .356 .378 .400",
    "15 T19 r | 1 1 1 1 1 2 2 2 2 2",
    "16 T20 length | 3 3 3 3 3 4 4 4 4 4",
    "17 T22 sx | .970 .968 .966 .963 .961 .959 .957 .954 .952 .950",
    "18 T23 strength | .080 .091 .102 .113 .124 .136 .147 .158 .169 .180",
    "19 T24 alpha | .940 .933 .927 .920 .913 .907 .900 .893 .887 .880",
    "20 T25 sigma_lo sigma_hi | .2/.4 .3/.6 .3/.9 .4/1.1 .5/1.3 .5/1.6 .6/1.8 .7/2.0 .7/2.3 .8/2.5",
};

inline std::vector<SeverityRow> severity_rows() {
  std::vector<SeverityRow> rows;
  for (const char* line : kSeverityText) {
    std::istringstream in(line);
    SeverityRow row;
    in >> row.id >> row.tag;
    for (std::string tok; in >> tok && tok != "|";) row.params.push_back(tok);
    for (int level = 0; level < 10; ++level) {
      std::string cell;
      in >> cell;
      const auto slash = cell.find('/');
      row.values[0][level] = std::strtod(cell.substr(0, slash).c_str(), nullptr);
      if (slash != std::string::npos) row.values[1][level] = std::strtod(cell.substr(slash + 1).c_str(), nullptr);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace oracle
