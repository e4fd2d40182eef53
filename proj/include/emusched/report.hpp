#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "emusched/errors.hpp"

namespace emusched::report {

struct TooFewSamples : Error {
  using Error::Error;
};
struct SchemaMismatch : Error {
  using Error::Error;
};

struct SeriesPoint {
  double time_s = 0.0;
  double value = 0.0;
};

// Drops the first and last `trim_s` seconds of the series (time-based:
// samples with t in [t_min + trim_s, t_max - trim_s] are kept).
std::vector<SeriesPoint> trim_edges(const std::vector<SeriesPoint>& series,
                                    double trim_s = 10.0);

// Nearest-rank percentile: the ceil(q*N)-th smallest value.
double nearest_rank(std::vector<double> values, double q);

struct ReportStats {
  std::size_t retained = 0;
  double p95 = 0.0;
  double mean = 0.0;
  double max = 0.0;
  std::size_t peaks = 0;  // samples strictly above both neighbors
};

// The measurement protocol: requires >= 21 samples, trims the edges,
// then reports nearest-rank P95, mean, max, and peak count.
ReportStats summarize(const std::vector<SeriesPoint>& series, double trim_s = 10.0);

// Reads a two-column CSV with header "time_s,value".
std::vector<SeriesPoint> read_series_csv(const std::filesystem::path& path);
void write_series_csv(const std::filesystem::path& path,
                      const std::vector<SeriesPoint>& series);

}  // namespace emusched::report
