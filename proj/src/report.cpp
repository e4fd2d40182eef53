#include "emusched/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace emusched::report {

std::vector<SeriesPoint> trim_edges(const std::vector<SeriesPoint>& series,
                                    double trim_s) {
  if (series.empty()) return {};
  double t_min = series.front().time_s;
  double t_max = series.front().time_s;
  for (const auto& p : series) {
    t_min = std::min(t_min, p.time_s);
    t_max = std::max(t_max, p.time_s);
  }
  std::vector<SeriesPoint> out;
  for (const auto& p : series) {
    if (p.time_s >= t_min + trim_s && p.time_s <= t_max - trim_s) {
      out.push_back(p);
    }
  }
  return out;
}

double nearest_rank(std::vector<double> values, double q) {
  if (values.empty()) throw TooFewSamples("percentile of an empty series");
  std::sort(values.begin(), values.end());
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

ReportStats summarize(const std::vector<SeriesPoint>& series, double trim_s) {
  if (series.size() < 21) {
    throw TooFewSamples("need at least 21 samples, got " +
                        std::to_string(series.size()));
  }
  auto kept = trim_edges(series, trim_s);
  if (kept.empty()) {
    throw TooFewSamples("no samples remain after trimming the edges");
  }
  ReportStats stats;
  stats.retained = kept.size();
  std::vector<double> values;
  values.reserve(kept.size());
  double sum = 0.0;
  for (const auto& p : kept) {
    values.push_back(p.value);
    sum += p.value;
    stats.max = std::max(stats.max, p.value);
  }
  stats.mean = sum / static_cast<double>(kept.size());
  stats.p95 = nearest_rank(values, 0.95);
  for (std::size_t i = 1; i + 1 < kept.size(); ++i) {
    if (kept[i].value > kept[i - 1].value && kept[i].value > kept[i + 1].value) {
      ++stats.peaks;
    }
  }
  return stats;
}

std::vector<SeriesPoint> read_series_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaMismatch("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaMismatch(path.string() + ": empty file");
  if (line != "time_s,value" && line != "time_s,value\r") {
    throw SchemaMismatch(path.string() + ": expected header 'time_s,value'");
  }
  std::vector<SeriesPoint> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw SchemaMismatch(path.string() + ": row " + std::to_string(row) +
                           " has no comma");
    }
    try {
      SeriesPoint p;
      p.time_s = std::stod(line.substr(0, comma));
      p.value = std::stod(line.substr(comma + 1));
      out.push_back(p);
    } catch (...) {
      throw SchemaMismatch(path.string() + ": row " + std::to_string(row) +
                           " is not numeric");
    }
  }
  return out;
}

void write_series_csv(const std::filesystem::path& path,
                      const std::vector<SeriesPoint>& series) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "time_s,value\n";
  out.precision(17);
  for (const auto& p : series) {
    out << p.time_s << ',' << p.value << '\n';
  }
}

}  // namespace emusched::report
