#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace plex::train {

inline constexpr int kMetricsSchema = 1;

// One line of the metrics log: an (epoch, stage) record.
struct MetricRecord {
  std::string run;
  std::string stage;
  std::size_t epoch = 0;
  std::optional<double> loss;
  std::optional<double> success_rate;

  bool operator==(const MetricRecord&) const = default;
};

// Line-delimited JSON, appended and flushed per record.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& path);

  bool is_open() const { return out_.is_open(); }
  void write(const MetricRecord& record);

  // Throws FormatError (line number as offset) on malformed lines or an unknown schema.
  static std::vector<MetricRecord> read(const std::filesystem::path& path);

 private:
  std::ofstream out_;
};

}  // namespace plex::train
