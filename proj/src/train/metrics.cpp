#include "plex/train/metrics.hpp"

#include "json.hpp"
#include "plex/core/errors.hpp"

namespace plex::train {

using json = nlohmann::json;

MetricsLog::MetricsLog(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::app);
  if (!out_) {
    throw std::runtime_error("cannot open metrics log " + path.string());
  }
}

void MetricsLog::write(const MetricRecord& r) {
  if (!out_.is_open()) return;
  json j = {{"schema", kMetricsSchema}, {"run", r.run}, {"stage", r.stage}, {"epoch", r.epoch}};
  j["loss"] = r.loss ? json(*r.loss) : json(nullptr);
  j["success_rate"] = r.success_rate ? json(*r.success_rate) : json(nullptr);
  out_ << j.dump() << '\n';
  out_.flush();
}

std::vector<MetricRecord> MetricsLog::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open metrics log " + path.string());
  }
  std::vector<MetricRecord> out;
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.at("schema").get<int>() != kMetricsSchema) {
        throw FormatError("metrics line " + std::to_string(line_no) + ": unknown schema", line_no);
      }
      MetricRecord r;
      r.run = j.at("run").get<std::string>();
      r.stage = j.at("stage").get<std::string>();
      r.epoch = j.at("epoch").get<std::size_t>();
      if (!j.at("loss").is_null()) r.loss = j["loss"].get<double>();
      if (!j.at("success_rate").is_null()) r.success_rate = j["success_rate"].get<double>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError("metrics line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  return out;
}

}  // namespace plex::train
