#include "bvq/reports.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bvq/errors.hpp"

namespace bvq {

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError("cannot open '" + tmp + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
      std::filesystem::remove(tmp);
      throw ParseError("short write to '" + tmp + "'");
    }
  }
  std::filesystem::rename(tmp, path);
}

std::string format_flip_percentage(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f%%", fraction * 100.0);
  return buf;
}

std::string training_curve_csv(const std::vector<EpochStats>& stats) {
  std::ostringstream out;
  out << "epoch,loss,accuracy,robustness\n";
  out.precision(10);
  for (const auto& s : stats) {
    out << s.epoch << ',' << s.loss << ',' << s.accuracy << ',' << s.robustness << '\n';
  }
  return out.str();
}

std::string flip_list_text(const std::vector<BitLocation>& flips) {
  std::ostringstream out;
  for (const auto& f : flips) {
    out << f.layer_id << ' ' << f.weight_index << ' ' << f.bit_index << '\n';
  }
  return out.str();
}

std::vector<BitLocation> parse_flip_list(const std::string& text) {
  std::vector<BitLocation> flips;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    BitLocation loc;
    if (!(fields >> loc.layer_id >> loc.weight_index >> loc.bit_index)) {
      throw ParseError("flip list line " + std::to_string(line_no) +
                       ": expected 'layer_id weight_index bit_index', got '" + line + "'");
    }
    std::string extra;
    if (fields >> extra) {
      throw ParseError("flip list line " + std::to_string(line_no) +
                       ": trailing content '" + extra + "'");
    }
    flips.push_back(loc);
  }
  return flips;
}

namespace {

nlohmann::json metrics_json(const AttackMetrics& m) {
  return {{"accuracy", m.accuracy},
          {"gap_robustness", m.gap_robustness},
          {"empirical_robustness", m.empirical_robustness},
          {"loss", m.loss}};
}

}  // namespace

std::string attack_report_json(const AttackReport& report, const std::string& model_name,
                               std::uint64_t seed, double delta,
                               std::size_t total_weight_count) {
  nlohmann::json j;
  j["model"] = model_name;
  j["seed"] = seed;
  j["delta"] = delta;
  j["baseline"] = metrics_json(report.baseline);
  j["final"] = metrics_json(report.final);
  j["flip_count"] = report.committed_flips.size();
  j["total_weight_count"] = total_weight_count;
  j["total_weight_bits"] = total_weight_count * 8;
  j["flip_percentage"] = report.flip_percentage * 100.0;
  j["flip_percentage_text"] = format_flip_percentage(report.flip_percentage);
  j["relative_robustness_drop"] = report.relative_robustness_drop;
  j["termination_reason"] = termination_reason_name(report.termination);
  auto& flips = j["flips"] = nlohmann::json::array();
  for (const auto& f : report.committed_flips) {
    flips.push_back({f.layer_id, f.weight_index, f.bit_index});
  }
  auto& rows = j["trajectory"] = nlohmann::json::array();
  for (const auto& r : report.trajectory) {
    rows.push_back({{"iteration", r.iteration},
                    {"layer", r.layer_id},
                    {"flips", r.flips},
                    {"robustness", r.robustness},
                    {"accuracy", r.accuracy},
                    {"loss", r.loss}});
  }
  return j.dump(2) + "\n";
}

std::string attack_report_text(const AttackReport& report, const std::string& model_name,
                               std::size_t total_weight_count) {
  char line[256];
  std::ostringstream out;
  out << "Model    | Accuracy (Clean Inputs)    | Robustness (Crafted Inputs)\n";
  out << "         | Baseline     After Attack  | Baseline     After Attack (Drop %)\n";
  std::snprintf(line, sizeof(line),
                "%-8s | %-12.4f %-13.4f | %-12.4f %.4f (%.2f%%)\n", model_name.c_str(),
                report.baseline.accuracy, report.final.accuracy,
                report.baseline.gap_robustness, report.final.gap_robustness,
                report.relative_robustness_drop * 100.0);
  out << line;
  std::snprintf(line, sizeof(line),
                "Empirical robustness: %.4f -> %.4f\n",
                report.baseline.empirical_robustness, report.final.empirical_robustness);
  out << line;
  std::snprintf(line, sizeof(line),
                "#Total Weights: %zu   #Bit Flips: %zu   Flip Percentage: %s\n",
                total_weight_count, report.committed_flips.size(),
                format_flip_percentage(report.flip_percentage).c_str());
  out << line;
  out << "Termination: " << termination_reason_name(report.termination) << "\n";
  if (!report.trajectory.empty()) {
    out << "\nIter   Layer  Flips  Robustness   Accuracy     Loss\n";
    for (const auto& r : report.trajectory) {
      std::snprintf(line, sizeof(line), "%-6zu %-6zu %-6zu %-12.6f %-12.6f %-12.6f\n",
                    r.iteration, r.layer_id, r.flips, r.robustness, r.accuracy, r.loss);
      out << line;
    }
  }
  return out.str();
}

}  // namespace bvq
