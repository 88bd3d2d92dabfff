#pragma once

#include <string>
#include <vector>

#include "bvq/attack.hpp"
#include "bvq/training.hpp"

namespace bvq {

/// Writes content to path via a temporary file and rename, so readers never
/// observe a partial file.
void write_file_atomic(const std::string& path, const std::string& content);

/// Percentage with four decimals, e.g. "0.0060%".
std::string format_flip_percentage(double fraction);

/// CSV with header "epoch,loss,accuracy,robustness".
std::string training_curve_csv(const std::vector<EpochStats>& stats);

/// One "layer_id weight_index bit_index" triple per line, newline
/// terminated; replayable by an external fault-injection harness.
std::string flip_list_text(const std::vector<BitLocation>& flips);
std::vector<BitLocation> parse_flip_list(const std::string& text);

/// Machine-readable attack report (JSON).
std::string attack_report_json(const AttackReport& report, const std::string& model_name,
                               std::uint64_t seed, double delta,
                               std::size_t total_weight_count);

/// Fixed-width table mirroring the usual results layout: clean-input
/// accuracy and crafted-input robustness before and after the attack, plus
/// flip accounting.
std::string attack_report_text(const AttackReport& report, const std::string& model_name,
                               std::size_t total_weight_count);

}  // namespace bvq
