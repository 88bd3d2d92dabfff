#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bvq/attack.hpp"
#include "bvq/model.hpp"
#include "bvq/training.hpp"

namespace bvq {

/// Line-oriented sectioned key = value text. Sections in brackets, '#'
/// starts a comment, blank lines ignored. Unknown sections or keys are
/// configuration errors so typos surface immediately.
class ConfigFile {
 public:
  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_text(const std::string& text, const std::string& origin);

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  double number(const std::string& section, const std::string& key,
                double fallback) const;
  std::int64_t integer(const std::string& section, const std::string& key,
                       std::int64_t fallback) const;

  /// Raw text as read, for provenance hashing.
  const std::string& text() const { return text_; }

  /// Throws ConfigError if any key outside the allowed map was present.
  void check_known(const std::map<std::string, std::vector<std::string>>& allowed) const;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
  std::string text_;
  std::string origin_;
};

enum class DataSource { SyntheticDigits, SyntheticBlobs, Idx };

struct DataConfig {
  DataSource source = DataSource::SyntheticDigits;
  std::size_t train_count = 10000;
  std::size_t test_count = 2000;
  // blobs
  std::size_t classes = 10;
  std::size_t feature_dim = 784;
  double spread = 0.08;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
};

struct EvalConfig {
  int deepfool_max_iter = 50;
  double deepfool_overshoot = 0.02;
  std::size_t deepfool_samples = 100;
  std::size_t per_sample = 0;  // per-sample report section size
};

/// Everything one experiment needs: model, data, baseline and protection
/// training, attack parameters and evaluation knobs. Seeds for every
/// stochastic component derive from the experiment seed unless a section
/// overrides its own.
struct ExperimentConfig {
  ModelKind model = ModelKind::Mlp2;
  std::uint64_t seed = 0;
  DataConfig data;
  TrainConfig train;
  TrainConfig protect;
  AttackConfig attack;
  EvalConfig eval;
  std::uint64_t config_hash = 0;

  /// Parses and validates; referenced paths must exist.
  static ExperimentConfig load(const std::string& path,
                               std::optional<std::uint64_t> seed_override);
};

}  // namespace bvq
