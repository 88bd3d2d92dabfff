#include "bvq/config.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "bvq/checkpoint.hpp"
#include "bvq/errors.hpp"
#include "bvq/rng.hpp"

namespace bvq {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_text(buffer.str(), path);
}

ConfigFile ConfigFile::parse_text(const std::string& text, const std::string& origin) {
  ConfigFile cfg;
  cfg.text_ = text;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t comment = line.find('#');
    if (comment != std::string::npos) line.resize(comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(origin + ":" + std::to_string(line_no) +
                          ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty section name");
      }
      cfg.sections_[section];
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    if (section.empty()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": key '" + key +
                        "' outside any section");
    }
    if (!cfg.sections_[section].emplace(key, value).second) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" +
                        key + "' in [" + section + "]");
    }
  }
  return cfg;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  const auto sit = sections_.find(section);
  return sit != sections_.end() && sit->second.count(key) > 0;
}

std::string ConfigFile::get(const std::string& section, const std::string& key) const {
  const auto sit = sections_.find(section);
  if (sit == sections_.end() || !sit->second.count(key)) {
    throw ConfigError(origin_ + ": missing required key '" + key + "' in [" +
                      section + "]");
  }
  return sit->second.at(key);
}

std::string ConfigFile::get_or(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
  return has(section, key) ? get(section, key) : fallback;
}

double ConfigFile::number(const std::string& section, const std::string& key,
                          double fallback) const {
  if (!has(section, key)) return fallback;
  const std::string raw = get(section, key);
  try {
    std::size_t used = 0;
    const double v = std::stod(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": [" + section + "] " + key + " = '" + raw +
                      "' is not a number");
  }
}

std::int64_t ConfigFile::integer(const std::string& section, const std::string& key,
                                 std::int64_t fallback) const {
  if (!has(section, key)) return fallback;
  const std::string raw = get(section, key);
  try {
    std::size_t used = 0;
    const std::int64_t v = std::stoll(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": [" + section + "] " + key + " = '" + raw +
                      "' is not an integer");
  }
}

void ConfigFile::check_known(
    const std::map<std::string, std::vector<std::string>>& allowed) const {
  for (const auto& [section, entries] : sections_) {
    const auto sit = allowed.find(section);
    if (sit == allowed.end()) {
      throw ConfigError(origin_ + ": unknown section [" + section + "]");
    }
    for (const auto& [key, value] : entries) {
      (void)value;
      if (std::find(sit->second.begin(), sit->second.end(), key) == sit->second.end()) {
        throw ConfigError(origin_ + ": unknown key '" + key + "' in [" + section + "]");
      }
    }
  }
}

namespace {

TrainConfig parse_train_section(const ConfigFile& cfg, const std::string& section,
                                std::uint64_t experiment_seed, bool adversarial) {
  TrainConfig t;
  t.epochs = static_cast<std::size_t>(cfg.integer(section, "epochs", adversarial ? 3 : 4));
  t.batch_size = static_cast<std::size_t>(cfg.integer(section, "batch_size", 64));
  t.learning_rate = cfg.number(section, "learning_rate", 0.1);
  t.seed = static_cast<std::uint64_t>(
      cfg.integer(section, "seed",
                  static_cast<std::int64_t>(derive_seed(experiment_seed, section.c_str()))));
  if (adversarial) {
    t.adv_fraction = cfg.number(section, "adv_fraction", 0.5);
    t.adv_step_size = cfg.number(section, "adv_step_size", 0.05);
    t.adv_steps = static_cast<std::size_t>(cfg.integer(section, "adv_steps", 5));
    t.adv_epsilon = cfg.number(section, "adv_epsilon", 0.2);
    t.consistency_weight = cfg.number(section, "consistency_weight", 0.0);
  }
  t.validate();
  return t;
}

}  // namespace

ExperimentConfig ExperimentConfig::load(const std::string& path,
                                        std::optional<std::uint64_t> seed_override) {
  const ConfigFile cfg = ConfigFile::parse_file(path);
  cfg.check_known({
      {"experiment", {"model", "seed"}},
      {"data",
       {"source", "train_count", "test_count", "classes", "feature_dim", "spread",
        "train_images", "train_labels", "test_images", "test_labels"}},
      {"train", {"epochs", "batch_size", "learning_rate", "seed"}},
      {"protect",
       {"epochs", "batch_size", "learning_rate", "seed", "adv_fraction",
        "adv_step_size", "adv_steps", "adv_epsilon", "consistency_weight"}},
      {"attack",
       {"n", "delta", "target_drop", "max_iterations", "attack_batch", "eval_batch",
        "seed", "ranking"}},
      {"evaluate",
       {"deepfool_max_iter", "deepfool_overshoot", "deepfool_samples", "per_sample"}},
  });

  ExperimentConfig ec;
  ec.config_hash = fnv1a_hash(cfg.text());
  ec.model = model_kind_from_name(cfg.get_or("experiment", "model", "mlp2"));
  ec.seed = static_cast<std::uint64_t>(cfg.integer("experiment", "seed", 0));
  if (seed_override) ec.seed = *seed_override;

  const std::string source = cfg.get_or("data", "source", "synthetic_digits");
  if (source == "synthetic_digits") {
    ec.data.source = DataSource::SyntheticDigits;
  } else if (source == "synthetic_blobs") {
    ec.data.source = DataSource::SyntheticBlobs;
  } else if (source == "idx") {
    ec.data.source = DataSource::Idx;
  } else {
    throw ConfigError(path + ": [data] source = '" + source +
                      "' (expected synthetic_digits, synthetic_blobs or idx)");
  }
  ec.data.train_count = static_cast<std::size_t>(cfg.integer("data", "train_count", 10000));
  ec.data.test_count = static_cast<std::size_t>(cfg.integer("data", "test_count", 2000));
  ec.data.classes = static_cast<std::size_t>(cfg.integer("data", "classes", 10));
  ec.data.feature_dim = static_cast<std::size_t>(cfg.integer("data", "feature_dim", 784));
  ec.data.spread = cfg.number("data", "spread", 0.08);
  if (ec.data.source == DataSource::Idx) {
    ec.data.train_images = cfg.get("data", "train_images");
    ec.data.train_labels = cfg.get("data", "train_labels");
    ec.data.test_images = cfg.get("data", "test_images");
    ec.data.test_labels = cfg.get("data", "test_labels");
    for (const std::string& p : {ec.data.train_images, ec.data.train_labels,
                                 ec.data.test_images, ec.data.test_labels}) {
      if (!std::filesystem::exists(p)) {
        throw ConfigError(path + ": referenced dataset path '" + p + "' does not exist");
      }
    }
  }

  ec.train = parse_train_section(cfg, "train", ec.seed, /*adversarial=*/false);
  ec.protect = parse_train_section(cfg, "protect", ec.seed, /*adversarial=*/true);

  ec.attack.top_n = static_cast<std::size_t>(cfg.integer("attack", "n", 10));
  ec.attack.delta = cfg.number("attack", "delta", 0.1);
  ec.attack.target_drop = cfg.number("attack", "target_drop", 0.3);
  ec.attack.max_iterations =
      static_cast<std::size_t>(cfg.integer("attack", "max_iterations", 40));
  ec.attack.attack_batch = static_cast<std::size_t>(cfg.integer("attack", "attack_batch", 256));
  ec.attack.eval_batch = static_cast<std::size_t>(cfg.integer("attack", "eval_batch", 512));
  ec.attack.seed = static_cast<std::uint64_t>(
      cfg.integer("attack", "seed",
                  static_cast<std::int64_t>(derive_seed(ec.seed, "attack"))));
  const std::string ranking = cfg.get_or("attack", "ranking", "rho");
  if (ranking == "rho") {
    ec.attack.ranking = RankingRule::RhoMagnitude;
  } else if (ranking == "combined") {
    ec.attack.ranking = RankingRule::CombinedScore;
  } else {
    throw ConfigError(path + ": [attack] ranking = '" + ranking +
                      "' (expected rho or combined)");
  }
  ec.attack.validate();

  ec.eval.deepfool_max_iter =
      static_cast<int>(cfg.integer("evaluate", "deepfool_max_iter", 50));
  ec.eval.deepfool_overshoot = cfg.number("evaluate", "deepfool_overshoot", 0.02);
  ec.eval.deepfool_samples =
      static_cast<std::size_t>(cfg.integer("evaluate", "deepfool_samples", 100));
  ec.eval.per_sample = static_cast<std::size_t>(cfg.integer("evaluate", "per_sample", 0));
  if (ec.eval.deepfool_max_iter < 1) {
    throw ConfigError(path + ": [evaluate] deepfool_max_iter must be >= 1");
  }
  return ec;
}

}  // namespace bvq
