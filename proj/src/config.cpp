#include "trips/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace trips::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

int parse_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') throw ConfigError(key + ": expected integer, got '" + v + "'");
  return static_cast<int>(x);
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') throw ConfigError(key + ": expected number, got '" + v + "'");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError(key + ": expected unsigned integer, got '" + v + "'");
  return static_cast<std::uint64_t>(x);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Key {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

// Section order and key order within a section are also the serialization
// order.
const std::vector<std::pair<std::string, std::vector<std::pair<std::string, Key>>>>& schema() {
  static const auto* table = new std::vector<
      std::pair<std::string, std::vector<std::pair<std::string, Key>>>>{
      {"scenario",
       {
           {"source",
            {[](ExperimentConfig& c, const std::string& v) {
               if (v != "synthetic" && v != "csv")
                 throw ConfigError("scenario.source: must be synthetic or csv");
               c.scenario.source = v;
             },
             [](const ExperimentConfig& c) { return c.scenario.source; }}},
           {"csv_path",
            {[](ExperimentConfig& c, const std::string& v) { c.scenario.csv_path = v; },
             [](const ExperimentConfig& c) { return c.scenario.csv_path; }}},
           {"steps",
            {[](ExperimentConfig& c, const std::string& v) {
               c.scenario.steps = parse_int("scenario.steps", v);
             },
             [](const ExperimentConfig& c) { return std::to_string(c.scenario.steps); }}},
           {"classes_per_step",
            {[](ExperimentConfig& c, const std::string& v) {
               c.scenario.classes_per_step = parse_int("scenario.classes_per_step", v);
             },
             [](const ExperimentConfig& c) {
               return std::to_string(c.scenario.classes_per_step);
             }}},
           {"test_domains",
            {[](ExperimentConfig& c, const std::string& v) { c.scenario.test_domains = v; },
             [](const ExperimentConfig& c) { return c.scenario.test_domains; }}},
           {"seeds",
            {[](ExperimentConfig& c, const std::string& v) {
               c.scenario.seeds.clear();
               for (const std::string& s : split_list(v))
                 c.scenario.seeds.push_back(parse_u64("scenario.seeds", s));
               if (c.scenario.seeds.empty()) throw ConfigError("scenario.seeds: empty list");
             },
             [](const ExperimentConfig& c) {
               std::string out;
               for (std::size_t i = 0; i < c.scenario.seeds.size(); ++i) {
                 if (i) out += ',';
                 out += std::to_string(c.scenario.seeds[i]);
               }
               return out;
             }}},
           {"split_ratio",
            {[](ExperimentConfig& c, const std::string& v) {
               c.scenario.split_ratio = parse_double("scenario.split_ratio", v);
             },
             [](const ExperimentConfig& c) { return format_double(c.scenario.split_ratio); }}},
       }},
      {"synthetic",
       {
           {"classes",
            {[](ExperimentConfig& c, const std::string& v) {
               c.synthetic.n_classes = parse_int("synthetic.classes", v);
             },
             [](const ExperimentConfig& c) { return std::to_string(c.synthetic.n_classes); }}},
           {"domains",
            {[](ExperimentConfig& c, const std::string& v) {
               c.synthetic.n_domains = parse_int("synthetic.domains", v);
             },
             [](const ExperimentConfig& c) { return std::to_string(c.synthetic.n_domains); }}},
           {"input_dim",
            {[](ExperimentConfig& c, const std::string& v) {
               c.synthetic.input_dim = parse_int("synthetic.input_dim", v);
             },
             [](const ExperimentConfig& c) { return std::to_string(c.synthetic.input_dim); }}},
           {"center_spread",
            {[](ExperimentConfig& c, const std::string& v) {
               c.synthetic.center_spread = parse_double("synthetic.center_spread", v);
             },
             [](const ExperimentConfig& c) { return format_double(c.synthetic.center_spread); }}},
           {"domain_scale",
            {[](ExperimentConfig& c, const std::string& v) {
               c.synthetic.domain_scale = parse_double("synthetic.domain_scale", v);
             },
             [](const ExperimentConfig& c) { return format_double(c.synthetic.domain_scale); }}},
           {"noise_std",
            {[](ExperimentConfig& c, const std::string& v) {
               c.synthetic.noise_std = parse_double("synthetic.noise_std", v);
             },
             [](const ExperimentConfig& c) { return format_double(c.synthetic.noise_std); }}},
           {"samples_per_class_per_domain",
            {[](ExperimentConfig& c, const std::string& v) {
               c.synthetic.samples_per_class_per_domain =
                   parse_int("synthetic.samples_per_class_per_domain", v);
             },
             [](const ExperimentConfig& c) {
               return std::to_string(c.synthetic.samples_per_class_per_domain);
             }}},
           {"seed",
            {[](ExperimentConfig& c, const std::string& v) {
               c.synthetic.seed = parse_u64("synthetic.seed", v);
             },
             [](const ExperimentConfig& c) { return std::to_string(c.synthetic.seed); }}},
       }},
      {"train",
       {
           {"lr",
            {[](ExperimentConfig& c, const std::string& v) {
               c.train.lr = parse_double("train.lr", v);
             },
             [](const ExperimentConfig& c) { return format_double(c.train.lr); }}},
           {"max_iters",
            {[](ExperimentConfig& c, const std::string& v) {
               c.train.max_iters = parse_int("train.max_iters", v);
             },
             [](const ExperimentConfig& c) { return std::to_string(c.train.max_iters); }}},
           {"per_domain_batch",
            {[](ExperimentConfig& c, const std::string& v) {
               c.train.per_domain_batch = parse_int("train.per_domain_batch", v);
             },
             [](const ExperimentConfig& c) { return std::to_string(c.train.per_domain_batch); }}},
           {"optimizer",
            {[](ExperimentConfig& c, const std::string& v) {
               c.train.rule = trainer::optimizer_from_name(v);
             },
             [](const ExperimentConfig& c) { return trainer::optimizer_name(c.train.rule); }}},
           {"validation_period",
            {[](ExperimentConfig& c, const std::string& v) {
               c.train.validation_period = parse_int("train.validation_period", v);
             },
             [](const ExperimentConfig& c) {
               return std::to_string(c.train.validation_period);
             }}},
           {"pseudo_sampling",
            {[](ExperimentConfig& c, const std::string& v) {
               c.train.pseudo_sampling = parse_bool("train.pseudo_sampling", v);
             },
             [](const ExperimentConfig& c) {
               return std::string(c.train.pseudo_sampling ? "true" : "false");
             }}},
           {"sample_with_replacement",
            {[](ExperimentConfig& c, const std::string& v) {
               c.train.sample_with_replacement = parse_bool("train.sample_with_replacement", v);
             },
             [](const ExperimentConfig& c) {
               return std::string(c.train.sample_with_replacement ? "true" : "false");
             }}},
           {"hidden",
            {[](ExperimentConfig& c, const std::string& v) {
               c.train.arch.hidden.clear();
               for (const std::string& s : split_list(v))
                 c.train.arch.hidden.push_back(parse_int("train.hidden", s));
             },
             [](const ExperimentConfig& c) {
               std::string out;
               for (std::size_t i = 0; i < c.train.arch.hidden.size(); ++i) {
                 if (i) out += ',';
                 out += std::to_string(c.train.arch.hidden[i]);
               }
               return out;
             }}},
           {"feature_dim",
            {[](ExperimentConfig& c, const std::string& v) {
               c.train.arch.feature_dim = parse_int("train.feature_dim", v);
             },
             [](const ExperimentConfig& c) { return std::to_string(c.train.arch.feature_dim); }}},
           {"feature_batchnorm",
            {[](ExperimentConfig& c, const std::string& v) {
               c.train.arch.feature_batchnorm = parse_bool("train.feature_batchnorm", v);
             },
             [](const ExperimentConfig& c) {
               return std::string(c.train.arch.feature_batchnorm ? "true" : "false");
             }}},
       }},
      {"losses",
       {
           {"margin",
            {[](ExperimentConfig& c, const std::string& v) {
               c.train.loss.margin = parse_double("losses.margin", v);
               if (c.train.loss.margin < 0) throw ConfigError("losses.margin: must be >= 0");
             },
             [](const ExperimentConfig& c) { return format_double(c.train.loss.margin); }}},
           {"lambda",
            {[](ExperimentConfig& c, const std::string& v) {
               c.train.loss.lambda = parse_double("losses.lambda", v);
             },
             [](const ExperimentConfig& c) { return format_double(c.train.loss.lambda); }}},
           {"lambda_prime",
            {[](ExperimentConfig& c, const std::string& v) {
               c.train.loss.lambda_prime = parse_double("losses.lambda_prime", v);
             },
             [](const ExperimentConfig& c) { return format_double(c.train.loss.lambda_prime); }}},
       }},
      {"drift",
       {
           {"sigma",
            {[](ExperimentConfig& c, const std::string& v) {
               c.train.drift.sigma = parse_double("drift.sigma", v);
               if (!(c.train.drift.sigma > 0)) throw ConfigError("drift.sigma: must be > 0");
             },
             [](const ExperimentConfig& c) { return format_double(c.train.drift.sigma); }}},
           {"eta",
            {[](ExperimentConfig& c, const std::string& v) {
               c.train.drift.eta = parse_double("drift.eta", v);
               if (c.train.drift.eta < 0 || c.train.drift.eta > 1)
                 throw ConfigError("drift.eta: must be in [0,1]");
             },
             [](const ExperimentConfig& c) { return format_double(c.train.drift.eta); }}},
           {"alpha",
            {[](ExperimentConfig& c, const std::string& v) {
               c.train.drift.alpha = parse_double("drift.alpha", v);
               if (c.train.drift.alpha < 0 || c.train.drift.alpha > 1)
                 throw ConfigError("drift.alpha: must be in [0,1]");
             },
             [](const ExperimentConfig& c) { return format_double(c.train.drift.alpha); }}},
       }},
      {"eval",
       {
           {"protocol",
            {[](ExperimentConfig& c, const std::string& v) {
               if (v != "end_of_step" && v != "checkpoint_mean")
                 throw ConfigError("eval.protocol: must be end_of_step or checkpoint_mean");
               c.eval.protocol = v;
             },
             [](const ExperimentConfig& c) { return c.eval.protocol; }}},
           {"micro_average",
            {[](ExperimentConfig& c, const std::string& v) {
               c.eval.micro_average = parse_bool("eval.micro_average", v);
             },
             [](const ExperimentConfig& c) {
               return std::string(c.eval.micro_average ? "true" : "false");
             }}},
       }},
      {"output",
       {
           {"dir",
            {[](ExperimentConfig& c, const std::string& v) { c.output.dir = v; },
             [](const ExperimentConfig& c) { return c.output.dir; }}},
           {"name",
            {[](ExperimentConfig& c, const std::string& v) { c.output.name = v; },
             [](const ExperimentConfig& c) { return c.output.name; }}},
           {"write_checkpoints",
            {[](ExperimentConfig& c, const std::string& v) {
               c.output.write_checkpoints = parse_bool("output.write_checkpoints", v);
             },
             [](const ExperimentConfig& c) {
               return std::string(c.output.write_checkpoints ? "true" : "false");
             }}},
           {"write_curves",
            {[](ExperimentConfig& c, const std::string& v) {
               c.output.write_curves = parse_bool("output.write_curves", v);
             },
             [](const ExperimentConfig& c) {
               return std::string(c.output.write_curves ? "true" : "false");
             }}},
           {"workers",
            {[](ExperimentConfig& c, const std::string& v) {
               c.output.workers = parse_int("output.workers", v);
             },
             [](const ExperimentConfig& c) { return std::to_string(c.output.workers); }}},
       }},
  };
  return *table;
}

const Key* find_key(const std::string& section, const std::string& key) {
  for (const auto& [sec, keys] : schema()) {
    if (sec != section) continue;
    for (const auto& [k, entry] : keys)
      if (k == key) return &entry;
    return nullptr;
  }
  return nullptr;
}

bool has_section(const std::string& section) {
  for (const auto& [sec, keys] : schema())
    if (sec == section) return true;
  return false;
}

}  // namespace

ExperimentConfig defaults() { return ExperimentConfig{}; }

ExperimentConfig parse_string(const std::string& text) {
  ExperimentConfig cfg = defaults();
  std::stringstream ss(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!has_section(section))
        throw ConfigError("line " + std::to_string(lineno) + ": unknown section [" + section +
                          "]");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
    const Key* entry = find_key(section, key);
    if (!entry)
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key " + section + "." + key);
    entry->set(cfg, value);
  }
  return cfg;
}

ExperimentConfig parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_string(ss.str());
}

std::string serialize(const ExperimentConfig& cfg) {
  std::string out;
  bool first = true;
  for (const auto& [section, keys] : schema()) {
    if (!first) out += '\n';
    first = false;
    out += '[' + section + "]\n";
    for (const auto& [key, entry] : keys) out += key + " = " + entry.get(cfg) + '\n';
  }
  return out;
}

void apply_override(ExperimentConfig& cfg, const std::string& dotted_key,
                    const std::string& value) {
  const std::size_t dot = dotted_key.find('.');
  if (dot == std::string::npos)
    throw ConfigError("override key must look like section.key: " + dotted_key);
  const std::string section = dotted_key.substr(0, dot);
  const std::string key = dotted_key.substr(dot + 1);
  const Key* entry = find_key(section, key);
  if (!entry) throw ConfigError("unknown config key: " + dotted_key);
  entry->set(cfg, value);
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must look like section.key=value: " + assignment);
  apply_override(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::uint64_t fingerprint(const ExperimentConfig& cfg) {
  const std::string text = serialize(cfg);
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace trips::config
