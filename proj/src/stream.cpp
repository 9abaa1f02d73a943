#include "trips/stream.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace trips::stream {

namespace {

constexpr std::uint64_t kCenterSalt = 0xC347;
constexpr std::uint64_t kNoiseSalt = 0x7015E;
constexpr std::uint64_t kOrderSalt = 0x0D3;
constexpr std::uint64_t kSplitSalt = 0x5711;

struct SynthModel {
  std::vector<Vector> centers;
  std::vector<DomainTransform> domains;
};

// Centers and per-domain maps derive from cfg.seed alone, so the oracle
// accessors below see exactly what the generator used.
SynthModel synth_model(const SyntheticConfig& cfg) {
  SynthModel model;
  linalg::Rng rng(linalg::mix_seed({cfg.seed, kCenterSalt}));
  const int d = cfg.input_dim;

  model.centers.resize(cfg.n_classes);
  for (auto& c : model.centers) {
    c.resize(d);
    for (double& x : c) x = rng.normal() * cfg.center_spread;
  }
  // Enforce latent spacing >= 4x noise std so classes stay separable.
  const double min_dist = 4.0 * cfg.noise_std;
  for (int rounds = 0; rounds < 1000; ++rounds) {
    bool ok = true;
    for (int a = 0; a < cfg.n_classes && ok; ++a)
      for (int b = a + 1; b < cfg.n_classes && ok; ++b) {
        const double dist =
            std::sqrt(linalg::norm_sq(linalg::vsub(model.centers[a], model.centers[b])));
        if (dist < min_dist) {
          for (double& x : model.centers[b]) x = rng.normal() * cfg.center_spread;
          ok = false;
        }
      }
    if (ok) break;
    if (rounds == 999)
      throw DomainError("synth_generate: cannot satisfy center spacing; increase center_spread");
  }

  model.domains.resize(cfg.n_domains);
  const double col_scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& t : model.domains) {
    t.linear = Matrix::identity(d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        t.linear(i, j) += cfg.domain_scale * rng.normal() * col_scale;
    t.shift.resize(d);
    for (double& x : t.shift) x = cfg.domain_scale * rng.normal();
  }
  return model;
}

std::string padded_name(const char* prefix, int id, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, id);
  return buf;
}

}  // namespace

std::vector<Vector> synth_class_centers(const SyntheticConfig& cfg) {
  return synth_model(cfg).centers;
}

std::vector<DomainTransform> synth_domain_transforms(const SyntheticConfig& cfg) {
  return synth_model(cfg).domains;
}

Dataset synth_generate(const SyntheticConfig& cfg) {
  if (cfg.n_classes < 1 || cfg.n_domains < 1 || cfg.input_dim < 1 ||
      cfg.samples_per_class_per_domain < 1)
    throw DomainError("synth_generate: counts must be >= 1");
  if (cfg.noise_std < 0.0) throw DomainError("synth_generate: negative noise std");

  const SynthModel model = synth_model(cfg);
  linalg::Rng noise(linalg::mix_seed({cfg.seed, kNoiseSalt}));

  Dataset data;
  data.input_dim = cfg.input_dim;
  for (int c = 0; c < cfg.n_classes; ++c) data.class_names.push_back(padded_name("c", c, 3));
  for (int z = 0; z < cfg.n_domains; ++z) data.domain_names.push_back(padded_name("d", z, 2));

  const int d = cfg.input_dim;
  for (int z = 0; z < cfg.n_domains; ++z) {
    const DomainTransform& t = model.domains[z];
    for (int c = 0; c < cfg.n_classes; ++c) {
      Vector base(d, 0.0);
      for (int i = 0; i < d; ++i) {
        double acc = t.shift[i];
        for (int j = 0; j < d; ++j) acc += t.linear(i, j) * model.centers[c][j];
        base[i] = acc;
      }
      for (int k = 0; k < cfg.samples_per_class_per_domain; ++k) {
        LabeledSample s;
        s.x.resize(d);
        for (int i = 0; i < d; ++i) s.x[i] = base[i] + cfg.noise_std * noise.normal();
        s.y = c;
        s.z = z;
        data.samples.push_back(std::move(s));
      }
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Dataset import_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open csv: " + path);
  std::string line;
  if (!std::getline(is, line)) throw ParseError(path + ": empty file");
  const std::vector<std::string> header = split_fields(line);
  if (header.size() < 3 || header[header.size() - 2] != "class" || header.back() != "domain")
    throw ParseError(path + ": header must be f0,...,f{d-1},class,domain");
  const int d = static_cast<int>(header.size()) - 2;
  for (int j = 0; j < d; ++j) {
    if (header[j] != "f" + std::to_string(j))
      throw ParseError(path + ": feature column " + std::to_string(j) + " must be named f" +
                       std::to_string(j));
  }

  struct RawRow {
    Vector x;
    std::string cls, dom;
  };
  std::vector<RawRow> rows;
  std::set<std::string> class_set, domain_set;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_fields(line);
    if (static_cast<int>(fields.size()) != d + 2)
      throw DimensionMismatch(path + ": line " + std::to_string(lineno) + ": expected " +
                              std::to_string(d + 2) + " fields, got " +
                              std::to_string(fields.size()));
    RawRow row;
    row.x.resize(d);
    for (int j = 0; j < d; ++j) {
      char* end = nullptr;
      row.x[j] = std::strtod(fields[j].c_str(), &end);
      if (end == fields[j].c_str() || *end != '\0')
        throw ParseError(path + ": line " + std::to_string(lineno) + ": bad numeric field '" +
                         fields[j] + "'");
    }
    row.cls = fields[d];
    row.dom = fields[d + 1];
    if (row.cls.empty() || row.dom.empty())
      throw ParseError(path + ": line " + std::to_string(lineno) + ": empty label");
    class_set.insert(row.cls);
    domain_set.insert(row.dom);
    rows.push_back(std::move(row));
  }

  Dataset data;
  data.input_dim = d;
  data.class_names.assign(class_set.begin(), class_set.end());    // lexicographic
  data.domain_names.assign(domain_set.begin(), domain_set.end());
  std::map<std::string, int> class_id, domain_id;
  for (int i = 0; i < data.n_classes(); ++i) class_id[data.class_names[i]] = i;
  for (int i = 0; i < data.n_domains(); ++i) domain_id[data.domain_names[i]] = i;
  for (auto& row : rows) {
    LabeledSample s;
    s.x = std::move(row.x);
    s.y = class_id[row.cls];
    s.z = domain_id[row.dom];
    data.samples.push_back(std::move(s));
  }
  return data;
}

void export_csv(const Dataset& data, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw RunArtifactError("cannot open csv for writing: " + path);
  for (int j = 0; j < data.input_dim; ++j) os << 'f' << j << ',';
  os << "class,domain\n";
  char buf[40];
  for (const auto& s : data.samples) {
    for (double x : s.x) {
      std::snprintf(buf, sizeof(buf), "%.17g", x);
      os << buf << ',';
    }
    os << data.class_names[s.y] << ',' << data.domain_names[s.z] << '\n';
  }
  if (!os) throw RunArtifactError("csv write failed: " + path);
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

std::vector<int> Scenario::classes_up_to(int step) const {
  std::vector<int> out;
  for (int t = 0; t <= step && t < n_steps(); ++t)
    out.insert(out.end(), class_steps[t].begin(), class_steps[t].end());
  std::sort(out.begin(), out.end());
  return out;
}

Scenario build_scenario(std::shared_ptr<const Dataset> data, int n_incremental_steps,
                        int classes_per_step, int test_domain, std::uint64_t seed) {
  if (test_domain < 0 || test_domain >= data->n_domains())
    throw UnknownDomain("build_scenario: test domain " + std::to_string(test_domain) +
                        " not in the roster");
  if (n_incremental_steps < 0 || (n_incremental_steps > 0 && classes_per_step < 1))
    throw DomainError("build_scenario: bad step shape");
  const int total = data->n_classes();
  const int consumed = n_incremental_steps * classes_per_step;
  if (consumed >= total)
    throw InsufficientClasses("build_scenario: " + std::to_string(consumed) +
                              " classes consumed by incremental steps leave no base classes out of " +
                              std::to_string(total));

  Scenario sc;
  sc.data = std::move(data);
  sc.test_domain = test_domain;
  sc.seed = seed;

  std::vector<int> order(total);
  for (int i = 0; i < total; ++i) order[i] = i;
  linalg::Rng rng(linalg::mix_seed({seed, kOrderSalt}));
  for (int i = total - 1; i > 0; --i) {
    const int j = rng.uniform_int(0, i);
    std::swap(order[i], order[j]);
  }

  const int base = total - consumed;
  sc.class_steps.emplace_back(order.begin(), order.begin() + base);
  for (int t = 0; t < n_incremental_steps; ++t)
    sc.class_steps.emplace_back(order.begin() + base + t * classes_per_step,
                                order.begin() + base + (t + 1) * classes_per_step);
  for (auto& step : sc.class_steps) std::sort(step.begin(), step.end());

  for (int z = 0; z < sc.data->n_domains(); ++z)
    if (z != test_domain) sc.train_domains.push_back(z);

  std::vector<int> class_to_step(total, -1);
  for (int t = 0; t < sc.n_steps(); ++t)
    for (int c : sc.class_steps[t]) class_to_step[c] = t;

  sc.store.resize(sc.n_steps());
  for (int z : sc.train_domains)
    for (auto& m : sc.store) m[z];  // ensure empty pools exist
  for (std::size_t i = 0; i < sc.data->samples.size(); ++i) {
    const LabeledSample& s = sc.data->samples[i];
    if (s.z == test_domain) {
      sc.test_store[s.y].push_back(static_cast<int>(i));
    } else {
      sc.store[class_to_step[s.y]][s.z].push_back(static_cast<int>(i));
    }
  }
  return sc;
}

// ---------------------------------------------------------------------------
// Split and batch assembly
// ---------------------------------------------------------------------------

SplitPair split_train_validation(const Scenario& scenario, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw DomainError("split: ratio must be in (0,1)");
  const Dataset& data = *scenario.data;

  std::vector<int> class_to_step(data.n_classes(), -1);
  for (int t = 0; t < scenario.n_steps(); ++t)
    for (int c : scenario.class_steps[t]) class_to_step[c] = t;

  SplitPair out;
  out.train.resize(scenario.n_steps());
  linalg::Rng rng(linalg::mix_seed({seed, kSplitSalt}));

  for (int z : scenario.train_domains) {
    // (class -> indices) cells for this domain, classes in ascending order
    std::map<int, std::vector<int>> cells;
    int domain_total = 0;
    for (int t = 0; t < scenario.n_steps(); ++t) {
      auto it = scenario.store[t].find(z);
      if (it == scenario.store[t].end()) continue;
      for (int idx : it->second) {
        cells[data.samples[idx].y].push_back(idx);
        ++domain_total;
      }
    }
    if (domain_total == 0)
      throw EmptyDomain("split: training domain " + data.domain_names[z] + " has no samples");

    bool stratified = true;
    for (const auto& [cls, idxs] : cells)
      if (idxs.size() < 2) stratified = false;

    auto shuffle = [&rng](std::vector<int>& v) {
      for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
        const int j = rng.uniform_int(0, i);
        std::swap(v[i], v[j]);
      }
    };
    auto cut = [ratio](int n) {
      int k = static_cast<int>(std::floor(ratio * n));
      if (n >= 2) k = std::max(1, std::min(n - 1, k));
      else k = n;
      return k;
    };

    if (stratified) {
      for (auto& [cls, idxs] : cells) {
        shuffle(idxs);
        const int k = cut(static_cast<int>(idxs.size()));
        const int step = class_to_step[cls];
        auto& pool = out.train[step][z];
        pool.insert(pool.end(), idxs.begin(), idxs.begin() + k);
        out.validation.insert(out.validation.end(), idxs.begin() + k, idxs.end());
      }
    } else {
      out.stratified_everywhere = false;
      std::vector<int> pool_all;
      for (auto& [cls, idxs] : cells) pool_all.insert(pool_all.end(), idxs.begin(), idxs.end());
      std::sort(pool_all.begin(), pool_all.end());
      shuffle(pool_all);
      const int k = cut(static_cast<int>(pool_all.size()));
      for (int i = 0; i < static_cast<int>(pool_all.size()); ++i) {
        const int idx = pool_all[i];
        const int step = class_to_step[data.samples[idx].y];
        if (i < k) out.train[step][z].push_back(idx);
        else out.validation.push_back(idx);
      }
    }
  }
  for (auto& per_step : out.train)
    for (auto& [z, pool] : per_step) std::sort(pool.begin(), pool.end());
  std::sort(out.validation.begin(), out.validation.end());
  return out;
}

losses::Batch assemble_batch(const Scenario& scenario, const SplitPair& split, int step,
                             int per_domain, linalg::Rng& rng, bool allow_replacement,
                             BatchCounters* counters) {
  if (step < 0 || step >= scenario.n_steps()) throw DomainError("assemble_batch: bad step");
  if (per_domain < 1) throw DomainError("assemble_batch: per_domain must be >= 1");
  const Dataset& data = *scenario.data;

  std::vector<int> picked;
  for (int z : scenario.train_domains) {
    auto it = split.train[step].find(z);
    const std::vector<int>* pool = (it == split.train[step].end()) ? nullptr : &it->second;
    if (pool == nullptr || pool->empty())
      throw ExhaustedDomain("assemble_batch: no step-" + std::to_string(step) +
                            " training data in domain " + data.domain_names[z]);
    const int n = static_cast<int>(pool->size());
    if (n >= per_domain) {
      std::vector<int> tmp = *pool;
      for (int i = 0; i < per_domain; ++i) {
        const int j = rng.uniform_int(i, n - 1);
        std::swap(tmp[i], tmp[j]);
        picked.push_back(tmp[i]);
      }
    } else if (allow_replacement) {
      for (int i = 0; i < per_domain; ++i) picked.push_back((*pool)[rng.uniform_int(0, n - 1)]);
      if (counters) counters->replacement_draws += per_domain;
    } else {
      throw ExhaustedDomain("assemble_batch: domain " + data.domain_names[z] + " pool of " +
                            std::to_string(n) + " cannot fill " + std::to_string(per_domain) +
                            " without replacement");
    }
  }

  const std::vector<int>& step_classes = scenario.class_steps[step];
  losses::Batch batch;
  batch.inputs = Matrix(static_cast<int>(picked.size()), data.input_dim);
  batch.labels.resize(picked.size());
  batch.domains.resize(picked.size());
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const LabeledSample& s = data.samples[picked[i]];
    batch.inputs.set_row(static_cast<int>(i), s.x);
    batch.labels[i] = s.y;
    batch.domains[i] = s.z;
    if (counters) {
      if (s.z == scenario.test_domain) ++counters->test_domain_samples;
      if (std::find(step_classes.begin(), step_classes.end(), s.y) == step_classes.end())
        ++counters->off_step_samples;
    }
  }
  return batch;
}

}  // namespace trips::stream
