#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "test_support.hpp"
#include "trips/stream.hpp"

using namespace trips;
using linalg::Matrix;
using linalg::Vector;
using stream::Dataset;
using stream::Scenario;
using stream::SplitPair;
using stream::SyntheticConfig;

namespace {

std::shared_ptr<const Dataset> small_dataset(int classes = 7, int domains = 3,
                                             int per_cell = 10, std::uint64_t seed = 5) {
  SyntheticConfig cfg;
  cfg.n_classes = classes;
  cfg.n_domains = domains;
  cfg.input_dim = 4;
  cfg.samples_per_class_per_domain = per_cell;
  cfg.seed = seed;
  return std::make_shared<const Dataset>(stream::synth_generate(cfg));
}

}  // namespace

TEST_CASE("synth_generate: zero noise and identity transform collapse classes") {
  SyntheticConfig cfg;
  cfg.n_classes = 3;
  cfg.n_domains = 2;
  cfg.input_dim = 4;
  cfg.noise_std = 0.0;
  cfg.domain_scale = 0.0;
  cfg.samples_per_class_per_domain = 5;
  const Dataset data = stream::synth_generate(cfg);
  std::map<int, Vector> first;
  for (const auto& s : data.samples) {
    if (!first.count(s.y)) first[s.y] = s.x;
    CHECK(s.x == first[s.y]);  // identical within a class, across domains too
  }
}

TEST_CASE("synth_generate: per-domain class means follow the transform") {
  SyntheticConfig cfg;
  cfg.n_classes = 3;
  cfg.n_domains = 3;
  cfg.input_dim = 5;
  cfg.noise_std = 0.05;
  cfg.samples_per_class_per_domain = 400;
  const Dataset data = stream::synth_generate(cfg);
  const auto centers = stream::synth_class_centers(cfg);
  const auto transforms = stream::synth_domain_transforms(cfg);

  for (int z = 0; z < cfg.n_domains; ++z)
    for (int c = 0; c < cfg.n_classes; ++c) {
      Vector mean(cfg.input_dim, 0.0);
      int n = 0;
      for (const auto& s : data.samples)
        if (s.y == c && s.z == z) {
          linalg::axpy(1.0, s.x, mean);
          ++n;
        }
      for (double& x : mean) x /= n;
      Vector expect(cfg.input_dim, 0.0);
      for (int i = 0; i < cfg.input_dim; ++i) {
        expect[i] = transforms[z].shift[i];
        for (int j = 0; j < cfg.input_dim; ++j)
          expect[i] += transforms[z].linear(i, j) * centers[c][j];
      }
      CHECK(std::sqrt(linalg::norm_sq(linalg::vsub(mean, expect))) < 0.05);
    }
}

TEST_CASE("synth_generate: nearest transformed center classifies perfectly") {
  SyntheticConfig cfg;
  cfg.n_classes = 6;
  cfg.n_domains = 3;
  cfg.input_dim = 16;
  cfg.noise_std = 0.1;
  cfg.center_spread = 3.0;  // spacing floor of 4x noise easily satisfied
  cfg.samples_per_class_per_domain = 200;
  const Dataset data = stream::synth_generate(cfg);
  const auto centers = stream::synth_class_centers(cfg);
  const auto transforms = stream::synth_domain_transforms(cfg);

  // precompute transformed centers per domain
  std::vector<std::vector<Vector>> tc(cfg.n_domains,
                                      std::vector<Vector>(cfg.n_classes));
  for (int z = 0; z < cfg.n_domains; ++z)
    for (int c = 0; c < cfg.n_classes; ++c) {
      Vector v(cfg.input_dim, 0.0);
      for (int i = 0; i < cfg.input_dim; ++i) {
        v[i] = transforms[z].shift[i];
        for (int j = 0; j < cfg.input_dim; ++j)
          v[i] += transforms[z].linear(i, j) * centers[c][j];
      }
      tc[z][c] = v;
    }
  int wrong = 0;
  for (const auto& s : data.samples) {
    int best = 0;
    double best_d = linalg::norm_sq(linalg::vsub(s.x, tc[s.z][0]));
    for (int c = 1; c < cfg.n_classes; ++c) {
      const double d = linalg::norm_sq(linalg::vsub(s.x, tc[s.z][c]));
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    if (best != s.y) ++wrong;
  }
  CHECK(wrong == 0);
}

TEST_CASE("build_scenario: PACS-shaped 7-class 2-step partition") {
  auto data = small_dataset(7, 4);
  const Scenario sc = stream::build_scenario(data, 2, 2, /*test_domain=*/3, /*seed=*/77);
  REQUIRE(sc.n_steps() == 3);
  CHECK(sc.class_steps[0].size() == 3);  // base takes the remainder
  CHECK(sc.class_steps[1].size() == 2);
  CHECK(sc.class_steps[2].size() == 2);
  CHECK(sc.train_domains == std::vector<int>{0, 1, 2});
}

TEST_CASE("build_scenario: 65-class 5-step partition") {
  auto data = small_dataset(65, 2, 2);
  const Scenario sc = stream::build_scenario(data, 5, 10, 0, 1);
  CHECK(sc.class_steps[0].size() == 15);
  for (int t = 1; t <= 5; ++t) CHECK(sc.class_steps[t].size() == 10);
}

TEST_CASE("build_scenario: steps partition the class universe") {
  auto data = small_dataset(9, 3);
  const Scenario sc = stream::build_scenario(data, 3, 2, 1, 123);
  std::set<int> seen;
  for (const auto& step : sc.class_steps)
    for (int c : step) {
      CHECK_FALSE(seen.count(c));
      seen.insert(c);
    }
  CHECK(static_cast<int>(seen.size()) == data->n_classes());
}

TEST_CASE("build_scenario: training stores exclude the test domain") {
  auto data = small_dataset(5, 3);
  const Scenario sc = stream::build_scenario(data, 1, 2, 2, 9);
  for (const auto& per_step : sc.store)
    for (const auto& [z, pool] : per_step) {
      CHECK(z != sc.test_domain);
      for (int idx : pool) CHECK(data->samples[idx].z != sc.test_domain);
    }
}

TEST_CASE("build_scenario: class order differs across seeds but not rotations") {
  auto data = small_dataset(8, 4);
  const Scenario a = stream::build_scenario(data, 2, 2, 0, 42);
  const Scenario b = stream::build_scenario(data, 2, 2, 3, 42);
  CHECK(a.class_steps == b.class_steps);
  const Scenario c = stream::build_scenario(data, 2, 2, 0, 43);
  CHECK(a.class_steps != c.class_steps);
}

TEST_CASE("build_scenario: errors") {
  auto data = small_dataset(4, 2);
  CHECK_THROWS_AS(stream::build_scenario(data, 2, 2, 0, 1), InsufficientClasses);
  CHECK_THROWS_AS(stream::build_scenario(data, 1, 2, 5, 1), UnknownDomain);
}

TEST_CASE("split_train_validation: 10 per cell gives an 8/2 split") {
  auto data = small_dataset(4, 3, 10);
  const Scenario sc = stream::build_scenario(data, 1, 2, 2, 3);
  const SplitPair split = stream::split_train_validation(sc, 0.8, 11);
  CHECK(split.stratified_everywhere);
  // count per (class, domain) cell on the train side
  std::map<std::pair<int, int>, int> train_count, val_count;
  for (const auto& per_step : split.train)
    for (const auto& [z, pool] : per_step)
      for (int idx : pool) ++train_count[{data->samples[idx].y, z}];
  for (int idx : split.validation)
    ++val_count[{data->samples[idx].y, data->samples[idx].z}];
  for (const auto& [cell, n] : train_count) CHECK(n == 8);
  for (const auto& [cell, n] : val_count) CHECK(n == 2);
}

TEST_CASE("split_train_validation: deterministic per seed and disjoint") {
  auto data = small_dataset(5, 3, 12);
  const Scenario sc = stream::build_scenario(data, 1, 2, 0, 3);
  const SplitPair a = stream::split_train_validation(sc, 0.8, 7);
  const SplitPair b = stream::split_train_validation(sc, 0.8, 7);
  const SplitPair c = stream::split_train_validation(sc, 0.8, 8);
  CHECK(a.validation == b.validation);
  CHECK(a.validation != c.validation);

  // union of train and validation equals the training-domain universe
  std::set<int> all;
  for (const auto& per_step : a.train)
    for (const auto& [z, pool] : per_step) all.insert(pool.begin(), pool.end());
  for (int idx : a.validation) {
    CHECK_FALSE(all.count(idx));  // disjoint
    all.insert(idx);
  }
  std::size_t expected = 0;
  for (const auto& s : data->samples)
    if (s.z != sc.test_domain) ++expected;
  CHECK(all.size() == expected);
}

TEST_CASE("assemble_batch: cascaded per-domain sizes") {
  auto data = small_dataset(6, 4, 12);
  const Scenario sc = stream::build_scenario(data, 2, 2, 1, 5);
  const SplitPair split = stream::split_train_validation(sc, 0.8, 5);
  linalg::Rng rng(5);
  const losses::Batch batch = stream::assemble_batch(sc, split, 0, 8, rng, true);
  CHECK(batch.size() == 3 * 8);  // three training domains

  const losses::Batch tiny = stream::assemble_batch(sc, split, 1, 1, rng, true);
  CHECK(tiny.size() == 3);
  std::set<int> doms(tiny.domains.begin(), tiny.domains.end());
  CHECK(doms.size() == 3);  // one sample from each training domain
}

TEST_CASE("assemble_batch: labels stay within the step and off the test domain") {
  auto data = small_dataset(6, 3, 10);
  const Scenario sc = stream::build_scenario(data, 2, 2, 0, 17);
  const SplitPair split = stream::split_train_validation(sc, 0.8, 17);
  linalg::Rng rng(17);
  stream::BatchCounters counters;
  for (int trial = 0; trial < 50; ++trial) {
    const int step = trial % sc.n_steps();
    const losses::Batch b = stream::assemble_batch(sc, split, step, 4, rng, true, &counters);
    for (std::size_t i = 0; i < b.labels.size(); ++i) {
      const auto& cs = sc.class_steps[step];
      CHECK(std::find(cs.begin(), cs.end(), b.labels[i]) != cs.end());
      CHECK(b.domains[i] != sc.test_domain);
    }
  }
  CHECK(counters.test_domain_samples == 0);
  CHECK(counters.off_step_samples == 0);
}

TEST_CASE("assemble_batch: replacement only when the pool is short") {
  auto data = small_dataset(4, 2, 5);  // 5 per cell, 4 go to train
  const Scenario sc = stream::build_scenario(data, 1, 2, 1, 2);
  const SplitPair split = stream::split_train_validation(sc, 0.8, 2);
  linalg::Rng rng(2);
  stream::BatchCounters counters;
  // step 0 has 2 classes x 4 train samples = 8 per domain; 16 forces replacement
  stream::assemble_batch(sc, split, 0, 16, rng, true, &counters);
  CHECK(counters.replacement_draws > 0);
  CHECK_THROWS_AS(stream::assemble_batch(sc, split, 0, 16, rng, false), ExhaustedDomain);
}

TEST_CASE("csv: minimal file with lexicographic id assignment") {
  const std::string path = "/tmp/trips_csv_test.csv";
  {
    std::ofstream os(path);
    os << "f0,f1,class,domain\n";
    os << "1.5,2.5,dog,sketch\n";
    os << "0.5,-1.0,cat,photo\n";
    os << "3.25,0.125,dog,photo\n";
  }
  const Dataset data = stream::import_csv(path);
  CHECK(data.input_dim == 2);
  CHECK(data.class_names == std::vector<std::string>{"cat", "dog"});
  CHECK(data.domain_names == std::vector<std::string>{"photo", "sketch"});
  CHECK(data.samples.size() == 3);
  CHECK(data.samples[0].y == 1);  // dog
  CHECK(data.samples[0].z == 1);  // sketch
  CHECK(data.samples[1].y == 0);
  std::remove(path.c_str());
}

TEST_CASE("csv: write-then-read preserves values to full precision") {
  SyntheticConfig cfg;
  cfg.n_classes = 3;
  cfg.n_domains = 2;
  cfg.input_dim = 3;
  cfg.samples_per_class_per_domain = 4;
  const Dataset data = stream::synth_generate(cfg);
  const std::string path = "/tmp/trips_csv_roundtrip.csv";
  stream::export_csv(data, path);
  const Dataset back = stream::import_csv(path);
  REQUIRE(back.samples.size() == data.samples.size());
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    CHECK(back.samples[i].x == data.samples[i].x);  // bitwise
    CHECK(back.class_names[back.samples[i].y] == data.class_names[data.samples[i].y]);
    CHECK(back.domain_names[back.samples[i].z] == data.domain_names[data.samples[i].z]);
  }
  std::remove(path.c_str());
}

TEST_CASE("csv: malformed rows name the offending line") {
  const std::string path = "/tmp/trips_csv_bad.csv";
  {
    std::ofstream os(path);
    os << "f0,f1,class,domain\n";
    os << "1.0,2.0,a,d1\n";
    os << "1.0,oops,a,d1\n";
  }
  try {
    stream::import_csv(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  {
    std::ofstream os(path);
    os << "f0,f1,class,domain\n";
    os << "1.0,a,d1\n";
  }
  CHECK_THROWS_AS(stream::import_csv(path), DimensionMismatch);
  std::remove(path.c_str());
}
