#include "trips/runner.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "trips/checks.hpp"
#include "trips/version.hpp"

namespace trips::runner {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSplitJobSalt = 0x51D;

std::shared_ptr<const stream::Dataset> load_dataset(const config::ExperimentConfig& cfg) {
  if (cfg.scenario.source == "csv") {
    if (cfg.scenario.csv_path.empty()) throw ConfigError("scenario.csv_path required for csv source");
    return std::make_shared<const stream::Dataset>(stream::import_csv(cfg.scenario.csv_path));
  }
  return std::make_shared<const stream::Dataset>(stream::synth_generate(cfg.synthetic));
}

std::vector<int> resolve_rotations(const config::ExperimentConfig& cfg,
                                   const stream::Dataset& data) {
  std::vector<int> out;
  if (cfg.scenario.test_domains == "all") {
    for (int z = 0; z < data.n_domains(); ++z) out.push_back(z);
    return out;
  }
  std::stringstream ss(cfg.scenario.test_domains);
  std::string name;
  while (std::getline(ss, name, ',')) {
    // allow either a roster name or a bare id
    auto it = std::find(data.domain_names.begin(), data.domain_names.end(), name);
    if (it != data.domain_names.end()) {
      out.push_back(static_cast<int>(it - data.domain_names.begin()));
      continue;
    }
    char* end = nullptr;
    const long id = std::strtol(name.c_str(), &end, 10);
    if (end == name.c_str() || *end != '\0' || id < 0 || id >= data.n_domains())
      throw UnknownDomain("unknown test domain '" + name + "'");
    out.push_back(static_cast<int>(id));
  }
  if (out.empty()) throw ConfigError("scenario.test_domains resolved to nothing");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

fs::path resolve_run_dir(const config::ExperimentConfig& cfg) {
  const char* env_root = std::getenv("TRIPS_OUT_ROOT");
  fs::path root = env_root && *env_root ? fs::path(env_root) : fs::path(cfg.output.dir);
  std::string name = cfg.output.name;
  if (name.empty()) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "run-%016llx",
                  static_cast<unsigned long long>(config::fingerprint(cfg)));
    name = buf;
  }
  fs::path dir = root / name;
  int suffix = 1;
  while (fs::exists(dir)) dir = root / (name + "-" + std::to_string(++suffix));
  return dir;
}

void write_curve_csv(const fs::path& path, const std::vector<trainer::TrainCurvePoint>& curve) {
  std::ofstream os(path);
  if (!os) throw RunArtifactError("cannot write curve: " + path.string());
  os << "iteration,total,class,pseudo,trips,dist,val_score\n";
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf;
  };
  for (const auto& p : curve) {
    os << p.iteration << ',';
    put(p.total);
    os << ',';
    put(p.classification);
    os << ',';
    put(p.pseudo);
    os << ',';
    put(p.trips);
    os << ',';
    put(p.distillation);
    os << ',';
    put(p.val_score);
    os << '\n';
  }
}

void accumulate(trainer::ProtocolCounters& into, const trainer::ProtocolCounters& from) {
  into.pseudo_size_mismatches += from.pseudo_size_mismatches;
  into.test_domain_samples += from.test_domain_samples;
  into.old_class_raw_samples += from.old_class_raw_samples;
  into.replacement_draws += from.replacement_draws;
  into.wiring_violations += from.wiring_violations;
}

json counters_json(const trainer::ProtocolCounters& c) {
  return json{{"pseudo_size_mismatches", c.pseudo_size_mismatches},
              {"test_domain_samples", c.test_domain_samples},
              {"old_class_raw_samples", c.old_class_raw_samples},
              {"replacement_draws", c.replacement_draws},
              {"wiring_violations", c.wiring_violations}};
}

json report_json(const eval::StepReport& r) {
  json j{{"step", r.step},
         {"test_domain", r.test_domain},
         {"avg_acc", r.average_accuracy},
         {"micro_acc", r.micro_accuracy},
         {"n_classes", r.n_classes}};
  if (r.harmonic) {
    j["harm_acc"] = *r.harmonic;
    j["old_acc"] = r.old_accuracy;
    j["new_acc"] = r.new_accuracy;
  } else {
    j["harm_acc"] = nullptr;
  }
  json per_class = json::object();
  for (const auto& [c, acc] : r.per_class) per_class[std::to_string(c)] = acc;
  j["per_class"] = per_class;
  if (!r.excluded_classes.empty()) j["excluded_classes"] = r.excluded_classes;
  return j;
}

JobOutcome run_job(const config::ExperimentConfig& cfg,
                   std::shared_ptr<const stream::Dataset> data, std::uint64_t seed,
                   int test_domain, const fs::path& run_dir) {
  const stream::Scenario scenario = stream::build_scenario(
      data, cfg.scenario.steps, cfg.scenario.classes_per_step, test_domain, seed);
  const stream::SplitPair split = stream::split_train_validation(
      scenario, cfg.scenario.split_ratio,
      linalg::mix_seed({seed, static_cast<std::uint64_t>(test_domain), kSplitJobSalt}));

  trainer::TrainConfig tc = cfg.train;
  tc.seed = seed;
  tc.arch.input_dim = data->input_dim;
  tc.keep_checkpoints = cfg.eval.protocol == "checkpoint_mean";

  JobOutcome out;
  out.seed = seed;
  out.test_domain = test_domain;

  const std::string tag = "seed" + std::to_string(seed) + "_rot" + std::to_string(test_domain);
  trainer::SessionResult session;
  for (int step = 0; step < scenario.n_steps(); ++step) {
    session = step == 0 ? trainer::run_base_session(scenario, split, tc)
                        : trainer::run_incremental_session(session, scenario, split, step, tc);
    accumulate(out.counters, session.counters);
    out.sessions.push_back({step, session.selected_iteration, session.selected_score});

    eval::StepReport rep =
        cfg.eval.protocol == "checkpoint_mean"
            ? eval::evaluate_step_checkpoint_mean(session.checkpoints, scenario, step)
            : eval::evaluate_step(session.selected, scenario, step);
    out.reports.push_back(std::move(rep));

    const std::string session_tag = tag + "_session" + std::to_string(step);
    if (cfg.output.write_curves)
      write_curve_csv(run_dir / "curves" / (session_tag + ".csv"), session.curve);
    if (cfg.output.write_checkpoints) {
      net::save_checkpoint((run_dir / "checkpoints" / (session_tag + ".ckpt")).string(),
                           session.selected.extractor, session.selected.head, step);
      prototypes::save_prototypes(
          (run_dir / "checkpoints" / (session_tag + ".protos")).string(), session.protos);
    }
  }
  return out;
}

}  // namespace

RunOutcome execute_run(const config::ExperimentConfig& cfg) {
  std::shared_ptr<const stream::Dataset> data = load_dataset(cfg);
  const std::vector<int> rotations = resolve_rotations(cfg, *data);

  const fs::path run_dir = resolve_run_dir(cfg);
  fs::create_directories(run_dir);
  if (cfg.output.write_curves) fs::create_directories(run_dir / "curves");
  if (cfg.output.write_checkpoints) fs::create_directories(run_dir / "checkpoints");

  struct Job {
    std::uint64_t seed;
    int rotation;
  };
  std::vector<Job> jobs;
  for (std::uint64_t seed : cfg.scenario.seeds)
    for (int rot : rotations) jobs.push_back({seed, rot});

  std::vector<JobOutcome> outcomes(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  const int n_workers = std::max(
      1, std::min<int>(cfg.output.workers > 0 ? cfg.output.workers
                                              : static_cast<int>(rotations.size()),
                       static_cast<int>(jobs.size())));
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        outcomes[i] = run_job(cfg, data, jobs[i].seed, jobs[i].rotation, run_dir);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  RunOutcome run;
  run.run_dir = run_dir.string();

  json summary;
  summary["app_version"] = kVersion;
  summary["seeds"] = json::array();
  for (std::uint64_t seed : cfg.scenario.seeds) {
    SeedOutcome so;
    so.seed = seed;
    for (std::size_t i = 0; i < jobs.size(); ++i)
      if (jobs[i].seed == seed) so.rotations.push_back(outcomes[i]);
    std::sort(so.rotations.begin(), so.rotations.end(),
              [](const JobOutcome& a, const JobOutcome& b) {
                return a.test_domain < b.test_domain;
              });

    std::vector<eval::StepReport> flat;
    std::vector<std::vector<eval::StepReport>> by_rotation;
    for (const auto& rot : so.rotations) {
      by_rotation.push_back(rot.reports);
      flat.insert(flat.end(), rot.reports.begin(), rot.reports.end());
      accumulate(run.counters, rot.counters);
    }
    so.aggregate = eval::aggregate_rotations(by_rotation);
    eval::write_metrics_csv(
        (run_dir / ("metrics_seed" + std::to_string(seed) + ".csv")).string(), flat);

    json jseed;
    jseed["seed"] = seed;
    jseed["rotations"] = json::array();
    for (const auto& rot : so.rotations) {
      json jrot;
      jrot["test_domain"] = rot.test_domain;
      jrot["test_domain_name"] = data->domain_names[rot.test_domain];
      jrot["steps"] = json::array();
      for (const auto& rep : rot.reports) jrot["steps"].push_back(report_json(rep));
      jrot["sessions"] = json::array();
      for (const auto& s : rot.sessions)
        jrot["sessions"].push_back(json{{"step", s.step},
                                        {"selected_iteration", s.selected_iteration},
                                        {"selected_score", s.selected_score}});
      jrot["counters"] = counters_json(rot.counters);
      jseed["rotations"].push_back(jrot);
    }
    json jagg;
    jagg["per_step_mean_avg"] = so.aggregate.per_step_mean_avg;
    jagg["per_step_mean_harm"] = json::array();
    for (const auto& h : so.aggregate.per_step_mean_harm)
      jagg["per_step_mean_harm"].push_back(h ? json(*h) : json(nullptr));
    jagg["per_domain_overall_avg"] = json::object();
    for (const auto& [dom, v] : so.aggregate.per_domain_overall_avg)
      jagg["per_domain_overall_avg"][std::to_string(dom)] = v;
    jagg["per_domain_overall_harm"] = json::object();
    for (const auto& [dom, v] : so.aggregate.per_domain_overall_harm)
      jagg["per_domain_overall_harm"][std::to_string(dom)] = v ? json(*v) : json(nullptr);
    jseed["aggregate"] = jagg;
    summary["seeds"].push_back(jseed);

    run.seeds.push_back(std::move(so));
  }
  summary["counters"] = counters_json(run.counters);
  {
    std::ofstream os(run_dir / "summary.json");
    if (!os) throw RunArtifactError("cannot write summary.json");
    os << summary.dump(2) << '\n';
  }

  json manifest;
  manifest["format"] = "trips-run-manifest";
  manifest["format_version"] = 1;
  manifest["app_version"] = kVersion;
  manifest["config"] = config::serialize(cfg);
  manifest["seeds"] = cfg.scenario.seeds;
  json jrots = json::array();
  for (int rot : rotations)
    jrots.push_back(json{{"id", rot}, {"name", data->domain_names[rot]}});
  manifest["rotations"] = jrots;
  manifest["domain_names"] = data->domain_names;
  manifest["class_names"] = data->class_names;
  // class partition depends on the seed only; record it per seed
  json jparts = json::object();
  for (std::uint64_t seed : cfg.scenario.seeds) {
    const stream::Scenario sc = stream::build_scenario(
        data, cfg.scenario.steps, cfg.scenario.classes_per_step, rotations.front(), seed);
    jparts[std::to_string(seed)] = sc.class_steps;
  }
  manifest["class_partition"] = jparts;
  manifest["replacement_used"] = run.counters.replacement_draws > 0;
  manifest["counters"] = counters_json(run.counters);
  {
    std::ofstream os(run_dir / "manifest.json");
    if (!os) throw RunArtifactError("cannot write manifest.json");
    os << manifest.dump(2) << '\n';
  }
  return run;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides) {
  config::ExperimentConfig cfg;
  try {
    cfg = config_path.empty() ? config::defaults() : config::parse_file(config_path);
    for (const std::string& o : overrides) config::apply_override(cfg, o);
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }
  try {
    const RunOutcome run = execute_run(cfg);
    std::cout << "run directory: " << run.run_dir << '\n';
    for (const auto& seed : run.seeds) {
      std::cout << "seed " << seed.seed << ":";
      for (std::size_t t = 0; t < seed.aggregate.per_step_mean_avg.size(); ++t) {
        std::printf(" step%zu avg=%.4f", t, seed.aggregate.per_step_mean_avg[t]);
        if (seed.aggregate.per_step_mean_harm[t])
          std::printf(" harm=%.4f", *seed.aggregate.per_step_mean_harm[t]);
      }
      std::cout << '\n';
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << '\n';
    return 2;
  }
}

int cmd_gradcheck(int instances, std::uint64_t seed, const std::string& corrupt) {
  try {
    const checks::GradCheckResult res = checks::run_gradcheck(instances, seed, corrupt);
    for (const auto& per : res.per_loss) {
      std::printf("%-14s max_rel_err=%.3e coords=%d %s\n", per.name.c_str(), per.max_rel_err,
                  per.coords_checked,
                  per.max_rel_err < res.threshold ? "ok" : ("FAIL at " + per.worst_location).c_str());
    }
    if (!res.pass) {
      for (const auto& per : res.per_loss)
        if (per.max_rel_err >= res.threshold)
          std::cerr << "gradient check failed: " << per.name << " at " << per.worst_location
                    << '\n';
      return 3;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "gradcheck failed: " << e.what() << '\n';
    return 3;
  }
}

int cmd_samplecheck(int dim, long draws, std::uint64_t seed) {
  if (draws < 10000) {
    std::cerr << "usage error: samplecheck needs at least 10000 draws\n";
    return 1;
  }
  try {
    const checks::SampleCheckResult res = checks::run_samplecheck(dim, draws, seed);
    std::printf("mean_err_norm=%.6f (tol %.6f)\n", res.mean_err_norm, res.mean_tol);
    std::printf("cov_rel_frobenius=%.6f (tol %.6f)\n", res.cov_rel_err, res.cov_tol);
    if (!res.pass) {
      std::cerr << "samplecheck failed tolerance\n";
      return 3;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "samplecheck failed: " << e.what() << '\n';
    return 3;
  }
}

namespace {

void print_metric_table(const char* title, const std::vector<SeedOutcome>& seeds, bool harmonic) {
  for (const auto& seed : seeds) {
    std::printf("\n%s (seed %llu)\n", title, static_cast<unsigned long long>(seed.seed));
    std::printf("%-6s", "step");
    for (const auto& rot : seed.rotations) std::printf(" %9s", ("dom" + std::to_string(rot.test_domain)).c_str());
    std::printf(" %9s\n", "mean");
    const std::size_t n_steps = seed.aggregate.per_step_mean_avg.size();
    for (std::size_t t = 0; t < n_steps; ++t) {
      std::printf("%-6zu", t);
      for (const auto& rot : seed.rotations) {
        const auto& rep = rot.reports[t];
        if (harmonic) {
          if (rep.harmonic) std::printf(" %9.4f", *rep.harmonic);
          else std::printf(" %9s", "-");
        } else {
          std::printf(" %9.4f", rep.average_accuracy);
        }
      }
      if (harmonic) {
        if (seed.aggregate.per_step_mean_harm[t])
          std::printf(" %9.4f", *seed.aggregate.per_step_mean_harm[t]);
        else
          std::printf(" %9s", "-");
      } else {
        std::printf(" %9.4f", seed.aggregate.per_step_mean_avg[t]);
      }
      std::printf("\n");
    }
    std::printf("%-6s", "all");
    for (const auto& rot : seed.rotations) {
      if (harmonic) {
        const auto& h = seed.aggregate.per_domain_overall_harm.at(rot.test_domain);
        if (h) std::printf(" %9.4f", *h);
        else std::printf(" %9s", "-");
      } else {
        std::printf(" %9.4f", seed.aggregate.per_domain_overall_avg.at(rot.test_domain));
      }
    }
    std::printf("\n");
  }
}

}  // namespace

int cmd_report(const std::string& run_dir) {
  try {
    const fs::path dir(run_dir);
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream mis(manifest_path);
    if (!mis) throw RunArtifactError("missing manifest: " + manifest_path.string());
    json manifest;
    try {
      mis >> manifest;
    } catch (const std::exception&) {
      throw RunArtifactError("corrupt manifest: " + manifest_path.string());
    }

    std::vector<std::uint64_t> seeds;
    for (const auto& s : manifest.at("seeds")) seeds.push_back(s.get<std::uint64_t>());

    std::vector<SeedOutcome> outcomes;
    for (std::uint64_t seed : seeds) {
      const fs::path metrics = dir / ("metrics_seed" + std::to_string(seed) + ".csv");
      if (!fs::exists(metrics)) throw RunArtifactError("missing metrics: " + metrics.string());
      std::vector<eval::StepReport> flat;
      try {
        flat = eval::read_metrics_csv(metrics.string());
      } catch (const Error&) {
        throw RunArtifactError("corrupt metrics: " + metrics.string());
      }
      if (flat.empty()) throw RunArtifactError("corrupt metrics: " + metrics.string());

      SeedOutcome so;
      so.seed = seed;
      std::map<int, std::vector<eval::StepReport>> by_domain;
      for (const auto& rep : flat) by_domain[rep.test_domain].push_back(rep);
      std::vector<std::vector<eval::StepReport>> rotations;
      for (auto& [dom, reps] : by_domain) {
        std::sort(reps.begin(), reps.end(),
                  [](const auto& a, const auto& b) { return a.step < b.step; });
        JobOutcome job;
        job.seed = seed;
        job.test_domain = dom;
        job.reports = reps;
        so.rotations.push_back(std::move(job));
        rotations.push_back(reps);
      }
      so.aggregate = eval::aggregate_rotations(rotations);
      outcomes.push_back(std::move(so));
    }

    print_metric_table("average accuracy", outcomes, /*harmonic=*/false);
    print_metric_table("harmonic accuracy", outcomes, /*harmonic=*/true);
    std::printf("\n");
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "report failed: " << e.what() << '\n';
    return 1;
  }
}

int cmd_synth(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& out_csv) {
  config::ExperimentConfig cfg;
  try {
    cfg = config_path.empty() ? config::defaults() : config::parse_file(config_path);
    for (const std::string& o : overrides) config::apply_override(cfg, o);
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }
  try {
    const stream::Dataset data = stream::synth_generate(cfg.synthetic);
    stream::export_csv(data, out_csv);
    std::cout << "wrote " << data.samples.size() << " samples (" << data.n_classes()
              << " classes, " << data.n_domains() << " domains) to " << out_csv << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "synth failed: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace trips::runner
