#include "trips/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace trips::eval {

double harmonic_accuracy(double old_acc, double new_acc) {
  if (old_acc < 0.0 || old_acc > 1.0 || new_acc < 0.0 || new_acc > 1.0)
    throw DomainError("harmonic_accuracy: accuracies must lie in [0,1]");
  const double denom = old_acc + new_acc;
  if (denom == 0.0) return 0.0;
  return 2.0 * old_acc * new_acc / denom;
}

namespace {

struct Tally {
  std::map<int, int> correct;
  std::map<int, int> total;
};

Tally tally_per_class(const std::vector<int>& predictions, const std::vector<int>& labels,
                      const std::vector<int>& class_universe) {
  if (predictions.size() != labels.size())
    throw ShapeError("average_accuracy: prediction/label size mismatch");
  Tally t;
  for (int c : class_universe) {
    t.correct[c] = 0;
    t.total[c] = 0;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = t.total.find(labels[i]);
    if (it == t.total.end())
      throw UnknownClass("average_accuracy: label " + std::to_string(labels[i]) +
                         " outside the class universe");
    ++it->second;
    if (predictions[i] == labels[i]) ++t.correct[labels[i]];
  }
  return t;
}

double macro_over(const Tally& t, const std::vector<int>& classes, int* counted = nullptr) {
  double sum = 0.0;
  int n = 0;
  for (int c : classes) {
    const int tot = t.total.at(c);
    if (tot == 0) continue;
    sum += static_cast<double>(t.correct.at(c)) / tot;
    ++n;
  }
  if (counted) *counted = n;
  if (n == 0) throw EmptyEvaluation("average_accuracy: no class has any samples");
  return sum / n;
}

}  // namespace

double average_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels,
                        const std::vector<int>& class_universe) {
  const Tally t = tally_per_class(predictions, labels, class_universe);
  return macro_over(t, class_universe);
}

StepReport evaluate_step(const net::ModelSnapshot& model, const stream::Scenario& scenario,
                         int step) {
  const std::vector<int> learnt = scenario.classes_up_to(step);
  const stream::Dataset& data = *scenario.data;

  std::vector<int> indices;
  for (int c : learnt) {
    auto it = scenario.test_store.find(c);
    if (it == scenario.test_store.end()) continue;
    indices.insert(indices.end(), it->second.begin(), it->second.end());
  }
  if (indices.empty())
    throw EmptyTestDomain("evaluate_step: test domain has no samples of the learnt classes");

  linalg::Matrix inputs(static_cast<int>(indices.size()), data.input_dim);
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    inputs.set_row(static_cast<int>(i), data.samples[indices[i]].x);
    labels[i] = data.samples[indices[i]].y;
  }

  const linalg::Matrix feats = model.forward_features(inputs);
  const linalg::Matrix logits = model.logits(feats, learnt);
  std::vector<int> preds(indices.size());
  for (int i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < logits.cols(); ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    preds[i] = learnt[best];
  }

  const Tally t = tally_per_class(preds, labels, learnt);
  StepReport rep;
  rep.step = step;
  rep.test_domain = scenario.test_domain;
  int counted = 0;
  rep.average_accuracy = macro_over(t, learnt, &counted);
  rep.n_classes = counted;
  int n_correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (preds[i] == labels[i]) ++n_correct;
  rep.micro_accuracy = static_cast<double>(n_correct) / static_cast<double>(labels.size());
  for (int c : learnt) {
    rep.per_class_count[c] = t.total.at(c);
    if (t.total.at(c) == 0) {
      rep.excluded_classes.push_back(c);
    } else {
      rep.per_class[c] = static_cast<double>(t.correct.at(c)) / t.total.at(c);
    }
  }
  if (step >= 1) {
    const std::vector<int> old_classes = scenario.classes_up_to(step - 1);
    const std::vector<int>& new_classes = scenario.class_steps[step];
    rep.old_accuracy = macro_over(t, old_classes);
    rep.new_accuracy = macro_over(t, new_classes);
    rep.harmonic = harmonic_accuracy(rep.old_accuracy, rep.new_accuracy);
  }
  return rep;
}

StepReport evaluate_step_checkpoint_mean(const std::vector<net::ModelSnapshot>& checkpoints,
                                         const stream::Scenario& scenario, int step) {
  if (checkpoints.empty()) throw NoCheckpoints("evaluate_step_checkpoint_mean: no checkpoints");
  StepReport mean;
  bool first = true;
  double harm_sum = 0.0;
  int harm_n = 0;
  for (const auto& ckpt : checkpoints) {
    const StepReport r = evaluate_step(ckpt, scenario, step);
    if (first) {
      mean = r;
      mean.average_accuracy = 0.0;
      mean.micro_accuracy = 0.0;
      mean.old_accuracy = 0.0;
      mean.new_accuracy = 0.0;
      for (auto& [c, v] : mean.per_class) v = 0.0;
      first = false;
    }
    mean.average_accuracy += r.average_accuracy;
    mean.micro_accuracy += r.micro_accuracy;
    mean.old_accuracy += r.old_accuracy;
    mean.new_accuracy += r.new_accuracy;
    for (auto& [c, v] : mean.per_class) v += r.per_class.at(c);
    if (r.harmonic) {
      harm_sum += *r.harmonic;
      ++harm_n;
    }
  }
  const double k = static_cast<double>(checkpoints.size());
  mean.average_accuracy /= k;
  mean.micro_accuracy /= k;
  mean.old_accuracy /= k;
  mean.new_accuracy /= k;
  for (auto& [c, v] : mean.per_class) v /= k;
  mean.harmonic = harm_n > 0 ? std::optional<double>(harm_sum / harm_n) : std::nullopt;
  return mean;
}

RotationReport aggregate_rotations(const std::vector<std::vector<StepReport>>& rotations) {
  if (rotations.empty()) throw ShapeMismatch("aggregate_rotations: no rotations");
  const std::size_t n_steps = rotations.front().size();
  RotationReport out;
  for (const auto& seq : rotations) {
    if (seq.size() != n_steps)
      throw ShapeMismatch("aggregate_rotations: rotations disagree on step count");
    if (seq.empty()) throw ShapeMismatch("aggregate_rotations: empty rotation");
    out.by_domain[seq.front().test_domain] = seq;
  }
  if (out.by_domain.size() != rotations.size())
    throw ShapeMismatch("aggregate_rotations: duplicate test domain");

  out.per_step_mean_avg.assign(n_steps, 0.0);
  out.per_step_mean_harm.assign(n_steps, std::nullopt);
  for (std::size_t t = 0; t < n_steps; ++t) {
    double avg = 0.0, harm = 0.0;
    int harm_n = 0;
    for (const auto& [dom, seq] : out.by_domain) {
      avg += seq[t].average_accuracy;
      if (seq[t].harmonic) {
        harm += *seq[t].harmonic;
        ++harm_n;
      }
    }
    out.per_step_mean_avg[t] = avg / static_cast<double>(out.by_domain.size());
    if (harm_n == static_cast<int>(out.by_domain.size()))
      out.per_step_mean_harm[t] = harm / harm_n;
  }
  for (const auto& [dom, seq] : out.by_domain) {
    double avg = 0.0, harm = 0.0;
    int harm_n = 0;
    for (const auto& rep : seq) {
      avg += rep.average_accuracy;
      if (rep.harmonic) {
        harm += *rep.harmonic;
        ++harm_n;
      }
    }
    out.per_domain_overall_avg[dom] = avg / static_cast<double>(seq.size());
    out.per_domain_overall_harm[dom] =
        harm_n > 0 ? std::optional<double>(harm / harm_n) : std::nullopt;
  }
  return out;
}

void write_metrics_csv(const std::string& path, const std::vector<StepReport>& reports) {
  std::ofstream os(path);
  if (!os) throw RunArtifactError("cannot open metrics csv for writing: " + path);
  os << "step,test_domain,avg_acc,harm_acc,n_classes\n";
  char buf[40];
  for (const auto& r : reports) {
    os << r.step << ',' << r.test_domain << ',';
    std::snprintf(buf, sizeof(buf), "%.17g", r.average_accuracy);
    os << buf << ',';
    if (r.harmonic) {
      std::snprintf(buf, sizeof(buf), "%.17g", *r.harmonic);
      os << buf;
    } else {
      os << "nan";
    }
    os << ',' << r.n_classes << '\n';
  }
  if (!os) throw RunArtifactError("metrics csv write failed: " + path);
}

std::vector<StepReport> read_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw RunArtifactError("cannot open metrics csv: " + path);
  std::string line;
  if (!std::getline(is, line) ||
      (line != "step,test_domain,avg_acc,harm_acc,n_classes" &&
       line != "step,test_domain,avg_acc,harm_acc,n_classes\r"))
    throw RunArtifactError(path + ": bad metrics header");
  std::vector<StepReport> out;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 5)
      throw RunArtifactError(path + ": line " + std::to_string(lineno) + ": expected 5 fields");
    StepReport r;
    r.step = std::atoi(fields[0].c_str());
    r.test_domain = std::atoi(fields[1].c_str());
    r.average_accuracy = std::strtod(fields[2].c_str(), nullptr);
    const double h = std::strtod(fields[3].c_str(), nullptr);
    if (!std::isnan(h)) r.harmonic = h;
    r.n_classes = std::atoi(fields[4].c_str());
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace trips::eval
