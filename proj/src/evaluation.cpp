#include "gopt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "gopt/error.hpp"

namespace gopt {

namespace {

constexpr std::array<const char*, kWordAspects> kWordTasks{"word_accuracy", "word_stress",
                                                           "word_total"};
constexpr std::array<const char*, kUtteranceAspects> kUttTasks{
    "utt_accuracy", "utt_completeness", "utt_fluency", "utt_prosodic", "utt_total"};

void check_pair(std::span<const double> x, std::span<const double> y, const char* what) {
  if (x.size() != y.size()) {
    throw ContractError(std::string(what) + ": length mismatch " + std::to_string(x.size()) +
                        " vs " + std::to_string(y.size()));
  }
}

}  // namespace

double rescale(double raw, Granularity g) {
  return g == Granularity::phoneme ? raw : raw * 0.2;
}

double pcc(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, "pcc");
  if (x.size() < 2) throw ContractError("pcc: need at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw NumericError(std::string("pcc: correlation undefined, ") +
                       (sxx == 0.0 && syy == 0.0 ? "both inputs are" : "an input is") + " constant");
  }
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

double mse(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, "mse");
  if (x.empty()) throw ContractError("mse: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += (x[i] - y[i]) * (x[i] - y[i]);
  return total / static_cast<double>(x.size());
}

std::vector<std::array<double, kWordAspects>> aggregate_word_predictions(
    std::span<const std::array<double, kWordAspects>> per_phone,
    std::span<const std::uint32_t> word_of_phone) {
  if (per_phone.size() != word_of_phone.size()) {
    throw ContractError("aggregate_word_predictions: " + std::to_string(per_phone.size()) +
                        " predictions for " + std::to_string(word_of_phone.size()) + " phones");
  }
  std::size_t words = 0;
  for (auto w : word_of_phone) words = std::max<std::size_t>(words, w + 1);
  std::vector<std::array<double, kWordAspects>> sums(words, {0.0, 0.0, 0.0});
  std::vector<std::size_t> counts(words, 0);
  for (std::size_t i = 0; i < per_phone.size(); ++i) {
    for (std::size_t k = 0; k < kWordAspects; ++k) sums[word_of_phone[i]][k] += per_phone[i][k];
    ++counts[word_of_phone[i]];
  }
  for (std::size_t w = 0; w < words; ++w) {
    if (counts[w] == 0) throw LabelError("word " + std::to_string(w) + " has no phones");
    for (auto& v : sums[w]) v /= static_cast<double>(counts[w]);
  }
  return sums;
}

std::vector<ModelOutput> predict(const ScoringModel& model, std::span<const Utterance> utterances,
                                 std::size_t batch_size) {
  std::vector<ModelOutput> out;
  out.reserve(utterances.size());
  for (std::size_t begin = 0; begin < utterances.size(); begin += batch_size) {
    const std::size_t end = std::min(utterances.size(), begin + batch_size);
    std::vector<BatchItem> items;
    for (std::size_t i = begin; i < end; ++i) items.push_back({&utterances[i].gop, utterances[i].id});
    const Batch batch = make_batch(items, model.config());
    Tape tape(Tape::Mode::inference);
    auto outputs = unpack(model.forward(tape, batch), batch);
    std::move(outputs.begin(), outputs.end(), std::back_inserter(out));
  }
  return out;
}

EvalMetrics score_predictions(std::span<const ModelOutput> predictions,
                              std::span<const Utterance> test) {
  if (predictions.size() != test.size()) {
    throw ContractError("score_predictions: prediction/utterance count mismatch");
  }
  std::vector<double> phone_pred, phone_true;
  std::array<std::vector<double>, kWordAspects> word_pred, word_true;
  std::array<std::vector<double>, kUtteranceAspects> utt_pred, utt_true;
  for (std::size_t u = 0; u < test.size(); ++u) {
    const auto& pred = predictions[u];
    const auto& labels = test[u].labels;
    phone_pred.insert(phone_pred.end(), pred.phone_scores.begin(), pred.phone_scores.end());
    phone_true.insert(phone_true.end(), labels.phone.begin(), labels.phone.end());
    const auto words = aggregate_word_predictions(pred.word_scores_per_phone, test[u].gop.word_of_phone);
    if (words.size() != labels.word.size()) {
      throw LabelError("utterance " + test[u].id + ": " + std::to_string(words.size()) +
                       " predicted words but " + std::to_string(labels.word.size()) + " labelled");
    }
    for (std::size_t w = 0; w < words.size(); ++w) {
      for (std::size_t k = 0; k < kWordAspects; ++k) {
        word_pred[k].push_back(words[w][k]);
        word_true[k].push_back(labels.word[w][k]);
      }
    }
    for (std::size_t k = 0; k < kUtteranceAspects; ++k) {
      utt_pred[k].push_back(pred.utterance_scores[k]);
      utt_true[k].push_back(labels.utterance[k]);
    }
  }
  EvalMetrics m;
  m.phones = phone_true.size();
  m.words = word_true[0].size();
  m.utterances = test.size();
  m.phone_mse = mse(phone_pred, phone_true);
  m.phone_pcc = pcc(phone_pred, phone_true);
  for (std::size_t k = 0; k < kWordAspects; ++k) m.word_pcc[k] = pcc(word_pred[k], word_true[k]);
  for (std::size_t k = 0; k < kUtteranceAspects; ++k) m.utterance_pcc[k] = pcc(utt_pred[k], utt_true[k]);
  return m;
}

EvalMetrics evaluate(const ScoringModel& model, std::span<const Utterance> test) {
  if (test.empty()) throw ContractError("evaluate: empty test set");
  return score_predictions(predict(model, test), test);
}

const MetricSummary& EvalReport::find(std::string_view task, std::string_view metric) const {
  for (const auto& r : rows) {
    if (r.task == task && r.metric == metric) return r;
  }
  throw ContractError("report has no " + std::string(task) + "/" + std::string(metric) + " row");
}

EvalReport summarize(std::span<const EvalMetrics> runs) {
  if (runs.empty()) throw ContractError("summarize: no runs");
  EvalReport report;
  report.runs = runs.size();
  auto add = [&](std::string task, std::string metric, std::size_t n, auto get) {
    double mean = 0.0;
    for (const auto& r : runs) mean += get(r);
    mean /= static_cast<double>(runs.size());
    double var = 0.0;
    for (const auto& r : runs) var += (get(r) - mean) * (get(r) - mean);
    var /= static_cast<double>(runs.size());
    report.rows.push_back({std::move(task), std::move(metric), mean, std::sqrt(var), n});
  };
  const auto& first = runs.front();
  add("phoneme", "mse", first.phones, [](const EvalMetrics& m) { return m.phone_mse; });
  add("phoneme", "pcc", first.phones, [](const EvalMetrics& m) { return m.phone_pcc; });
  for (std::size_t k = 0; k < kWordAspects; ++k) {
    add(kWordTasks[k], "pcc", first.words, [k](const EvalMetrics& m) { return m.word_pcc[k]; });
  }
  for (std::size_t k = 0; k < kUtteranceAspects; ++k) {
    add(kUttTasks[k], "pcc", first.utterances,
        [k](const EvalMetrics& m) { return m.utterance_pcc[k]; });
  }
  return report;
}

std::string format_table(std::span<const LabeledReport> rows) {
  static constexpr std::array<const char*, 10> kHeaders{
      "Phn MSE", "Phn PCC", "Wrd Acc", "Wrd Str", "Wrd Tot",
      "Utt Acc", "Utt Comp", "Utt Flu", "Utt Pros", "Utt Tot"};
  std::size_t label_width = 8;
  for (const auto& r : rows) label_width = std::max(label_width, r.label.size());
  std::ostringstream os;
  char cell[64];
  std::snprintf(cell, sizeof(cell), "%-*s", static_cast<int>(label_width), "Model");
  os << cell;
  for (std::size_t i = 0; i < kHeaders.size(); ++i) {
    if (i == 2 || i == 5) os << " |";
    std::snprintf(cell, sizeof(cell), " %12s", kHeaders[i]);
    os << cell;
  }
  os << '\n';
  for (const auto& [label, report] : rows) {
    std::snprintf(cell, sizeof(cell), "%-*s", static_cast<int>(label_width), label.c_str());
    os << cell;
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
      if (i == 2 || i == 5) os << " |";
      const auto& r = report.rows[i];
      // "±" is one column but two bytes, so width comes from the format only.
      std::snprintf(cell, sizeof(cell), " %6.3f±%.3f", r.mean, r.std);
      os << cell;
    }
    os << '\n';
  }
  if (!rows.empty() && !rows.front().report.rows.empty()) {
    const auto& first = rows.front().report;
    std::snprintf(cell, sizeof(cell), "(%zu run%s; %zu phones, %zu words, %zu utterances)\n",
                  first.runs, first.runs == 1 ? "" : "s", first.rows[0].n, first.rows[2].n,
                  first.rows[5].n);
    os << cell;
  }
  return os.str();
}

std::string format_table(const EvalReport& report, std::string_view label) {
  const LabeledReport row{std::string(label), report};
  return format_table(std::span<const LabeledReport>(&row, 1));
}

std::string format_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "task,metric,mean,std,n\n";
  char line[160];
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof(line), "%s,%s,%.6f,%.6f,%zu\n", r.task.c_str(), r.metric.c_str(),
                  r.mean, r.std, r.n);
    os << line;
  }
  return os.str();
}

}  // namespace gopt
