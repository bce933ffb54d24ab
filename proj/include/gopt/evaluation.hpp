#pragma once

// Score rescaling, pooled PCC/MSE metrics, and Table-1 style reports.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gopt/data.hpp"
#include "gopt/model.hpp"

namespace gopt {

enum class Granularity { phoneme, word, utterance };

// Word and utterance scores arrive on 0-10 and map to 0-2; phone scores are
// already on 0-2.
double rescale(double raw, Granularity g);

// Pearson correlation. Throws NumericError when either side is constant
// (the correlation is undefined) and ContractError on length mismatch or
// fewer than two points.
double pcc(std::span<const double> x, std::span<const double> y);
double mse(std::span<const double> x, std::span<const double> y);

// Mean of each word's per-phone predictions; word indices must be 0..W-1
// with every word owning at least one phone.
std::vector<std::array<double, kWordAspects>> aggregate_word_predictions(
    std::span<const std::array<double, kWordAspects>> per_phone,
    std::span<const std::uint32_t> word_of_phone);

// Metrics of one trained model on one test set, pooled over all phones,
// words, and utterances.
struct EvalMetrics {
  double phone_mse = 0.0;
  double phone_pcc = 0.0;
  std::array<double, kWordAspects> word_pcc{};
  std::array<double, kUtteranceAspects> utterance_pcc{};
  std::size_t phones = 0;
  std::size_t words = 0;
  std::size_t utterances = 0;
};

std::vector<ModelOutput> predict(const ScoringModel& model, std::span<const Utterance> utterances,
                                 std::size_t batch_size = 100);

EvalMetrics evaluate(const ScoringModel& model, std::span<const Utterance> test);
EvalMetrics score_predictions(std::span<const ModelOutput> predictions,
                              std::span<const Utterance> test);

struct MetricSummary {
  std::string task;    // e.g. "phoneme", "word_total", "utt_fluency"
  std::string metric;  // "pcc" or "mse"
  double mean = 0.0;
  double std = 0.0;    // population standard deviation over runs
  std::size_t n = 0;   // evaluated items (phones, words, or utterances)
};

struct EvalReport {
  std::size_t runs = 0;
  std::vector<MetricSummary> rows;

  const MetricSummary& find(std::string_view task, std::string_view metric) const;
};

// Mean and standard deviation over runs (e.g. seeds).
EvalReport summarize(std::span<const EvalMetrics> runs);

struct LabeledReport {
  std::string label;
  EvalReport report;
};

// Aligned text table: phoneme MSE/PCC, three word PCCs, five utterance PCCs,
// one row per report.
std::string format_table(std::span<const LabeledReport> rows);
std::string format_table(const EvalReport& report, std::string_view label);
// "task,metric,mean,std,n" header plus one line per metric.
std::string format_csv(const EvalReport& report);

}  // namespace gopt
