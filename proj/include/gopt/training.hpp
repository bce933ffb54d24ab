#pragma once

// Multi-task loss, Adam, the halving learning-rate schedule, and the
// training loop.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gopt/data.hpp"
#include "gopt/evaluation.hpp"
#include "gopt/model.hpp"
#include "gopt/tensor.hpp"

namespace gopt {

// Which granularity losses enter the optimised total.
struct TaskSet {
  bool phoneme = true;
  bool word = true;
  bool utterance = true;

  static TaskSet parse(std::string_view name);  // joint | phoneme | word | utterance
  std::string name() const;
  bool operator==(const TaskSet&) const = default;
};

struct TrainConfig {
  double lr0 = 1e-3;
  std::size_t batch_size = 25;
  std::size_t epochs = 100;
  // lr halves every `halve_every` epochs once `halve_after` epochs are done.
  std::size_t halve_after = 20;
  std::size_t halve_every = 5;
  // false: first halving at epoch halve_after + halve_every (25);
  // true: first halving right after halve_after (epoch 21).
  bool halve_immediately = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  TaskSet tasks;
  std::size_t eval_every = 1;  // 0 evaluates only after the last epoch

  void validate() const;
};

// 1-based epoch.
double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg);

// Each phone receives the three scores of its word.
std::vector<std::array<double, kWordAspects>> propagate_word_scores(
    const ScoreLabels& labels, std::span<const std::uint32_t> word_of_phone);

struct BatchTargets {
  Tensor utterance;  // [B x 5]
  Tensor phone;      // [B*T x 1]
  Tensor word;       // [B*T x 3], propagated word scores
  Mask mask;         // B*T, 1 = real phone
};

BatchTargets make_targets(std::span<const Utterance* const> utterances, const Batch& batch);

struct LossBreakdown {
  Tensor total;  // scalar on the tape
  double utterance = 0.0;
  double word = 0.0;
  double phoneme = 0.0;
};

// utterance = mean over the 5 aspects of each aspect's MSE over the batch,
// word      = mean over the 3 aspects of each aspect's MSE over real phones,
// phoneme   = MSE over real phones,
// total     = (utterance + word) + phoneme, restricted to the enabled tasks.
// Each MSE sums squared errors in row order, then divides by the count.
LossBreakdown multitask_loss(Tape& tape, const BatchOutput& out, const BatchTargets& targets,
                             const TaskSet& tasks = {});

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

AdamState make_adam_state(std::span<const ScoringModel::NamedTensor> params, double beta1 = 0.9,
                          double beta2 = 0.999, double eps = 1e-8);

// Bias-corrected Adam update from each parameter's accumulated gradient.
// Parameters without a gradient buffer are treated as having zero gradient.
void adam_step(std::span<const ScoringModel::NamedTensor> params, AdamState& state, double lr);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double utterance_loss = 0.0;
  double word_loss = 0.0;
  double phoneme_loss = 0.0;
  std::optional<EvalMetrics> test;
};

std::string log_header();
// Tab-separated: epoch, lr, total loss, utterance/word/phoneme losses, then
// test phoneme MSE and the nine PCCs ("-" when not evaluated this epoch).
std::string format_log_line(const EpochRecord& record);

struct TrainResult {
  ScoringModel model;
  std::vector<EpochRecord> log;
  std::optional<EvalMetrics> final_metrics;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Shuffles the training set each epoch with a generator seeded from `seed`,
// steps Adam per batch (the short last batch is kept), and returns the
// last-epoch model. Throws NumericError on a non-finite loss.
TrainResult train(ScoringModel model, const Dataset& data, const TrainConfig& cfg,
                  std::uint64_t seed, const EpochCallback& on_epoch = {});

struct MultiSeedResult {
  EvalReport report;
  std::vector<TrainResult> runs;
};

// One independent run per seed (model init and shuffling both use the seed);
// up to `jobs` runs execute concurrently.
MultiSeedResult train_multiseed(const ModelConfig& model_cfg, const Dataset& data,
                                const TrainConfig& cfg, std::span<const std::uint64_t> seeds,
                                std::size_t jobs = 1,
                                const std::function<void(std::uint64_t, const EpochRecord&)>& on_epoch = {});

}  // namespace gopt
