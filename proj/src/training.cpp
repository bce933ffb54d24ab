#include "gopt/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

#include "gopt/error.hpp"
#include "gopt/random.hpp"

namespace gopt {

TaskSet TaskSet::parse(std::string_view name) {
  if (name == "joint") return {};
  if (name == "phoneme") return {true, false, false};
  if (name == "word") return {false, true, false};
  if (name == "utterance") return {false, false, true};
  throw ConfigError("unknown task '" + std::string(name) +
                    "' (expected joint, phoneme, word, or utterance)");
}

std::string TaskSet::name() const {
  if (phoneme && word && utterance) return "joint";
  std::string out;
  auto add = [&](bool on, const char* n) {
    if (!on) return;
    if (!out.empty()) out += "+";
    out += n;
  };
  add(phoneme, "phoneme");
  add(word, "word");
  add(utterance, "utterance");
  return out.empty() ? "none" : out;
}

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("lr must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (halve_every == 0) throw ConfigError("lr_halve_every must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!tasks.phoneme && !tasks.word && !tasks.utterance) throw ConfigError("no training task enabled");
}

double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch == 0) throw ContractError("epochs are 1-based");
  if (epoch <= cfg.halve_after) return cfg.lr0;
  const std::size_t past = epoch - cfg.halve_after;
  const std::size_t halvings =
      cfg.halve_immediately ? (past + cfg.halve_every - 1) / cfg.halve_every : past / cfg.halve_every;
  return std::ldexp(cfg.lr0, -static_cast<int>(halvings));
}

std::vector<std::array<double, kWordAspects>> propagate_word_scores(
    const ScoreLabels& labels, std::span<const std::uint32_t> word_of_phone) {
  std::vector<std::array<double, kWordAspects>> out;
  out.reserve(word_of_phone.size());
  for (std::size_t i = 0; i < word_of_phone.size(); ++i) {
    const std::size_t w = word_of_phone[i];
    if (w >= labels.word.size()) {
      throw LabelError("phone " + std::to_string(i) + " belongs to word " + std::to_string(w) +
                       " but only " + std::to_string(labels.word.size()) + " words are labelled");
    }
    out.push_back(labels.word[w]);
  }
  return out;
}

BatchTargets make_targets(std::span<const Utterance* const> utterances, const Batch& batch) {
  if (utterances.size() != batch.size) throw ContractError("make_targets: batch size mismatch");
  const std::size_t rows = batch.size * batch.max_len;
  std::vector<double> utt(batch.size * kUtteranceAspects), phone(rows, 0.0),
      word(rows * kWordAspects, 0.0);
  for (std::size_t b = 0; b < batch.size; ++b) {
    const auto& u = *utterances[b];
    if (u.labels.phone.size() != u.gop.length()) {
      throw LabelError("utterance " + u.id + ": phone label count does not match its phones");
    }
    for (std::size_t k = 0; k < kUtteranceAspects; ++k) utt[b * kUtteranceAspects + k] = u.labels.utterance[k];
    const auto words = propagate_word_scores(u.labels, u.gop.word_of_phone);
    for (std::size_t t = 0; t < u.gop.length(); ++t) {
      const std::size_t r = b * batch.max_len + t;
      phone[r] = u.labels.phone[t];
      for (std::size_t k = 0; k < kWordAspects; ++k) word[r * kWordAspects + k] = words[t][k];
    }
  }
  return BatchTargets{Tensor::from({batch.size, kUtteranceAspects}, std::move(utt)),
                      Tensor::from({rows, 1}, std::move(phone)),
                      Tensor::from({rows, kWordAspects}, std::move(word)), batch.mask};
}

LossBreakdown multitask_loss(Tape& tape, const BatchOutput& out, const BatchTargets& targets,
                             const TaskSet& tasks) {
  if (!tasks.phoneme && !tasks.word && !tasks.utterance) throw ContractError("multitask_loss: no task enabled");
  bool any_real = false;
  for (auto m : targets.mask) any_real = any_real || m != 0;
  if (!any_real) throw ContractError("multitask_loss: batch has no real phone positions");

  Tensor utt_diff = sub(tape, out.utterance, targets.utterance);
  Tensor utt = mean(tape, column_mean(tape, mul(tape, utt_diff, utt_diff)));
  Tensor word_diff = sub(tape, out.word, targets.word);
  Tensor word = mean(tape, column_mean(tape, mul(tape, word_diff, word_diff), targets.mask));
  Tensor phone_diff = sub(tape, out.phone, targets.phone);
  Tensor phone = mean(tape, mul(tape, phone_diff, phone_diff), targets.mask);

  LossBreakdown loss;
  loss.utterance = utt.item();
  loss.word = word.item();
  loss.phoneme = phone.item();
  Tensor total;
  for (auto [on, part] : {std::pair{tasks.utterance, &utt}, {tasks.word, &word}, {tasks.phoneme, &phone}}) {
    if (!on) continue;
    total = total.defined() ? add(tape, total, *part) : *part;
  }
  loss.total = total;
  return loss;
}

AdamState make_adam_state(std::span<const ScoringModel::NamedTensor> params, double beta1,
                          double beta2, double eps) {
  AdamState state;
  state.beta1 = beta1;
  state.beta2 = beta2;
  state.eps = eps;
  for (const auto& [name, t] : params) {
    state.first_moment.emplace_back(t.size(), 0.0);
    state.second_moment.emplace_back(t.size(), 0.0);
  }
  return state;
}

void adam_step(std::span<const ScoringModel::NamedTensor> params, AdamState& state, double lr) {
  if (state.first_moment.size() != params.size()) {
    throw ContractError("adam_step: optimizer state does not match the parameter list");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor param = params[p].second;
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    if (m.size() != param.size()) {
      throw ContractError("adam_step: moment shape mismatch for " + params[p].first);
    }
    const std::span<const double> grad =
        param.has_grad() ? std::span<const double>(param.grad()) : std::span<const double>();
    auto value = param.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

std::string log_header() {
  return "#epoch\tlr\tloss\tutt_loss\tword_loss\tphn_loss\tphn_mse\tphn_pcc\tword_acc\tword_stress"
         "\tword_total\tutt_acc\tutt_comp\tutt_flu\tutt_pros\tutt_total";
}

std::string format_log_line(const EpochRecord& r) {
  char buf[512];
  int n = std::snprintf(buf, sizeof(buf), "%zu\t%.8g\t%.8g\t%.8g\t%.8g\t%.8g", r.epoch, r.lr, r.loss,
                        r.utterance_loss, r.word_loss, r.phoneme_loss);
  std::string line(buf, static_cast<std::size_t>(n));
  if (!r.test) {
    for (int i = 0; i < 10; ++i) line += "\t-";
    return line;
  }
  const auto& m = *r.test;
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "\t%.6f", v);
    line += buf;
  };
  put(m.phone_mse);
  put(m.phone_pcc);
  for (double v : m.word_pcc) put(v);
  for (double v : m.utterance_pcc) put(v);
  return line;
}

TrainResult train(ScoringModel model, const Dataset& data, const TrainConfig& cfg,
                  std::uint64_t seed, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.train.empty()) throw ContractError("train: empty training set");
  Rng shuffle_rng(seed ^ 0x9E3779B97F4A7C15ULL);
  Rng dropout_rng(seed ^ 0xD1B54A32D192ED03ULL);
  AdamState adam = make_adam_state(model.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps);

  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result{std::move(model), {}, std::nullopt};
  ScoringModel& net = result.model;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.lr = lr_at_epoch(epoch, cfg);
    shuffle_rng.shuffle(order);
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<BatchItem> items;
      std::vector<const Utterance*> utts;
      for (std::size_t i = begin; i < end; ++i) {
        const Utterance& u = data.train[order[i]];
        items.push_back({&u.gop, u.id});
        utts.push_back(&u);
      }
      const Batch batch = make_batch(items, net.config());
      const BatchTargets targets = make_targets(utts, batch);
      const auto where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index);
      Tape tape;
      LossBreakdown loss;
      try {
        const BatchOutput out = net.forward(tape, batch, &dropout_rng);
        loss = multitask_loss(tape, out, targets, cfg.tasks);
      } catch (const NumericError& e) {
        throw NumericError("non-finite values at " + where + ": " + e.what());
      }
      const double value = loss.total.item();
      if (!std::isfinite(value)) throw NumericError("non-finite loss at " + where);
      net.zero_grad();
      tape.backward(loss.total);
      adam_step(net.parameters(), adam, record.lr);

      const double weight = static_cast<double>(end - begin);
      record.loss += value * weight;
      record.utterance_loss += loss.utterance * weight;
      record.word_loss += loss.word * weight;
      record.phoneme_loss += loss.phoneme * weight;
    }
    const double n = static_cast<double>(order.size());
    record.loss /= n;
    record.utterance_loss /= n;
    record.word_loss /= n;
    record.phoneme_loss /= n;
    const bool last = epoch == cfg.epochs;
    if (!data.test.empty() && (last || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0))) {
      try {
        record.test = evaluate(net, data.test);
      } catch (const NumericError& e) {
        throw NumericError("evaluation after epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    if (last) result.final_metrics = record.test;
    if (on_epoch) on_epoch(record);
    result.log.push_back(std::move(record));
  }
  return result;
}

MultiSeedResult train_multiseed(const ModelConfig& model_cfg, const Dataset& data,
                                const TrainConfig& cfg, std::span<const std::uint64_t> seeds,
                                std::size_t jobs,
                                const std::function<void(std::uint64_t, const EpochRecord&)>& on_epoch) {
  if (seeds.empty()) throw ContractError("train_multiseed: no seeds");
  if (data.test.empty()) throw ContractError("train_multiseed: empty test set");
  std::vector<std::optional<TrainResult>> slots(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::mutex callback_mutex;
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        const std::uint64_t seed = seeds[i];
        EpochCallback cb;
        if (on_epoch) {
          cb = [&, seed](const EpochRecord& r) {
            std::lock_guard lock(callback_mutex);
            on_epoch(seed, r);
          };
        }
        slots[i] = train(ScoringModel::init_parameters(model_cfg, seed), data, cfg, seed, cb);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, seeds.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  MultiSeedResult result;
  std::vector<EvalMetrics> metrics;
  for (auto& slot : slots) {
    metrics.push_back(*slot->final_metrics);
    result.runs.push_back(std::move(*slot));
  }
  result.report = summarize(metrics);
  return result;
}

}  // namespace gopt
