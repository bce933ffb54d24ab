// End-to-end acceptance checks. Prints one PASS/FAIL/SKIP line per
// criterion and exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "gopt/dataio.hpp"
#include "gopt/evaluation.hpp"
#include "gopt/gop.hpp"
#include "gopt/model.hpp"
#include "gopt/random.hpp"
#include "gopt/selftest.hpp"
#include "gopt/synthetic.hpp"
#include "gopt/training.hpp"

using namespace gopt;
namespace fs = std::filesystem;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
  Status status;
  std::string detail;
};

Outcome pass(std::string d) { return {Status::pass, std::move(d)}; }
Outcome fail(std::string d) { return {Status::fail, std::move(d)}; }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// ---- 1: GOP oracle ---------------------------------------------------------

Outcome gop_oracle() {
  Rng rng(2024);
  const std::size_t p = 4, states = 8, frames = 10;
  PhoneInventory inv;
  inv.names = {"a", "b", "c", "d"};
  // Two states per phone, shuffled.
  inv.state_to_phone = {0, 0, 1, 1, 2, 2, 3, 3};
  rng.shuffle(inv.state_to_phone);
  PhonePosteriorgram pg{frames, states, {}};
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> row(states);
    double total = 0.0;
    for (auto& v : row) total += (v = rng.uniform(0.001, 1.0));
    for (double v : row) pg.probs.push_back(v / total);
  }
  Alignment al;
  al.segments = {{rng.below(p), 0, 2, 0}, {rng.below(p), 3, 6, 0}, {rng.below(p), 7, 9, 1}};

  const GopSequence g = extract_utterance(pg, al, inv);
  double worst = 0.0;
  for (std::size_t i = 0; i < al.segments.size(); ++i) {
    const Segment& seg = al.segments[i];
    std::vector<double> lpp(p);
    for (std::size_t j = 0; j < p; ++j) {
      double acc = 0.0;
      for (std::size_t t = seg.start; t <= seg.end; ++t) {
        double post = 0.0;
        for (std::size_t s = 0; s < states; ++s)
          if (inv.state_to_phone[s] == j) post += pg.probs[t * states + s];
        acc += std::log(std::max(post, 1e-10));
      }
      lpp[j] = acc / static_cast<double>(seg.end - seg.start + 1);
    }
    const auto row = g.row(i);
    for (std::size_t j = 0; j < p; ++j) {
      worst = std::max(worst, std::abs(row[j] - lpp[j]));
      worst = std::max(worst, std::abs(row[p + j] - (lpp[j] - lpp[seg.phone])));
    }
  }
  const std::string d = fmt("max |diff| = %.3g over %zu segments x %zu features", worst, g.length(), g.feature_dim());
  return worst <= 1e-12 ? pass(d) : fail(d);
}

// ---- 2: gradients ------------------------------------------------------------

Outcome gradients() {
  std::string d;
  bool ok = true;
  for (Backbone b : {Backbone::gopt, Backbone::lstm}) {
    const ToyProblem toy = make_toy_problem(b, 0);
    const GradCheckResult r = check_model_gradients(toy, 1, 1e-4);
    ok = ok && r.max_rel_error <= 1e-3 && r.checked > 0;
    d += fmt("%s: %zu entries, max rel err %.2e (%s); ", std::string(backbone_name(b)).c_str(), r.checked,
             r.max_rel_error, r.worst.c_str());
  }
  return ok ? pass(d) : fail(d);
}

// ---- 3: loss composition -------------------------------------------------------

Outcome loss_composition() {
  Rng rng(33);
  int mismatches = 0;
  double last_total = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 1 + rng.below(5), t = 1 + rng.below(9);
    std::vector<std::size_t> lengths(b);
    for (auto& l : lengths) l = 1 + rng.below(t);
    lengths[0] = t;
    Mask mask(b * t, 0);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < lengths[i]; ++j) mask[i * t + j] = 1;
    auto rand = [&](std::size_t n) {
      std::vector<double> v(n);
      for (auto& x : v) x = rng.uniform(0.0, 2.0);
      return v;
    };
    const auto up = rand(b * 5), ut = rand(b * 5), wp = rand(b * t * 3), wt = rand(b * t * 3), pp = rand(b * t),
               pt = rand(b * t);
    Tape tape;
    BatchOutput out{Tensor::from({b, 5}, up), Tensor::from({b * t, 1}, pp), Tensor::from({b * t, 3}, wp)};
    BatchTargets tg{Tensor::from({b, 5}, ut), Tensor::from({b * t, 1}, pt), Tensor::from({b * t, 3}, wt), mask};
    const double total = multitask_loss(tape, out, tg).total.item();

    // Documented order: each MSE sums squared errors in row order and
    // divides by its count; aspect means likewise; then (utt + word) + phone.
    double utt_sum = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < b; ++i) {
        const double e = up[i * 5 + k] - ut[i * 5 + k];
        acc += e * e;
      }
      utt_sum += acc / static_cast<double>(b);
    }
    const double utt = utt_sum / 5.0;
    double real = 0.0;
    for (auto m : mask) real += m;
    double word_sum = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      double acc = 0.0;
      for (std::size_t r = 0; r < b * t; ++r) {
        if (!mask[r]) continue;
        const double e = wp[r * 3 + k] - wt[r * 3 + k];
        acc += e * e;
      }
      word_sum += acc / real;
    }
    const double word = word_sum / 3.0;
    double acc = 0.0;
    for (std::size_t r = 0; r < b * t; ++r) {
      if (!mask[r]) continue;
      const double e = pp[r] - pt[r];
      acc += e * e;
    }
    const double phone = acc / real;
    const double expected = (utt + word) + phone;
    if (total != expected) ++mismatches;
    last_total = total;
  }
  const std::string d = fmt("20 random padded batches, %d bitwise mismatches (last total %.17g)", mismatches, last_total);
  return mismatches == 0 ? pass(d) : fail(d);
}

// ---- 4: schedule -------------------------------------------------------------

Outcome schedule() {
  const TrainConfig cfg;
  bool ok = true;
  for (std::size_t e = 1; e <= 24; ++e) ok = ok && lr_at_epoch(e, cfg) == 1e-3;
  ok = ok && lr_at_epoch(25, cfg) == 5e-4;
  ok = ok && lr_at_epoch(30, cfg) == 2.5e-4;
  ok = ok && lr_at_epoch(100, cfg) == 1e-3 * std::pow(2.0, -16);
  const std::string d = fmt("lr(24)=%g lr(25)=%g lr(30)=%g lr(100)=%.6g", lr_at_epoch(24, cfg), lr_at_epoch(25, cfg),
                            lr_at_epoch(30, cfg), lr_at_epoch(100, cfg));
  return ok ? pass(d) : fail(d);
}

// ---- 5 and 10: synthetic training --------------------------------------------

struct SyntheticRun {
  EvalMetrics metrics;
  double first_loss = 0.0;
  double last_loss = 0.0;
  double seconds = 0.0;
};

const SyntheticData& synthetic_data() {
  static const SyntheticData data = [] {
    SyntheticConfig sc;  // 500 / 200 utterances, 6-10 phones, noise 0.05
    return generate_synthetic(sc, 0);
  }();
  return data;
}

SyntheticRun run_synthetic(ModelConfig mc, TrainConfig tc) {
  const auto& data = synthetic_data();
  mc.num_phones = data.dataset.num_phones;
  tc.eval_every = 0;
  const auto start = std::chrono::steady_clock::now();
  TrainResult r = train(ScoringModel::init_parameters(mc, 0), data.dataset, tc, 0);
  SyntheticRun out;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.metrics = *r.final_metrics;
  out.first_loss = r.log.front().loss;
  out.last_loss = r.log.back().loss;
  return out;
}

const SyntheticRun& joint_run() {
  static const SyntheticRun run = run_synthetic(ModelConfig{}, TrainConfig{});
  return run;
}

Outcome learnability() {
  const SyntheticRun& r = joint_run();
  const double phone = r.metrics.phone_pcc, utt = r.metrics.utterance_pcc[4];
  const bool ok = phone >= 0.90 && utt >= 0.80 && r.last_loss < 0.1 * r.first_loss && r.seconds <= 300.0;
  const std::string d = fmt("phoneme PCC %.4f (>= 0.90), utterance-total PCC %.4f (>= 0.80), loss %.4f -> %.4f, %.1f s",
                            phone, utt, r.first_loss, r.last_loss, r.seconds);
  return ok ? pass(d) : fail(d);
}

Outcome ablation_direction() {
  const EvalMetrics joint = joint_run().metrics;
  auto single = [](const char* task) {
    TrainConfig tc;
    tc.tasks = TaskSet::parse(task);
    return run_synthetic(ModelConfig{}, tc).metrics;
  };
  const EvalMetrics phoneme = single("phoneme");
  const EvalMetrics word = single("word");
  const EvalMetrics utterance = single("utterance");
  ModelConfig no_embed;
  no_embed.use_phone_embedding = false;
  const EvalMetrics without = run_synthetic(no_embed, TrainConfig{}).metrics;

  const bool ok = joint.phone_pcc >= phoneme.phone_pcc - 0.02 && joint.word_pcc[2] >= word.word_pcc[2] - 0.02 &&
                  joint.utterance_pcc[4] >= utterance.utterance_pcc[4] - 0.02 &&
                  without.phone_pcc < joint.phone_pcc;
  const std::string d =
      fmt("phoneme joint %.4f vs single %.4f; word-total joint %.4f vs single %.4f; utterance-total joint %.4f vs "
          "single %.4f; phoneme PCC without phone embedding %.4f < joint %.4f",
          joint.phone_pcc, phoneme.phone_pcc, joint.word_pcc[2], word.word_pcc[2], joint.utterance_pcc[4],
          utterance.utterance_pcc[4], without.phone_pcc, joint.phone_pcc);
  return ok ? pass(d) : fail(d);
}

// ---- 6: metric oracles ----------------------------------------------------------

Outcome metric_oracles() {
  Rng rng(6);
  double worst_pcc = 0.0, worst_mse = 0.0, worst_affine = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(200);
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = rng.uniform(-1.0, 3.0);
    for (auto& v : y) v = rng.uniform(-1.0, 3.0);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += x[i] / static_cast<double>(n);
      my += y[i] / static_cast<double>(n);
    }
    double sxy = 0, sxx = 0, syy = 0, se = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
      syy += (y[i] - my) * (y[i] - my);
      se += (x[i] - y[i]) * (x[i] - y[i]);
    }
    const double r = pcc(x, y);
    worst_pcc = std::max(worst_pcc, std::abs(r - sxy / std::sqrt(sxx * syy)));
    worst_mse = std::max(worst_mse, std::abs(mse(x, y) - se / static_cast<double>(n)));
    const double a = rng.uniform(0.1, 20.0), c = rng.uniform(-10.0, 10.0);
    std::vector<double> ax(n);
    for (std::size_t i = 0; i < n; ++i) ax[i] = a * x[i] + c;
    worst_affine = std::max(worst_affine, std::abs(pcc(ax, y) - r));
  }
  const bool ok = worst_pcc <= 1e-12 && worst_mse <= 1e-12 && worst_affine <= 1e-12;
  const std::string d = fmt("100 random vectors: max pcc err %.2e, mse err %.2e, affine drift %.2e", worst_pcc,
                            worst_mse, worst_affine);
  return ok ? pass(d) : fail(d);
}

// ---- 7: padding invariance -----------------------------------------------------

Outcome padding_invariance() {
  std::string d;
  bool ok = true;
  for (Backbone b : {Backbone::gopt, Backbone::lstm}) {
    ModelConfig mc;
    mc.backbone = b;
    mc.num_phones = 42;
    const ScoringModel model = ScoringModel::init_parameters(mc, 7);
    SyntheticConfig sc;
    sc.num_train = 3;
    sc.num_test = 1;
    const SyntheticData data = generate_synthetic(sc, 7);
    double worst = 0.0;
    for (const auto& u : data.dataset.train) {
      const std::vector<BatchItem> items{{&u.gop, u.id}};
      auto run = [&](std::size_t pad_to) {
        Tape tape(Tape::Mode::inference);
        const Batch batch = make_batch(items, mc, pad_to);
        return unpack(model.forward(tape, batch), batch).front();
      };
      const ModelOutput tight = run(0), padded = run(mc.max_phones);
      for (std::size_t k = 0; k < 5; ++k)
        worst = std::max(worst, std::abs(tight.utterance_scores[k] - padded.utterance_scores[k]));
      for (std::size_t i = 0; i < tight.phone_scores.size(); ++i) {
        worst = std::max(worst, std::abs(tight.phone_scores[i] - padded.phone_scores[i]));
        for (std::size_t k = 0; k < 3; ++k)
          worst = std::max(worst, std::abs(tight.word_scores_per_phone[i][k] - padded.word_scores_per_phone[i][k]));
      }
    }
    ok = ok && worst <= 1e-9;
    d += fmt("%s max |diff| %.2e; ", std::string(backbone_name(b)).c_str(), worst);
  }
  return ok ? pass(d) : fail(d);
}

// ---- 8: CLI determinism ----------------------------------------------------------

std::vector<std::string> metric_lines(const fs::path& log) {
  std::ifstream in(log);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (!line.empty() && line[0] != '#') out.push_back(line);
  return out;
}

Outcome cli_determinism() {
  const fs::path dir = fs::temp_directory_path() / ("gopt-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  SyntheticConfig sc;
  sc.num_train = 40;
  sc.num_test = 20;
  sc.num_phones = 10;
  write_synthetic(generate_synthetic(sc, 8), dir / "data");
  const std::string cli = GOPT_CLI_PATH;
  auto run = [&](const char* name) {
    const std::string cmd = "\"" + cli + "\" train --manifest \"" + (dir / "data" / "manifest.jsonl").string() +
                            "\" --seeds 3 --set epochs=6 --set embed_dim=12 --set num_layers=1 --print-every 0 --out \"" +
                            (dir / name).string() + "\" > /dev/null 2>&1";
    return std::system(cmd.c_str());
  };
  const int a = run("a"), b = run("b");
  const auto la = metric_lines(dir / "a" / "seed_3" / "train.log");
  const auto lb = metric_lines(dir / "b" / "seed_3" / "train.log");
  fs::remove_all(dir);
  const bool ok = a == 0 && b == 0 && la.size() == 6 && la == lb;
  const std::string d = fmt("exit codes %d/%d, %zu vs %zu log lines, identical: %s", a, b, la.size(), lb.size(),
                            la == lb ? "yes" : "no");
  return ok ? pass(d) : fail(d);
}

// ---- 9: full reproduction ----------------------------------------------------------

Outcome full_reproduction() {
  const char* manifest_path = std::getenv("GOPT_SO762_MANIFEST");
  if (manifest_path == nullptr || *manifest_path == '\0') {
    return {Status::skip, "set GOPT_SO762_MANIFEST (and GOPT_SO762_INVENTORY / GOPT_SO762_STATE_MAP for raw inputs) "
                          "to run on speechocean762"};
  }
  const Manifest manifest = load_manifest(manifest_path);
  std::optional<PhoneInventory> inv;
  if (const char* phones = std::getenv("GOPT_SO762_INVENTORY"); phones != nullptr && *phones != '\0') {
    std::optional<fs::path> map;
    if (const char* m = std::getenv("GOPT_SO762_STATE_MAP"); m != nullptr && *m != '\0') map = m;
    inv = load_inventory(phones, map);
  }
  std::string warn;
  for (const auto& w : check_official_counts(manifest)) warn += " [" + w + "]";
  const Dataset data = load_dataset(manifest, inv ? &*inv : nullptr);
  ModelConfig mc;
  mc.num_phones = data.num_phones;
  TrainConfig tc;
  tc.eval_every = 0;
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  const MultiSeedResult r = train_multiseed(mc, data, tc, seeds);
  const double phone_pcc = r.report.find("phoneme", "pcc").mean;
  const double phone_mse = r.report.find("phoneme", "mse").mean;
  const double word_total = r.report.find("word_total", "pcc").mean;
  const double utt_total = r.report.find("utt_total", "pcc").mean;
  const bool ok = std::abs(phone_pcc - 0.612) <= 0.02 && std::abs(phone_mse - 0.085) <= 0.005 &&
                  std::abs(word_total - 0.549) <= 0.03 && std::abs(utt_total - 0.742) <= 0.03;
  const std::string d = fmt("phoneme PCC %.3f, MSE %.3f, word total %.3f, utterance total %.3f", phone_pcc,
                            phone_mse, word_total, utt_total) + warn;
  return ok ? pass(d) : fail(d);
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"1 GOP oracle equivalence", gop_oracle},
      {"2 gradient correctness", gradients},
      {"3 loss composition", loss_composition},
      {"4 learning-rate schedule", schedule},
      {"5 synthetic learnability", learnability},
      {"6 metric oracles", metric_oracles},
      {"7 padding invariance", padding_invariance},
      {"8 CLI determinism", cli_determinism},
      {"9 speechocean762 reproduction", full_reproduction},
      {"10 ablation direction", ablation_direction},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
    if (o.status == Status::fail) ++failures;
    std::printf("%s  %s: %s\n", tag, name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
