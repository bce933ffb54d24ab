#include "gopt/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>

#include "gopt/dataio.hpp"
#include "gopt/error.hpp"
#include "gopt/random.hpp"
#include "gopt/synthetic.hpp"
#include "gopt/training.hpp"

namespace gopt {

namespace fs = std::filesystem;

ToyProblem make_toy_problem(Backbone backbone, std::uint64_t seed) {
  ToyProblem toy;
  toy.config.backbone = backbone;
  toy.config.num_phones = 6;
  toy.config.embed_dim = 8;
  toy.config.num_layers = 1;
  toy.config.num_heads = 1;
  toy.config.ffn_dim = 16;
  toy.config.max_phones = 6;

  Rng rng(seed);
  const std::size_t p = toy.config.num_phones;
  for (std::size_t len : {std::size_t{6}, std::size_t{4}}) {
    Utterance u;
    u.id = "toy" + std::to_string(toy.utterances.size());
    u.gop.num_phones = p;
    std::uint32_t word = 0;
    for (std::size_t i = 0; i < len; ++i) {
      const auto canonical = static_cast<std::uint32_t>(rng.below(p));
      std::vector<double> lpp(p);
      for (auto& v : lpp) v = rng.uniform(-8.0, -0.05);
      for (double v : lpp) u.gop.features.push_back(v);
      for (std::size_t j = 0; j < p; ++j) u.gop.features.push_back(j == canonical ? 0.0 : lpp[j] - lpp[canonical]);
      u.gop.canonical_phones.push_back(canonical);
      if (i > 0 && rng.below(2) == 0) ++word;
      u.gop.word_of_phone.push_back(word);
      u.labels.phone.push_back(rng.uniform(0.0, 2.0));
    }
    for (std::uint32_t w = 0; w <= word; ++w) {
      u.labels.word.push_back({rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)});
    }
    for (auto& v : u.labels.utterance) v = rng.uniform(0.0, 2.0);
    toy.utterances.push_back(std::move(u));
  }
  return toy;
}

GradCheckResult check_model_gradients(const ToyProblem& toy, std::uint64_t init_seed, double step) {
  const ScoringModel model = ScoringModel::init_parameters(toy.config, init_seed);
  std::vector<BatchItem> items;
  std::vector<const Utterance*> utts;
  for (const auto& u : toy.utterances) {
    items.push_back({&u.gop, u.id});
    utts.push_back(&u);
  }
  const Batch batch = make_batch(items, toy.config);
  const BatchTargets targets = make_targets(utts, batch);
  auto loss_fn = [&](Tape& tape) {
    return multitask_loss(tape, model.forward(tape, batch), targets).total;
  };
  return gradient_check(model.parameters(), loss_fn, step);
}

namespace {

template <typename Fn>
SelfTestResult run_check(std::string name, Fn&& fn) {
  SelfTestResult r;
  r.name = std::move(name);
  try {
    r.detail = fn(r);
    if (r.detail.empty()) r.passed = true;
  } catch (const std::exception& e) {
    r.detail = e.what();
    r.numeric = dynamic_cast<const NumericError*>(&e) != nullptr;
  }
  return r;
}

}  // namespace

std::vector<SelfTestResult> run_selftest(std::uint64_t seed) {
  std::vector<SelfTestResult> results;

  for (Backbone b : {Backbone::gopt, Backbone::lstm}) {
    results.push_back(run_check("gradients/" + std::string(backbone_name(b)), [&](SelfTestResult& r) {
      r.numeric = true;
      const auto check = check_model_gradients(make_toy_problem(b, seed), seed + 1);
      char buf[160];
      if (check.max_rel_error > kGradTolerance || !std::isfinite(check.max_rel_error)) {
        std::snprintf(buf, sizeof(buf), "max relative error %.3g at %s (%zu entries)", check.max_rel_error,
                      check.worst.c_str(), check.checked);
        return std::string(buf);
      }
      return std::string();
    }));
  }

  SyntheticConfig sc;
  sc.num_train = 3;
  sc.num_test = 2;
  sc.num_phones = 6;
  const SyntheticData synth = generate_synthetic(sc, seed);
  const Utterance& u = synth.dataset.train.front();

  results.push_back(run_check("format/feature-file", [&](SelfTestResult&) {
    const auto bytes = encode_feature_file(u.gop);
    if (!(decode_feature_file(bytes) == u.gop)) return std::string("decoded sequence differs");
    if (encode_feature_file(decode_feature_file(bytes)) != bytes) return std::string("re-encoded bytes differ");
    return std::string();
  }));

  results.push_back(run_check("format/posteriorgram", [&](SelfTestResult&) {
    const auto& pg = synth.posteriorgrams.front();
    const auto back = decode_posteriorgram(encode_posteriorgram(pg));
    if (back.frames != pg.frames || back.states != pg.states || back.probs != pg.probs) {
      return std::string("decoded posteriorgram differs");
    }
    return std::string();
  }));

  results.push_back(run_check("format/checkpoint", [&](SelfTestResult&) {
    for (Backbone b : {Backbone::gopt, Backbone::lstm}) {
      ModelConfig cfg;
      cfg.backbone = b;
      cfg.num_phones = 6;
      cfg.embed_dim = 8;
      cfg.num_layers = 1;
      const auto bytes = ScoringModel::init_parameters(cfg, seed).serialize();
      if (ScoringModel::deserialize(bytes).serialize() != bytes) {
        return "checkpoint round trip differs for " + std::string(backbone_name(b));
      }
    }
    return std::string();
  }));

  results.push_back(run_check("format/manifest", [&](SelfTestResult&) {
    const ManifestEntry entry = manifest_entry(u, "feats/x.gopf");
    const std::string line = format_manifest_line(entry);
    const Manifest parsed = parse_manifest(line + "\n", ".");
    if (parsed.entries.size() != 1 || format_manifest_line(parsed.entries.front()) != line) {
      return std::string("manifest line does not round-trip");
    }
    return std::string();
  }));

  results.push_back(run_check("format/text-files", [&](SelfTestResult&) {
    const fs::path dir = fs::temp_directory_path() /
                         ("gopt-selftest-" + std::to_string(Rng(seed ^ 0x5E1F).next_u64()));
    fs::create_directories(dir);
    std::string problem;
    try {
      const auto& al = synth.alignments.front();
      write_alignment(dir / "a.ali", al);
      const Alignment back = load_alignment(dir / "a.ali");
      bool same = back.segments.size() == al.segments.size();
      for (std::size_t i = 0; same && i < al.segments.size(); ++i) {
        const auto &x = al.segments[i], &y = back.segments[i];
        same = x.phone == y.phone && x.start == y.start && x.end == y.end && x.word == y.word;
      }
      if (!same) problem = "alignment does not round-trip";
      write_inventory(dir / "phones.txt", dir / "states.txt", synth.inventory);
      const PhoneInventory inv = load_inventory(dir / "phones.txt", dir / "states.txt");
      if (inv.names != synth.inventory.names || inv.state_to_phone != synth.inventory.state_to_phone) {
        problem = "inventory does not round-trip";
      }
    } catch (...) {
      fs::remove_all(dir);
      throw;
    }
    fs::remove_all(dir);
    return problem;
  }));

  results.push_back(run_check("gop/extraction", [&](SelfTestResult& r) {
    r.numeric = true;
    const GopSequence again =
        extract_utterance(synth.posteriorgrams.front(), synth.alignments.front(), synth.inventory);
    if (!(again == u.gop)) return std::string("re-extracted features differ");
    return std::string();
  }));

  return results;
}

}  // namespace gopt
