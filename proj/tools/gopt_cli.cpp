// gopt: GOP feature extraction, training, evaluation, and ablation driver.

#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gopt/config.hpp"
#include "gopt/dataio.hpp"
#include "gopt/error.hpp"
#include "gopt/evaluation.hpp"
#include "gopt/gop.hpp"
#include "gopt/model.hpp"
#include "gopt/selftest.hpp"
#include "gopt/synthetic.hpp"
#include "gopt/training.hpp"

namespace fs = std::filesystem;
using namespace gopt;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct CommonRunArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string seeds;
  std::size_t jobs = 0;
  std::string manifest;
  std::string out;
  std::string inventory;
  std::string state_map;
};

void add_run_args(CLI::App* cmd, CommonRunArgs& a) {
  cmd->add_option("--manifest", a.manifest, "Dataset manifest (JSON lines)");
  cmd->add_option("--config", a.config, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seeds", a.seeds, "Comma-separated seed list");
  cmd->add_option("--jobs", a.jobs, "Seeds trained concurrently");
  cmd->add_option("--inventory", a.inventory, "Phone list, needed when the manifest points at raw posteriorgrams");
  cmd->add_option("--state-map", a.state_map, "State-to-phone map (default: one state per phone)");
  cmd->add_option("--set", a.overrides, "Override a config key (key=value), repeatable");
}

// Config file first, then explicit flags.
RunConfig resolve(const CommonRunArgs& a) {
  RunConfig rc;
  if (!a.config.empty()) rc.load_file(a.config);
  for (const auto& kv : a.overrides) rc.apply(kv);
  if (!a.seeds.empty()) rc.set("seeds", a.seeds);
  if (a.jobs != 0) rc.set("jobs", std::to_string(a.jobs));
  if (!a.manifest.empty()) rc.set("manifest", a.manifest);
  if (!a.out.empty()) rc.set("out", a.out);
  if (!a.inventory.empty()) rc.set("inventory", a.inventory);
  if (!a.state_map.empty()) rc.set("state_map", a.state_map);
  if (rc.manifest.empty()) throw ConfigError("no manifest given (--manifest or manifest= in the config)");
  return rc;
}

std::optional<PhoneInventory> load_inventory_for(const RunConfig& rc) {
  if (rc.inventory.empty()) {
    if (!rc.state_map.empty()) throw ConfigError("state_map given without inventory");
    return std::nullopt;
  }
  std::optional<fs::path> map;
  if (!rc.state_map.empty()) map = rc.state_map;
  return load_inventory(rc.inventory, map);
}

struct LoadedData {
  Manifest manifest;
  Dataset dataset;
};

LoadedData load_data(const RunConfig& rc, bool expect_official) {
  LoadedData d;
  d.manifest = load_manifest(rc.manifest);
  const auto inv = load_inventory_for(rc);
  d.dataset = load_dataset(d.manifest, inv ? &*inv : nullptr);
  for (Split s : {Split::train, Split::test}) {
    const SplitCounts c = count_split(d.manifest, s);
    std::printf("%s: %zu utterances / %zu words / %zu phones\n", s == Split::train ? "train" : "test",
                c.utterances, c.words, c.phones);
  }
  if (expect_official) {
    for (const auto& w : check_official_counts(d.manifest)) std::fprintf(stderr, "warning: %s\n", w.c_str());
  }
  return d;
}

// The phone inventory size comes from the data unless pinned in the config.
void bind_phone_count(RunConfig& rc, const Dataset& ds) {
  if (rc.was_set("num_phones") && rc.model.num_phones != ds.num_phones) {
    throw ConfigError("num_phones = " + std::to_string(rc.model.num_phones) + " but the data has " +
                      std::to_string(ds.num_phones) + " phones");
  }
  rc.model.num_phones = ds.num_phones;
  rc.model.validate();
  rc.train.validate();
}

void echo_config(const RunConfig& rc) {
  std::printf("# resolved configuration\n");
  std::istringstream lines(rc.echo());
  for (std::string line; std::getline(lines, line);) std::printf("#   %s\n", line.c_str());
  std::fflush(stdout);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

MultiSeedResult run_seeds(const RunConfig& rc, const Dataset& ds, const std::string& label,
                          std::size_t print_every) {
  return train_multiseed(rc.model, ds, rc.train, rc.seeds, rc.jobs,
                         [&](std::uint64_t seed, const EpochRecord& r) {
                           if (print_every == 0) return;
                           if (r.epoch % print_every != 0 && r.epoch != rc.train.epochs) return;
                           std::printf("[%s seed %llu] epoch %zu lr %.3g loss %.5f", label.c_str(),
                                       static_cast<unsigned long long>(seed), r.epoch, r.lr, r.loss);
                           if (r.test) {
                             std::printf(" | phn pcc %.3f utt tot pcc %.3f", r.test->phone_pcc,
                                         r.test->utterance_pcc[4]);
                           }
                           std::printf("\n");
                           std::fflush(stdout);
                         });
}

int cmd_synth(const fs::path& out, std::uint64_t seed, const SyntheticConfig& sc) {
  const SyntheticData data = generate_synthetic(sc, seed);
  write_synthetic(data, out);
  std::printf("wrote %zu train / %zu test utterances (%zu phones) to %s\n", data.dataset.train.size(),
              data.dataset.test.size(), data.inventory.num_phones(), out.string().c_str());
  return kOk;
}

int cmd_extract_gop(const fs::path& posteriors, const fs::path& alignments, const fs::path& inventory,
                    const std::string& state_map, const fs::path& out) {
  std::optional<fs::path> map;
  if (!state_map.empty()) map = state_map;
  const PhoneInventory inv = load_inventory(inventory, map);
  if (!fs::is_directory(posteriors)) throw DataError("not a directory: " + posteriors.string());
  std::vector<fs::path> posts;
  for (const auto& entry : fs::directory_iterator(posteriors)) {
    if (entry.is_regular_file() && entry.path().extension() == ".post") posts.push_back(entry.path());
  }
  std::sort(posts.begin(), posts.end());
  fs::create_directories(out);
  std::size_t phones = 0;
  for (const auto& post : posts) {
    const std::string id = post.stem().string();
    const fs::path ali = alignments / (id + ".ali");
    if (!fs::exists(ali)) throw AlignmentError("utterance " + id + ": missing alignment " + ali.string());
    GopSequence seq;
    try {
      seq = extract_utterance(load_posteriorgram(post), load_alignment(ali), inv);
    } catch (const DataError& e) {
      throw DataError("utterance " + id + ": " + e.what());
    }
    write_feature_file(out / (id + ".gopf"), seq);
    phones += seq.length();
  }
  std::printf("extracted %zu utterances, %zu phones, feature dim %zu\n", posts.size(), phones,
              2 * inv.num_phones());
  return kOk;
}

int cmd_train(const CommonRunArgs& args, bool expect_official, std::size_t print_every) {
  RunConfig rc = resolve(args);
  if (rc.out.empty()) throw ConfigError("no output directory given (--out or out= in the config)");
  const LoadedData data = load_data(rc, expect_official);
  bind_phone_count(rc, data.dataset);
  echo_config(rc);

  const fs::path out = rc.out;
  fs::create_directories(out);
  write_text(out / "config.txt", rc.echo());
  const MultiSeedResult result = run_seeds(rc, data.dataset, "train", print_every);
  std::string config_comment;
  {
    std::istringstream lines(rc.echo());
    for (std::string line; std::getline(lines, line);) config_comment += "# " + line + "\n";
  }
  for (std::size_t i = 0; i < rc.seeds.size(); ++i) {
    const fs::path dir = out / ("seed_" + std::to_string(rc.seeds[i]));
    fs::create_directories(dir);
    const auto& run = result.runs[i];
    run.model.save(dir / "model.ckpt");
    std::string log = config_comment + "# seed = " + std::to_string(rc.seeds[i]) + "\n" + log_header() + "\n";
    for (const auto& r : run.log) log += format_log_line(r) + "\n";
    write_text(dir / "train.log", log);
  }
  const std::string table = format_table(result.report, std::string(backbone_name(rc.model.backbone)));
  write_text(out / "report.txt", table);
  write_text(out / "report.csv", format_csv(result.report));
  std::printf("\n%s", table.c_str());
  return kOk;
}

int cmd_eval(const std::string& manifest_path, const fs::path& checkpoint, const std::string& inventory,
             const std::string& state_map, const std::string& split) {
  RunConfig rc;
  rc.manifest = manifest_path;
  rc.inventory = inventory;
  rc.state_map = state_map;
  const ScoringModel model = ScoringModel::load(checkpoint);
  const LoadedData data = load_data(rc, false);
  std::vector<Utterance> subset;
  if (split == "test" || split == "all") subset.insert(subset.end(), data.dataset.test.begin(), data.dataset.test.end());
  if (split == "train" || split == "all") subset.insert(subset.end(), data.dataset.train.begin(), data.dataset.train.end());
  if (subset.empty()) throw DataError("no utterances in the '" + split + "' split");
  const EvalMetrics m = evaluate(model, subset);
  const EvalReport report = summarize(std::span<const EvalMetrics>(&m, 1));
  std::printf("%s", format_table(report, checkpoint.filename().string()).c_str());
  return kOk;
}

int cmd_predict(const fs::path& checkpoint, const fs::path& features, const std::string& inventory,
                const std::string& state_map) {
  const ScoringModel model = ScoringModel::load(checkpoint);
  Utterance u;
  u.id = features.stem().string();
  u.gop = read_feature_file(features);
  std::optional<PhoneInventory> inv;
  if (!inventory.empty()) {
    std::optional<fs::path> map;
    if (!state_map.empty()) map = state_map;
    inv = load_inventory(inventory, map);
    if (inv->num_phones() != u.gop.num_phones) {
      throw DataError("inventory has " + std::to_string(inv->num_phones()) + " phones, features have " +
                      std::to_string(u.gop.num_phones));
    }
  }
  if (u.gop.num_phones != model.config().num_phones) {
    throw DataError("checkpoint expects " + std::to_string(model.config().num_phones) +
                    " phones, features have " + std::to_string(u.gop.num_phones));
  }
  const auto out = predict(model, std::span<const Utterance>(&u, 1)).front();
  const auto words = aggregate_word_predictions(out.word_scores_per_phone, u.gop.word_of_phone);

  std::printf("# utterance %s (scores on 0-2)\n", u.id.c_str());
  static constexpr const char* kUtt[] = {"accuracy", "completeness", "fluency", "prosodic", "total"};
  for (std::size_t k = 0; k < kUtteranceAspects; ++k) std::printf("utt\t%s\t%.4f\n", kUtt[k], out.utterance_scores[k]);
  std::printf("# word\taccuracy\tstress\ttotal\n");
  for (std::size_t w = 0; w < words.size(); ++w) {
    std::printf("word\t%zu\t%.4f\t%.4f\t%.4f\n", w, words[w][0], words[w][1], words[w][2]);
  }
  std::printf("# phone\tsymbol\tword\taccuracy\n");
  for (std::size_t i = 0; i < u.gop.length(); ++i) {
    const std::uint32_t p = u.gop.canonical_phones[i];
    const std::string symbol = inv ? inv->names[p] : std::to_string(p);
    std::printf("phone\t%zu\t%s\t%u\t%.4f\n", i, symbol.c_str(), u.gop.word_of_phone[i], out.phone_scores[i]);
  }
  return kOk;
}

// "task=phoneme,word;phn_embed=off;layers=6;dim=12,48"
std::map<std::string, std::vector<std::string>> parse_grid(const std::string& text) {
  std::map<std::string, std::vector<std::string>> grid;
  std::istringstream factors(text);
  for (std::string factor; std::getline(factors, factor, ';');) {
    if (factor.empty()) continue;
    const auto eq = factor.find('=');
    if (eq == std::string::npos) throw ConfigError("grid factor '" + factor + "' is not name=v1,v2,...");
    const std::string name = factor.substr(0, eq);
    if (name != "task" && name != "phn_embed" && name != "layers" && name != "dim") {
      throw ConfigError("unknown grid factor '" + name + "' (expected task, phn_embed, layers, dim)");
    }
    std::istringstream values(factor.substr(eq + 1));
    for (std::string v; std::getline(values, v, ',');) {
      if (!v.empty()) grid[name].push_back(v);
    }
  }
  return grid;
}

int cmd_ablate(const CommonRunArgs& args, const std::string& grid_text, std::size_t print_every) {
  RunConfig base = resolve(args);
  const LoadedData data = load_data(base, false);
  bind_phone_count(base, data.dataset);
  echo_config(base);
  const auto grid = parse_grid(grid_text);

  struct Variant {
    std::string label;
    RunConfig rc;
  };
  std::vector<Variant> variants{{"Joint (base)", base}};
  auto add = [&](const std::string& label, RunConfig rc) {
    rc.model.validate();
    rc.train.validate();
    variants.push_back({label, std::move(rc)});
  };
  static const std::map<std::string, std::string> kTaskLabel{
      {"phoneme", "Phoneme only"}, {"word", "Word only"}, {"utterance", "Utterance only"}, {"joint", "Joint"}};
  if (auto it = grid.find("task"); it != grid.end()) {
    for (const auto& v : it->second) {
      RunConfig rc = base;
      rc.set("task", v);
      if (rc.train.tasks == base.train.tasks) continue;
      add(kTaskLabel.at(v), rc);
    }
  }
  if (auto it = grid.find("phn_embed"); it != grid.end()) {
    for (const auto& v : it->second) {
      RunConfig rc = base;
      rc.set("phone_embedding", v);
      if (rc.model.use_phone_embedding == base.model.use_phone_embedding) continue;
      add(rc.model.use_phone_embedding ? "w/ Phn Embed" : "w/o Phn Embed", rc);
    }
  }
  if (auto it = grid.find("layers"); it != grid.end()) {
    for (const auto& v : it->second) {
      RunConfig rc = base;
      rc.set("num_layers", v);
      if (rc.model.num_layers == base.model.num_layers) continue;
      add(v + " layers", rc);
    }
  }
  if (auto it = grid.find("dim"); it != grid.end()) {
    for (const auto& v : it->second) {
      RunConfig rc = base;
      rc.set("embed_dim", v);
      if (rc.model.embed_dim == base.model.embed_dim) continue;
      add("dim " + v, rc);
    }
  }

  std::vector<LabeledReport> rows;
  std::string csv = "variant,task,metric,mean,std,n\n";
  for (const auto& v : variants) {
    std::printf("## %s: task=%s phone_embedding=%s layers=%zu dim=%zu ffn=%zu\n", v.label.c_str(),
                v.rc.train.tasks.name().c_str(), v.rc.model.use_phone_embedding ? "on" : "off",
                v.rc.model.num_layers, v.rc.model.embed_dim, v.rc.model.ffn_dim);
    std::fflush(stdout);
    const MultiSeedResult r = run_seeds(v.rc, data.dataset, v.label, print_every);
    rows.push_back({v.label, r.report});
    std::istringstream lines(format_csv(r.report));
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) csv += "\"" + v.label + "\"," + line + "\n";
  }
  const std::string table = format_table(rows);
  std::printf("\n%s", table.c_str());
  if (!base.out.empty()) {
    fs::create_directories(base.out);
    write_text(fs::path(base.out) / "ablation.txt", table);
    write_text(fs::path(base.out) / "ablation.csv", csv);
  }
  return kOk;
}

int cmd_selftest(std::uint64_t seed) {
  bool numeric_failure = false, other_failure = false;
  for (const auto& r : run_selftest(seed)) {
    std::printf("%-24s %s%s%s\n", r.name.c_str(), r.passed ? "ok" : "FAILED", r.detail.empty() ? "" : ": ",
                r.detail.c_str());
    if (!r.passed) (r.numeric ? numeric_failure : other_failure) = true;
  }
  if (numeric_failure) return kNumeric;
  if (other_failure) return kData;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GOP feature extraction and GOPT pronunciation scoring"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset with a planted scoring rule");
  std::string synth_out;
  std::uint64_t synth_seed = 0;
  SyntheticConfig sc;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--train", sc.num_train, "Training utterances");
  synth->add_option("--test", sc.num_test, "Test utterances");
  synth->add_option("--phones", sc.num_phones, "Phone inventory size");
  synth->add_option("--noise", sc.noise, "Label noise standard deviation");

  // extract-gop
  auto* extract = app.add_subcommand("extract-gop", "Compute GOP feature files from posteriorgrams and alignments");
  std::string ex_post, ex_ali, ex_inv, ex_map, ex_out;
  extract->add_option("--posteriors", ex_post, "Directory of <id>.post files")->required();
  extract->add_option("--alignments", ex_ali, "Directory of <id>.ali files")->required();
  extract->add_option("--inventory", ex_inv, "Phone list")->required()->check(CLI::ExistingFile);
  extract->add_option("--state-map", ex_map, "State-to-phone map")->check(CLI::ExistingFile);
  extract->add_option("--out", ex_out, "Output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model per seed and report test metrics");
  CommonRunArgs train_args;
  bool expect_official = false;
  std::size_t print_every = 10;
  add_run_args(train_cmd, train_args);
  train_cmd->add_option("--out", train_args.out, "Output directory");
  train_cmd->add_flag("--expect-official", expect_official, "Warn unless split counts match speechocean762");
  train_cmd->add_option("--print-every", print_every, "Progress line every N epochs (0 = quiet)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
  std::string ev_manifest, ev_ckpt, ev_inv, ev_map, ev_split = "test";
  eval_cmd->add_option("--manifest", ev_manifest, "Dataset manifest")->required();
  eval_cmd->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--inventory", ev_inv, "Phone list for raw-posteriorgram manifests");
  eval_cmd->add_option("--state-map", ev_map, "State-to-phone map");
  eval_cmd->add_option("--split", ev_split, "test, train, or all")->check(CLI::IsMember({"test", "train", "all"}));

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Score one utterance's feature file");
  std::string pr_ckpt, pr_feat, pr_inv, pr_map;
  predict_cmd->add_option("--checkpoint", pr_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--features", pr_feat, "GOP feature file")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--inventory", pr_inv, "Phone list, for symbol names");
  predict_cmd->add_option("--state-map", pr_map, "State-to-phone map");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "Vary one factor at a time from the base config");
  CommonRunArgs ablate_args;
  std::string grid = "task=phoneme,word,utterance,joint;phn_embed=on,off;layers=3,6;dim=12,24,48,96";
  std::size_t ablate_print_every = 0;
  add_run_args(ablate_cmd, ablate_args);
  ablate_cmd->add_option("--grid", grid, "factor=v1,v2;... over task, phn_embed, layers, dim");
  ablate_cmd->add_option("--out", ablate_args.out, "Directory for ablation.txt/.csv");
  ablate_cmd->add_option("--print-every", ablate_print_every, "Progress line every N epochs (0 = quiet)");

  // selftest
  auto* selftest_cmd = app.add_subcommand("selftest", "Gradient checks and file-format round trips");
  std::uint64_t selftest_seed = 0;
  selftest_cmd->add_option("--seed", selftest_seed, "Seed for the toy problems");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_out, synth_seed, sc);
    if (*extract) return cmd_extract_gop(ex_post, ex_ali, ex_inv, ex_map, ex_out);
    if (*train_cmd) return cmd_train(train_args, expect_official, print_every);
    if (*eval_cmd) return cmd_eval(ev_manifest, ev_ckpt, ev_inv, ev_map, ev_split);
    if (*predict_cmd) return cmd_predict(pr_ckpt, pr_feat, pr_inv, pr_map);
    if (*ablate_cmd) return cmd_ablate(ablate_args, grid, ablate_print_every);
    if (*selftest_cmd) return cmd_selftest(selftest_seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const Error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
