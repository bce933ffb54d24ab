#include "gopt/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "gopt/error.hpp"
#include "gopt/random.hpp"

namespace gopt {

namespace fs = std::filesystem;

double PlantedRule::phone_score(std::span<const double> gop, std::size_t canonical) const {
  double s = phone_offset.at(canonical);
  for (std::size_t j = 0; j < weights.size(); ++j) s += weights[j] * gop[j];
  return s;
}

namespace {

double clip2(double v) { return std::clamp(v, 0.0, 2.0); }

std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

struct RawUtterance {
  PhonePosteriorgram pg;
  Alignment al;
};

RawUtterance make_raw(const SyntheticConfig& cfg, const PhoneInventory& inv, Rng& rng) {
  const std::size_t p = cfg.num_phones;
  const std::size_t spp = cfg.states_per_phone;
  const double speaker = rng.uniform(0.15, 0.95);
  const std::size_t n = between(rng, cfg.min_phones, cfg.max_phones);

  RawUtterance raw;
  std::size_t frame = 0, word = 0, left_in_word = between(rng, 1, 4);
  for (std::size_t i = 0; i < n; ++i) {
    if (left_in_word == 0) {
      ++word;
      left_in_word = between(rng, 1, 4);
    }
    --left_in_word;
    const std::size_t len = between(rng, cfg.min_frames, cfg.max_frames);
    raw.al.segments.push_back({rng.below(p), frame, frame + len - 1, word});
    frame += len;
  }
  raw.pg.frames = frame;
  raw.pg.states = inv.num_states();
  raw.pg.probs.assign(raw.pg.frames * raw.pg.states, 0.0);

  std::vector<double> phone_mass(p);
  std::vector<double> spread(p);
  for (const auto& seg : raw.al.segments) {
    const double quality = std::clamp(speaker + rng.normal(0.0, 0.15), 0.02, 0.98);
    std::size_t confusable = rng.below(p - 1);
    if (confusable >= seg.phone) ++confusable;
    for (std::size_t t = seg.start; t <= seg.end; ++t) {
      const double canonical_mass = std::clamp(quality + rng.normal(0.0, 0.05), 0.01, 0.99);
      const double rest = 1.0 - canonical_mass;
      const double confusion_share = rng.uniform(0.3, 0.8);
      double spread_total = 0.0;
      for (std::size_t j = 0; j < p; ++j) {
        spread[j] = (j == seg.phone || j == confusable) ? 0.0 : rng.uniform(0.1, 1.0);
        spread_total += spread[j];
      }
      for (std::size_t j = 0; j < p; ++j) {
        phone_mass[j] = spread_total > 0.0 ? rest * (1.0 - confusion_share) * spread[j] / spread_total : 0.0;
      }
      phone_mass[seg.phone] = canonical_mass;
      phone_mass[confusable] = spread_total > 0.0 ? rest * confusion_share : rest;
      // Split each phone's mass over its states.
      for (std::size_t j = 0; j < p; ++j) {
        std::array<double, 8> w{};
        double wt = 0.0;
        for (std::size_t s = 0; s < spp; ++s) {
          w[s] = rng.uniform(0.2, 1.0);
          wt += w[s];
        }
        for (std::size_t s = 0; s < spp; ++s) {
          raw.pg.probs[t * raw.pg.states + j * spp + s] = phone_mass[j] * w[s] / wt;
        }
      }
    }
  }
  return raw;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  if (cfg.num_phones < 2) throw ConfigError("synthetic data needs at least 2 phones");
  if (cfg.states_per_phone == 0 || cfg.states_per_phone > 8) {
    throw ConfigError("states_per_phone must lie in [1, 8]");
  }
  if (cfg.min_phones == 0 || cfg.min_phones > cfg.max_phones || cfg.min_frames == 0 ||
      cfg.min_frames > cfg.max_frames || cfg.num_train == 0 || cfg.num_test == 0) {
    throw ConfigError("invalid synthetic size ranges");
  }
  const std::size_t p = cfg.num_phones;
  Rng rng(seed);

  SyntheticData data;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < p; ++i) names.push_back("ph" + std::to_string(i));
  data.inventory.names = std::move(names);
  for (std::size_t s = 0; s < p * cfg.states_per_phone; ++s) {
    data.inventory.state_to_phone.push_back(s / cfg.states_per_phone);
  }

  // Unnormalised rule: reward canonical LPP over the mean competitor
  // (= -mean LPR), plus a small random direction and per-phone offsets.
  std::vector<double> w(2 * p);
  for (std::size_t j = 0; j < p; ++j) w[j] = rng.normal(0.0, 0.05);
  for (std::size_t j = p; j < 2 * p; ++j) w[j] = -1.0 / static_cast<double>(p) + rng.normal(0.0, 0.05);
  // LPP_j - LPR_j equals the canonical LPP for every j, so shifting weight
  // between w[j] and w[p + j] (with zero total) leaves every score unchanged.
  // Balance w[j] - w[p + j] across j so the planted w is the unique
  // representative orthogonal to those directions.
  double mean_gap = 0.0;
  for (std::size_t j = 0; j < p; ++j) mean_gap += (w[j] - w[p + j]) / static_cast<double>(p);
  for (std::size_t j = 0; j < p; ++j) {
    const double half = 0.5 * (w[j] - w[p + j] - mean_gap);
    w[j] -= half;
    w[p + j] += half;
  }
  std::vector<double> offset(p);
  for (auto& o : offset) o = rng.uniform(-1.0, 1.0);
  for (std::size_t k = 0; k < kUtteranceAspects; ++k) {
    data.rule.utt_scale[k] = rng.uniform(0.8, 1.2);
    data.rule.utt_shift[k] = rng.uniform(-0.1, 0.1);
  }

  const std::size_t total = cfg.num_train + cfg.num_test;
  std::vector<Utterance> utterances(total);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t u = 0; u < total; ++u) {
    RawUtterance raw = make_raw(cfg, data.inventory, rng);
    auto& utt = utterances[u];
    const bool train = u < cfg.num_train;
    const std::size_t index = train ? u : u - cfg.num_train;
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%s_%04zu", train ? "train" : "test", index);
    utt.id = id;
    utt.split = train ? Split::train : Split::test;
    utt.gop = extract_utterance(raw.pg, raw.al, data.inventory);
    for (std::size_t i = 0; i < utt.gop.length(); ++i) {
      const auto row = utt.gop.row(i);
      double s = offset[utt.gop.canonical_phones[i]];
      for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * row[j];
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    data.posteriorgrams.push_back(std::move(raw.pg));
    data.alignments.push_back(std::move(raw.al));
  }

  // Normalise so noiseless phone scores span [0.1, 1.9].
  const double a = hi > lo ? 1.8 / (hi - lo) : 1.0;
  const double b = 0.1 - a * lo;
  data.rule.weights.resize(w.size());
  for (std::size_t j = 0; j < w.size(); ++j) data.rule.weights[j] = a * w[j];
  data.rule.phone_offset.resize(p);
  for (std::size_t j = 0; j < p; ++j) data.rule.phone_offset[j] = a * offset[j] + b;

  for (auto& utt : utterances) {
    const std::size_t n = utt.gop.length();
    std::vector<double> clean(n);
    for (std::size_t i = 0; i < n; ++i) {
      clean[i] = data.rule.phone_score(utt.gop.row(i), utt.gop.canonical_phones[i]);
      utt.labels.phone.push_back(clip2(clean[i] + rng.normal(0.0, cfg.noise)));
    }
    const std::size_t words = utt.gop.num_words();
    for (std::size_t wd = 0; wd < words; ++wd) {
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (utt.gop.word_of_phone[i] == wd) {
          sum += clean[i];
          ++count;
        }
      }
      std::array<double, kWordAspects> row{};
      for (auto& v : row) v = clip2(sum / static_cast<double>(count) + rng.normal(0.0, cfg.noise));
      utt.labels.word.push_back(row);
    }
    double mean = 0.0;
    for (double c : clean) mean += c;
    mean /= static_cast<double>(n);
    for (std::size_t k = 0; k < kUtteranceAspects; ++k) {
      const double v = data.rule.utt_scale[k] * mean + data.rule.utt_shift[k] + rng.normal(0.0, cfg.noise);
      utt.labels.utterance[k] = clip2(v);
    }
  }

  data.dataset.num_phones = p;
  for (auto& utt : utterances) {
    (utt.split == Split::train ? data.dataset.train : data.dataset.test).push_back(std::move(utt));
  }
  return data;
}

ManifestEntry manifest_entry(const Utterance& u, const fs::path& feat_path) {
  ManifestEntry e;
  e.id = u.id;
  e.phones = u.gop.canonical_phones;
  e.words = u.gop.word_of_phone;
  e.phone_scores = u.labels.phone;
  for (const auto& row : u.labels.word) e.word_scores.push_back({row[0] * 5.0, row[1] * 5.0, row[2] * 5.0});
  for (std::size_t k = 0; k < kUtteranceAspects; ++k) e.utterance_scores[k] = u.labels.utterance[k] * 5.0;
  e.feat_path = feat_path;
  e.split = u.split;
  return e;
}

void write_synthetic(const SyntheticData& data, const fs::path& dir) {
  fs::create_directories(dir / "feats");
  fs::create_directories(dir / "posts");
  fs::create_directories(dir / "alis");
  write_inventory(dir / "phones.txt", dir / "states.txt", data.inventory);
  Manifest manifest;
  std::size_t raw_index = 0;
  for (const auto* split : {&data.dataset.train, &data.dataset.test}) {
    for (const auto& u : *split) {
      const fs::path feat = fs::path("feats") / (u.id + ".gopf");
      write_feature_file(dir / feat, u.gop);
      write_posteriorgram(dir / "posts" / (u.id + ".post"), data.posteriorgrams[raw_index]);
      write_alignment(dir / "alis" / (u.id + ".ali"), data.alignments[raw_index]);
      ++raw_index;
      manifest.entries.push_back(manifest_entry(u, feat));
    }
  }
  write_manifest(dir / "manifest.jsonl", manifest);
}

}  // namespace gopt
