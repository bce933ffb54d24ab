#pragma once

// Synthetic pronunciation data with a planted scoring rule, for tests and
// learnability checks.
//
// Each utterance has a speaker quality level; every phone segment gets a
// quality drawn around it, which sets how much posterior mass the frames put
// on the canonical phone (the rest goes mostly to one confusable phone).
// GOP features are then extracted from these posteriorgrams exactly as for
// real data.
//
// Phone scores follow a planted linear rule on [GOP vector, one-hot canonical]:
//   phone = clip(w . gop + offset[canonical] + noise, 0, 2)
// where w rewards a high canonical LPP relative to competing phones plus a
// small random component, and (w, offset) are normalised so the noiseless
// scores span [0.1, 1.9]. Since LPP_j - LPR_j is the same for every j, the
// GOP vector has P - 1 exact linear dependencies; w is planted with
// w[j] - w[P + j] constant over j, which pins it down uniquely among the
// weight vectors giving the same scores. Word aspects are the mean of the member phones'
// noiseless scores plus noise. Utterance aspect k is
//   clip(scale[k] * mean(noiseless phone scores) + shift[k] + noise, 0, 2).

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gopt/data.hpp"
#include "gopt/dataio.hpp"
#include "gopt/gop.hpp"

namespace gopt {

struct SyntheticConfig {
  std::size_t num_train = 500;
  std::size_t num_test = 200;
  std::size_t num_phones = 42;
  std::size_t states_per_phone = 2;
  std::size_t min_phones = 6;
  std::size_t max_phones = 10;
  std::size_t min_frames = 3;
  std::size_t max_frames = 8;
  double noise = 0.05;
};

struct PlantedRule {
  std::vector<double> weights;       // 2P
  std::vector<double> phone_offset;  // P
  std::array<double, kUtteranceAspects> utt_scale{};
  std::array<double, kUtteranceAspects> utt_shift{};

  double phone_score(std::span<const double> gop, std::size_t canonical) const;
};

struct SyntheticData {
  PhoneInventory inventory;
  Dataset dataset;
  PlantedRule rule;
  // Raw inputs, train utterances first, in dataset order.
  std::vector<PhonePosteriorgram> posteriorgrams;
  std::vector<Alignment> alignments;
};

SyntheticData generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed);

// Manifest entry with raw-scale (0-10) word/utterance scores.
ManifestEntry manifest_entry(const Utterance& u, const std::filesystem::path& feat_path);

// Writes phones.txt, states.txt, manifest.jsonl, feats/<id>.gopf, and the
// raw posts/<id>.post and alis/<id>.ali inputs under `dir`.
void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir);

}  // namespace gopt
