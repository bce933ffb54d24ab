#pragma once

// Goodness-of-pronunciation features: log phone posteriors (LPP) and log
// posterior ratios (LPR) over force-aligned phone segments.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gopt/tensor.hpp"

namespace gopt {

// Posteriors are clamped to this value before taking logs.
inline constexpr double kPosteriorFloor = 1e-10;

struct PhoneInventory {
  std::vector<std::string> names;          // phone index -> symbol
  std::vector<std::size_t> state_to_phone;  // acoustic state -> phone index

  std::size_t num_phones() const { return names.size(); }
  std::size_t num_states() const { return state_to_phone.size(); }

  // Every state maps to a valid phone, every phone owns a state, P >= 2.
  void validate() const;

  // One state per phone, state i -> phone i.
  static PhoneInventory identity(std::vector<std::string> names);
};

struct PhonePosteriorgram {
  std::size_t frames = 0;
  std::size_t states = 0;
  std::vector<double> probs;  // frames x states, row-major

  double at(std::size_t t, std::size_t s) const { return probs[t * states + s]; }

  // Entries in [0, 1] and rows summing to 1 within 1e-3.
  void validate() const;
};

struct Segment {
  std::size_t phone = 0;
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // inclusive
  std::size_t word = 0;
};

struct Alignment {
  std::vector<Segment> segments;

  // Ordered, non-overlapping, inside [0, frames), non-decreasing word index.
  void validate(std::size_t frames, std::size_t num_phones) const;
};

struct GopSequence {
  std::size_t num_phones = 0;  // P; the feature width is 2P
  std::vector<double> features;  // N x 2P, row-major
  std::vector<std::uint32_t> canonical_phones;
  std::vector<std::uint32_t> word_of_phone;

  std::size_t length() const { return canonical_phones.size(); }
  std::size_t feature_dim() const { return 2 * num_phones; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features).subspan(i * feature_dim(), feature_dim());
  }
  std::size_t num_words() const;

  bool operator==(const GopSequence&) const = default;
};

// [T x P] phone posteriors: per frame, the sum of the posteriors of each
// phone's states.
Tensor phone_posteriors(const PhonePosteriorgram& pg, const PhoneInventory& inv);

// Mean floored log posterior of every phone over frames [start, end].
std::vector<double> lpp(const Tensor& phone_post, std::size_t start, std::size_t end);

// entry j = lpp[j] - lpp[canonical]; the canonical entry is exactly 0.
std::vector<double> lpr(std::span<const double> lpp_vec, std::size_t canonical);

// [LPP(p_1..p_P), LPR(p_1..p_P | canonical)]
std::vector<double> gop_vector(const Tensor& phone_post, const Segment& seg);

GopSequence extract_utterance(const PhonePosteriorgram& pg, const Alignment& al,
                              const PhoneInventory& inv);

}  // namespace gopt
