#include "gopt/gop.hpp"

#include <algorithm>
#include <cmath>

#include "gopt/error.hpp"

namespace gopt {

void PhoneInventory::validate() const {
  const std::size_t p = num_phones();
  if (p < 2) throw InventoryError("inventory needs at least 2 phones, got " + std::to_string(p));
  std::vector<bool> owned(p, false);
  for (std::size_t s = 0; s < state_to_phone.size(); ++s) {
    if (state_to_phone[s] >= p) {
      throw InventoryError("state " + std::to_string(s) + " maps to phone " +
                           std::to_string(state_to_phone[s]) + " outside the " +
                           std::to_string(p) + "-phone inventory");
    }
    owned[state_to_phone[s]] = true;
  }
  for (std::size_t i = 0; i < p; ++i) {
    if (!owned[i]) throw InventoryError("phone '" + names[i] + "' owns no acoustic state");
  }
}

PhoneInventory PhoneInventory::identity(std::vector<std::string> names) {
  PhoneInventory inv;
  inv.state_to_phone.resize(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) inv.state_to_phone[i] = i;
  inv.names = std::move(names);
  return inv;
}

void PhonePosteriorgram::validate() const {
  if (probs.size() != frames * states) {
    throw FormatError("posteriorgram holds " + std::to_string(probs.size()) + " values, expected " +
                      std::to_string(frames) + "x" + std::to_string(states));
  }
  for (std::size_t t = 0; t < frames; ++t) {
    double total = 0.0;
    for (std::size_t s = 0; s < states; ++s) {
      const double v = at(t, s);
      if (!(v >= 0.0 && v <= 1.0)) {
        throw FormatError("posteriorgram frame " + std::to_string(t) + " state " +
                          std::to_string(s) + " has value " + std::to_string(v) +
                          " outside [0, 1]");
      }
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-3) {
      throw FormatError("posteriorgram frame " + std::to_string(t) + " sums to " +
                        std::to_string(total));
    }
  }
}

void Alignment::validate(std::size_t frames, std::size_t num_phones) const {
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    const std::string where = "segment " + std::to_string(i);
    if (s.phone >= num_phones) {
      throw InventoryError(where + ": phone index " + std::to_string(s.phone) + " outside the " +
                           std::to_string(num_phones) + "-phone inventory");
    }
    if (s.end < s.start) throw SegmentError(where + ": end frame precedes start frame");
    if (s.end >= frames) {
      throw SegmentError(where + ": end frame " + std::to_string(s.end) + " beyond " +
                         std::to_string(frames) + " frames");
    }
    if (i > 0) {
      const auto& prev = segments[i - 1];
      if (s.start <= prev.end) {
        throw AlignmentError(where + " overlaps or precedes segment " + std::to_string(i - 1));
      }
      if (s.word < prev.word) throw AlignmentError(where + ": word index decreases");
    }
  }
}

std::size_t GopSequence::num_words() const {
  if (word_of_phone.empty()) return 0;
  return static_cast<std::size_t>(*std::max_element(word_of_phone.begin(), word_of_phone.end())) + 1;
}

Tensor phone_posteriors(const PhonePosteriorgram& pg, const PhoneInventory& inv) {
  if (inv.num_states() != pg.states) {
    throw InventoryError("inventory maps " + std::to_string(inv.num_states()) +
                         " states but the posteriorgram has " + std::to_string(pg.states));
  }
  const std::size_t p = inv.num_phones();
  Tensor out = Tensor::zeros({pg.frames, p});
  auto ov = out.data();
  for (std::size_t t = 0; t < pg.frames; ++t) {
    for (std::size_t s = 0; s < pg.states; ++s) {
      const std::size_t phone = inv.state_to_phone[s];
      if (phone >= p) throw InventoryError("state " + std::to_string(s) + " is unmapped");
      ov[t * p + phone] += pg.at(t, s);
    }
  }
  return out;
}

std::vector<double> lpp(const Tensor& phone_post, std::size_t start, std::size_t end) {
  if (end < start) {
    throw SegmentError("segment end " + std::to_string(end) + " precedes start " +
                       std::to_string(start));
  }
  if (end >= phone_post.rows()) {
    throw SegmentError("segment end " + std::to_string(end) + " beyond " +
                       std::to_string(phone_post.rows()) + " frames");
  }
  const std::size_t p = phone_post.cols();
  std::vector<double> out(p, 0.0);
  for (std::size_t t = start; t <= end; ++t) {
    for (std::size_t j = 0; j < p; ++j) {
      out[j] += std::log(std::max(phone_post.at(t, j), kPosteriorFloor));
    }
  }
  const double frames = static_cast<double>(end - start + 1);
  for (auto& v : out) v /= frames;
  return out;
}

std::vector<double> lpr(std::span<const double> lpp_vec, std::size_t canonical) {
  if (canonical >= lpp_vec.size()) {
    throw InventoryError("canonical phone " + std::to_string(canonical) + " outside the " +
                         std::to_string(lpp_vec.size()) + "-phone inventory");
  }
  std::vector<double> out(lpp_vec.size());
  const double ref = lpp_vec[canonical];
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = lpp_vec[j] - ref;
  out[canonical] = 0.0;
  return out;
}

std::vector<double> gop_vector(const Tensor& phone_post, const Segment& seg) {
  std::vector<double> out = lpp(phone_post, seg.start, seg.end);
  const std::vector<double> ratios = lpr(out, seg.phone);
  out.insert(out.end(), ratios.begin(), ratios.end());
  return out;
}

GopSequence extract_utterance(const PhonePosteriorgram& pg, const Alignment& al,
                              const PhoneInventory& inv) {
  al.validate(pg.frames, inv.num_phones());
  const Tensor post = phone_posteriors(pg, inv);
  GopSequence seq;
  seq.num_phones = inv.num_phones();
  seq.features.reserve(al.segments.size() * seq.feature_dim());
  for (const auto& seg : al.segments) {
    const auto row = gop_vector(post, seg);
    seq.features.insert(seq.features.end(), row.begin(), row.end());
    seq.canonical_phones.push_back(static_cast<std::uint32_t>(seg.phone));
    seq.word_of_phone.push_back(static_cast<std::uint32_t>(seg.word));
  }
  return seq;
}

}  // namespace gopt
