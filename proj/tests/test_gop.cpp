#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gopt/error.hpp"
#include "gopt/gop.hpp"
#include "gopt/random.hpp"

using namespace gopt;

namespace {

PhonePosteriorgram random_posteriorgram(Rng& rng, std::size_t frames, std::size_t states) {
  PhonePosteriorgram pg;
  pg.frames = frames;
  pg.states = states;
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> row(states);
    double total = 0.0;
    for (auto& v : row) total += (v = rng.uniform(0.01, 1.0));
    for (double v : row) pg.probs.push_back(v / total);
  }
  return pg;
}

// Scalar-loop reference: sum state posteriors per phone, floor, log,
// average over the inclusive segment, then subtract the canonical entry.
std::vector<double> reference_gop(const PhonePosteriorgram& pg, const PhoneInventory& inv, const Segment& seg) {
  const std::size_t p = inv.num_phones();
  std::vector<double> lpp(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    double acc = 0.0;
    for (std::size_t t = seg.start; t <= seg.end; ++t) {
      double post = 0.0;
      for (std::size_t s = 0; s < pg.states; ++s) {
        if (inv.state_to_phone[s] == j) post += pg.at(t, s);
      }
      acc += std::log(std::max(post, 1e-10));
    }
    lpp[j] = acc / static_cast<double>(seg.end - seg.start + 1);
  }
  std::vector<double> out = lpp;
  for (std::size_t j = 0; j < p; ++j) out.push_back(lpp[j] - lpp[seg.phone]);
  return out;
}

}  // namespace

TEST_CASE("phone_posteriors: trivial inventories") {
  PhoneInventory one{{"a", "b"}, {0, 0, 0, 1}};
  PhonePosteriorgram pg{2, 4, {0.25, 0.25, 0.5, 0.0, 0.5, 0.25, 0.25, 0.0}};
  const Tensor post = phone_posteriors(pg, one);
  CHECK(post.at(0, 0) == 1.0);
  CHECK(post.at(1, 0) == 1.0);
  CHECK(post.at(0, 1) == 0.0);

  PhoneInventory two{{"a", "b"}, {0, 0, 1, 1}};
  PhonePosteriorgram uniform{3, 4, std::vector<double>(12, 0.25)};
  const Tensor u = phone_posteriors(uniform, two);
  for (double v : u.data()) CHECK(v == 0.5);
}

TEST_CASE("phone_posteriors: random 3x6 posteriorgram matches direct summation") {
  Rng rng(21);
  const PhoneInventory inv{{"a", "b", "c"}, {2, 0, 1, 0, 2, 1}};
  const PhonePosteriorgram pg = random_posteriorgram(rng, 3, 6);
  const Tensor post = phone_posteriors(pg, inv);
  for (std::size_t t = 0; t < 3; ++t) {
    double row = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      double ref = 0.0;
      for (std::size_t s = 0; s < 6; ++s) {
        if (inv.state_to_phone[s] == j) ref += pg.at(t, s);
      }
      CHECK(post.at(t, j) == ref);
      row += post.at(t, j);
    }
    CHECK(std::abs(row - 1.0) <= 1e-3);
  }
}

TEST_CASE("phone_posteriors: unmapped or out-of-range states are inventory errors") {
  const PhonePosteriorgram pg{1, 3, {0.2, 0.3, 0.5}};
  CHECK_THROWS_AS(phone_posteriors(pg, PhoneInventory{{"a", "b"}, {0, 1}}), InventoryError);
  CHECK_THROWS_AS(phone_posteriors(pg, PhoneInventory{{"a", "b"}, {0, 1, 7}}), InventoryError);
}

TEST_CASE("inventory validation") {
  CHECK_THROWS_AS(PhoneInventory({{"a"}, {0}}).validate(), InventoryError);
  CHECK_THROWS_AS(PhoneInventory({{"a", "b", "c"}, {0, 1, 1}}).validate(), InventoryError);
  CHECK_NOTHROW(PhoneInventory::identity({"a", "b"}).validate());
  CHECK(PhoneInventory::identity({"a", "b", "c"}).state_to_phone == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("lpp: uniform posteriors over 42 phones") {
  const std::size_t p = 42;
  const Tensor post = Tensor::from({5, p}, std::vector<double>(5 * p, 1.0 / 42.0));
  const auto v = lpp(post, 1, 3);
  REQUIRE(v.size() == p);
  for (double x : v) {
    CHECK(std::abs(x - std::log(1.0 / 42.0)) <= 1e-12);
    CHECK(x == doctest::Approx(-3.7377).epsilon(1e-4));
  }
}

TEST_CASE("lpp: single frame, three-frame oracle, floor, and errors") {
  const Tensor post = Tensor::from({3, 3}, {0.7, 0.2, 0.1, 0.5, 0.5, 0.0, 0.1, 0.3, 0.6});
  const auto single = lpp(post, 0, 0);
  CHECK(single == std::vector<double>{std::log(0.7), std::log(0.2), std::log(0.1)});

  const auto three = lpp(post, 0, 2);
  const double ref0 = (std::log(0.7) + std::log(0.5) + std::log(0.1)) / 3.0;
  const double ref2 = (std::log(0.1) + std::log(1e-10) + std::log(0.6)) / 3.0;
  CHECK(std::abs(three[0] - ref0) <= 1e-12);
  CHECK(std::abs(three[2] - ref2) <= 1e-12);
  CHECK(std::isfinite(three[2]));
  for (double x : three) CHECK(x <= 0.0);

  CHECK_THROWS_AS(lpp(post, 2, 1), SegmentError);
  CHECK_THROWS_AS(lpp(post, 1, 3), SegmentError);
}

TEST_CASE("lpr: self ratio, hand example, antisymmetry, and range") {
  const std::vector<double> two{-1.0, -2.0};
  CHECK(lpr(two, 0) == std::vector<double>{0.0, -1.0});

  Rng rng(4);
  std::vector<double> v(7);
  for (auto& x : v) x = rng.uniform(-9.0, 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto ri = lpr(v, i);
    CHECK(ri[i] == 0.0);
    for (std::size_t j = 0; j < v.size(); ++j) {
      const auto rj = lpr(v, j);
      CHECK(ri[j] == -rj[i]);
    }
  }
  CHECK_THROWS_AS(lpr(v, 7), InventoryError);
}

TEST_CASE("gop_vector: width 2P with a zero at P + canonical") {
  Rng rng(8);
  const std::size_t p = 42;
  const PhonePosteriorgram pg = random_posteriorgram(rng, 6, p);
  const Tensor post = phone_posteriors(pg, PhoneInventory::identity(std::vector<std::string>(p, "x")));
  for (std::size_t c : {0u, 17u, 41u}) {
    const auto g = gop_vector(post, Segment{c, 1, 4, 0});
    CHECK(g.size() == 84);
    CHECK(g[p + c] == 0.0);
  }
}

TEST_CASE("gop_vector: toy 4-phone 3-frame utterance matches the scalar-loop reference") {
  Rng rng(31);
  const PhoneInventory inv{{"a", "b", "c", "d"}, {0, 0, 1, 2, 2, 3, 3, 1}};
  const PhonePosteriorgram pg = random_posteriorgram(rng, 3, 8);
  const Segment seg{2, 0, 2, 0};
  const auto g = gop_vector(phone_posteriors(pg, inv), seg);
  const auto ref = reference_gop(pg, inv, seg);
  REQUIRE(g.size() == ref.size());
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(g[i] - ref[i]) <= 1e-12);
}

TEST_CASE("gop_vector ignores frames outside the segment") {
  Rng rng(12);
  const PhoneInventory inv = PhoneInventory::identity({"a", "b", "c", "d", "e"});
  const PhonePosteriorgram core = random_posteriorgram(rng, 4, 5);
  PhonePosteriorgram padded = random_posteriorgram(rng, 3, 5);
  padded.probs.insert(padded.probs.end(), core.probs.begin(), core.probs.end());
  const PhonePosteriorgram tail = random_posteriorgram(rng, 5, 5);
  padded.probs.insert(padded.probs.end(), tail.probs.begin(), tail.probs.end());
  padded.frames = 12;
  const auto a = gop_vector(phone_posteriors(core, inv), Segment{3, 0, 3, 0});
  const auto b = gop_vector(phone_posteriors(padded, inv), Segment{3, 3, 6, 0});
  CHECK(a == b);
}

TEST_CASE("extract_utterance: rows per segment, metadata carried, deterministic") {
  Rng rng(17);
  const PhoneInventory inv{{"a", "b", "c", "d"}, {0, 0, 1, 2, 2, 3, 3, 1}};
  const PhonePosteriorgram pg = random_posteriorgram(rng, 10, 8);
  const Alignment al{{{1, 0, 2, 0}, {3, 3, 5, 0}, {0, 6, 9, 1}}};
  const GopSequence g = extract_utterance(pg, al, inv);
  CHECK(g.num_phones == 4);
  CHECK(g.length() == 3);
  CHECK(g.feature_dim() == 8);
  CHECK(g.canonical_phones == std::vector<std::uint32_t>{1, 3, 0});
  CHECK(g.word_of_phone == std::vector<std::uint32_t>{0, 0, 1});
  CHECK(g.num_words() == 2);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto ref = reference_gop(pg, inv, al.segments[i]);
    const auto row = g.row(i);
    for (std::size_t k = 0; k < 8; ++k) CHECK(std::abs(row[k] - ref[k]) <= 1e-12);
    for (std::size_t k = 0; k < 4; ++k) CHECK(row[k] <= 0.0);
    CHECK(row[4 + g.canonical_phones[i]] == 0.0);
  }
  CHECK(extract_utterance(pg, al, inv) == g);
}

TEST_CASE("extract_utterance: malformed alignments are rejected") {
  Rng rng(2);
  const PhoneInventory inv = PhoneInventory::identity({"a", "b", "c"});
  const PhonePosteriorgram pg = random_posteriorgram(rng, 8, 3);
  CHECK_THROWS_AS(extract_utterance(pg, Alignment{{{0, 0, 3, 0}, {1, 3, 5, 0}}}, inv), AlignmentError);
  CHECK_THROWS_AS(extract_utterance(pg, Alignment{{{0, 4, 5, 0}, {1, 0, 2, 0}}}, inv), AlignmentError);
  CHECK_THROWS_AS(extract_utterance(pg, Alignment{{{0, 0, 2, 1}, {1, 3, 5, 0}}}, inv), AlignmentError);
  CHECK_THROWS_AS(extract_utterance(pg, Alignment{{{0, 3, 2, 0}}}, inv), SegmentError);
  CHECK_THROWS_AS(extract_utterance(pg, Alignment{{{0, 5, 8, 0}}}, inv), SegmentError);
  CHECK_THROWS_AS(extract_utterance(pg, Alignment{{{5, 0, 1, 0}}}, inv), InventoryError);
}

TEST_CASE("posteriorgram validation names the offending frame") {
  PhonePosteriorgram pg{2, 2, {0.5, 0.5, 0.7, 0.2}};
  try {
    pg.validate();
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("frame 1") != std::string::npos);
  }
  PhonePosteriorgram negative{1, 2, {1.2, -0.2}};
  CHECK_THROWS_AS(negative.validate(), FormatError);
  PhonePosteriorgram ok{1, 2, {0.4995, 0.5}};
  CHECK_NOTHROW(ok.validate());
}
