#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "gopt/data.hpp"
#include "gopt/gop.hpp"
#include "gopt/random.hpp"
#include "gopt/tensor.hpp"

namespace testing {

inline gopt::Tensor random_tensor(gopt::Rng& rng, gopt::Shape shape, double lo = -1.0, double hi = 1.0,
                                  bool requires_grad = false) {
  std::vector<double> v(gopt::shape_size(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return gopt::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// GOP-like rows: LPP in [-8, 0), LPR derived from it, words of 1-3 phones.
inline gopt::GopSequence random_gop(gopt::Rng& rng, std::size_t p, std::size_t n) {
  gopt::GopSequence g;
  g.num_phones = p;
  std::uint32_t word = 0;
  std::size_t in_word = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::uint32_t>(rng.below(p));
    std::vector<double> lpp(p);
    for (auto& v : lpp) v = rng.uniform(-8.0, -0.01);
    g.features.insert(g.features.end(), lpp.begin(), lpp.end());
    for (std::size_t j = 0; j < p; ++j) g.features.push_back(j == c ? 0.0 : lpp[j] - lpp[c]);
    g.canonical_phones.push_back(c);
    if (i > 0 && (in_word >= 3 || rng.below(2) == 0)) {
      ++word;
      in_word = 0;
    }
    ++in_word;
    g.word_of_phone.push_back(word);
  }
  return g;
}

inline gopt::Utterance random_utterance(gopt::Rng& rng, std::size_t p, std::size_t n, std::string id) {
  gopt::Utterance u;
  u.id = std::move(id);
  u.gop = random_gop(rng, p, n);
  for (std::size_t i = 0; i < n; ++i) u.labels.phone.push_back(rng.uniform(0.0, 2.0));
  for (std::size_t w = 0; w < u.gop.num_words(); ++w) {
    u.labels.word.push_back({rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)});
  }
  for (auto& v : u.labels.utterance) v = rng.uniform(0.0, 2.0);
  return u;
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("gopt-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
