#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "gopt/gop.hpp"
#include "gopt/model.hpp"

namespace gopt {

// Supervision targets on the unified 0-2 scale.
struct ScoreLabels {
  std::vector<double> phone;                                // N phone accuracy scores
  std::vector<std::array<double, kWordAspects>> word;       // W x (accuracy, stress, total)
  std::array<double, kUtteranceAspects> utterance{};        // accuracy, completeness, fluency, prosodic, total

  bool operator==(const ScoreLabels&) const = default;
};

enum class Split { train, test };

struct Utterance {
  std::string id;
  GopSequence gop;
  ScoreLabels labels;
  Split split = Split::train;
};

struct Dataset {
  std::size_t num_phones = 0;
  std::vector<Utterance> train;
  std::vector<Utterance> test;
};

}  // namespace gopt
