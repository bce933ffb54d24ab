#pragma once

// Built-in consistency checks shared by the `selftest` command and the test
// suite: finite-difference gradient checks on a toy model and bit-exact
// round trips of every file format.

#include <cstdint>
#include <string>
#include <vector>

#include "gopt/data.hpp"
#include "gopt/model.hpp"
#include "gopt/tensor.hpp"

namespace gopt {

// Toy setup: d = 8, one layer, P = 6, L = 6, two utterances of lengths 6 and 4
// with random GOP-like features and labels in [0, 2].
struct ToyProblem {
  ModelConfig config;
  std::vector<Utterance> utterances;
};

ToyProblem make_toy_problem(Backbone backbone, std::uint64_t seed);

// Central-difference check of d(multitask loss)/d(every parameter).
GradCheckResult check_model_gradients(const ToyProblem& problem, std::uint64_t init_seed,
                                      double step = 1e-4);

struct SelfTestResult {
  std::string name;
  bool passed = false;
  bool numeric = false;  // failure is numeric (gradient) rather than format
  std::string detail;
};

inline constexpr double kGradTolerance = 1e-3;

std::vector<SelfTestResult> run_selftest(std::uint64_t seed = 0);

}  // namespace gopt
