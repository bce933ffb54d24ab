#pragma once

// Run settings merged from a key=value config file and command-line
// overrides. Later assignments win, so flags applied after the file take
// precedence.
//
//   # comment
//   embed_dim = 24
//   task = joint
//   seeds = 0,1,2,3,4

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "gopt/model.hpp"
#include "gopt/training.hpp"

namespace gopt {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t jobs = 1;
  std::string manifest;
  std::string out;
  std::string inventory;
  std::string state_map;

  // Throws ConfigError naming the key on unknown keys or bad values.
  // Setting embed_dim also sets ffn_dim = 4 * embed_dim unless ffn_dim was
  // given explicitly.
  void set(std::string_view key, std::string_view value);
  // "key=value"
  void apply(std::string_view assignment);
  void load_file(const std::filesystem::path& path);
  void load_text(std::string_view text, std::string_view source = "<config>");

  bool was_set(std::string_view key) const { return explicit_keys_.count(std::string(key)) != 0; }

  // Every key with its resolved value, one "key = value" line each, in a
  // fixed order; load_text(echo()) reproduces the configuration.
  std::string echo() const;

  static const std::vector<std::string>& keys();

 private:
  std::set<std::string> explicit_keys_;
};

std::vector<std::uint64_t> parse_seed_list(std::string_view text);

}  // namespace gopt
