#pragma once

// File formats and the dataset manifest.
//
//   feature file  "GOPF", u32 version = 1, u32 P, u32 N, N x 2P f64 (row-major),
//                 N u32 canonical phones, N u32 word indices; all little-endian.
//   posteriorgram "POST", u32 T, u32 S, T x S f64.
//   alignment     text, one "phone_index t_start t_end word_index" per line.
//   inventory     text, one phone symbol per line (line number = index), and
//                 an optional state map with one "state_index phone_index" per line.
//   manifest      one JSON object per line: id, phones, words,
//                 scores{phone[], word[][3], utt[5]}, feat_path, split.
//                 Word/utterance scores are raw 0-10 values.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gopt/data.hpp"
#include "gopt/gop.hpp"

namespace gopt {

std::vector<std::uint8_t> encode_feature_file(const GopSequence& seq);
GopSequence decode_feature_file(std::span<const std::uint8_t> bytes);
GopSequence read_feature_file(const std::filesystem::path& path);
void write_feature_file(const std::filesystem::path& path, const GopSequence& seq);

std::vector<std::uint8_t> encode_posteriorgram(const PhonePosteriorgram& pg);
PhonePosteriorgram decode_posteriorgram(std::span<const std::uint8_t> bytes);
// Validates entries and row sums.
PhonePosteriorgram load_posteriorgram(const std::filesystem::path& path);
void write_posteriorgram(const std::filesystem::path& path, const PhonePosteriorgram& pg);

Alignment parse_alignment(const std::string& text);
Alignment load_alignment(const std::filesystem::path& path);
void write_alignment(const std::filesystem::path& path, const Alignment& al);

// Without a state map every phone owns exactly one state (state i -> phone i).
PhoneInventory load_inventory(const std::filesystem::path& phones_path,
                              const std::optional<std::filesystem::path>& state_map_path = {});
void write_inventory(const std::filesystem::path& phones_path,
                     const std::filesystem::path& state_map_path, const PhoneInventory& inv);

struct ManifestEntry {
  std::string id;
  std::vector<std::uint32_t> phones;
  std::vector<std::uint32_t> words;
  std::vector<double> phone_scores;                             // 0-2
  std::vector<std::array<double, kWordAspects>> word_scores;    // raw 0-10
  std::array<double, kUtteranceAspects> utterance_scores{};     // raw 0-10
  std::filesystem::path feat_path;  // empty in extraction mode
  std::filesystem::path post_path;  // extraction mode only
  std::filesystem::path ali_path;   // extraction mode only
  Split split = Split::train;
};

struct Manifest {
  std::filesystem::path base_dir;  // relative paths resolve against this
  std::vector<ManifestEntry> entries;
};

// Rejects duplicate IDs, missing files, out-of-range scores, and label
// shapes inconsistent with the phone/word lists; messages name the utterance.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir);
std::string format_manifest_line(const ManifestEntry& entry);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

// Manifest raw scores mapped to the unified 0-2 scale.
ScoreLabels labels_of(const ManifestEntry& entry);

// Reads every feature file (or extracts GOP features from posteriorgram and
// alignment when an inventory is given) and checks them against the manifest.
Dataset load_dataset(const Manifest& manifest, const PhoneInventory* inventory = nullptr);

struct SplitCounts {
  std::size_t utterances = 0;
  std::size_t words = 0;
  std::size_t phones = 0;
  bool operator==(const SplitCounts&) const = default;
};

SplitCounts count_split(const Manifest& manifest, Split split);

inline constexpr SplitCounts kOfficialTrainCounts{2500, 15849, 47076};
inline constexpr SplitCounts kOfficialTestCounts{2500, 15967, 47369};

// Empty when both splits match the official speechocean762 counts,
// otherwise one warning line per mismatching split.
std::vector<std::string> check_official_counts(const Manifest& manifest);

}  // namespace gopt
