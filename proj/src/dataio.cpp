#include "gopt/dataio.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gopt/binary.hpp"
#include "gopt/error.hpp"
#include "gopt/evaluation.hpp"

namespace gopt {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::uint32_t kFeatureVersion = 1;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("short write to " + path.string());
}

// Splits on newlines, strips '\r', drops blank lines and '#' comments;
// returns (1-based line number, content).
std::vector<std::pair<std::size_t, std::string>> content_lines(const std::string& text) {
  std::vector<std::pair<std::size_t, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    out.emplace_back(number, line);
  }
  return out;
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

std::vector<std::uint8_t> encode_feature_file(const GopSequence& seq) {
  const std::size_t n = seq.length();
  if (seq.features.size() != n * seq.feature_dim() || seq.word_of_phone.size() != n) {
    throw ContractError("encode_feature_file: inconsistent GopSequence");
  }
  ByteWriter w;
  w.magic("GOPF");
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(seq.num_phones));
  w.u32(static_cast<std::uint32_t>(n));
  for (double v : seq.features) w.f64(v);
  for (auto p : seq.canonical_phones) w.u32(p);
  for (auto wd : seq.word_of_phone) w.u32(wd);
  return w.take();
}

GopSequence decode_feature_file(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "feature file");
  r.expect_magic("GOPF");
  const std::uint32_t version = r.u32();
  if (version != kFeatureVersion) {
    throw FormatError("feature file: unsupported version " + std::to_string(version));
  }
  GopSequence seq;
  seq.num_phones = r.u32();
  const std::size_t n = r.u32();
  const std::size_t expected = 16 + n * seq.feature_dim() * 8 + n * 8;
  if (bytes.size() != expected) {
    throw FormatError("feature file: expected " + std::to_string(expected) + " bytes for N=" +
                      std::to_string(n) + ", P=" + std::to_string(seq.num_phones) + ", got " +
                      std::to_string(bytes.size()));
  }
  seq.features.resize(n * seq.feature_dim());
  for (double& v : seq.features) v = r.f64();
  seq.canonical_phones.resize(n);
  for (auto& p : seq.canonical_phones) p = r.u32();
  seq.word_of_phone.resize(n);
  for (auto& w : seq.word_of_phone) w = r.u32();
  r.expect_end();
  return seq;
}

GopSequence read_feature_file(const fs::path& path) {
  try {
    return decode_feature_file(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_feature_file(const fs::path& path, const GopSequence& seq) {
  write_file_bytes(path, encode_feature_file(seq));
}

std::vector<std::uint8_t> encode_posteriorgram(const PhonePosteriorgram& pg) {
  ByteWriter w;
  w.magic("POST");
  w.u32(static_cast<std::uint32_t>(pg.frames));
  w.u32(static_cast<std::uint32_t>(pg.states));
  for (double v : pg.probs) w.f64(v);
  return w.take();
}

PhonePosteriorgram decode_posteriorgram(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "posteriorgram");
  r.expect_magic("POST");
  PhonePosteriorgram pg;
  pg.frames = r.u32();
  pg.states = r.u32();
  const std::size_t expected = 12 + pg.frames * pg.states * 8;
  if (bytes.size() != expected) {
    throw FormatError("posteriorgram: expected " + std::to_string(expected) + " bytes for " +
                      std::to_string(pg.frames) + "x" + std::to_string(pg.states) + ", got " +
                      std::to_string(bytes.size()));
  }
  pg.probs.resize(pg.frames * pg.states);
  for (double& v : pg.probs) v = r.f64();
  r.expect_end();
  return pg;
}

PhonePosteriorgram load_posteriorgram(const fs::path& path) {
  try {
    PhonePosteriorgram pg = decode_posteriorgram(read_file_bytes(path));
    pg.validate();
    return pg;
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_posteriorgram(const fs::path& path, const PhonePosteriorgram& pg) {
  write_file_bytes(path, encode_posteriorgram(pg));
}

Alignment parse_alignment(const std::string& text) {
  Alignment al;
  for (const auto& [number, line] : content_lines(text)) {
    std::istringstream in(line);
    long long phone = -1, start = -1, end = -1, word = -1;
    std::string extra;
    if (!(in >> phone >> start >> end >> word) || (in >> extra) || phone < 0 || start < 0 ||
        end < 0 || word < 0) {
      throw FormatError("alignment line " + std::to_string(number) +
                        ": expected 'phone_index t_start t_end word_index', got '" + line + "'");
    }
    al.segments.push_back({static_cast<std::size_t>(phone), static_cast<std::size_t>(start),
                           static_cast<std::size_t>(end), static_cast<std::size_t>(word)});
  }
  return al;
}

Alignment load_alignment(const fs::path& path) {
  try {
    return parse_alignment(read_text(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_alignment(const fs::path& path, const Alignment& al) {
  std::ostringstream os;
  for (const auto& s : al.segments) os << s.phone << ' ' << s.start << ' ' << s.end << ' ' << s.word << '\n';
  write_text(path, os.str());
}

PhoneInventory load_inventory(const fs::path& phones_path,
                              const std::optional<fs::path>& state_map_path) {
  std::vector<std::string> names;
  for (const auto& [number, line] : content_lines(read_text(phones_path))) {
    std::istringstream in(line);
    std::string symbol, extra;
    in >> symbol;
    if (in >> extra) {
      throw FormatError(phones_path.string() + " line " + std::to_string(number) +
                        ": expected a single phone symbol");
    }
    names.push_back(symbol);
  }
  PhoneInventory inv;
  if (!state_map_path) {
    inv = PhoneInventory::identity(std::move(names));
  } else {
    inv.names = std::move(names);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::size_t states = 0;
    for (const auto& [number, line] : content_lines(read_text(*state_map_path))) {
      std::istringstream in(line);
      long long state = -1, phone = -1;
      std::string extra;
      if (!(in >> state >> phone) || (in >> extra) || state < 0 || phone < 0) {
        throw FormatError(state_map_path->string() + " line " + std::to_string(number) +
                          ": expected 'state_index phone_index'");
      }
      pairs.emplace_back(state, phone);
      states = std::max(states, static_cast<std::size_t>(state) + 1);
    }
    constexpr std::size_t kUnmapped = static_cast<std::size_t>(-1);
    inv.state_to_phone.assign(states, kUnmapped);
    for (auto [state, phone] : pairs) {
      if (inv.state_to_phone[state] != kUnmapped) {
        throw InventoryError("state " + std::to_string(state) + " is mapped twice");
      }
      inv.state_to_phone[state] = phone;
    }
    for (std::size_t s = 0; s < states; ++s) {
      if (inv.state_to_phone[s] == kUnmapped) {
        throw InventoryError("state " + std::to_string(s) + " is unmapped");
      }
    }
  }
  inv.validate();
  return inv;
}

void write_inventory(const fs::path& phones_path, const fs::path& state_map_path,
                     const PhoneInventory& inv) {
  std::ostringstream phones, states;
  for (const auto& n : inv.names) phones << n << '\n';
  for (std::size_t s = 0; s < inv.state_to_phone.size(); ++s) states << s << ' ' << inv.state_to_phone[s] << '\n';
  write_text(phones_path, phones.str());
  write_text(state_map_path, states.str());
}

namespace {

template <typename T>
T field(const json& obj, const char* key, const std::string& id) {
  if (!obj.contains(key)) throw FormatError("utterance " + id + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError("utterance " + id + ": bad field '" + key + "': " + e.what());
  }
}

void check_range(double v, double hi, const std::string& id, const char* what) {
  if (!(v >= 0.0 && v <= hi)) {
    throw LabelError("utterance " + id + ": " + what + " score " + std::to_string(v) +
                     " outside [0, " + std::to_string(static_cast<int>(hi)) + "]");
  }
}

void check_entry(const ManifestEntry& e) {
  const std::size_t n = e.phones.size();
  if (e.words.size() != n) {
    throw LabelError("utterance " + e.id + ": " + std::to_string(n) + " phones but " +
                     std::to_string(e.words.size()) + " word indices");
  }
  if (e.phone_scores.size() != n) {
    throw LabelError("utterance " + e.id + ": " + std::to_string(e.phone_scores.size()) +
                     " phone scores for " + std::to_string(n) + " phones");
  }
  std::size_t words = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t w = e.words[i];
    if ((i == 0 && w != 0) || (i > 0 && w != e.words[i - 1] && w != e.words[i - 1] + 1)) {
      throw LabelError("utterance " + e.id + ": word indices must start at 0 and be contiguous");
    }
    words = w + 1;
  }
  if (e.word_scores.size() != words) {
    throw LabelError("utterance " + e.id + ": " + std::to_string(e.word_scores.size()) +
                     " word score rows for " + std::to_string(words) + " words");
  }
  for (double v : e.phone_scores) check_range(v, 2.0, e.id, "phone");
  for (const auto& row : e.word_scores)
    for (double v : row) check_range(v, 10.0, e.id, "word");
  for (double v : e.utterance_scores) check_range(v, 10.0, e.id, "utterance");
}

}  // namespace

Manifest parse_manifest(const std::string& text, const fs::path& base_dir) {
  Manifest m;
  m.base_dir = base_dir;
  std::set<std::string> seen;
  for (const auto& [number, line] : content_lines(text)) {
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("manifest line " + std::to_string(number) + ": " + e.what());
    }
    ManifestEntry e;
    e.id = field<std::string>(obj, "id", "at line " + std::to_string(number));
    if (!seen.insert(e.id).second) throw FormatError("manifest: duplicate utterance ID " + e.id);
    e.phones = field<std::vector<std::uint32_t>>(obj, "phones", e.id);
    e.words = field<std::vector<std::uint32_t>>(obj, "words", e.id);
    const json scores = field<json>(obj, "scores", e.id);
    e.phone_scores = field<std::vector<double>>(scores, "phone", e.id);
    e.word_scores = field<std::vector<std::array<double, kWordAspects>>>(scores, "word", e.id);
    e.utterance_scores = field<std::array<double, kUtteranceAspects>>(scores, "utt", e.id);
    const auto split = field<std::string>(obj, "split", e.id);
    if (split == "train") {
      e.split = Split::train;
    } else if (split == "test") {
      e.split = Split::test;
    } else {
      throw FormatError("utterance " + e.id + ": split must be 'train' or 'test', got '" + split + "'");
    }
    if (obj.contains("feat_path")) e.feat_path = field<std::string>(obj, "feat_path", e.id);
    if (obj.contains("post_path")) e.post_path = field<std::string>(obj, "post_path", e.id);
    if (obj.contains("ali_path")) e.ali_path = field<std::string>(obj, "ali_path", e.id);
    if (e.feat_path.empty() && (e.post_path.empty() || e.ali_path.empty())) {
      throw FormatError("utterance " + e.id + ": needs feat_path, or post_path and ali_path");
    }
    check_entry(e);
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest load_manifest(const fs::path& path) {
  Manifest m = parse_manifest(read_text(path), path.parent_path());
  for (const auto& e : m.entries) {
    for (const fs::path* p : {&e.feat_path, &e.post_path, &e.ali_path}) {
      if (!p->empty() && !fs::exists(resolve(m.base_dir, *p))) {
        throw FormatError("utterance " + e.id + ": missing file " + resolve(m.base_dir, *p).string());
      }
    }
  }
  return m;
}

std::string format_manifest_line(const ManifestEntry& e) {
  json obj;
  obj["id"] = e.id;
  obj["phones"] = e.phones;
  obj["words"] = e.words;
  obj["scores"] = {{"phone", e.phone_scores}, {"word", e.word_scores}, {"utt", e.utterance_scores}};
  if (!e.feat_path.empty()) obj["feat_path"] = e.feat_path.generic_string();
  if (!e.post_path.empty()) obj["post_path"] = e.post_path.generic_string();
  if (!e.ali_path.empty()) obj["ali_path"] = e.ali_path.generic_string();
  obj["split"] = e.split == Split::train ? "train" : "test";
  return obj.dump();
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  std::string text;
  for (const auto& e : manifest.entries) text += format_manifest_line(e) + "\n";
  write_text(path, text);
}

ScoreLabels labels_of(const ManifestEntry& e) {
  ScoreLabels l;
  for (double v : e.phone_scores) l.phone.push_back(rescale(v, Granularity::phoneme));
  for (const auto& row : e.word_scores) {
    std::array<double, kWordAspects> r{};
    for (std::size_t k = 0; k < kWordAspects; ++k) r[k] = rescale(row[k], Granularity::word);
    l.word.push_back(r);
  }
  for (std::size_t k = 0; k < kUtteranceAspects; ++k) {
    l.utterance[k] = rescale(e.utterance_scores[k], Granularity::utterance);
  }
  return l;
}

Dataset load_dataset(const Manifest& manifest, const PhoneInventory* inventory) {
  Dataset ds;
  for (const auto& e : manifest.entries) {
    Utterance u;
    u.id = e.id;
    u.split = e.split;
    u.labels = labels_of(e);
    if (!e.feat_path.empty()) {
      u.gop = read_feature_file(resolve(manifest.base_dir, e.feat_path));
    } else {
      if (inventory == nullptr) {
        throw ConfigError("utterance " + e.id + " needs GOP extraction but no inventory was given");
      }
      const auto pg = load_posteriorgram(resolve(manifest.base_dir, e.post_path));
      const auto al = load_alignment(resolve(manifest.base_dir, e.ali_path));
      try {
        u.gop = extract_utterance(pg, al, *inventory);
      } catch (const DataError& err) {
        throw AlignmentError("utterance " + e.id + ": " + err.what());
      }
    }
    if (u.gop.canonical_phones != e.phones || u.gop.word_of_phone != e.words) {
      throw LabelError("utterance " + e.id + ": phones/words in the manifest disagree with its features");
    }
    if (ds.num_phones == 0) ds.num_phones = u.gop.num_phones;
    if (u.gop.num_phones != ds.num_phones) {
      throw FormatError("utterance " + e.id + ": feature width " + std::to_string(u.gop.feature_dim()) +
                        " differs from the rest of the dataset");
    }
    (e.split == Split::train ? ds.train : ds.test).push_back(std::move(u));
  }
  return ds;
}

SplitCounts count_split(const Manifest& manifest, Split split) {
  SplitCounts c;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    ++c.utterances;
    c.words += e.word_scores.size();
    c.phones += e.phones.size();
  }
  return c;
}

std::vector<std::string> check_official_counts(const Manifest& manifest) {
  std::vector<std::string> warnings;
  auto check = [&](Split split, const SplitCounts& want, const char* name) {
    const SplitCounts got = count_split(manifest, split);
    if (got == want) return;
    std::ostringstream os;
    os << "count mismatch on " << name << " split: " << got.utterances << " utterances / "
       << got.words << " words / " << got.phones << " phones, expected " << want.utterances
       << " / " << want.words << " / " << want.phones;
    warnings.push_back(os.str());
  };
  check(Split::train, kOfficialTrainCounts, "train");
  check(Split::test, kOfficialTestCounts, "test");
  return warnings;
}

}  // namespace gopt
