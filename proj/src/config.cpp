#include "gopt/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gopt/error.hpp"

namespace gopt {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

std::size_t to_size(std::string_view key, std::string_view v) { return static_cast<std::size_t>(to_u64(key, v)); }

double to_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + s + "'");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(std::string(key) + ": expected on/off, got '" + std::string(v) + "'");
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto item = trim(text.substr(pos, comma == std::string_view::npos ? text.npos : comma - pos));
    seeds.push_back(to_u64("seeds", item));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  if (seeds.empty()) throw ConfigError("seeds: empty list");
  return seeds;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k{
      "backbone",      "num_phones",   "embed_dim",     "num_layers",          "num_heads",
      "ffn_dim",       "max_phones",   "num_cls",       "dropout",             "phone_embedding",
      "cls_positional", "lr",          "batch_size",    "epochs",              "lr_halve_after",
      "lr_halve_every", "lr_halve_immediately", "adam_beta1", "adam_beta2",    "adam_eps",
      "task",          "eval_every",   "seeds",         "jobs",                "manifest",
      "out",           "inventory",    "state_map"};
  return k;
}

void RunConfig::set(std::string_view key_in, std::string_view value_in) {
  const std::string_view key = trim(key_in);
  const std::string_view v = trim(value_in);
  auto& m = model;
  auto& t = train;
  if (key == "backbone") {
    try {
      m.backbone = parse_backbone(v);
    } catch (const Error& e) {
      throw ConfigError(std::string("backbone: ") + e.what());
    }
  } else if (key == "num_phones") {
    m.num_phones = to_size(key, v);
  } else if (key == "embed_dim") {
    m.embed_dim = to_size(key, v);
    if (!was_set("ffn_dim")) m.ffn_dim = 4 * m.embed_dim;
  } else if (key == "num_layers") {
    m.num_layers = to_size(key, v);
  } else if (key == "num_heads") {
    m.num_heads = to_size(key, v);
  } else if (key == "ffn_dim") {
    m.ffn_dim = to_size(key, v);
  } else if (key == "max_phones") {
    m.max_phones = to_size(key, v);
  } else if (key == "num_cls") {
    m.num_cls = to_size(key, v);
  } else if (key == "dropout") {
    m.dropout = to_double(key, v);
  } else if (key == "phone_embedding") {
    m.use_phone_embedding = to_bool(key, v);
  } else if (key == "cls_positional") {
    m.cls_positional = to_bool(key, v);
  } else if (key == "lr") {
    t.lr0 = to_double(key, v);
  } else if (key == "batch_size") {
    t.batch_size = to_size(key, v);
  } else if (key == "epochs") {
    t.epochs = to_size(key, v);
  } else if (key == "lr_halve_after") {
    t.halve_after = to_size(key, v);
  } else if (key == "lr_halve_every") {
    t.halve_every = to_size(key, v);
  } else if (key == "lr_halve_immediately") {
    t.halve_immediately = to_bool(key, v);
  } else if (key == "adam_beta1") {
    t.beta1 = to_double(key, v);
  } else if (key == "adam_beta2") {
    t.beta2 = to_double(key, v);
  } else if (key == "adam_eps") {
    t.adam_eps = to_double(key, v);
  } else if (key == "task") {
    t.tasks = TaskSet::parse(v);
  } else if (key == "eval_every") {
    t.eval_every = to_size(key, v);
  } else if (key == "seeds") {
    seeds = parse_seed_list(v);
  } else if (key == "jobs") {
    jobs = to_size(key, v);
    if (jobs == 0) throw ConfigError("jobs must be at least 1");
  } else if (key == "manifest") {
    manifest = v;
  } else if (key == "out") {
    out = v;
  } else if (key == "inventory") {
    inventory = v;
  } else if (key == "state_map") {
    state_map = v;
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
  explicit_keys_.insert(std::string(key));
}

void RunConfig::apply(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  }
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void RunConfig::load_text(std::string_view text, std::string_view source) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply(line);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path.string());
}

std::string RunConfig::echo() const {
  std::string seed_list;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) seed_list += ",";
    seed_list += std::to_string(seeds[i]);
  }
  const auto& m = model;
  const auto& t = train;
  auto onoff = [](bool b) { return std::string(b ? "on" : "off"); };
  const std::vector<std::pair<std::string, std::string>> rows{
      {"backbone", std::string(backbone_name(m.backbone))},
      {"num_phones", std::to_string(m.num_phones)},
      {"embed_dim", std::to_string(m.embed_dim)},
      {"num_layers", std::to_string(m.num_layers)},
      {"num_heads", std::to_string(m.num_heads)},
      {"ffn_dim", std::to_string(m.ffn_dim)},
      {"max_phones", std::to_string(m.max_phones)},
      {"num_cls", std::to_string(m.num_cls)},
      {"dropout", num(m.dropout)},
      {"phone_embedding", onoff(m.use_phone_embedding)},
      {"cls_positional", onoff(m.cls_positional)},
      {"lr", num(t.lr0)},
      {"batch_size", std::to_string(t.batch_size)},
      {"epochs", std::to_string(t.epochs)},
      {"lr_halve_after", std::to_string(t.halve_after)},
      {"lr_halve_every", std::to_string(t.halve_every)},
      {"lr_halve_immediately", onoff(t.halve_immediately)},
      {"adam_beta1", num(t.beta1)},
      {"adam_beta2", num(t.beta2)},
      {"adam_eps", num(t.adam_eps)},
      {"task", t.tasks.name()},
      {"eval_every", std::to_string(t.eval_every)},
      {"seeds", seed_list},
      {"jobs", std::to_string(jobs)},
      {"manifest", manifest},
      {"out", out},
      {"inventory", inventory},
      {"state_map", state_map},
  };
  std::string text;
  for (const auto& [k, v] : rows) text += k + " = " + v + "\n";
  return text;
}

}  // namespace gopt
