#include "gopt/model.hpp"

#include <cmath>

#include "gopt/binary.hpp"
#include "gopt/error.hpp"
#include "gopt/random.hpp"

namespace gopt {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

// Init markers stored alongside each parameter: > 0 is a uniform bound.
constexpr double kInitZeros = 0.0;
constexpr double kInitOnes = -1.0;

}  // namespace

std::string_view backbone_name(Backbone b) {
  return b == Backbone::gopt ? "gopt" : "lstm";
}

Backbone parse_backbone(std::string_view name) {
  if (name == "gopt" || name == "transformer") return Backbone::gopt;
  if (name == "lstm") return Backbone::lstm;
  throw ConfigError("unknown backbone '" + std::string(name) + "' (expected gopt or lstm)");
}

void ModelConfig::validate() const {
  if (num_phones < 2) throw ConfigError("num_phones must be at least 2");
  if (embed_dim < 2) throw ConfigError("embed_dim must be at least 2");
  if (num_layers == 0) throw ConfigError("num_layers must be positive");
  if (num_heads == 0 || embed_dim % num_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (ffn_dim == 0) throw ConfigError("ffn_dim must be positive");
  if (max_phones == 0) throw ConfigError("max_phones must be positive");
  if (num_cls != kUtteranceAspects) throw ConfigError("num_cls is fixed at 5");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

Batch make_batch(std::span<const BatchItem> items, const ModelConfig& cfg, std::size_t pad_to) {
  if (items.empty()) throw ContractError("make_batch: empty batch");
  Batch batch;
  batch.size = items.size();
  batch.feature_dim = 2 * cfg.num_phones;
  for (const auto& item : items) {
    const auto& seq = *item.seq;
    const std::string id = item.id.empty() ? std::string("<unnamed>") : std::string(item.id);
    if (seq.length() == 0) throw DataError("utterance " + id + " has no phones");
    if (seq.length() > cfg.max_phones) {
      throw CapacityError("utterance " + id + " has " + std::to_string(seq.length()) +
                          " phones, model capacity is " + std::to_string(cfg.max_phones));
    }
    if (seq.num_phones != cfg.num_phones) {
      throw DataError("utterance " + id + " has " + std::to_string(seq.feature_dim()) +
                      "-dim GOP features, model expects " + std::to_string(batch.feature_dim));
    }
    batch.lengths.push_back(seq.length());
    batch.max_len = std::max(batch.max_len, seq.length());
  }
  if (pad_to > 0) {
    if (pad_to < batch.max_len || pad_to > cfg.max_phones) {
      throw ContractError("make_batch: cannot pad to " + std::to_string(pad_to));
    }
    batch.max_len = pad_to;
  }
  const std::size_t rows = batch.size * batch.max_len;
  batch.features.assign(rows * batch.feature_dim, 0.0);
  batch.phones.assign(rows, cfg.num_phones);
  batch.mask.assign(rows, 0);
  for (std::size_t b = 0; b < batch.size; ++b) {
    const auto& seq = *items[b].seq;
    for (std::size_t t = 0; t < seq.length(); ++t) {
      const std::size_t r = b * batch.max_len + t;
      const auto row = seq.row(t);
      std::copy(row.begin(), row.end(), batch.features.begin() + r * batch.feature_dim);
      if (seq.canonical_phones[t] >= cfg.num_phones) {
        throw InventoryError("utterance " + std::string(items[b].id) + " phone " +
                             std::to_string(t) + " has canonical index " +
                             std::to_string(seq.canonical_phones[t]));
      }
      batch.phones[r] = seq.canonical_phones[t];
      batch.mask[r] = 1;
    }
  }
  return batch;
}

std::vector<ModelOutput> unpack(const BatchOutput& out, const Batch& batch) {
  std::vector<ModelOutput> result(batch.size);
  for (std::size_t b = 0; b < batch.size; ++b) {
    auto& r = result[b];
    for (std::size_t k = 0; k < kUtteranceAspects; ++k) r.utterance_scores[k] = out.utterance.at(b, k);
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
      const std::size_t row = b * batch.max_len + t;
      r.phone_scores.push_back(out.phone[row]);
      r.word_scores_per_phone.push_back(
          {out.word.at(row, 0), out.word.at(row, 1), out.word.at(row, 2)});
    }
  }
  return result;
}

ScoringModel::ScoringModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg.embed_dim;
  const std::size_t p = cfg.num_phones;
  const double table_bound = 1.0 / std::sqrt(static_cast<double>(d));

  gop_projection_ = dense("gop_projection", 2 * p, d);
  if (cfg.use_phone_embedding) {
    phone_embedding_ = weight("phone_embedding", p + 1, d);
    init_bound_.back() = table_bound;
  }
  positional_embedding_ =
      weight("positional_embedding", cfg.max_phones + (cfg.cls_positional ? cfg.num_cls : 0), d);
  init_bound_.back() = table_bound;

  if (cfg.backbone == Backbone::gopt) {
    cls_tokens_ = weight("cls_tokens", cfg.num_cls, d);
    init_bound_.back() = table_bound;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const std::string prefix = "encoder." + std::to_string(l) + ".";
      EncoderLayer layer;
      layer.query = dense(prefix + "attn.query", d, d);
      layer.key = dense(prefix + "attn.key", d, d);
      layer.value = dense(prefix + "attn.value", d, d);
      layer.output = dense(prefix + "attn.output", d, d);
      layer.attn_norm = norm(prefix + "attn_norm", d);
      layer.ffn_in = dense(prefix + "ffn.in", d, cfg.ffn_dim);
      layer.ffn_out = dense(prefix + "ffn.out", cfg.ffn_dim, d);
      layer.ffn_norm = norm(prefix + "ffn_norm", d);
      layers_.push_back(std::move(layer));
    }
  } else {
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const std::string prefix = "lstm." + std::to_string(l) + ".";
      LstmLayer layer;
      layer.w_ih = weight(prefix + "w_ih", d, 4 * d);
      layer.w_hh = weight(prefix + "w_hh", d, 4 * d);
      layer.bias = vector(prefix + "bias", 4 * d);
      lstm_.push_back(std::move(layer));
    }
  }

  auto head = [&](const std::string& name) {
    return Head{norm("head." + name + ".norm", d), dense("head." + name + ".dense", d, 1)};
  };
  phone_head_ = head("phone_accuracy");
  word_heads_ = {head("word_accuracy"), head("word_stress"), head("word_total")};
  utterance_heads_ = {head("utt_accuracy"), head("utt_completeness"), head("utt_fluency"),
                      head("utt_prosodic"), head("utt_total")};
}

Tensor ScoringModel::weight(const std::string& name, std::size_t rows, std::size_t cols) {
  Tensor t = Tensor::zeros({rows, cols}, true);
  params_.emplace_back(name, t);
  init_bound_.push_back(1.0 / std::sqrt(static_cast<double>(rows)));
  return t;
}

Tensor ScoringModel::vector(const std::string& name, std::size_t n) {
  Tensor t = Tensor::zeros({n}, true);
  params_.emplace_back(name, t);
  init_bound_.push_back(kInitZeros);
  return t;
}

ScoringModel::Dense ScoringModel::dense(const std::string& name, std::size_t in, std::size_t out) {
  Dense layer;
  layer.weight = weight(name + ".weight", in, out);
  layer.bias = vector(name + ".bias", out);
  return layer;
}

ScoringModel::Norm ScoringModel::norm(const std::string& name, std::size_t d) {
  Norm n;
  n.gain = vector(name + ".gain", d);
  init_bound_.back() = kInitOnes;
  n.bias = vector(name + ".bias", d);
  return n;
}

ScoringModel ScoringModel::init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  ScoringModel model(cfg);
  Rng rng(seed);
  for (std::size_t i = 0; i < model.params_.size(); ++i) {
    const double bound = model.init_bound_[i];
    for (double& v : model.params_[i].second.data()) {
      if (bound > 0.0) {
        v = rng.uniform(-bound, bound);
      } else {
        v = bound == kInitOnes ? 1.0 : 0.0;
      }
    }
  }
  return model;
}

ScoringModel ScoringModel::clone() const {
  ScoringModel copy(cfg_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto src = params_[i].second.data();
    auto dst = copy.params_[i].second.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return copy;
}

std::size_t ScoringModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

void ScoringModel::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

Tensor ScoringModel::apply_head(Tape& tape, const Head& head, const Tensor& x) const {
  Tensor h = layer_norm(tape, x, head.norm.gain, head.norm.bias);
  return add_row(tape, matmul(tape, h, head.dense.weight), head.dense.bias);
}

Tensor ScoringModel::embed_tokens(Tape& tape, const Batch& batch, bool with_positions) const {
  const std::size_t rows = batch.size * batch.max_len;
  Tensor gop = Tensor::from({rows, batch.feature_dim}, batch.features);
  Tensor tokens = add_row(tape, matmul(tape, gop, gop_projection_.weight), gop_projection_.bias);
  if (cfg_.use_phone_embedding) {
    tokens = add(tape, tokens, gather_rows(tape, phone_embedding_, batch.phones));
  }
  if (with_positions) {
    const std::size_t offset = cfg_.cls_positional ? cfg_.num_cls : 0;
    std::vector<std::size_t> pos(rows);
    for (std::size_t r = 0; r < rows; ++r) pos[r] = offset + r % batch.max_len;
    tokens = add(tape, tokens, gather_rows(tape, positional_embedding_, pos));
  }
  return tokens;
}

Tensor ScoringModel::encode_gopt(Tape& tape, const Batch& batch, Rng* rng) const {
  const std::size_t n_cls = cfg_.num_cls;
  const std::size_t seq_len = n_cls + batch.max_len;
  const std::size_t d = cfg_.embed_dim;
  const std::size_t heads = cfg_.num_heads;
  const std::size_t head_dim = d / heads;
  const bool drop = rng != nullptr && cfg_.dropout > 0.0;

  Tensor tokens = embed_tokens(tape, batch, true);
  Tensor cls = cls_tokens_;
  if (cfg_.cls_positional) cls = add(tape, cls, slice_rows(tape, positional_embedding_, 0, n_cls));

  // Row layout per utterance: [cls_0 .. cls_4, phone_0 .. phone_{T-1}].
  const std::vector<Tensor> pieces{cls, tokens};
  Tensor pool = concat_rows(tape, pieces);
  std::vector<std::size_t> order;
  order.reserve(batch.size * seq_len);
  std::vector<Mask> key_masks(batch.size, Mask(seq_len, 1));
  for (std::size_t b = 0; b < batch.size; ++b) {
    for (std::size_t k = 0; k < n_cls; ++k) order.push_back(k);
    for (std::size_t t = 0; t < batch.max_len; ++t) {
      order.push_back(n_cls + b * batch.max_len + t);
      key_masks[b][n_cls + t] = batch.mask[b * batch.max_len + t];
    }
  }
  Tensor h = gather_rows(tape, pool, order);
  if (drop) h = dropout(tape, h, cfg_.dropout, *rng);

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (const auto& layer : layers_) {
    Tensor q = add_row(tape, matmul(tape, h, layer.query.weight), layer.query.bias);
    Tensor k = add_row(tape, matmul(tape, h, layer.key.weight), layer.key.bias);
    Tensor v = add_row(tape, matmul(tape, h, layer.value.weight), layer.value.bias);

    std::vector<Tensor> contexts;
    contexts.reserve(batch.size);
    for (std::size_t b = 0; b < batch.size; ++b) {
      Tensor qb = slice_rows(tape, q, b * seq_len, seq_len);
      Tensor kb = slice_rows(tape, k, b * seq_len, seq_len);
      Tensor vb = slice_rows(tape, v, b * seq_len, seq_len);
      std::vector<Tensor> per_head;
      for (std::size_t hd = 0; hd < heads; ++hd) {
        Tensor qh = heads == 1 ? qb : slice_cols(tape, qb, hd * head_dim, head_dim);
        Tensor kh = heads == 1 ? kb : slice_cols(tape, kb, hd * head_dim, head_dim);
        Tensor vh = heads == 1 ? vb : slice_cols(tape, vb, hd * head_dim, head_dim);
        Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
        Tensor weights = softmax_rows(tape, scores, key_masks[b]);
        per_head.push_back(matmul(tape, weights, vh));
      }
      contexts.push_back(heads == 1 ? per_head.front() : concat_cols(tape, per_head));
    }
    Tensor context = concat_rows(tape, contexts);
    Tensor attn = add_row(tape, matmul(tape, context, layer.output.weight), layer.output.bias);
    if (drop) attn = dropout(tape, attn, cfg_.dropout, *rng);
    h = layer_norm(tape, add(tape, h, attn), layer.attn_norm.gain, layer.attn_norm.bias);

    Tensor hidden = relu(tape, add_row(tape, matmul(tape, h, layer.ffn_in.weight), layer.ffn_in.bias));
    Tensor ffn = add_row(tape, matmul(tape, hidden, layer.ffn_out.weight), layer.ffn_out.bias);
    if (drop) ffn = dropout(tape, ffn, cfg_.dropout, *rng);
    h = layer_norm(tape, add(tape, h, ffn), layer.ffn_norm.gain, layer.ffn_norm.bias);
  }
  return h;
}

BatchOutput ScoringModel::forward_gopt(Tape& tape, const Batch& batch, Rng* rng) const {
  const std::size_t n_cls = cfg_.num_cls;
  const std::size_t seq_len = n_cls + batch.max_len;
  Tensor h = encode_gopt(tape, batch, rng);

  std::vector<Tensor> utt;
  for (std::size_t k = 0; k < kUtteranceAspects; ++k) {
    std::vector<std::size_t> rows(batch.size);
    for (std::size_t b = 0; b < batch.size; ++b) rows[b] = b * seq_len + k;
    utt.push_back(apply_head(tape, utterance_heads_[k], gather_rows(tape, h, rows)));
  }

  std::vector<std::size_t> phone_rows;
  phone_rows.reserve(batch.size * batch.max_len);
  for (std::size_t b = 0; b < batch.size; ++b)
    for (std::size_t t = 0; t < batch.max_len; ++t) phone_rows.push_back(b * seq_len + n_cls + t);
  Tensor phones = gather_rows(tape, h, phone_rows);

  std::vector<Tensor> words;
  for (const auto& head : word_heads_) words.push_back(apply_head(tape, head, phones));

  return BatchOutput{concat_cols(tape, utt), apply_head(tape, phone_head_, phones),
                     concat_cols(tape, words)};
}

BatchOutput ScoringModel::forward_lstm(Tape& tape, const Batch& batch) const {
  const std::size_t d = cfg_.embed_dim;
  const std::size_t bsz = batch.size;
  const std::size_t steps = batch.max_len;
  Tensor seq = embed_tokens(tape, batch, true);  // batch-major [B*T x d]

  // time-major row t*B + b -> batch-major row b*T + t
  std::vector<std::size_t> to_batch_major(bsz * steps);
  for (std::size_t b = 0; b < bsz; ++b)
    for (std::size_t t = 0; t < steps; ++t) to_batch_major[b * steps + t] = t * bsz + b;

  for (const auto& layer : lstm_) {
    Tensor h = Tensor::zeros({bsz, d});
    Tensor c = Tensor::zeros({bsz, d});
    std::vector<Tensor> outputs;
    outputs.reserve(steps);
    std::vector<std::size_t> rows(bsz);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t b = 0; b < bsz; ++b) rows[b] = b * steps + t;
      Tensor x = gather_rows(tape, seq, rows);
      Tensor gates = add_row(
          tape, add(tape, matmul(tape, x, layer.w_ih), matmul(tape, h, layer.w_hh)), layer.bias);
      Tensor in_gate = sigmoid(tape, slice_cols(tape, gates, 0, d));
      Tensor forget_gate = sigmoid(tape, slice_cols(tape, gates, d, d));
      Tensor candidate = tanh(tape, slice_cols(tape, gates, 2 * d, d));
      Tensor out_gate = sigmoid(tape, slice_cols(tape, gates, 3 * d, d));
      c = add(tape, mul(tape, forget_gate, c), mul(tape, in_gate, candidate));
      h = mul(tape, out_gate, tanh(tape, c));
      outputs.push_back(h);
    }
    seq = gather_rows(tape, concat_rows(tape, outputs), to_batch_major);
  }

  // Every utterance head reads the last real timestep.
  std::vector<std::size_t> last(bsz);
  for (std::size_t b = 0; b < bsz; ++b) last[b] = b * steps + batch.lengths[b] - 1;
  Tensor summary = gather_rows(tape, seq, last);
  std::vector<Tensor> utt;
  for (const auto& head : utterance_heads_) utt.push_back(apply_head(tape, head, summary));

  std::vector<Tensor> words;
  for (const auto& head : word_heads_) words.push_back(apply_head(tape, head, seq));
  return BatchOutput{concat_cols(tape, utt), apply_head(tape, phone_head_, seq),
                     concat_cols(tape, words)};
}

BatchOutput ScoringModel::forward(Tape& tape, const Batch& batch, Rng* dropout_rng) const {
  if (batch.feature_dim != 2 * cfg_.num_phones) {
    throw DimensionError("batch feature width " + std::to_string(batch.feature_dim) +
                         " does not match model input " + std::to_string(2 * cfg_.num_phones));
  }
  if (batch.max_len > cfg_.max_phones) {
    throw CapacityError("batch length " + std::to_string(batch.max_len) + " exceeds capacity " +
                        std::to_string(cfg_.max_phones));
  }
  if (cfg_.backbone == Backbone::gopt) return forward_gopt(tape, batch, dropout_rng);
  return forward_lstm(tape, batch);
}

std::vector<std::uint8_t> ScoringModel::serialize() const {
  ByteWriter w;
  w.magic("GOPT");
  w.u32(kCheckpointVersion);
  w.u32(cfg_.backbone == Backbone::gopt ? 0 : 1);
  w.u32(static_cast<std::uint32_t>(cfg_.num_phones));
  w.u32(static_cast<std::uint32_t>(cfg_.embed_dim));
  w.u32(static_cast<std::uint32_t>(cfg_.num_layers));
  w.u32(static_cast<std::uint32_t>(cfg_.num_heads));
  w.u32(static_cast<std::uint32_t>(cfg_.ffn_dim));
  w.u32(static_cast<std::uint32_t>(cfg_.max_phones));
  w.u32(static_cast<std::uint32_t>(cfg_.num_cls));
  w.u32(cfg_.use_phone_embedding ? 1 : 0);
  w.u32(cfg_.cls_positional ? 1 : 0);
  w.f64(cfg_.dropout);
  w.u32(static_cast<std::uint32_t>(params_.size()));
  for (const auto& [name, t] : params_) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.text(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t dim : t.shape()) w.u32(static_cast<std::uint32_t>(dim));
    for (double v : t.data()) w.f64(v);
  }
  return w.take();
}

ScoringModel ScoringModel::deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  r.expect_magic("GOPT");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  ModelConfig cfg;
  const std::uint32_t backbone = r.u32();
  if (backbone > 1) throw FormatError("checkpoint: unknown backbone code " + std::to_string(backbone));
  cfg.backbone = backbone == 0 ? Backbone::gopt : Backbone::lstm;
  cfg.num_phones = r.u32();
  cfg.embed_dim = r.u32();
  cfg.num_layers = r.u32();
  cfg.num_heads = r.u32();
  cfg.ffn_dim = r.u32();
  cfg.max_phones = r.u32();
  cfg.num_cls = r.u32();
  cfg.use_phone_embedding = r.u32() != 0;
  cfg.cls_positional = r.u32() != 0;
  cfg.dropout = r.f64();
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
  }
  ScoringModel model(cfg);
  const std::uint32_t count = r.u32();
  if (count != model.params_.size()) {
    throw FormatError("checkpoint: " + std::to_string(count) + " tensors, config implies " +
                      std::to_string(model.params_.size()));
  }
  for (auto& [name, t] : model.params_) {
    const std::string stored = r.text(r.u32());
    if (stored != name) throw FormatError("checkpoint: expected tensor '" + name + "', found '" + stored + "'");
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& dim : shape) dim = r.u32();
    if (shape != t.shape()) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_string(shape) +
                        ", expected " + shape_string(t.shape()));
    }
    for (double& v : t.data()) v = r.f64();
  }
  r.expect_end();
  return model;
}

void ScoringModel::save(const std::filesystem::path& path) const {
  write_file_bytes(path, serialize());
}

ScoringModel ScoringModel::load(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path));
}

}  // namespace gopt
