#pragma once

// GOPT scoring model: projected GOP features + canonical phone embedding +
// positional embedding, five prepended [cls] aspect tokens, a post-LN
// Transformer encoder, and nine regression heads (1 phone, 3 word,
// 5 utterance). An LSTM backbone with the same embedding and heads is kept
// for comparison.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gopt/gop.hpp"
#include "gopt/tensor.hpp"

namespace gopt {

class Rng;

inline constexpr std::size_t kUtteranceAspects = 5;  // accuracy, completeness, fluency, prosodic, total
inline constexpr std::size_t kWordAspects = 3;       // accuracy, stress, total

enum class Backbone { gopt, lstm };

std::string_view backbone_name(Backbone b);
Backbone parse_backbone(std::string_view name);

struct ModelConfig {
  Backbone backbone = Backbone::gopt;
  std::size_t num_phones = 42;
  std::size_t embed_dim = 24;
  std::size_t num_layers = 3;
  std::size_t num_heads = 1;
  std::size_t ffn_dim = 96;
  std::size_t max_phones = 50;
  std::size_t num_cls = 5;
  double dropout = 0.0;
  bool use_phone_embedding = true;
  // Give the [cls] tokens their own positional rows (table grows by num_cls).
  bool cls_positional = false;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct BatchItem {
  const GopSequence* seq = nullptr;
  std::string_view id;
};

// Utterances padded to a common length. Padded positions carry zero
// features and the reserved padding phone (index num_phones).
struct Batch {
  std::size_t size = 0;
  std::size_t max_len = 0;
  std::size_t feature_dim = 0;
  std::vector<double> features;     // (size * max_len) x feature_dim
  std::vector<std::size_t> phones;  // size * max_len
  Mask mask;                        // size * max_len, 1 = real phone
  std::vector<std::size_t> lengths;
};

// pad_to > 0 pads every utterance to that length instead of the batch max.
Batch make_batch(std::span<const BatchItem> items, const ModelConfig& cfg, std::size_t pad_to = 0);

struct BatchOutput {
  Tensor utterance;  // [B x 5]
  Tensor phone;      // [B*T x 1]
  Tensor word;       // [B*T x 3], per phone before word aggregation
};

struct ModelOutput {
  std::array<double, kUtteranceAspects> utterance_scores{};
  std::vector<double> phone_scores;
  std::vector<std::array<double, kWordAspects>> word_scores_per_phone;
};

std::vector<ModelOutput> unpack(const BatchOutput& out, const Batch& batch);

class ScoringModel {
 public:
  using NamedTensor = std::pair<std::string, Tensor>;

  // Weights and embedding tables ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases
  // zero, layer-norm gains one. Deterministic in `seed`.
  static ScoringModel init_parameters(const ModelConfig& cfg, std::uint64_t seed);

  ScoringModel(ScoringModel&&) = default;
  ScoringModel& operator=(ScoringModel&&) = default;
  ScoringModel(const ScoringModel&) = delete;
  ScoringModel& operator=(const ScoringModel&) = delete;

  ScoringModel clone() const;

  // Pure function of parameters and batch unless `dropout_rng` is given and
  // the configured dropout rate is positive.
  BatchOutput forward(Tape& tape, const Batch& batch, Rng* dropout_rng = nullptr) const;

  const ModelConfig& config() const { return cfg_; }
  std::span<const NamedTensor> parameters() const { return params_; }
  std::size_t parameter_count() const;
  void zero_grad();

  // Checkpoint: "GOPT", u32 version, config block, u32 tensor count, then per
  // tensor u32 name length, name, u32 rank, u32 dims, little-endian f64 data.
  std::vector<std::uint8_t> serialize() const;
  static ScoringModel deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static ScoringModel load(const std::filesystem::path& path);

 private:
  struct Dense {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out]
  };
  struct Norm {
    Tensor gain;
    Tensor bias;
  };
  struct EncoderLayer {
    Dense query, key, value, output;
    Dense ffn_in, ffn_out;
    Norm attn_norm, ffn_norm;
  };
  struct LstmLayer {
    Tensor w_ih;  // [in x 4h], gate order i, f, g, o
    Tensor w_hh;  // [h x 4h]
    Tensor bias;  // [4h]
  };
  struct Head {
    Norm norm;
    Dense dense;  // [d x 1]
  };

  explicit ScoringModel(const ModelConfig& cfg);

  Tensor weight(const std::string& name, std::size_t rows, std::size_t cols);
  Tensor vector(const std::string& name, std::size_t n);
  Dense dense(const std::string& name, std::size_t in, std::size_t out);
  Norm norm(const std::string& name, std::size_t d);

  Tensor embed_tokens(Tape& tape, const Batch& batch, bool with_positions) const;
  Tensor encode_gopt(Tape& tape, const Batch& batch, Rng* rng) const;
  BatchOutput forward_gopt(Tape& tape, const Batch& batch, Rng* rng) const;
  BatchOutput forward_lstm(Tape& tape, const Batch& batch) const;
  Tensor apply_head(Tape& tape, const Head& head, const Tensor& x) const;

  ModelConfig cfg_;
  std::vector<NamedTensor> params_;
  std::vector<double> init_bound_;  // per parameter: > 0 uniform bound, 0 zeros, -1 ones

  Dense gop_projection_;
  Tensor phone_embedding_;       // [(P + 1) x d], last row is padding
  Tensor positional_embedding_;  // [L (+ num_cls) x d]
  Tensor cls_tokens_;            // [num_cls x d]
  std::vector<EncoderLayer> layers_;
  std::vector<LstmLayer> lstm_;
  Head phone_head_;
  std::array<Head, kWordAspects> word_heads_;
  std::array<Head, kUtteranceAspects> utterance_heads_;
};

}  // namespace gopt
