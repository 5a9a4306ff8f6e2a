#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "embkit/datamodel.hpp"
#include "embkit/encoder_handle.hpp"

// Toy text encoder: hashed tokens -> embedding table -> mean pooling ->
// linear projection -> L2 normalization, with closed-form gradients.
namespace embkit::encoder {

struct TokenizerConfig {
  bool lowercase = true;
  bool split_cjk = true;
  bool operator==(const TokenizerConfig&) const = default;
};

using TokenSeq = std::vector<std::uint32_t>;

// Bucket 0 is reserved for the empty text and for masked positions; real
// tokens hash into [1, V) whenever V >= 2.
inline constexpr std::uint32_t kReservedBucket = 0;

std::vector<std::string> split_tokens(std::string_view text, const TokenizerConfig& cfg);
std::uint32_t bucket_of(std::string_view token, std::uint32_t vocab_buckets);
TokenSeq tokenize(std::string_view text, const TokenizerConfig& cfg, std::uint32_t vocab_buckets);

struct ModelShape {
  std::uint32_t vocab_buckets = 32768;
  std::uint32_t embed_dim = 64;
  std::uint32_t out_dim = 64;
};

class EncoderModel {
 public:
  // token_table ~ U(-0.5/d_in, 0.5/d_in); projection is the identity padded
  // with zeros when d_in != d_out.
  static EncoderModel initialize(const ModelShape& shape, std::uint64_t seed, TokenizerConfig tokenizer = {});

  EncoderModel(const ModelShape& shape, std::uint64_t seed, TokenizerConfig tokenizer,
               std::vector<float> token_table, std::vector<float> projection);

  std::uint32_t vocab_buckets() const { return shape_.vocab_buckets; }
  std::uint32_t embed_dim() const { return shape_.embed_dim; }
  std::uint32_t out_dim() const { return shape_.out_dim; }
  const ModelShape& shape() const { return shape_; }
  std::uint64_t seed() const { return seed_; }
  const TokenizerConfig& tokenizer() const { return tokenizer_; }

  std::span<const float> token_row(std::uint32_t bucket) const {
    return {token_table_.data() + static_cast<std::size_t>(bucket) * shape_.embed_dim, shape_.embed_dim};
  }
  std::span<float> token_row(std::uint32_t bucket) {
    return {token_table_.data() + static_cast<std::size_t>(bucket) * shape_.embed_dim, shape_.embed_dim};
  }
  // d_in x d_out, row-major.
  std::span<const float> projection() const { return projection_; }
  std::span<float> projection() { return projection_; }
  std::span<const float> token_table() const { return token_table_; }
  std::span<float> token_table() { return token_table_; }

  TokenSeq tokenize(std::string_view text) const {
    return encoder::tokenize(text, tokenizer_, shape_.vocab_buckets);
  }

  bool operator==(const EncoderModel& other) const {
    return shape_.vocab_buckets == other.shape_.vocab_buckets && shape_.embed_dim == other.shape_.embed_dim &&
           shape_.out_dim == other.shape_.out_dim && seed_ == other.seed_ && tokenizer_ == other.tokenizer_ &&
           token_table_ == other.token_table_ && projection_ == other.projection_;
  }

 private:
  ModelShape shape_;
  std::uint64_t seed_ = 0;
  TokenizerConfig tokenizer_;
  std::vector<float> token_table_;
  std::vector<float> projection_;
};

// Intermediate values of a batch forward pass, kept for backpropagation.
struct ForwardCache {
  std::size_t rows = 0;
  std::vector<TokenSeq> tokens;
  std::vector<double> pooled;     // rows x d_in
  std::vector<double> projected;  // rows x d_out
  std::vector<double> norms;      // rows
  std::vector<double> unit;       // rows x d_out, L2-normalized output
  std::vector<bool> degenerate;   // row projected to zero; output is e1
  std::size_t degenerate_count = 0;

  std::span<const double> unit_row(std::size_t i, std::size_t d_out) const { return {unit.data() + i * d_out, d_out}; }
};

ForwardCache forward(const EncoderModel& model, std::span<const TokenSeq> tokens);

// Sparse-in-tokens gradient of a scalar loss w.r.t. the encoder parameters.
struct Gradients {
  std::vector<double> projection;                          // d_in x d_out
  std::map<std::uint32_t, std::vector<double>> token_rows;  // bucket -> d_in

  explicit Gradients(const EncoderModel& model)
      : projection(static_cast<std::size_t>(model.embed_dim()) * model.out_dim(), 0.0) {}
  void clear();
};

// Accumulates dL/dparams given dL/d(unit outputs) (rows x d_out).
void backward(const EncoderModel& model, const ForwardCache& cache, std::span<const double> grad_unit,
              Gradients& grads);

// Plain SGD; parameters stay f32 so checkpoints round-trip exactly.
void apply_sgd(EncoderModel& model, const Gradients& grads, double learning_rate);

// "instruction query" when the instruction is non-empty, else the query.
std::string prefix_instruction(std::string_view instruction, std::string_view query);

struct EncodeStats {
  std::size_t degenerate_rows = 0;
};

// Unit-norm rows. Query-side texts get the instruction prefixed; a row that
// projects to the zero vector is replaced by e1 and counted in `stats`.
EmbeddingMatrix encode(const EncoderModel& model, std::span<const std::string> texts, Side side,
                       std::optional<std::string_view> instruction = std::nullopt, EncodeStats* stats = nullptr);

// "EMBM" | u32 version | u32 V | u32 d_in | u32 d_out | u64 seed | token table f32 | projection f32.
// Tokenizer flags live in the optional sidecar "<path>.json" under "tokenizer".
void save_model(const EncoderModel& model, const std::filesystem::path& path);
EncoderModel load_model(const std::filesystem::path& path);
std::string serialize_model(const EncoderModel& model);
EncoderModel deserialize_model(std::string_view bytes, const std::string& what, TokenizerConfig tokenizer = {});

// Adapts a model to the evaluation surface.
class ModelEncoder final : public EncoderHandle {
 public:
  explicit ModelEncoder(EncoderModel model) : model_(std::move(model)) {}
  EmbeddingMatrix encode(std::span<const std::string> texts, Side side) const override;
  std::size_t dim() const override { return model_.out_dim(); }
  const EncoderModel& model() const { return model_; }

 private:
  EncoderModel model_;
};

}  // namespace embkit::encoder
