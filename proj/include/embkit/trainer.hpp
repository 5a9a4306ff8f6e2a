#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "embkit/datamodel.hpp"
#include "embkit/encoder.hpp"
#include "embkit/rng.hpp"

// Three-stage training: masked-reconstruction pre-training, contrastive
// training with in-batch negatives, and instruction-prefixed fine-tuning with
// one mined hard negative per pair. Optimizer is constant-rate SGD.
namespace embkit::train {

using encoder::EncoderModel;

enum class Stage { Pretrain, General, TaskSpecific };

std::string_view stage_name(Stage stage);
std::optional<Stage> parse_stage(std::string_view s);

struct TrainConfig {
  Stage stage = Stage::General;
  std::size_t batch_size = 64;
  double temperature = 0.05;
  double learning_rate = 0.01;
  std::size_t steps = 100;
  std::uint64_t seed = 0;
  double mask_ratio = 0.3;                          // pretrain only
  std::map<std::string, std::string> instructions;  // taskspecific only
  std::size_t rank_lo = 2;                          // hard-negative rank window, 1-based, inclusive
  std::size_t rank_hi = 100;
  std::size_t remine_every = 0;                     // 0: mine once before training
};

// Stage defaults. Pre-training uses a much larger rate: the decoder starts near
// zero and its logits only move by lr * |embedding| per step.
TrainConfig default_config(Stage stage);

void validate(const TrainConfig& cfg);
OrderedJson to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j);

struct LabeledTaskPair {
  TextPair pair;
  std::string task_tag;
  std::optional<std::string> hard_negative;
};

// TextPair schema plus {"task": str, "neg": str?}.
std::vector<LabeledTaskPair> read_labeled_pairs(const std::filesystem::path& path);
void write_labeled_pairs(std::span<const LabeledTaskPair> pairs, const std::filesystem::path& path);

struct LossCurve {
  std::vector<double> losses;
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct InfoNceResult {
  double loss = 0.0;
  std::vector<double> grad_queries;   // B x dim
  std::vector<double> grad_passages;  // M x dim
};

// loss = mean_i [ -log softmax_j(<q_i, p_j> / tau)[i] ] over M >= B passage
// columns; column i is row i's positive, every other column a negative.
// Rows must be unit-norm (within 1e-3) and tau > 0.
InfoNceResult info_nce(std::span<const double> queries, std::size_t batch, std::span<const double> passages,
                       std::size_t columns, std::size_t dim, double temperature);

struct TrainResult {
  EncoderModel model;
  LossCurve curve;
};

TrainResult train_general(EncoderModel model, std::span<const TextPair> pairs, const TrainConfig& cfg);

// instruction + " " + query (query unchanged for an empty instruction).
// Throws ValidationError for an unregistered tag.
std::string attach_instruction(std::string_view query, const std::string& task_tag, const TrainConfig& cfg);

struct MiningStats {
  std::size_t mined = 0;
  std::size_t fallbacks = 0;
};

// Ranks `corpus` against each instructed query, drops passages whose
// normalized text equals the positive, and samples one negative uniformly
// from the 1-based rank window [rank_lo, rank_hi] of what remains. An empty
// window falls back to the top remaining passage.
std::vector<LabeledTaskPair> mine_hard_negatives(const EncoderModel& model, std::span<const LabeledTaskPair> pairs,
                                                 std::span<const std::string> corpus, const TrainConfig& cfg,
                                                 MiningStats* stats = nullptr);

// Pairs without a hard negative are mined from their task's passage pool
// (positives and given negatives sharing the tag), and re-mined every
// `remine_every` steps when that is non-zero.
TrainResult train_taskspecific(EncoderModel model, std::span<const LabeledTaskPair> pairs, const TrainConfig& cfg,
                               MiningStats* stats = nullptr);

// Linear decoder from the sentence embedding to vocabulary logits; only
// lives for the duration of pre-training.
struct MaeDecoder {
  std::uint32_t in_dim = 0;
  std::uint32_t vocab = 0;
  std::vector<float> weights;  // in_dim x vocab

  static MaeDecoder initialize(std::uint32_t in_dim, std::uint32_t vocab, std::uint64_t seed);
};

struct MaskedText {
  encoder::TokenSeq polluted;          // masked positions replaced by bucket 0
  std::vector<std::uint32_t> targets;  // original buckets at masked positions
};

// ceil(ratio * len) positions (at least one); nullopt for texts under two tokens.
std::optional<MaskedText> mask_tokens(const encoder::TokenSeq& tokens, double mask_ratio, Rng& rng);

struct MaeGradients {
  encoder::Gradients encoder;
  std::vector<double> decoder;  // in_dim x vocab

  MaeGradients(const EncoderModel& model, const MaeDecoder& dec)
      : encoder(model), decoder(static_cast<std::size_t>(dec.in_dim) * dec.vocab, 0.0) {}
};

// Mean cross-entropy of the original buckets at masked positions, predicted
// from the polluted text's embedding. Accumulates gradients when `grads` is set.
double mae_loss(const EncoderModel& model, const MaeDecoder& dec, std::span<const MaskedText> batch,
                MaeGradients* grads = nullptr);

struct MaeStepResult {
  double loss = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;
};

MaeStepResult mae_pretrain_step(EncoderModel& model, MaeDecoder& dec, std::span<const std::string> texts,
                                const TrainConfig& cfg, Rng& rng);

// Runs cfg.steps MAE steps over seeded mini-batches of `corpus`; the decoder is discarded.
TrainResult pretrain(EncoderModel model, std::span<const std::string> corpus, const TrainConfig& cfg);

// Model file plus "<path>.json" with the tokenizer and the config used.
void save_checkpoint(const EncoderModel& model, const TrainConfig& cfg, const std::filesystem::path& path);

struct RecipeResult {
  EncoderModel pretrained;
  EncoderModel general;
  EncoderModel finetuned;
  LossCurve pretrain_curve;
  LossCurve general_curve;
  LossCurve finetune_curve;
};

struct RecipeConfigs {
  TrainConfig pretrain;
  TrainConfig general;
  TrainConfig taskspecific;
};

// Chains the three stages. With a checkpoint dir, writes pretrain.embm,
// general.embm, finetune.embm (+ sidecars and loss_<stage>.csv) as each
// stage completes, so a failure leaves earlier checkpoints intact.
RecipeResult run_recipe(const EncoderModel& init, std::span<const std::string> corpus,
                        std::span<const TextPair> unlabeled, std::span<const LabeledTaskPair> labeled,
                        const RecipeConfigs& cfgs, const std::optional<std::filesystem::path>& checkpoint_dir);

}  // namespace embkit::train
