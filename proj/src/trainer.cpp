#include "embkit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "embkit/error.hpp"
#include "embkit/text.hpp"

namespace embkit::train {
namespace fs = std::filesystem;
using encoder::ForwardCache;
using encoder::Gradients;
using encoder::TokenSeq;

namespace {

constexpr double kUnitTolerance = 1e-3;

void check_unit_rows(std::span<const double> m, std::size_t rows, std::size_t dim, const char* what) {
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) s += m[i * dim + k] * m[i * dim + k];
    const double norm = std::sqrt(s);
    if (!(std::abs(norm - 1.0) <= kUnitTolerance)) {
      throw ValidationError(std::string("info_nce: ") + what + " row " + std::to_string(i) + " is not unit-norm");
    }
  }
}

void require_stage(const TrainConfig& cfg, Stage expected) {
  validate(cfg);
  if (cfg.stage != expected) {
    throw ValidationError("config stage is " + std::string(stage_name(cfg.stage)) + ", expected " +
                          std::string(stage_name(expected)));
  }
}

// Cycles through seeded permutations of [0, n), one full batch at a time;
// the tail of an epoch that cannot fill a batch is dropped.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed) : order_(n), batch_(batch), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  std::span<const std::size_t> next() {
    if (pos_ + batch_ > order_.size()) reshuffle();
    std::span<const std::size_t> out(order_.data() + pos_, batch_);
    pos_ += batch_;
    return out;
  }

 private:
  void reshuffle() {
    rng_.shuffle(std::span<std::size_t>(order_));
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_ = 0;
  Rng rng_;
};

std::vector<TokenSeq> gather(std::span<const TokenSeq> all, std::span<const std::size_t> idx) {
  std::vector<TokenSeq> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

// One contrastive SGD step; passages holds B positives optionally followed by B hard negatives.
double contrastive_step(EncoderModel& model, const std::vector<TokenSeq>& queries,
                        const std::vector<TokenSeq>& passages, const TrainConfig& cfg, Gradients& grads) {
  const std::size_t d = model.out_dim();
  const ForwardCache qc = encoder::forward(model, queries);
  const ForwardCache pc = encoder::forward(model, passages);
  const InfoNceResult r = info_nce(qc.unit, queries.size(), pc.unit, passages.size(), d, cfg.temperature);
  grads.clear();
  encoder::backward(model, qc, r.grad_queries, grads);
  encoder::backward(model, pc, r.grad_passages, grads);
  encoder::apply_sgd(model, grads, cfg.learning_rate);
  return r.loss;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::Pretrain: return "pretrain";
    case Stage::General: return "general";
    case Stage::TaskSpecific: return "taskspecific";
  }
  return "?";
}

std::optional<Stage> parse_stage(std::string_view s) {
  if (s == "pretrain") return Stage::Pretrain;
  if (s == "general") return Stage::General;
  if (s == "taskspecific") return Stage::TaskSpecific;
  return std::nullopt;
}

TrainConfig default_config(Stage stage) {
  TrainConfig cfg;
  cfg.stage = stage;
  if (stage == Stage::Pretrain) cfg.learning_rate = 1.0;
  return cfg;
}

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (cfg.stage == Stage::General && cfg.batch_size < 2) {
    throw ValidationError("general stage needs batch_size >= 2 for in-batch negatives");
  }
  if (!(cfg.temperature > 0.0) || !std::isfinite(cfg.temperature)) throw ValidationError("temperature must be > 0");
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw ValidationError("learning_rate must be a finite value >= 0");
  }
  if (!(cfg.mask_ratio > 0.0 && cfg.mask_ratio < 1.0)) throw ValidationError("mask_ratio must lie in (0,1)");
  if (cfg.rank_lo < 1 || cfg.rank_lo > cfg.rank_hi) {
    throw ValidationError("hard-negative rank window must satisfy 1 <= lo <= hi");
  }
}

OrderedJson to_json(const TrainConfig& cfg) {
  OrderedJson instr = OrderedJson::object();
  for (const auto& [tag, s] : cfg.instructions) instr[tag] = s;
  return OrderedJson{{"stage", stage_name(cfg.stage)},
                     {"batch_size", cfg.batch_size},
                     {"temperature", cfg.temperature},
                     {"learning_rate", cfg.learning_rate},
                     {"steps", cfg.steps},
                     {"seed", cfg.seed},
                     {"mask_ratio", cfg.mask_ratio},
                     {"instructions", instr},
                     {"hard_negative_rank_window", {cfg.rank_lo, cfg.rank_hi}},
                     {"remine_every", cfg.remine_every}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig cfg;
  try {
    if (auto it = j.find("stage"); it != j.end()) {
      auto st = parse_stage(it->get<std::string>());
      if (!st) throw ParseError("unknown stage \"" + it->get<std::string>() + "\"");
      cfg.stage = *st;
    }
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.temperature = j.value("temperature", cfg.temperature);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.steps = j.value("steps", cfg.steps);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.mask_ratio = j.value("mask_ratio", cfg.mask_ratio);
    if (auto it = j.find("instructions"); it != j.end()) {
      cfg.instructions = it->get<std::map<std::string, std::string>>();
    }
    if (auto it = j.find("hard_negative_rank_window"); it != j.end()) {
      if (!it->is_array() || it->size() != 2) throw ParseError("hard_negative_rank_window must be [lo, hi]");
      cfg.rank_lo = (*it)[0].get<std::size_t>();
      cfg.rank_hi = (*it)[1].get<std::size_t>();
    }
    cfg.remine_every = j.value("remine_every", cfg.remine_every);
  } catch (const Json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

std::vector<LabeledTaskPair> read_labeled_pairs(const fs::path& path) {
  std::vector<LabeledTaskPair> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t) {
    LabeledTaskPair p;
    p.pair = text_pair_from_json(j);
    auto task = j.find("task");
    if (task == j.end() || !task->is_string()) throw ParseError("missing string field \"task\"");
    p.task_tag = task->get<std::string>();
    if (auto neg = j.find("neg"); neg != j.end() && !neg->is_null()) {
      if (!neg->is_string()) throw ParseError("field \"neg\" must be a string");
      p.hard_negative = neg->get<std::string>();
    }
    out.push_back(std::move(p));
  });
  return out;
}

void write_labeled_pairs(std::span<const LabeledTaskPair> pairs, const fs::path& path) {
  JsonlWriter w(path);
  for (const auto& p : pairs) {
    OrderedJson j = to_json(p.pair);
    j["task"] = p.task_tag;
    if (p.hard_negative) j["neg"] = *p.hard_negative;
    w.write(j);
  }
  w.close();
}

std::string LossCurve::to_csv() const {
  std::string out = "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, losses[i]);
    out += buf;
  }
  return out;
}

void LossCurve::write_csv(const fs::path& path) const { write_file(path, to_csv()); }

InfoNceResult info_nce(std::span<const double> queries, std::size_t batch, std::span<const double> passages,
                       std::size_t columns, std::size_t dim, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("info_nce: temperature must be > 0");
  if (batch < 1) throw ValidationError("info_nce: empty batch");
  if (columns < batch) throw ValidationError("info_nce: fewer passages than queries");
  if (queries.size() != batch * dim || passages.size() != columns * dim) {
    throw ValidationError("info_nce: matrix sizes do not match the stated shape");
  }
  check_unit_rows(queries, batch, dim, "query");
  check_unit_rows(passages, columns, dim, "passage");

  InfoNceResult r;
  r.grad_queries.assign(batch * dim, 0.0);
  r.grad_passages.assign(columns * dim, 0.0);
  std::vector<double> logits(columns);
  const double inv_b = 1.0 / static_cast<double>(batch);
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double* q = queries.data() + i * dim;
    for (std::size_t j = 0; j < columns; ++j) {
      const double* p = passages.data() + j * dim;
      double s = 0.0;
      for (std::size_t k = 0; k < dim; ++k) s += q[k] * p[k];
      logits[j] = s / temperature;
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double& z : logits) {
      z = std::exp(z - m);
      sum += z;
    }
    // -log softmax[i] = log(sum) - (s_ii - m); exactly 0 when only the positive exists.
    double diag = 0.0;
    for (std::size_t k = 0; k < dim; ++k) diag += q[k] * passages[i * dim + k];
    total += std::log(sum) - (diag / temperature - m);

    double* gq = r.grad_queries.data() + i * dim;
    for (std::size_t j = 0; j < columns; ++j) {
      const double g = (logits[j] / sum - (j == i ? 1.0 : 0.0)) * inv_b / temperature;
      if (g == 0.0) continue;
      const double* p = passages.data() + j * dim;
      double* gp = r.grad_passages.data() + j * dim;
      for (std::size_t k = 0; k < dim; ++k) {
        gq[k] += g * p[k];
        gp[k] += g * q[k];
      }
    }
  }
  r.loss = total * inv_b;
  return r;
}

TrainResult train_general(EncoderModel model, std::span<const TextPair> pairs, const TrainConfig& cfg) {
  require_stage(cfg, Stage::General);
  if (pairs.empty()) throw ValidationError("general training: no training pairs");
  TrainResult out{std::move(model), {}};
  if (cfg.steps == 0) return out;
  if (pairs.size() < cfg.batch_size) {
    throw ValidationError("general training: " + std::to_string(pairs.size()) + " pairs is fewer than batch_size " +
                          std::to_string(cfg.batch_size));
  }
  std::vector<TokenSeq> q_tok, p_tok;
  q_tok.reserve(pairs.size());
  p_tok.reserve(pairs.size());
  for (const auto& p : pairs) {
    q_tok.push_back(out.model.tokenize(p.query));
    p_tok.push_back(out.model.tokenize(p.passage));
  }
  BatchSampler sampler(pairs.size(), cfg.batch_size, cfg.seed);
  Gradients grads(out.model);
  out.curve.losses.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto idx = sampler.next();
    out.curve.losses.push_back(contrastive_step(out.model, gather(q_tok, idx), gather(p_tok, idx), cfg, grads));
  }
  return out;
}

std::string attach_instruction(std::string_view query, const std::string& task_tag, const TrainConfig& cfg) {
  auto it = cfg.instructions.find(task_tag);
  if (it == cfg.instructions.end()) throw ValidationError("no instruction registered for task \"" + task_tag + "\"");
  return encoder::prefix_instruction(it->second, query);
}

std::vector<LabeledTaskPair> mine_hard_negatives(const EncoderModel& model, std::span<const LabeledTaskPair> pairs,
                                                 std::span<const std::string> corpus, const TrainConfig& cfg,
                                                 MiningStats* stats) {
  validate(cfg);
  std::vector<LabeledTaskPair> out(pairs.begin(), pairs.end());
  if (pairs.empty()) return out;
  if (corpus.empty()) throw ValidationError("hard-negative mining: empty corpus");

  const std::size_t d = model.out_dim();
  const EmbeddingMatrix docs = encoder::encode(model, corpus, Side::Passage);
  std::vector<std::string> corpus_norm;
  corpus_norm.reserve(corpus.size());
  for (const auto& c : corpus) corpus_norm.push_back(text::normalize_for_match(c));

  std::vector<std::string> queries;
  queries.reserve(pairs.size());
  for (const auto& p : pairs) queries.push_back(attach_instruction(p.pair.query, p.task_tag, cfg));
  const EmbeddingMatrix qs = encoder::encode(model, queries, Side::Query);

  Rng rng(mix_seed(cfg.seed, 0x6d696e65));
  std::vector<std::pair<double, std::size_t>> ranked(corpus.size());
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto q = qs.row(i);
    for (std::size_t j = 0; j < corpus.size(); ++j) {
      const auto p = docs.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(q[k]) * p[k];
      ranked[j] = {s, j};
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const std::string pos = text::normalize_for_match(pairs[i].pair.passage);
    candidates.clear();
    for (const auto& [s, j] : ranked) {
      if (corpus_norm[j] != pos) candidates.push_back(j);
    }
    if (candidates.empty()) {
      throw ValidationError("hard-negative mining: corpus holds nothing but the positive for pair " +
                            std::to_string(i));
    }
    const std::size_t hi = std::min(cfg.rank_hi, candidates.size());
    std::size_t pick;
    if (cfg.rank_lo <= hi) {
      pick = candidates[cfg.rank_lo - 1 + rng.below(hi - cfg.rank_lo + 1)];
    } else {
      pick = candidates.front();
      if (stats) ++stats->fallbacks;
    }
    out[i].hard_negative = corpus[pick];
    if (stats) ++stats->mined;
  }
  return out;
}

TrainResult train_taskspecific(EncoderModel model, std::span<const LabeledTaskPair> pairs, const TrainConfig& cfg,
                               MiningStats* stats) {
  require_stage(cfg, Stage::TaskSpecific);
  if (pairs.empty()) throw ValidationError("task-specific training: no training pairs");
  std::set<std::string> tags;
  for (const auto& p : pairs) tags.insert(p.task_tag);
  for (const auto& t : tags) {
    if (!cfg.instructions.contains(t)) throw ValidationError("no instruction registered for task \"" + t + "\"");
  }
  TrainResult out{std::move(model), {}};
  if (cfg.steps == 0) return out;
  if (pairs.size() < cfg.batch_size) {
    throw ValidationError("task-specific training: " + std::to_string(pairs.size()) +
                          " pairs is fewer than batch_size " + std::to_string(cfg.batch_size));
  }

  std::vector<LabeledTaskPair> work(pairs.begin(), pairs.end());
  std::vector<std::size_t> to_mine;
  for (std::size_t i = 0; i < work.size(); ++i) {
    if (!work[i].hard_negative) to_mine.push_back(i);
  }

  // Per-tag passage pools, deduplicated in first-appearance order.
  std::map<std::string, std::vector<std::string>> pools;
  {
    std::map<std::string, std::set<std::string>> seen;
    auto add = [&](const std::string& tag, const std::string& s) {
      if (seen[tag].insert(s).second) pools[tag].push_back(s);
    };
    for (const auto& p : work) {
      add(p.task_tag, p.pair.passage);
      if (p.hard_negative) add(p.task_tag, *p.hard_negative);
    }
  }

  std::uint64_t mining_round = 0;
  auto mine = [&](const EncoderModel& m) {
    std::map<std::string, std::vector<std::size_t>> by_tag;
    for (std::size_t i : to_mine) by_tag[work[i].task_tag].push_back(i);
    for (const auto& [tag, idx] : by_tag) {
      std::vector<LabeledTaskPair> batch;
      for (std::size_t i : idx) batch.push_back(work[i]);
      TrainConfig mcfg = cfg;
      mcfg.seed = mix_seed(cfg.seed, 1000 + mining_round);
      const auto mined = mine_hard_negatives(m, batch, pools[tag], mcfg, stats);
      for (std::size_t k = 0; k < idx.size(); ++k) work[idx[k]].hard_negative = mined[k].hard_negative;
    }
    ++mining_round;
  };
  if (!to_mine.empty()) mine(out.model);

  for (std::size_t i = 0; i < work.size(); ++i) {
    if (text::normalize_for_match(*work[i].hard_negative) == text::normalize_for_match(work[i].pair.passage)) {
      throw ValidationError("pair " + std::to_string(i) + ": hard negative equals the positive passage");
    }
  }

  std::vector<TokenSeq> q_tok, p_tok, n_tok;
  auto tokenize_all = [&] {
    q_tok.clear();
    p_tok.clear();
    n_tok.clear();
    for (const auto& p : work) {
      q_tok.push_back(out.model.tokenize(attach_instruction(p.pair.query, p.task_tag, cfg)));
      p_tok.push_back(out.model.tokenize(p.pair.passage));
      n_tok.push_back(out.model.tokenize(*p.hard_negative));
    }
  };
  tokenize_all();

  BatchSampler sampler(work.size(), cfg.batch_size, cfg.seed);
  Gradients grads(out.model);
  out.curve.losses.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cfg.remine_every > 0 && step > 0 && step % cfg.remine_every == 0 && !to_mine.empty()) {
      mine(out.model);
      tokenize_all();
    }
    const auto idx = sampler.next();
    std::vector<TokenSeq> passages = gather(p_tok, idx);
    for (std::size_t i : idx) passages.push_back(n_tok[i]);
    out.curve.losses.push_back(contrastive_step(out.model, gather(q_tok, idx), passages, cfg, grads));
  }
  return out;
}

MaeDecoder MaeDecoder::initialize(std::uint32_t in_dim, std::uint32_t vocab, std::uint64_t seed) {
  if (in_dim == 0 || vocab < 2) throw ValidationError("decoder needs in_dim >= 1 and vocab >= 2");
  MaeDecoder dec;
  dec.in_dim = in_dim;
  dec.vocab = vocab;
  dec.weights.resize(static_cast<std::size_t>(in_dim) * vocab);
  Rng rng(mix_seed(seed, 0x646563));
  const double a = 0.5 / static_cast<double>(in_dim);
  for (float& w : dec.weights) w = static_cast<float>(rng.uniform(-a, a));
  return dec;
}

std::optional<MaskedText> mask_tokens(const TokenSeq& tokens, double mask_ratio, Rng& rng) {
  if (tokens.size() < 2) return std::nullopt;
  const auto n = std::max<std::size_t>(
      1, std::min(tokens.size(), static_cast<std::size_t>(std::ceil(mask_ratio * static_cast<double>(tokens.size())))));
  std::vector<std::size_t> pos(tokens.size());
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  // Partial Fisher-Yates: the first n entries are a uniform sample.
  for (std::size_t i = 0; i < n; ++i) std::swap(pos[i], pos[i + rng.below(pos.size() - i)]);
  std::sort(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n));
  MaskedText m;
  m.polluted = tokens;
  for (std::size_t i = 0; i < n; ++i) {
    m.targets.push_back(tokens[pos[i]]);
    m.polluted[pos[i]] = encoder::kReservedBucket;
  }
  return m;
}

double mae_loss(const EncoderModel& model, const MaeDecoder& dec, std::span<const MaskedText> batch,
                MaeGradients* grads) {
  if (batch.empty()) throw ValidationError("mae: empty batch");
  if (dec.in_dim != model.out_dim() || dec.vocab != model.vocab_buckets()) {
    throw ValidationError("mae: decoder shape does not match the encoder");
  }
  const std::size_t d = dec.in_dim;
  const std::size_t V = dec.vocab;
  std::vector<TokenSeq> polluted;
  std::size_t total_targets = 0;
  for (const auto& m : batch) {
    polluted.push_back(m.polluted);
    total_targets += m.targets.size();
  }
  if (total_targets == 0) throw ValidationError("mae: no masked positions");
  const double inv_t = 1.0 / static_cast<double>(total_targets);

  const ForwardCache cache = encoder::forward(model, polluted);
  std::vector<double> grad_unit(grads ? batch.size() * d : 0, 0.0);
  std::vector<double> z(V);
  double loss = 0.0;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto u = cache.unit_row(r, d);
    std::fill(z.begin(), z.end(), 0.0);
    for (std::size_t k = 0; k < d; ++k) {
      const float* w = dec.weights.data() + k * V;
      const double uk = u[k];
      for (std::size_t v = 0; v < V; ++v) z[v] += uk * static_cast<double>(w[v]);
    }
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t v = 0; v < V; ++v) sum += std::exp(z[v] - m);
    const double lse = m + std::log(sum);
    for (std::uint32_t t : batch[r].targets) loss += lse - z[t];
    if (!grads) continue;

    // dL/dz_v = (n_r * softmax_v - #targets equal to v) / total_targets
    const double n_r = static_cast<double>(batch[r].targets.size());
    std::vector<double> dz(V);
    for (std::size_t v = 0; v < V; ++v) dz[v] = n_r * std::exp(z[v] - lse) * inv_t;
    for (std::uint32_t t : batch[r].targets) dz[t] -= inv_t;
    double* gu = grad_unit.data() + r * d;
    for (std::size_t k = 0; k < d; ++k) {
      const float* w = dec.weights.data() + k * V;
      double* gw = grads->decoder.data() + k * V;
      const double uk = u[k];
      double acc = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        gw[v] += uk * dz[v];
        acc += static_cast<double>(w[v]) * dz[v];
      }
      gu[k] = acc;
    }
  }
  if (grads) encoder::backward(model, cache, grad_unit, grads->encoder);
  return loss * inv_t;
}

MaeStepResult mae_pretrain_step(EncoderModel& model, MaeDecoder& dec, std::span<const std::string> texts,
                                const TrainConfig& cfg, Rng& rng) {
  validate(cfg);
  if (texts.empty()) throw ValidationError("mae: empty batch");
  MaeStepResult res;
  std::vector<MaskedText> batch;
  for (const auto& t : texts) {
    if (auto m = mask_tokens(model.tokenize(t), cfg.mask_ratio, rng)) {
      batch.push_back(std::move(*m));
    } else {
      ++res.skipped;
    }
  }
  res.used = batch.size();
  if (batch.empty()) return res;
  MaeGradients grads(model, dec);
  res.loss = mae_loss(model, dec, batch, &grads);
  encoder::apply_sgd(model, grads.encoder, cfg.learning_rate);
  for (std::size_t i = 0; i < dec.weights.size(); ++i) {
    dec.weights[i] = static_cast<float>(static_cast<double>(dec.weights[i]) - cfg.learning_rate * grads.decoder[i]);
  }
  return res;
}

TrainResult pretrain(EncoderModel model, std::span<const std::string> corpus, const TrainConfig& cfg) {
  require_stage(cfg, Stage::Pretrain);
  if (corpus.empty()) throw ValidationError("pre-training: empty corpus");
  TrainResult out{std::move(model), {}};
  if (cfg.steps == 0) return out;
  std::vector<std::string> usable;
  for (const auto& t : corpus) {
    if (out.model.tokenize(t).size() >= 2) usable.push_back(t);
  }
  if (usable.empty()) throw ValidationError("pre-training: no text has two or more tokens");
  const std::size_t batch = std::min(cfg.batch_size, usable.size());
  BatchSampler sampler(usable.size(), batch, cfg.seed);
  MaeDecoder dec = MaeDecoder::initialize(out.model.out_dim(), out.model.vocab_buckets(), cfg.seed);
  Rng mask_rng(mix_seed(cfg.seed, 0x6d61736b));
  std::vector<std::string> texts;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    texts.clear();
    for (std::size_t i : sampler.next()) texts.push_back(usable[i]);
    out.curve.losses.push_back(mae_pretrain_step(out.model, dec, texts, cfg, mask_rng).loss);
  }
  return out;
}

void save_checkpoint(const EncoderModel& model, const TrainConfig& cfg, const fs::path& path) {
  OrderedJson side{{"tokenizer", {{"lowercase", model.tokenizer().lowercase},
                                  {"split_cjk", model.tokenizer().split_cjk}}},
                   {"train_config", to_json(cfg)}};
  write_file(fs::path(path.string() + ".json"), side.dump(2) + "\n");
  encoder::save_model(model, path);
}

RecipeResult run_recipe(const EncoderModel& init, std::span<const std::string> corpus,
                        std::span<const TextPair> unlabeled, std::span<const LabeledTaskPair> labeled,
                        const RecipeConfigs& cfgs, const std::optional<fs::path>& checkpoint_dir) {
  validate(cfgs.pretrain);
  validate(cfgs.general);
  validate(cfgs.taskspecific);
  if (checkpoint_dir) fs::create_directories(*checkpoint_dir);
  auto checkpoint = [&](const EncoderModel& m, const TrainConfig& cfg, const LossCurve& curve, const char* name) {
    if (!checkpoint_dir) return;
    save_checkpoint(m, cfg, *checkpoint_dir / (std::string(name) + ".embm"));
    curve.write_csv(*checkpoint_dir / ("loss_" + std::string(name) + ".csv"));
  };

  TrainResult pre = pretrain(init, corpus, cfgs.pretrain);
  checkpoint(pre.model, cfgs.pretrain, pre.curve, "pretrain");
  TrainResult gen = train_general(pre.model, unlabeled, cfgs.general);
  checkpoint(gen.model, cfgs.general, gen.curve, "general");
  TrainResult fin = train_taskspecific(gen.model, labeled, cfgs.taskspecific);
  checkpoint(fin.model, cfgs.taskspecific, fin.curve, "finetune");
  return {std::move(pre.model), std::move(gen.model), std::move(fin.model),
          std::move(pre.curve), std::move(gen.curve), std::move(fin.curve)};
}

}  // namespace embkit::train
