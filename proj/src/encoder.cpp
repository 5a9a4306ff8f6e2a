#include "embkit/encoder.hpp"

#include <cmath>
#include <fstream>

#include "embkit/binary_io.hpp"
#include "embkit/error.hpp"
#include "embkit/rng.hpp"
#include "embkit/text.hpp"

namespace embkit {

std::string_view side_name(Side side) { return side == Side::Query ? "query" : "passage"; }

std::optional<Side> parse_side(std::string_view s) {
  if (s == "query") return Side::Query;
  if (s == "passage") return Side::Passage;
  return std::nullopt;
}

}  // namespace embkit

namespace embkit::encoder {
namespace fs = std::filesystem;

namespace {

constexpr std::uint32_t kModelVersion = 1;

fs::path sidecar_path(const fs::path& path) { return fs::path(path.string() + ".json"); }

}  // namespace

std::vector<std::string> split_tokens(std::string_view raw, const TokenizerConfig& cfg) {
  std::string norm = text::nfc(raw);
  if (cfg.lowercase) norm = text::lowercase(norm);
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char32_t cp : text::code_points(norm)) {
    if (text::is_whitespace(cp)) {
      flush();
    } else if (cfg.split_cjk && text::is_cjk(cp)) {
      flush();
      tokens.push_back(text::to_utf8(cp));
    } else {
      current += text::to_utf8(cp);
    }
  }
  flush();
  return tokens;
}

std::uint32_t bucket_of(std::string_view token, std::uint32_t vocab_buckets) {
  if (vocab_buckets <= 1) return kReservedBucket;
  return 1 + static_cast<std::uint32_t>(text::fnv1a64(token) % (vocab_buckets - 1));
}

TokenSeq tokenize(std::string_view text, const TokenizerConfig& cfg, std::uint32_t vocab_buckets) {
  const auto tokens = split_tokens(text, cfg);
  if (tokens.empty()) return {kReservedBucket};
  TokenSeq out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(bucket_of(t, vocab_buckets));
  return out;
}

EncoderModel EncoderModel::initialize(const ModelShape& shape, std::uint64_t seed, TokenizerConfig tokenizer) {
  if (shape.vocab_buckets == 0 || shape.embed_dim == 0 || shape.out_dim == 0) {
    throw ValidationError("model dimensions must all be >= 1");
  }
  Rng rng(seed);
  const double bound = 0.5 / shape.embed_dim;
  std::vector<float> table(static_cast<std::size_t>(shape.vocab_buckets) * shape.embed_dim);
  for (auto& x : table) x = static_cast<float>(rng.uniform(-bound, bound));
  std::vector<float> projection(static_cast<std::size_t>(shape.embed_dim) * shape.out_dim, 0.0F);
  for (std::uint32_t i = 0; i < std::min(shape.embed_dim, shape.out_dim); ++i) {
    projection[static_cast<std::size_t>(i) * shape.out_dim + i] = 1.0F;
  }
  return EncoderModel(shape, seed, tokenizer, std::move(table), std::move(projection));
}

EncoderModel::EncoderModel(const ModelShape& shape, std::uint64_t seed, TokenizerConfig tokenizer,
                           std::vector<float> token_table, std::vector<float> projection)
    : shape_(shape),
      seed_(seed),
      tokenizer_(tokenizer),
      token_table_(std::move(token_table)),
      projection_(std::move(projection)) {
  if (shape.vocab_buckets == 0 || shape.embed_dim == 0 || shape.out_dim == 0) {
    throw ValidationError("model dimensions must all be >= 1");
  }
  if (token_table_.size() != static_cast<std::size_t>(shape.vocab_buckets) * shape.embed_dim ||
      projection_.size() != static_cast<std::size_t>(shape.embed_dim) * shape.out_dim) {
    throw ValidationError("model parameter sizes do not match its shape");
  }
  for (float x : token_table_) {
    if (!std::isfinite(x)) throw ValidationError("model token table holds a non-finite value");
  }
  for (float x : projection_) {
    if (!std::isfinite(x)) throw ValidationError("model projection holds a non-finite value");
  }
}

ForwardCache forward(const EncoderModel& model, std::span<const TokenSeq> tokens) {
  const std::size_t d_in = model.embed_dim();
  const std::size_t d_out = model.out_dim();
  const auto proj = model.projection();
  ForwardCache c;
  c.rows = tokens.size();
  c.tokens.assign(tokens.begin(), tokens.end());
  c.pooled.assign(c.rows * d_in, 0.0);
  c.projected.assign(c.rows * d_out, 0.0);
  c.norms.assign(c.rows, 0.0);
  c.unit.assign(c.rows * d_out, 0.0);
  c.degenerate.assign(c.rows, false);

  for (std::size_t r = 0; r < c.rows; ++r) {
    const TokenSeq& seq = c.tokens[r];
    if (seq.empty()) throw ValidationError("cannot encode an empty token sequence");
    double* h = c.pooled.data() + r * d_in;
    for (std::uint32_t b : seq) {
      if (b >= model.vocab_buckets()) throw ValidationError("token bucket out of range");
      const auto row = model.token_row(b);
      for (std::size_t a = 0; a < d_in; ++a) h[a] += row[a];
    }
    const double len = static_cast<double>(seq.size());
    for (std::size_t a = 0; a < d_in; ++a) h[a] /= len;

    double* x = c.projected.data() + r * d_out;
    for (std::size_t a = 0; a < d_in; ++a) {
      const double ha = h[a];
      if (ha == 0.0) continue;
      const float* p = proj.data() + a * d_out;
      for (std::size_t b = 0; b < d_out; ++b) x[b] += ha * p[b];
    }
    double sq = 0.0;
    for (std::size_t b = 0; b < d_out; ++b) sq += x[b] * x[b];
    const double norm = std::sqrt(sq);
    c.norms[r] = norm;
    double* u = c.unit.data() + r * d_out;
    if (norm == 0.0 || !std::isfinite(norm)) {
      c.degenerate[r] = true;
      ++c.degenerate_count;
      u[0] = 1.0;
      continue;
    }
    for (std::size_t b = 0; b < d_out; ++b) u[b] = x[b] / norm;
  }
  return c;
}

void Gradients::clear() {
  std::fill(projection.begin(), projection.end(), 0.0);
  token_rows.clear();
}

void backward(const EncoderModel& model, const ForwardCache& cache, std::span<const double> grad_unit,
              Gradients& grads) {
  const std::size_t d_in = model.embed_dim();
  const std::size_t d_out = model.out_dim();
  if (grad_unit.size() != cache.rows * d_out) throw ValidationError("backward: gradient shape mismatch");
  const auto proj = model.projection();
  std::vector<double> gx(d_out);
  std::vector<double> gh(d_in);
  for (std::size_t r = 0; r < cache.rows; ++r) {
    if (cache.degenerate[r]) continue;
    const double* g = grad_unit.data() + r * d_out;
    const double* u = cache.unit.data() + r * d_out;
    double ug = 0.0;
    for (std::size_t b = 0; b < d_out; ++b) ug += u[b] * g[b];
    // d(x/|x|)/dx = (I - u u^T) / |x|
    const double inv_norm = 1.0 / cache.norms[r];
    for (std::size_t b = 0; b < d_out; ++b) gx[b] = (g[b] - u[b] * ug) * inv_norm;

    const double* h = cache.pooled.data() + r * d_in;
    for (std::size_t a = 0; a < d_in; ++a) {
      double* gp = grads.projection.data() + a * d_out;
      const float* p = proj.data() + a * d_out;
      double acc = 0.0;
      for (std::size_t b = 0; b < d_out; ++b) {
        gp[b] += h[a] * gx[b];
        acc += p[b] * gx[b];
      }
      gh[a] = acc;
    }
    const TokenSeq& seq = cache.tokens[r];
    const double scale = 1.0 / static_cast<double>(seq.size());
    for (std::uint32_t t : seq) {
      auto& row = grads.token_rows[t];
      if (row.empty()) row.assign(d_in, 0.0);
      for (std::size_t a = 0; a < d_in; ++a) row[a] += gh[a] * scale;
    }
  }
}

void apply_sgd(EncoderModel& model, const Gradients& grads, double learning_rate) {
  auto proj = model.projection();
  for (std::size_t i = 0; i < proj.size(); ++i) {
    proj[i] = static_cast<float>(static_cast<double>(proj[i]) - learning_rate * grads.projection[i]);
  }
  for (const auto& [bucket, g] : grads.token_rows) {
    auto row = model.token_row(bucket);
    for (std::size_t a = 0; a < row.size(); ++a) {
      row[a] = static_cast<float>(static_cast<double>(row[a]) - learning_rate * g[a]);
    }
  }
}

std::string prefix_instruction(std::string_view instruction, std::string_view query) {
  if (instruction.empty()) return std::string(query);
  std::string out;
  out.reserve(instruction.size() + 1 + query.size());
  out.append(instruction);
  out.push_back(' ');
  out.append(query);
  return out;
}

EmbeddingMatrix encode(const EncoderModel& model, std::span<const std::string> texts, Side side,
                       std::optional<std::string_view> instruction, EncodeStats* stats) {
  std::vector<TokenSeq> seqs;
  seqs.reserve(texts.size());
  for (const auto& t : texts) {
    if (side == Side::Query && instruction && !instruction->empty()) {
      seqs.push_back(model.tokenize(prefix_instruction(*instruction, t)));
    } else {
      seqs.push_back(model.tokenize(t));
    }
  }
  const ForwardCache cache = forward(model, seqs);
  if (stats != nullptr) stats->degenerate_rows += cache.degenerate_count;
  std::vector<float> data(cache.unit.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(cache.unit[i]);
  return EmbeddingMatrix(texts.size(), model.out_dim(), std::move(data), true);
}

std::string serialize_model(const EncoderModel& model) {
  std::string bytes = "EMBM";
  binio::put_u32(bytes, kModelVersion);
  binio::put_u32(bytes, model.vocab_buckets());
  binio::put_u32(bytes, model.embed_dim());
  binio::put_u32(bytes, model.out_dim());
  binio::put_u64(bytes, model.seed());
  bytes.reserve(bytes.size() + 4 * (model.token_table().size() + model.projection().size()));
  for (float x : model.token_table()) binio::put_f32(bytes, x);
  for (float x : model.projection()) binio::put_f32(bytes, x);
  return bytes;
}

EncoderModel deserialize_model(std::string_view bytes, const std::string& what, TokenizerConfig tokenizer) {
  binio::Reader r(bytes, what);
  r.expect_magic("EMBM");
  const auto version = r.u32();
  if (version != kModelVersion) {
    throw FormatError(what + ": model version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kModelVersion) + ")");
  }
  ModelShape shape;
  shape.vocab_buckets = r.u32();
  shape.embed_dim = r.u32();
  shape.out_dim = r.u32();
  const auto seed = r.u64();
  if (shape.vocab_buckets == 0 || shape.embed_dim == 0 || shape.out_dim == 0) {
    throw FormatError(what + ": zero model dimension");
  }
  const std::size_t table_n = static_cast<std::size_t>(shape.vocab_buckets) * shape.embed_dim;
  const std::size_t proj_n = static_cast<std::size_t>(shape.embed_dim) * shape.out_dim;
  r.need((table_n + proj_n) * 4);
  if (r.remaining() != (table_n + proj_n) * 4) throw FormatError(what + ": trailing bytes after parameters");
  std::vector<float> table(table_n);
  for (auto& x : table) x = r.f32();
  std::vector<float> proj(proj_n);
  for (auto& x : proj) x = r.f32();
  try {
    return EncoderModel(shape, seed, tokenizer, std::move(table), std::move(proj));
  } catch (const ValidationError& e) {
    throw FormatError(what + ": " + e.what());
  }
}

void save_model(const EncoderModel& model, const fs::path& path) {
  write_file(path, serialize_model(model));
  const fs::path side = sidecar_path(path);
  if (model.tokenizer() != TokenizerConfig{} || fs::exists(side)) {
    OrderedJson j = OrderedJson::object();
    if (fs::exists(side)) j = OrderedJson::parse(read_file(side));
    j["tokenizer"] = OrderedJson{{"lowercase", model.tokenizer().lowercase},
                                 {"split_cjk", model.tokenizer().split_cjk}};
    write_file(side, j.dump(2) + "\n");
  }
}

EncoderModel load_model(const fs::path& path) {
  TokenizerConfig tok;
  const fs::path side = sidecar_path(path);
  if (fs::exists(side)) {
    try {
      const Json j = Json::parse(read_file(side));
      if (auto it = j.find("tokenizer"); it != j.end()) {
        tok.lowercase = it->value("lowercase", true);
        tok.split_cjk = it->value("split_cjk", true);
      }
    } catch (const Json::exception& e) {
      throw FormatError(side.string() + ": " + e.what());
    }
  }
  return deserialize_model(read_file(path), path.string(), tok);
}

EmbeddingMatrix ModelEncoder::encode(std::span<const std::string> texts, Side side) const {
  return encoder::encode(model_, texts, side);
}

}  // namespace embkit::encoder
