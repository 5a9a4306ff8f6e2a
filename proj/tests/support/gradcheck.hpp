#pragma once

// Central finite-difference checks of the training gradients. Parameters are
// f32, so the denominator uses the perturbed values actually stored.

#include <functional>
#include <set>
#include <vector>

#include "embkit/encoder.hpp"
#include "embkit/rng.hpp"
#include "embkit/trainer.hpp"
#include "test_support.hpp"

namespace gradcheck {

using embkit::Rng;
using embkit::encoder::EncoderModel;
using embkit::encoder::TokenSeq;

inline constexpr double kStep = 1e-4;

inline double central_difference(float& param, const std::function<double()>& loss) {
  const float orig = param;
  const float plus = static_cast<float>(static_cast<double>(orig) + kStep);
  const float minus = static_cast<float>(static_cast<double>(orig) - kStep);
  param = plus;
  const double lp = loss();
  param = minus;
  const double lm = loss();
  param = orig;
  return (lp - lm) / (static_cast<double>(plus) - static_cast<double>(minus));
}

// Small random model: table entries of order 1 so gradients are well scaled,
// random (not identity) projection.
inline EncoderModel random_model(Rng& rng, std::uint32_t vocab, std::uint32_t dim) {
  std::vector<float> table(static_cast<std::size_t>(vocab) * dim);
  std::vector<float> proj(static_cast<std::size_t>(dim) * dim);
  for (float& v : table) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (float& v : proj) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return EncoderModel({vocab, dim, dim}, 0, {}, std::move(table), std::move(proj));
}

inline TokenSeq random_tokens(Rng& rng, std::uint32_t vocab, std::size_t min_len, std::size_t max_len) {
  TokenSeq t(min_len + rng.below(max_len - min_len + 1));
  for (auto& b : t) b = static_cast<std::uint32_t>(1 + rng.below(vocab - 1));
  return t;
}

inline std::vector<double> random_unit_rows(Rng& rng, std::size_t rows, std::size_t dim) {
  std::vector<double> m(rows * dim);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      m[i * dim + k] = rng.normal();
      s += m[i * dim + k] * m[i * dim + k];
    }
    for (std::size_t k = 0; k < dim; ++k) m[i * dim + k] /= std::sqrt(s);
  }
  return m;
}

// info_nce against finite differences in the embedding entries themselves.
inline double info_nce_embeddings(Rng& rng, std::size_t batch, std::size_t columns, std::size_t dim, double tau) {
  auto q = random_unit_rows(rng, batch, dim);
  auto p = random_unit_rows(rng, columns, dim);
  const auto r = embkit::train::info_nce(q, batch, p, columns, dim, tau);
  std::vector<double> analytic = r.grad_queries;
  analytic.insert(analytic.end(), r.grad_passages.begin(), r.grad_passages.end());
  std::vector<double> numeric;
  auto fd = [&](std::vector<double>& m) {
    for (double& x : m) {
      const double orig = x;
      x = orig + kStep;
      const double lp = embkit::train::info_nce(q, batch, p, columns, dim, tau).loss;
      x = orig - kStep;
      const double lm = embkit::train::info_nce(q, batch, p, columns, dim, tau).loss;
      x = orig;
      numeric.push_back((lp - lm) / (2 * kStep));
    }
  };
  fd(q);
  fd(p);
  return testing::rel_err(analytic, numeric);
}

// Parameters touched by a set of token sequences, in a fixed order.
inline std::vector<float*> touched_params(EncoderModel& model, const std::vector<TokenSeq>& seqs) {
  std::set<std::uint32_t> buckets;
  for (const auto& s : seqs) buckets.insert(s.begin(), s.end());
  std::vector<float*> out;
  for (float& v : model.projection()) out.push_back(&v);
  for (std::uint32_t b : buckets) {
    for (float& v : model.token_row(b)) out.push_back(&v);
  }
  return out;
}

inline std::vector<double> flatten(const EncoderModel& model, const embkit::encoder::Gradients& g,
                                   const std::vector<TokenSeq>& seqs) {
  std::set<std::uint32_t> buckets;
  for (const auto& s : seqs) buckets.insert(s.begin(), s.end());
  std::vector<double> out(g.projection.begin(), g.projection.end());
  for (std::uint32_t b : buckets) {
    auto it = g.token_rows.find(b);
    for (std::size_t k = 0; k < model.embed_dim(); ++k) out.push_back(it == g.token_rows.end() ? 0.0 : it->second[k]);
  }
  return out;
}

// info_nce composed with encode: queries and passages through the encoder.
inline double info_nce_through_encoder(Rng& rng, std::uint32_t vocab, std::uint32_t dim, std::size_t batch,
                                       double tau) {
  EncoderModel model = random_model(rng, vocab, dim);
  std::vector<TokenSeq> qs, ps;
  for (std::size_t i = 0; i < batch; ++i) {
    qs.push_back(random_tokens(rng, vocab, 1, 5));
    ps.push_back(random_tokens(rng, vocab, 1, 5));
  }
  auto loss = [&]() {
    const auto qc = embkit::encoder::forward(model, qs);
    const auto pc = embkit::encoder::forward(model, ps);
    return embkit::train::info_nce(qc.unit, batch, pc.unit, batch, dim, tau).loss;
  };
  const auto qc = embkit::encoder::forward(model, qs);
  const auto pc = embkit::encoder::forward(model, ps);
  const auto r = embkit::train::info_nce(qc.unit, batch, pc.unit, batch, dim, tau);
  embkit::encoder::Gradients g(model);
  embkit::encoder::backward(model, qc, r.grad_queries, g);
  embkit::encoder::backward(model, pc, r.grad_passages, g);

  std::vector<TokenSeq> all = qs;
  all.insert(all.end(), ps.begin(), ps.end());
  const std::vector<double> analytic = flatten(model, g, all);
  std::vector<double> numeric;
  for (float* p : touched_params(model, all)) numeric.push_back(central_difference(*p, loss));
  return testing::rel_err(analytic, numeric);
}

// Masked-reconstruction loss: encoder and decoder gradients.
inline double mae(Rng& rng, std::uint32_t vocab, std::uint32_t dim, std::size_t texts, double mask_ratio) {
  EncoderModel model = random_model(rng, vocab, dim);
  embkit::train::MaeDecoder dec = embkit::train::MaeDecoder::initialize(dim, vocab, rng.next());
  for (float& w : dec.weights) w = static_cast<float>(rng.uniform(-1.0, 1.0));
  std::vector<embkit::train::MaskedText> batch;
  while (batch.size() < texts) {
    if (auto m = embkit::train::mask_tokens(random_tokens(rng, vocab, 2, 8), mask_ratio, rng)) {
      batch.push_back(std::move(*m));
    }
  }
  embkit::train::MaeGradients g(model, dec);
  embkit::train::mae_loss(model, dec, batch, &g);
  auto loss = [&]() { return embkit::train::mae_loss(model, dec, batch); };

  std::vector<TokenSeq> polluted;
  for (const auto& m : batch) polluted.push_back(m.polluted);
  std::vector<double> analytic = flatten(model, g.encoder, polluted);
  analytic.insert(analytic.end(), g.decoder.begin(), g.decoder.end());
  std::vector<double> numeric;
  for (float* p : touched_params(model, polluted)) numeric.push_back(central_difference(*p, loss));
  for (float& w : dec.weights) numeric.push_back(central_difference(w, loss));
  return testing::rel_err(analytic, numeric);
}

}  // namespace gradcheck
