#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <span>
#include <string>

#include "embkit/encoder_handle.hpp"

// Client for full-scale encoders running in a separate process.
//
// Line protocol over the child's standard streams:
//   child -> {"dim": d}                                   once, at startup
//   parent -> {"texts": [...], "side": "query"|"passage"}  one request per line
//   child -> {"embeddings": [[f32, ...], ...]}            one response per line
// The child's stderr is inherited and never parsed.
namespace embkit::encoder {

struct ExternalConfig {
  std::string command;  // run through /bin/sh -c
  int timeout_ms = 60000;
};

class ExternalEncoder final : public EncoderHandle {
 public:
  explicit ExternalEncoder(ExternalConfig cfg);
  ~ExternalEncoder() override;
  ExternalEncoder(const ExternalEncoder&) = delete;
  ExternalEncoder& operator=(const ExternalEncoder&) = delete;

  // Rows are validated (count, width, finiteness) and L2-normalized. A batch is
  // either returned whole or not at all.
  EmbeddingMatrix encode(std::span<const std::string> texts, Side side) const override;
  std::size_t dim() const override { return dim_; }

 private:
  struct Process;
  ExternalConfig cfg_;
  std::unique_ptr<Process> proc_;
  std::size_t dim_ = 0;
  mutable std::mutex mu_;
  mutable bool broken_ = false;
};

// One-shot helper: start the process, encode, shut it down.
EmbeddingMatrix encode_external(const ExternalConfig& cfg, std::span<const std::string> texts, Side side);

// Parses one response line into an n x dim matrix (not normalized).
// Throws ProtocolError / NonFiniteError.
EmbeddingMatrix parse_embedding_response(const std::string& line, std::size_t expected_rows, std::size_t dim);

// Server half: handshake, then answer requests from `in` until EOF.
void serve(const EncoderHandle& enc, std::istream& in, std::ostream& out);

}  // namespace embkit::encoder
