#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "embkit/datamodel.hpp"

namespace embkit {

enum class Side { Query, Passage };

std::string_view side_name(Side side);
std::optional<Side> parse_side(std::string_view s);

// Anything that turns texts into a fixed-width embedding matrix. Implementations
// must be deterministic and return exactly one row per input text.
class EncoderHandle {
 public:
  virtual ~EncoderHandle() = default;
  virtual EmbeddingMatrix encode(std::span<const std::string> texts, Side side) const = 0;
  virtual std::size_t dim() const = 0;
};

}  // namespace embkit
