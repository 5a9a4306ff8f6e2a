#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <unistd.h>
#include <vector>

#include "embkit/datamodel.hpp"
#include "embkit/encoder_handle.hpp"

namespace testing {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("embkit_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Looks texts up in a fixed table; unknown texts map to a fallback vector.
// Optionally scales every row to exercise normalization.
class TableEncoder final : public embkit::EncoderHandle {
 public:
  TableEncoder(std::size_t dim, std::map<std::string, std::vector<float>> table, double scale = 1.0)
      : dim_(dim), table_(std::move(table)), scale_(scale) {}

  embkit::EmbeddingMatrix encode(std::span<const std::string> texts, embkit::Side) const override {
    std::vector<float> data;
    for (const auto& t : texts) {
      auto it = table_.find(t);
      if (it == table_.end()) {
        for (std::size_t k = 0; k < dim_; ++k) data.push_back(k == dim_ - 1 ? 1.0F : 0.0F);
      } else {
        for (float v : it->second) data.push_back(static_cast<float>(v * scale_));
      }
    }
    return embkit::EmbeddingMatrix(texts.size(), dim_, std::move(data));
  }
  std::size_t dim() const override { return dim_; }

 private:
  std::size_t dim_;
  std::map<std::string, std::vector<float>> table_;
  double scale_;
};

inline double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::max(std::sqrt(na), std::sqrt(nb));
  return scale == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

}  // namespace testing
