#pragma once

// Cosine top-k retrieval over L2-normalized motion embeddings.

#include <string>
#include <utility>
#include <vector>

#include "dancedit/motion/motion.hpp"

namespace dancedit::metrics {
class MotionAutoencoder;
}

namespace dancedit::data {

inline constexpr double kSelfMatchSimilarity = 0.999;

struct MotionIndex {
  struct Entry {
    std::string ref;
    std::vector<float> embedding;  // unit norm
  };
  std::vector<Entry> entries;

  // Normalizes `embedding`; zero vectors throw std::invalid_argument.
  void add(std::string ref, std::vector<float> embedding);
  std::size_t dim() const { return entries.empty() ? 0 : entries.front().embedding.size(); }
};

struct RetrievalHit {
  std::size_t index = 0;
  std::string ref;
  double similarity = 0.0;
  bool operator==(const RetrievalHit&) const = default;
};

struct SimilarityBand {
  double min = 0.70;
  double max = 0.98;
};

// Time-pooled autoencoder bottleneck with unit norm. Throws std::logic_error
// for an untrained encoder.
std::vector<float> embed_motion(const motion::MotionSequence& seq,
                                const metrics::MotionAutoencoder& ae);

std::vector<float> l2_normalized(std::vector<float> v);
double cosine(const std::vector<float>& a, const std::vector<float>& b);

// Highest similarities inside [band.min, band.max], excluding self-matches
// above kSelfMatchSimilarity. Ties keep entry order.
std::vector<RetrievalHit> retrieve_topk(const MotionIndex& index, const std::vector<float>& query,
                                        std::size_t k, SimilarityBand band = {});

}  // namespace dancedit::data
