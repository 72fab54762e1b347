#include "dancedit/data/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dancedit/metrics/metrics.hpp"

namespace dancedit::data {

std::vector<float> embed_motion(const motion::MotionSequence& seq,
                                const metrics::MotionAutoencoder& ae) {
  const auto pooled = ae.features(seq);
  return l2_normalized(std::vector<float>(pooled.begin(), pooled.end()));
}

std::vector<float> l2_normalized(std::vector<float> v) {
  double sq = 0.0;
  for (float x : v) sq += double(x) * x;
  if (!(sq > 0.0) || !std::isfinite(sq)) {
    throw std::invalid_argument("cannot normalize a zero or non-finite embedding");
  }
  const double inv = 1.0 / std::sqrt(sq);
  for (auto& x : v) x = static_cast<float>(x * inv);
  return v;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("embedding widths differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

void MotionIndex::add(std::string ref, std::vector<float> embedding) {
  if (!entries.empty() && embedding.size() != dim()) {
    throw std::invalid_argument("embedding width " + std::to_string(embedding.size()) +
                                " does not match index width " + std::to_string(dim()));
  }
  entries.push_back({std::move(ref), l2_normalized(std::move(embedding))});
}

std::vector<RetrievalHit> retrieve_topk(const MotionIndex& index, const std::vector<float>& query,
                                        std::size_t k, SimilarityBand band) {
  if (index.entries.empty()) throw std::invalid_argument("retrieval over an empty index");
  if (k == 0) throw std::invalid_argument("k must be at least 1");
  if (!(band.min < band.max)) throw std::invalid_argument("similarity band must have min < max");
  std::vector<RetrievalHit> hits;
  for (std::size_t i = 0; i < index.entries.size(); ++i) {
    const double s = cosine(index.entries[i].embedding, query);
    if (s > kSelfMatchSimilarity || s < band.min || s > band.max) continue;
    hits.push_back({i, index.entries[i].ref, s});
  }
  std::stable_sort(hits.begin(), hits.end(),
                   [](const RetrievalHit& a, const RetrievalHit& b) { return a.similarity > b.similarity; });
  if (hits.size() > k) hits.resize(k);
  return hits;
}

}  // namespace dancedit::data
