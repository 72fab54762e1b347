#include "dancedit/pipeline/pipeline.hpp"

#include <stdexcept>

namespace dancedit::pipeline {

std::vector<diffusion::GenExample> generation_examples(const data::Dataset& ds) {
  std::vector<diffusion::GenExample> out;
  for (const auto& rec : ds.records) {
    out.push_back({rec.seed_motion, rec.music});
    for (const auto& e : rec.edits) out.push_back({e.motion, rec.music});
  }
  return out;
}

std::vector<edit::EditExample> editing_examples(const data::Dataset& ds) {
  std::vector<edit::EditExample> out;
  for (const auto& rec : ds.records) {
    for (std::size_t k = 0; k < rec.edits.size(); ++k) {
      out.push_back({rec.music, rec.source_of(k), rec.edits[k].prompt, rec.edits[k].motion});
    }
  }
  return out;
}

std::vector<metrics::MeasExample> meas_examples(const data::Dataset& ds) {
  std::vector<metrics::MeasExample> out;
  for (const auto& rec : ds.records) {
    for (std::size_t k = 0; k < rec.edits.size(); ++k) {
      out.push_back({rec.source_of(k), rec.edits[k].motion, rec.edits[k].prompt});
    }
  }
  return out;
}

std::vector<motion::MotionSequence> all_motions(const data::Dataset& ds) {
  std::vector<motion::MotionSequence> out;
  for (const auto& rec : ds.records) {
    out.push_back(rec.seed_motion);
    for (const auto& e : rec.edits) out.push_back(e.motion);
  }
  return out;
}

data::Dataset subset(const data::Dataset& ds, std::size_t begin, std::size_t end) {
  if (begin > end || end > ds.records.size()) throw std::out_of_range("subset: bad record range");
  data::Dataset out;
  out.records.assign(ds.records.begin() + long(begin), ds.records.begin() + long(end));
  return out;
}

}  // namespace dancedit::pipeline
