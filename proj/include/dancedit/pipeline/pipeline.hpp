#pragma once

// Views of a dataset as training sets for each model.

#include <vector>

#include "dancedit/data/dataset.hpp"
#include "dancedit/diffusion/denoiser.hpp"
#include "dancedit/edit/cem.hpp"
#include "dancedit/metrics/metrics.hpp"

namespace dancedit::pipeline {

// Every dance of every record (seed and edited), paired with its music.
std::vector<diffusion::GenExample> generation_examples(const data::Dataset& ds);
// (music, motion before edit k, prompt k, motion after edit k).
std::vector<edit::EditExample> editing_examples(const data::Dataset& ds);
std::vector<metrics::MeasExample> meas_examples(const data::Dataset& ds);
std::vector<motion::MotionSequence> all_motions(const data::Dataset& ds);

// Records [begin, end) as a dataset of their own.
data::Dataset subset(const data::Dataset& ds, std::size_t begin, std::size_t end);

}  // namespace dancedit::pipeline
