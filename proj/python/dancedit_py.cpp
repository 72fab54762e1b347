#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dancedit/data/dataset.hpp"
#include "dancedit/diffusion/denoiser.hpp"
#include "dancedit/edit/cem.hpp"
#include "dancedit/io/binary.hpp"
#include "dancedit/metrics/metrics.hpp"
#include "dancedit/pipeline/pipeline.hpp"

namespace py = pybind11;
using namespace dancedit;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

FloatArray to_array(const Tensor& t) {
  FloatArray out({t.rows(), t.cols()});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor to_tensor(const FloatArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  const auto r = std::size_t(a.shape(0)), c = std::size_t(a.shape(1));
  return Tensor::from_data({r, c}, std::vector<float>(a.data(), a.data() + r * c));
}

metrics::FeatureSet to_feature_set(const DoubleArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  metrics::FeatureSet out(a.shape(0));
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    out[i].assign(a.data(i, 0), a.data(i, 0) + a.shape(1));
  }
  return out;
}

TrainConfig config_from(const py::dict& overrides) {
  nlohmann::json j = TrainConfig{}.to_json();
  const auto json_mod = py::module_::import("json");
  j.update(nlohmann::json::parse(py::str(json_mod.attr("dumps")(overrides)).cast<std::string>()));
  return TrainConfig::from_json(j);
}

py::list losses_of(const diffusion::TrainHistory& h) {
  py::list out;
  for (const auto& s : h.steps) out.append(s.total);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Music-conditioned dance diffusion with text-driven editing";
  m.attr("FEATURE_WIDTH") = motion::kFeatureWidth;
  m.attr("JOINT_COUNT") = motion::kJointCount;
  m.attr("DEFAULT_SAMPLING_STEPS") = diffusion::kDefaultSamplingSteps;

  py::register_exception<io::FormatError>(m, "FormatError", PyExc_ValueError);

  py::class_<motion::MotionSequence>(m, "Motion")
      .def_static(
          "from_features",
          [](const FloatArray& a, int fps) { return motion::unflatten(to_tensor(a), fps); },
          py::arg("features"), py::arg("fps") = motion::kDefaultFps)
      .def_readonly("fps", &motion::MotionSequence::fps)
      .def("__len__", &motion::MotionSequence::size)
      .def("features", [](const motion::MotionSequence& s) { return to_array(motion::flatten(s)); },
           "Frames as an [N, 151] array.")
      .def(
          "positions",
          [](const motion::MotionSequence& s) {
            const auto pos = motion::forward_kinematics(s, motion::Skeleton::standard());
            py::array_t<double> out({pos.size(), motion::kJointCount, std::size_t(3)});
            auto v = out.mutable_unchecked<3>();
            for (std::size_t f = 0; f < pos.size(); ++f) {
              for (std::size_t j = 0; j < motion::kJointCount; ++j) {
                for (int k = 0; k < 3; ++k) v(f, j, k) = pos[f][j][k];
              }
            }
            return out;
          },
          "Joint positions as an [N, 24, 3] array.")
      .def("save", [](const motion::MotionSequence& s, const std::string& p) { motion::save_motion(p, s); })
      .def_static("load", [](const std::string& p) { return motion::load_motion(p); })
      .def("__eq__", [](const motion::MotionSequence& a, const motion::MotionSequence& b) { return a == b; });

  py::class_<music::MusicFeatures>(m, "Music")
      .def_static(
          "synth",
          [](double bpm, double phase, std::size_t frames, std::uint64_t seed, std::size_t width) {
            music::BeatGrid grid{bpm, phase};
            grid.validate();
            return music::synth_music(grid, frames, seed, width);
          },
          py::arg("bpm") = 120.0, py::arg("phase") = 0.0,
          py::arg("frames") = motion::kCanonicalFrames, py::arg("seed") = 0,
          py::arg("width") = music::kDefaultMusicWidth)
      .def_readonly("fps", &music::MusicFeatures::fps)
      .def_readonly("width", &music::MusicFeatures::width)
      .def_readonly("beat_frames", &music::MusicFeatures::beat_frames)
      .def("__len__", &music::MusicFeatures::size)
      .def("features", [](const music::MusicFeatures& mu) { return to_array(mu.tensor()); })
      .def("save", [](const music::MusicFeatures& mu, const std::string& p) { music::save_music(p, mu); })
      .def_static("load", [](const std::string& p) { return music::load_music(p); });

  m.def(
      "build_dataset",
      [](const std::string& out, std::size_t records, std::size_t frames, std::uint64_t seed,
         std::size_t music_width) {
        data::DatasetConfig c;
        c.records = records;
        c.frames = frames;
        c.seed = seed;
        c.music_width = music_width;
        c.validate();
        const auto ds = data::build_dataset(c);
        std::filesystem::create_directories(out);
        data::save_dataset(out, ds, c);
        return ds.records.size();
      },
      py::arg("out"), py::arg("records") = 64, py::arg("frames") = motion::kCanonicalFrames,
      py::arg("seed") = 0, py::arg("music_width") = music::kDefaultMusicWidth,
      "Writes a synthetic edit dataset and returns the number of records.");

  m.def(
      "dataset_summary",
      [](const std::string& root) {
        const auto ds = data::load_dataset(root);
        py::list out;
        for (const auto& r : ds.records) {
          py::list prompts;
          for (const auto& e : r.edits) prompts.append(e.prompt);
          out.append(py::dict(py::arg("id") = r.id, py::arg("frames") = r.seed_motion.size(),
                              py::arg("prompts") = prompts));
        }
        return out;
      },
      py::arg("root"));

  py::class_<diffusion::DenoiserModel, std::shared_ptr<diffusion::DenoiserModel>>(m, "Generator")
      .def_static("load",
                  [](const std::string& p) {
                    return std::shared_ptr<diffusion::DenoiserModel>(diffusion::DenoiserModel::load(p));
                  })
      .def("save", [](const diffusion::DenoiserModel& g, const std::string& p) { g.save(p); })
      .def_property_readonly("music_width",
                             [](const diffusion::DenoiserModel& g) { return g.shape().music_width; })
      .def(
          "sample",
          [](const diffusion::DenoiserModel& g, const music::MusicFeatures& mu, int steps,
             std::uint64_t seed) {
            py::gil_scoped_release release;
            return diffusion::sample_motion(g, mu, steps, seed);
          },
          py::arg("music"), py::arg("steps") = diffusion::kDefaultSamplingSteps, py::arg("seed") = 0);

  py::class_<edit::EditingModel, std::shared_ptr<edit::EditingModel>>(m, "Editor")
      .def_static("load",
                  [](const std::string& p, std::shared_ptr<diffusion::DenoiserModel> base) {
                    return std::shared_ptr<edit::EditingModel>(edit::EditingModel::load(p, base));
                  })
      .def("save", [](const edit::EditingModel& e, const std::string& p) { e.save(p); })
      .def_property("use_cem", [](const edit::EditingModel& e) { return e.options().use_cem; },
                    &edit::EditingModel::set_cem_enabled)
      .def(
          "edit",
          [](const edit::EditingModel& e, const music::MusicFeatures& mu,
             const motion::MotionSequence& init, const std::string& prompt, int steps,
             std::uint64_t seed) {
            py::gil_scoped_release release;
            return edit::sample_edit(e, mu, init, prompt, steps, seed);
          },
          py::arg("music"), py::arg("init"), py::arg("prompt"),
          py::arg("steps") = diffusion::kDefaultSamplingSteps, py::arg("seed") = 0);

  m.def(
      "train_generator",
      [](const std::string& data_dir, const py::dict& config) {
        const auto c = config_from(config);
        const auto examples = pipeline::generation_examples(data::load_dataset(data_dir));
        py::gil_scoped_release release;
        auto r = diffusion::train_generation(examples, c);
        py::gil_scoped_acquire acquire;
        return py::make_tuple(std::shared_ptr<diffusion::DenoiserModel>(std::move(r.model)),
                              losses_of(r.history));
      },
      py::arg("data_dir"), py::arg("config") = py::dict(),
      "Returns (generator, per-step total losses). `config` overrides training defaults.");

  m.def(
      "train_editor",
      [](const std::string& data_dir, const diffusion::DenoiserModel& base, const py::dict& config,
         bool use_cem) {
        const auto c = config_from(config);
        const auto examples = pipeline::editing_examples(data::load_dataset(data_dir));
        edit::EditingOptions options;
        options.use_cem = use_cem;
        py::gil_scoped_release release;
        auto r = edit::train_editing(examples, base, c, options);
        py::gil_scoped_acquire acquire;
        return py::make_tuple(std::shared_ptr<edit::EditingModel>(std::move(r.model)),
                              losses_of(r.history));
      },
      py::arg("data_dir"), py::arg("base"), py::arg("config") = py::dict(),
      py::arg("use_cem") = true);

  m.def("fid", [](const DoubleArray& a, const DoubleArray& b) {
    return metrics::fid(to_feature_set(a), to_feature_set(b));
  });
  m.def(
      "diversity",
      [](const DoubleArray& a, std::uint64_t seed, std::size_t pairs) {
        return metrics::diversity(to_feature_set(a), seed, pairs);
      },
      py::arg("features"), py::arg("seed") = 0, py::arg("pairs") = 200);
  m.def("bas", &metrics::bas, py::arg("music_beats"), py::arg("motion_beats"), py::arg("sigma") = metrics::kDefaultBeatSigma);
  m.def("pfc", [](const motion::MotionSequence& s) {
    return metrics::pfc(s, motion::Skeleton::standard());
  });
  m.def("motion_beats", [](const motion::MotionSequence& s) {
    return music::motion_beats(s, motion::Skeleton::standard());
  });
  m.def("beat_alignment_cost",
        [](const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
          return music::dtw_beat_align(a, b).normalized_cost();
        });
}
