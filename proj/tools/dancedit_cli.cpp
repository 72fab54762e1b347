// dancedit: dataset generation, training, sampling, editing, evaluation and
// the editing server, one subcommand each.
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 runtime failure.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dancedit/data/dataset.hpp"
#include "dancedit/diffusion/denoiser.hpp"
#include "dancedit/edit/cem.hpp"
#include "dancedit/io/binary.hpp"
#include "dancedit/metrics/metrics.hpp"
#include "dancedit/pipeline/pipeline.hpp"
#include "dancedit/service/server.hpp"

namespace fs = std::filesystem;
using namespace dancedit;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void log(const std::string& msg) { std::cerr << "dancedit: " << msg << "\n"; }

void progress(const char* what, long step, long total, double loss) {
  if (step == 0 || (step + 1) % 100 == 0 || step + 1 == total) {
    std::cerr << what << " step " << (step + 1) << "/" << total << " loss " << loss << "\n";
  }
}

void write_loss_csv(const fs::path& path, const std::vector<double>& losses) {
  std::string out = "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) {
    out += std::to_string(i) + "," + std::to_string(losses[i]) + "\n";
  }
  io::write_file(path, out);
}

data::Dataset load_data(const fs::path& dir) {
  try {
    data::verify_manifest(dir);
    return data::load_dataset(dir);
  } catch (const std::exception& e) {
    throw DataError("dataset " + dir.string() + ": " + e.what());
  }
}

// Training flags layered over an optional JSON config.
struct TrainFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, steps;
  std::optional<float> lr;

  void add(CLI::App* app) {
    app->add_option("--config", config, "JSON training config")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "Random seed (default 0)");
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--steps", steps, "Optimizer step cap");
    app->add_option("--lr", lr, "Learning rate");
  }
  TrainConfig resolve(float default_lr) const {
    TrainConfig c;
    c.lr = default_lr;
    if (!config.empty()) c = TrainConfig::load(config);
    if (seed) c.seed = *seed;
    if (epochs) c.epochs = *epochs;
    if (steps) c.steps = *steps;
    if (lr) c.lr = *lr;
    c.validate();
    return c;
  }
};

// Either --music FILE or a synthetic grid.
struct MusicFlags {
  std::string file;
  double bpm = 120.0;
  double phase = 0.0;
  std::size_t frames = motion::kCanonicalFrames;
  std::uint64_t music_seed = 0;

  void add(CLI::App* app) {
    app->add_option("--music", file, "DRMU music file")->check(CLI::ExistingFile);
    app->add_option("--bpm", bpm, "Synthetic music tempo")->capture_default_str();
    app->add_option("--phase", phase, "Frame of the first synthetic beat")->capture_default_str();
    app->add_option("--frames", frames, "Synthetic music length")->capture_default_str();
    app->add_option("--music-seed", music_seed, "Synthetic music seed")->capture_default_str();
  }
  // `length` overrides --frames for synthetic music when nonzero.
  music::MusicFeatures resolve(std::size_t width, std::size_t length = 0) const {
    if (!file.empty()) {
      auto m = music::load_music(file);
      if (m.width != width) {
        throw DataError("music width " + std::to_string(m.width) + " does not match model width " +
                        std::to_string(width));
      }
      return m;
    }
    music::BeatGrid grid{bpm, phase};
    grid.validate();
    return music::synth_music(grid, length ? length : frames, music_seed, width);
  }
};

std::shared_ptr<diffusion::DenoiserModel> load_gen(const fs::path& p) {
  return std::shared_ptr<diffusion::DenoiserModel>(diffusion::DenoiserModel::load(p));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Music-conditioned dance generation with text-driven editing"};
  app.require_subcommand(1);

  // gen-data
  auto* gen_data = app.add_subcommand("gen-data", "Build a synthetic edit dataset");
  std::string data_out;
  std::string data_config;
  std::optional<std::size_t> records, frames;
  std::optional<std::uint64_t> data_seed;
  std::optional<double> tau;
  gen_data->add_option("--out", data_out, "Output directory (created)")->required();
  gen_data->add_option("--config", data_config, "JSON dataset config")->check(CLI::ExistingFile);
  gen_data->add_option("--records", records, "Number of records");
  gen_data->add_option("--frames", frames, "Frames per motion");
  gen_data->add_option("--seed", data_seed, "Dataset seed (default 0)");
  gen_data->add_option("--tau", tau, "Beat acceptance threshold in frames");

  // train-gen
  auto* train_gen = app.add_subcommand("train-gen", "Train the music-to-dance diffusion model");
  std::string tg_data, tg_out, tg_csv;
  TrainFlags tg_flags;
  train_gen->add_option("--data", tg_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_gen->add_option("--out", tg_out, "Output weights (.dewt)")->required();
  train_gen->add_option("--loss-csv", tg_csv, "Per-step loss CSV");
  tg_flags.add(train_gen);

  // train-edit
  auto* train_edit = app.add_subcommand("train-edit", "Train the editing branch on a frozen base");
  std::string te_data, te_base, te_out, te_csv;
  bool te_no_cem = false;
  TrainFlags te_flags;
  train_edit->add_option("--data", te_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_edit->add_option("--base", te_base, "Generation weights")->required()->check(CLI::ExistingFile);
  train_edit->add_option("--out", te_out, "Output weights (.dewt, vocabulary beside it)")->required();
  train_edit->add_option("--loss-csv", te_csv, "Per-step loss CSV");
  train_edit->add_flag("--no-cem", te_no_cem, "Disable the correlation-based fusion");
  te_flags.add(train_edit);

  // train-ae
  auto* train_ae = app.add_subcommand("train-ae", "Train the metric feature autoencoder");
  std::string ae_data, ae_out, ae_csv;
  metrics::AutoencoderConfig ae_config;
  train_ae->add_option("--data", ae_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_ae->add_option("--out", ae_out, "Output weights")->required();
  train_ae->add_option("--loss-csv", ae_csv, "Per-step loss CSV");
  train_ae->add_option("--steps", ae_config.steps, "Optimizer steps")->capture_default_str();
  train_ae->add_option("--lr", ae_config.lr, "Learning rate")->capture_default_str();
  train_ae->add_option("--seed", ae_config.seed, "Random seed")->capture_default_str();

  // train-meas
  auto* train_meas = app.add_subcommand("train-meas", "Train the edit-text distance scorer");
  std::string tm_data, tm_out, tm_csv;
  metrics::MeasConfig tm_config;
  train_meas->add_option("--data", tm_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_meas->add_option("--out", tm_out, "Output weights (vocabulary beside it)")->required();
  train_meas->add_option("--loss-csv", tm_csv, "Per-step loss CSV");
  train_meas->add_option("--steps", tm_config.steps, "Optimizer steps")->capture_default_str();
  train_meas->add_option("--lr", tm_config.lr, "Learning rate")->capture_default_str();
  train_meas->add_option("--seed", tm_config.seed, "Random seed")->capture_default_str();
  train_meas->add_option("--noise", tm_config.noise, "Max std of drift and jitter added to training deltas")->capture_default_str();

  // sample
  auto* sample = app.add_subcommand("sample", "Generate dances from music");
  std::string s_weights, s_out, s_data, s_out_dir;
  int s_steps = diffusion::kDefaultSamplingSteps;
  std::uint64_t s_seed = 0;
  MusicFlags s_music;
  sample->add_option("--weights", s_weights, "Generation weights")->required()->check(CLI::ExistingFile);
  sample->add_option("--out", s_out, "Output DRMX file");
  sample->add_option("--data", s_data, "Sample one dance per record of this dataset")
      ->check(CLI::ExistingDirectory);
  sample->add_option("--out-dir", s_out_dir, "Output directory for --data");
  sample->add_option("--steps", s_steps, "DDIM steps")->capture_default_str();
  sample->add_option("--seed", s_seed, "Sampler seed")->capture_default_str();
  s_music.add(sample);

  // edit
  auto* edit_cmd = app.add_subcommand("edit", "Edit a dance with a text prompt");
  std::string e_weights, e_base, e_init, e_prompt, e_out;
  int e_steps = diffusion::kDefaultSamplingSteps;
  std::uint64_t e_seed = 0;
  MusicFlags e_music;
  edit_cmd->add_option("--weights", e_weights, "Editing weights")->required()->check(CLI::ExistingFile);
  edit_cmd->add_option("--base", e_base, "Generation weights")->required()->check(CLI::ExistingFile);
  edit_cmd->add_option("--init", e_init, "DRMX motion to edit")->required()->check(CLI::ExistingFile);
  edit_cmd->add_option("--prompt", e_prompt, "Edit instruction")->required();
  edit_cmd->add_option("--out", e_out, "Output DRMX file")->required();
  edit_cmd->add_option("--steps", e_steps, "DDIM steps")->capture_default_str();
  edit_cmd->add_option("--seed", e_seed, "Sampler seed")->capture_default_str();
  e_music.add(edit_cmd);

  // eval
  auto* eval = app.add_subcommand("eval", "Compute FID, BAS, Diversity, PFC and MEAS");
  std::string v_data, v_ae, v_meas, v_generated, v_edited, v_out, v_table;
  std::uint64_t v_seed = 0;
  eval->add_option("--data", v_data, "Reference dataset")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--ae", v_ae, "Autoencoder weights")->required()->check(CLI::ExistingFile);
  eval->add_option("--meas", v_meas, "MEAS scorer weights")->check(CLI::ExistingFile);
  eval->add_option("--generated", v_generated,
                   "Directory of <record id>.drmx dances (default: every reference dance)")
      ->check(CLI::ExistingDirectory);
  eval->add_option("--edited", v_edited,
                   "Directory of <record id>.drmx edits of each seed with its first prompt "
                   "(default: the dataset's edits)")
      ->check(CLI::ExistingDirectory);
  eval->add_option("--out", v_out, "Report JSON")->required();
  eval->add_option("--table", v_table, "Report text table");
  eval->add_option("--seed", v_seed, "Diversity pair seed")->capture_default_str();

  // serve
  auto* serve = app.add_subcommand("serve", "Run the editing session server");
  std::string sv_root, sv_gen, sv_edit, sv_host = "127.0.0.1";
  int sv_port = 8080;
  int sv_steps = diffusion::kDefaultSamplingSteps;
  serve->add_option("--root", sv_root, "Session directory")->required();
  serve->add_option("--gen", sv_gen, "Generation weights")->check(CLI::ExistingFile);
  serve->add_option("--edit", sv_edit, "Editing weights (needs --gen)")->check(CLI::ExistingFile);
  serve->add_option("--host", sv_host, "Bind address")->capture_default_str();
  serve->add_option("--port", sv_port, "Port")->capture_default_str();
  serve->add_option("--steps", sv_steps, "DDIM steps")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen_data->parsed()) {
      data::DatasetConfig config;
      if (!data_config.empty()) {
        config = data::DatasetConfig::from_json(nlohmann::json::parse(io::read_file(data_config)));
      }
      if (records) config.records = *records;
      if (frames) config.frames = *frames;
      if (data_seed) config.seed = *data_seed;
      if (tau) config.tau = *tau;
      config.validate();
      const auto ds = data::build_dataset(config);
      fs::create_directories(data_out);
      data::save_dataset(data_out, ds, config);
      data::verify_manifest(data_out);
      log("wrote " + std::to_string(ds.records.size()) + " records to " + data_out);
      if (!ds.skipped.empty()) {
        log(std::to_string(ds.skipped.size()) +
            " records skipped after exhausting beat-acceptance retries");
        return kExitRuntime;
      }
      return 0;
    }

    if (train_gen->parsed()) {
      const auto config = tg_flags.resolve(TrainConfig{}.lr);
      const auto ds = load_data(tg_data);
      auto result = diffusion::train_generation(
          pipeline::generation_examples(ds), config,
          [](long s, long n, const diffusion::LossBreakdown& l) { progress("train-gen", s, n, l.total); });
      result.model->save(tg_out);
      if (!tg_csv.empty()) result.history.write_csv(tg_csv);
      log("saved " + tg_out);
      return 0;
    }

    if (train_edit->parsed()) {
      const auto config = te_flags.resolve(1e-5f);
      const auto ds = load_data(te_data);
      std::unique_ptr<diffusion::DenoiserModel> base;
      try {
        base = diffusion::DenoiserModel::load(te_base);
      } catch (const std::exception& e) {
        throw DataError("base weights " + te_base + ": " + e.what());
      }
      edit::EditingOptions options;
      options.use_cem = !te_no_cem;
      auto result = edit::train_editing(
          pipeline::editing_examples(ds), *base, config, options,
          [](long s, long n, const diffusion::LossBreakdown& l) { progress("train-edit", s, n, l.total); });
      result.model->save(te_out);
      if (!te_csv.empty()) result.history.write_csv(te_csv);
      log("saved " + te_out);
      return 0;
    }

    if (train_ae->parsed()) {
      const auto ds = load_data(ae_data);
      const auto result = metrics::train_autoencoder(pipeline::all_motions(ds), ae_config);
      result.model.save(ae_out);
      if (!ae_csv.empty()) write_loss_csv(ae_csv, result.losses);
      log("saved " + ae_out + ", final loss " + std::to_string(result.losses.back()));
      return 0;
    }

    if (train_meas->parsed()) {
      const auto ds = load_data(tm_data);
      const auto result = metrics::train_meas(pipeline::meas_examples(ds), tm_config);
      result.scorer.save(tm_out);
      if (!tm_csv.empty()) write_loss_csv(tm_csv, result.losses);
      log("saved " + tm_out + ", final loss " + std::to_string(result.losses.back()));
      return 0;
    }

    if (sample->parsed()) {
      const auto model = load_gen(s_weights);
      if (!s_data.empty()) {
        if (s_out_dir.empty()) throw CLI::ValidationError("--data needs --out-dir");
        const auto ds = load_data(s_data);
        fs::create_directories(s_out_dir);
        for (const auto& rec : ds.records) {
          const auto seq = diffusion::sample_motion(*model, rec.music, s_steps, s_seed);
          motion::save_motion(fs::path(s_out_dir) / (rec.id + ".drmx"), seq);
        }
        log("sampled " + std::to_string(ds.records.size()) + " dances into " + s_out_dir);
        return 0;
      }
      if (s_out.empty()) throw CLI::ValidationError("sample needs --out or --data/--out-dir");
      const auto music = s_music.resolve(model->shape().music_width);
      motion::save_motion(s_out, diffusion::sample_motion(*model, music, s_steps, s_seed));
      log("wrote " + s_out);
      return 0;
    }

    if (edit_cmd->parsed()) {
      std::shared_ptr<const diffusion::DenoiserModel> base = load_gen(e_base);
      const auto model = edit::EditingModel::load(e_weights, base);
      const auto init = motion::load_motion(e_init);
      const auto music = e_music.resolve(base->shape().music_width, init.size());
      motion::save_motion(e_out, edit::sample_edit(*model, music, init, e_prompt, e_steps, e_seed));
      log("wrote " + e_out);
      return 0;
    }

    if (eval->parsed()) {
      const auto ds = load_data(v_data);
      const auto ae = metrics::MotionAutoencoder::load(v_ae);
      std::vector<metrics::GeneratedDance> generated;
      for (const auto& rec : ds.records) {
        if (v_generated.empty()) {
          generated.push_back({rec.seed_motion, rec.music.beat_frames});
          for (const auto& e : rec.edits) generated.push_back({e.motion, rec.music.beat_frames});
          continue;
        }
        const fs::path p = fs::path(v_generated) / (rec.id + ".drmx");
        if (!fs::exists(p)) throw DataError("missing generated dance " + p.string());
        generated.push_back({motion::load_motion(p), rec.music.beat_frames});
      }
      auto report = metrics::evaluate(generated, pipeline::all_motions(ds), ae, v_seed);
      if (!v_meas.empty()) {
        const auto scorer = metrics::MeasScorer::load(v_meas);
        std::vector<metrics::MeasExample> edits;
        if (v_edited.empty()) {
          edits = pipeline::meas_examples(ds);
        } else {
          for (const auto& rec : ds.records) {
            const fs::path p = fs::path(v_edited) / (rec.id + ".drmx");
            if (!fs::exists(p)) throw DataError("missing edited dance " + p.string());
            edits.push_back({rec.seed_motion, motion::load_motion(p), rec.edits.at(0).prompt});
          }
        }
        metrics::add_meas(report, scorer, edits);
      }
      io::write_file(v_out, report.to_json().dump(2) + "\n");
      if (!v_table.empty()) io::write_file(v_table, report.table());
      std::cout << report.table();
      return 0;
    }

    if (serve->parsed()) {
      if (!sv_edit.empty() && sv_gen.empty()) throw CLI::ValidationError("--edit needs --gen");
      std::shared_ptr<const diffusion::DenoiserModel> gen;
      std::shared_ptr<const edit::EditingModel> editor;
      if (!sv_gen.empty()) gen = load_gen(sv_gen);
      if (!sv_edit.empty()) editor = edit::EditingModel::load(sv_edit, gen);
      service::StoreOptions options;
      options.steps = sv_steps;
      service::SessionStore store(sv_root, gen, editor, options);
      service::HttpServer server(store);
      if (!server.bind(sv_host, sv_port)) {
        log("cannot bind " + sv_host + ":" + std::to_string(sv_port));
        return kExitRuntime;
      }
      log("listening on " + sv_host + ":" + std::to_string(server.port()));
      server.run();
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    log(e.what());
    return kExitUsage;
  } catch (const DataError& e) {
    log(e.what());
    return kExitData;
  } catch (const io::FormatError& e) {
    log(e.what());
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    log(e.what());
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    log(std::string("bad JSON: ") + e.what());
    return kExitData;
  } catch (const std::invalid_argument& e) {
    log(e.what());
    return kExitData;
  } catch (const std::exception& e) {
    log(e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
