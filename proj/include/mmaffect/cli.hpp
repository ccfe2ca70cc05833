#pragma once

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mmaffect/dataio/dataset.hpp"
#include "mmaffect/dataio/synthetic.hpp"
#include "mmaffect/trainer/trainer.hpp"

namespace mmaffect::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  for (auto part : io::detail::split_commas(s)) out.emplace_back(io::detail::trim(part));
  return out;
}

inline std::vector<Video>& pick_split(Dataset& data, const std::string& split) {
  return split == "train" ? data.train : data.val;
}

inline void check_task(Task flag, Task other, const std::string& what) {
  if (flag != other) {
    fail(ErrorCode::TaskMismatch, "--task " + std::string(to_string(flag)) + " but " + what + " is for task " +
                                      std::string(to_string(other)));
  }
}

inline std::string csv_row(std::size_t frame, std::span<const double> values) {
  std::string row = std::to_string(frame);
  for (double v : values) row += "," + format_double(v, 9);
  return row + "\n";
}

}  // namespace detail

/**
 * Entry point behind the mmaffect executable. Subcommands:
 *   gen-synthetic  write a synthetic dataset tree
 *   train          train, writing checkpoints and metrics.log
 *   eval           print the EvalReport of a checkpoint on a split
 *   predict        write <out>/<video_id>.csv, one "frame,values..." row per frame
 * Returns 0 on success, 2 on usage errors, 1 on runtime errors.
 */
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Multimodal affect recognition: synthetic data, training, evaluation and prediction", "mmaffect"};
  app.require_subcommand(1);
  const std::vector<std::string> tasks{"va", "expr", "au", "eri"};

  std::string task_name, data_dir, config_path, checkpoint_path, out_dir, features_flag, split = "val";
  std::optional<std::uint64_t> seed;
  std::size_t videos = 8;
  std::optional<std::size_t> t_min, t_max;

  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic dataset to --out");
  gen->add_option("--task", task_name, "Task")->required()->check(CLI::IsMember(tasks));
  gen->add_option("--videos", videos, "Number of videos")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "Generator seed (default 0)");
  gen->add_option("--out", out_dir, "Dataset root")->required();
  gen->add_option("--t-min", t_min, "Shortest video in frames")->check(CLI::PositiveNumber);
  gen->add_option("--t-max", t_max, "Longest video in frames")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--task", task_name, "Task")->required()->check(CLI::IsMember(tasks));
  train->add_option("--data", data_dir, "Dataset root")->required();
  train->add_option("--config", config_path, "key=value config file");
  train->add_option("--checkpoint", checkpoint_path, "Resume from this checkpoint");
  train->add_option("--out", out_dir, "Output directory (overrides checkpoint_dir)");
  train->add_option("--seed", seed, "Seed (overrides the config)");
  train->add_option("--features", features_flag, "Comma-separated feature subset (overrides the config)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--task", task_name, "Task")->required()->check(CLI::IsMember(tasks));
  eval->add_option("--data", data_dir, "Dataset root")->required();
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  eval->add_option("--split", split, "Split to score")->check(CLI::IsMember({"train", "val"}));

  auto* predict = app.add_subcommand("predict", "Write per-frame predictions as CSV");
  predict->add_option("--task", task_name, "Task")->required()->check(CLI::IsMember(tasks));
  predict->add_option("--data", data_dir, "Dataset root")->required();
  predict->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  predict->add_option("--out", out_dir, "Directory for <video_id>.csv files")->required();
  predict->add_option("--split", split, "Split to predict")->check(CLI::IsMember({"train", "val"}));

  if (argc <= 1) {
    err << "error: no subcommand given\n" << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (app.get_subcommands().empty()) err << app.help();
    return kExitUsage;
  }

  try {
    const Task task = parse_task(task_name);
    if (gen->parsed()) {
      SyntheticSpec spec;
      spec.task = task;
      spec.n_videos = videos;
      spec.seed = seed.value_or(0);
      if (task == Task::ERI) {
        spec.t_min = 56;
        spec.t_max = 72;
      }
      if (t_min) spec.t_min = *t_min;
      if (t_max) spec.t_max = *t_max;
      if (spec.t_max < spec.t_min) {
        err << "error: --t-max must be at least --t-min\n";
        return kExitUsage;
      }
      const Dataset data = generate_synthetic(spec);
      io::write_dataset(data, out_dir);
      out << "wrote " << data.train.size() << " train and " << data.val.size() << " val videos to "
          << (io::fs::path(out_dir) / std::string(to_string(task))).string() << "\n";
      return kExitOk;
    }

    if (train->parsed()) {
      TrainConfig defaults;
      defaults.task = task;
      TrainConfig cfg = config_path.empty() ? defaults : read_train_config(config_path, defaults);
      detail::check_task(task, cfg.task, "the config");
      if (seed) cfg.seed = *seed;
      if (!features_flag.empty()) cfg.features = detail::split_list(features_flag);
      if (!out_dir.empty()) cfg.checkpoint_dir = out_dir;
      if (cfg.checkpoint_dir.empty()) {
        err << "error: train needs --out or checkpoint_dir in the config\n";
        return kExitUsage;
      }
      cfg.validate();
      const Dataset data = io::load_dataset(data_dir, task);
      Trainer trainer(cfg, data);
      const io::fs::path log_path = io::fs::path(cfg.checkpoint_dir) / "metrics.log";
      io::fs::create_directories(cfg.checkpoint_dir);
      if (!checkpoint_path.empty()) {
        trainer.resume(checkpoint_path);
      } else {
        io::write_file(log_path, "");
      }
      std::ofstream log(log_path, std::ios::app);
      if (!log) fail(ErrorCode::Io, "cannot append to '" + log_path.string() + "'");
      std::optional<EvalReport> last;
      trainer.train([&](const EpochLog& e) {
        log << format_epoch_log(e) << std::flush;
        out << format_epoch_log(e);
        if (e.val) last = e.val;
      });
      if (!trainer.config().checkpoint_dir.empty() && !io::fs::exists(trainer.latest_checkpoint_path())) {
        trainer.save_checkpoint(trainer.latest_checkpoint_path());
      }
      if (last) out << last->to_text();
      return kExitOk;
    }

    const Checkpoint ck = load_checkpoint(checkpoint_path);
    Dataset data = io::load_dataset(data_dir, task);
    LoadedModel model = load_model(ck, data.registry);
    detail::check_task(task, model.config.task, "the checkpoint");
    const auto& split_videos = detail::pick_split(data, split);
    if (split_videos.empty()) fail(ErrorCode::EmptyVideo, "split '" + split + "' has no videos");

    if (eval->parsed()) {
      Dataset selected = select_features(data, model.config.features);
      out << evaluate(model.params, model.config, detail::pick_split(selected, split), model.train_config.segment_length)
                 .to_text();
      return kExitOk;
    }

    // predict
    Dataset selected = select_features(data, model.config.features);
    for (const Video* v : sorted_by_id(detail::pick_split(selected, split))) {
      const Tensor pred = predict_video(model.params, model.config, *v, model.train_config.segment_length);
      std::string csv;
      const std::size_t width = output_dim(task);
      for (std::size_t f = 0; f < v->frames(); ++f) {
        // ERI yields one vector per video; it is repeated on every frame row.
        const std::size_t offset = task == Task::ERI ? 0 : f * width;
        csv += detail::csv_row(f, pred.data().subspan(offset, width));
      }
      io::write_file(io::fs::path(out_dir) / (v->id + ".csv"), csv);
    }
    out << "wrote predictions to " << out_dir << "\n";
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace mmaffect::cli
