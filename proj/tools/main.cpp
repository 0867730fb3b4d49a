#include <CLI11.hpp>
#include <iostream>

#include "mpsf/cli.hpp"
#include "mpsf/train.hpp"

namespace {

std::string config_key_footer(const std::vector<std::string>& prefixes) {
  std::string out = "\nConfig keys read by this command (override with --set key=value):\n";
  for (const auto& k : mpsf::RunConfig::keys_with_prefixes(prefixes)) {
    out += "  " + k.key + " (default " + k.default_value + "): " + k.doc + "\n";
  }
  return out;
}

mpsf::RunConfig build_config(const std::string& config_file,
                             const std::vector<std::string>& sets, int threads) {
  mpsf::RunConfig cfg;
  if (!config_file.empty()) cfg.load_file(config_file);
  for (const auto& kv : sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (threads >= 0) cfg.set("train.threads", std::to_string(threads));
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural SDF reconstruction of indoor scenes from posed RGB images with depth "
               "priors, plus synthetic scene generation and mesh evaluation"};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> sets;
  int threads = -1;
  app.add_option("--config", config_file, "flat key=value config file");
  app.add_option("--set", sets, "override a config key (key=value), repeatable");
  app.add_option("--threads", threads, "worker threads (0 = hardware default)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic ground-truthed scene");
  std::string synth_out;
  synth->add_option("out_dir", synth_out, "scene output directory")->required();
  synth->footer(config_key_footer({"scenesim."}));

  auto* train = app.add_subcommand("train", "optimize the field on a scene directory");
  std::string train_scene, train_out, resume;
  std::vector<std::string> ablate;
  train->add_option("scene_dir", train_scene, "scene directory from synth")->required();
  train->add_option("out_dir", train_out, "output directory (checkpoints + log)")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--ablate", ablate, "disable a mechanism: pointcloud|depthmap|exposure|normal")
      ->check(CLI::IsMember({"pointcloud", "depthmap", "exposure", "normal"}));
  train->footer(config_key_footer(
      {"train.", "sample.", "field.", "priors.", "regularize.", "render.", "scene."}));

  auto* mesh = app.add_subcommand("mesh", "extract a triangle mesh from a checkpoint");
  std::string mesh_ckpt, mesh_out, mesh_format = "ply";
  mesh->add_option("checkpoint", mesh_ckpt, "checkpoint file")->required();
  mesh->add_option("out", mesh_out, "output mesh path")->required();
  mesh->add_option("--format", mesh_format, "obj|ply (default ply)")
      ->check(CLI::IsMember({"obj", "ply"}));
  mesh->footer(config_key_footer({"mesh.", "field.", "scene."}));

  auto* eval = app.add_subcommand("eval", "compare a predicted mesh against ground truth");
  std::string eval_pred, eval_gt, eval_hist;
  eval->add_option("pred_mesh", eval_pred, "predicted mesh (obj|ply)")->required();
  eval->add_option("gt_mesh", eval_gt, "ground-truth mesh (obj|ply)")->required();
  eval->add_option("--histogram", eval_hist, "write a per-point distance histogram file");
  eval->footer(config_key_footer({"eval."}));

  auto* plot = app.add_subcommand("plot", "emit per-series CSV files from a training log");
  std::string plot_log, plot_out;
  plot->add_option("train_log", plot_log, "training log (TSV)")->required();
  plot->add_option("out_dir", plot_out, "CSV output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage problems exit 1; --help exits 0
  }

  try {
    mpsf::RunConfig cfg = build_config(config_file, sets, threads);
    if (*synth) {
      mpsf::cmd_synth(cfg, synth_out);
    } else if (*train) {
      mpsf::TrainOptions opts;
      opts.resume_checkpoint = resume;
      opts.ablate = ablate;
      mpsf::cmd_train(cfg, train_scene, train_out, opts);
    } else if (*mesh) {
      mpsf::cmd_mesh(cfg, mesh_ckpt, mesh_out, mesh_format);
    } else if (*eval) {
      mpsf::EvalOptions opts;
      opts.histogram_path = eval_hist;
      mpsf::cmd_eval(cfg, eval_pred, eval_gt, opts);
    } else if (*plot) {
      mpsf::cmd_plot(plot_log, plot_out);
    }
  } catch (const mpsf::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
