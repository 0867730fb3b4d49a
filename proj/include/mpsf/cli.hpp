#pragma once

#include <string>
#include <vector>

#include "mpsf/config.hpp"

namespace mpsf {

// Subcommand implementations shared by the executable and the tests.
// They throw: NumericError for numeric failures, std::runtime_error for
// data/file problems, std::invalid_argument for bad usage.

void cmd_synth(const RunConfig& config, const std::string& out_dir);

struct TrainOptions {
  std::string resume_checkpoint;  // empty = fresh start
  std::vector<std::string> ablate;
};

void cmd_train(const RunConfig& config, const std::string& scene_dir, const std::string& out_dir,
               const TrainOptions& options = {});

void cmd_mesh(const RunConfig& config, const std::string& checkpoint_path,
              const std::string& out_path, const std::string& format);

struct EvalOptions {
  std::string histogram_path;  // empty = no histogram file
};

// Prints "accuracy completeness chamfer precision recall fscore" (tab
// separated) to stdout and returns the values.
std::vector<double> cmd_eval(const RunConfig& config, const std::string& pred_mesh,
                             const std::string& gt_mesh, const EvalOptions& options = {});

void cmd_plot(const std::string& log_path, const std::string& out_dir);

}  // namespace mpsf
