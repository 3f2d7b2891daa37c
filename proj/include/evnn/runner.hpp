#pragma once

#include <string>
#include <vector>

#include "evnn/config.hpp"
#include "evnn/eulerian.hpp"
#include "evnn/lagrangian.hpp"

namespace evnn {

struct MetricRow {
  double time = 0.0;
  double l2 = 0.0;
  double relative_l2 = 0.0;
  std::string oracle;
};

struct RunSummary {
  std::string experiment;
  std::string out_dir;
  std::vector<MetricRow> metrics;
  std::vector<TraceRow> trace;
  int rejected_steps = 0;
  bool energy_monotone = true;  // over accepted steps, fixed-sample runs
  double fit_rmse = 0.0;
  double final_relative_l2 = 0.0;
  double train_seconds = 0.0;  // compute only; artifact I/O and metric
                               // evaluation excluded
  // Lagrangian extras
  double min_det = 1.0;
  double max_roundtrip_residual = 0.0;
  double mass_error = 0.0;
  double min_density = 0.0;
  // experiment-specific scalars
  double volume_error = 0.0;        // |int phi - A| at the final snapshot
  double weight_near_means = 0.0;   // mixture: weight fraction within 1.5 of a mean
  double marker_mean_radius = 0.0;  // porous medium front position
};

RunSummary run_experiment(const ExperimentConfig& cfg);

struct BaselinePoint {
  double seconds = 0.0;
  double relative_l2 = 0.0;
};

struct BaselineSummary {
  // method -> trial -> curve
  std::vector<std::string> methods;
  std::vector<std::vector<std::vector<BaselinePoint>>> curves;
  double common_final_time = 0.0;
  std::vector<double> mean_final;    // per method, relative l2 at the common time
  std::vector<double> stderr_final;  // standard error over trials
  std::string out_dir;
};

BaselineSummary compare_baselines(const ExperimentConfig& cfg);

}  // namespace evnn
