#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "harnet/baselines.hpp"
#include "harnet/keyvalue.hpp"
#include "harnet/metrics.hpp"
#include "harnet/model.hpp"
#include "harnet/synthdata.hpp"
#include "harnet/training.hpp"

namespace harnet {

struct FalseFlowOptions {
  int images = 10;
  /// An entry is free of false flow when its FAZ intensity after reconstruction is below this.
  double epsilon = 10.0;
  int median_window = 3;
};

/// Every tunable of a run. Defaults are the published hyperparameters.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelSpec model = ModelSpec::paper();
  /// True when the config file set any [model] key; checkpoints must then match.
  bool model_explicit = false;
  bool overfit = false;
  PrepareOptions prepare;
  TrainOptions train;
  MetricOptions metrics;
  GaborParams gabor;
  FrangiParams frangi;
  VesselTreeSpec tree;
  CorpusOptions corpus;
  FalseFlowOptions falseflow;

  /// Overlay the keys of a config document. Unknown sections or keys are usage errors.
  void apply(const KeyValueDoc& doc);
  KeyValueDoc to_doc() const;
};

/// Help footer listing every config key with its default.
std::string config_reference();

/// Entry point behind the `harnet` executable; `args` excludes the program name. Returns the process exit code:
/// 0 success, 1 usage error, 2 data error, 3 numerical failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Mean and sample standard deviation over the finite values (std is 0 for a single value).
struct SummaryStat {
  std::size_t n = 0;
  double mean = 0.0;
  double stddev = 0.0;
};
SummaryStat summarize(const std::vector<double>& values);

}  // namespace harnet
