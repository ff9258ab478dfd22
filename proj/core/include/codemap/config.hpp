#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "codemap/fusion.hpp"
#include "codemap/pipeline.hpp"

namespace codemap {

/// Batch run configuration, read from "key value..." lines:
///
///   decoder analytic | <weights.cmwt>
///   code_size 32
///   window_size 4
///   factors photometric,reprojection,geometric,prior
///   weight <photometric|reprojection|geometric|prior> <w>
///   huber <photometric|reprojection|geometric> <delta>
///   sample_stride 4
///   max_iterations 20
///   initial_damping 1e-4
///   relative_tolerance 1e-6
///   step_tolerance 1e-8
///   pyramid 0|1
///   voxel_size 0.02 / truncation 0.08 / max_weight 100
///   proximity_scale 2
///   seed 0
///   jobs 1
struct RunConfig {
  std::string decoder = "analytic";
  int code_size = kDefaultCodeSize;
  int window_size = 4;
  ProblemSettings problem;
  TsdfParams fusion;
  double proximity_scale = 2.0;
  std::uint64_t seed = 0;

  /// Throws ErrorCode::invalid_argument / not_found.
  void validate() const;
};

/// Relative decoder paths are resolved against base_dir.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig read_run_config(const std::filesystem::path& path);
std::string print_run_config(const RunConfig& config);

/// Parses "photometric,geometric,..." into enable flags (others off).
void set_enabled_factors(FactorSettings& settings, const std::string& list);

/// Decoder factory for the configured decoder kind.
DecoderFactory make_decoder_factory(const RunConfig& config);

}  // namespace codemap
