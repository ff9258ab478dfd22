#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "codemap/config.hpp"
#include "codemap/noise_sim.hpp"
#include "codemap/pipeline.hpp"

namespace codemap::cli {

namespace fs = std::filesystem;

struct SimulateOptions {
  std::string scene = "plane";
  fs::path out;
  bool noise = false;
  std::uint64_t seed = 0;
  std::size_t points = 1000;
};

struct PerturbOptions {
  fs::path in;
  fs::path out;
  EmgParams emg;
  std::size_t points = 1000;
  std::uint64_t seed = 0;
};

struct PerturbSummary {
  std::size_t pairs = 0;
  std::vector<std::int64_t> skipped;
};

struct MapOptions {
  fs::path in;
  fs::path out;
  std::optional<fs::path> config;
  std::optional<std::string> factors;
  std::optional<int> jobs;
};

struct FrameMetrics {
  std::int64_t id = 0;
  std::string stage;
  DepthMetrics metrics;
};

struct MapSummary {
  std::size_t keyframes = 0;
  std::size_t windows = 0;
  std::vector<FrameMetrics> metrics;
};

enum class DepthSource { automatic, refined, initial, gt };

struct FuseOptions {
  fs::path in;
  fs::path out;
  DepthSource depths = DepthSource::refined;
  std::optional<fs::path> config;
  std::optional<double> voxel_size;
  std::optional<double> truncation;
};

struct FuseSummary {
  std::size_t frames = 0;
  std::size_t vertices = 0;
  std::size_t triangles = 0;
  double area = 0.0;
};

struct EvalOptions {
  fs::path pred;
  fs::path gt;
  DepthSource depths = DepthSource::automatic;
  std::optional<fs::path> out;
};

struct EvalSummary {
  std::vector<FrameMetrics> frames;
  DepthMetrics aggregate;
};

/// Reads CODEMAP_LOG (trace|debug|info|warn|error|off) and installs the
/// stderr logger.
void setup_logging();

EmgParams parse_emg(const std::string& text);
DepthSource parse_depth_source(const std::string& text);

void simulate(const SimulateOptions& options);
PerturbSummary perturb(const PerturbOptions& options);
MapSummary map(const MapOptions& options);
FuseSummary fuse(const FuseOptions& options);
EvalSummary eval(const EvalOptions& options);

/// "kf_id,stage,mae,rmse" rows.
std::string format_metrics_csv(const std::vector<FrameMetrics>& rows);

}  // namespace codemap::cli
