#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "cli/commands.hpp"
#include "codemap/error.hpp"
#include "codemap/io.hpp"

using namespace codemap;

int main(int argc, char** argv) {
  cli::setup_logging();
  CLI::App app{"codemap: sparse-to-dense keyframe depth mapping"};
  app.require_subcommand(1);

  cli::SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Render a synthetic keyframe sequence");
  simulate->add_option("--scene", sim.scene, "Preset (plane|box|room|textureless) or scene file")->required();
  simulate->add_option("--out", sim.out, "Output sequence directory")->required();
  simulate->add_flag("--noise", sim.noise, "Simulate reprojection noise on matched points");
  simulate->add_option("--seed", sim.seed, "Random seed");
  simulate->add_option("--points", sim.points, "Sparse points per keyframe");

  cli::PerturbOptions per;
  std::string emg = "4.31,0.44,0.20";
  auto* perturb = app.add_subcommand("perturb", "Emit noisy training pairs from a sequence");
  perturb->add_option("--in", per.in, "Input sequence directory")->required();
  perturb->add_option("--out", per.out, "Output pairs directory")->required();
  perturb->add_option("--emg", emg, "Error distribution K,LOC,SCALE")->capture_default_str();
  perturb->add_option("--points", per.points, "Sparse points per frame")->capture_default_str();
  perturb->add_option("--seed", per.seed, "Random seed");

  cli::MapOptions mo;
  auto* map = app.add_subcommand("map", "Predict and refine dense depth for every keyframe");
  map->add_option("--in", mo.in, "Input sequence directory")->required();
  map->add_option("--out", mo.out, "Output directory")->required();
  map->add_option("--config", mo.config, "Run configuration file");
  map->add_option("--factors", mo.factors, "Enabled factors, e.g. photometric,geometric,prior");
  map->add_option("--jobs", mo.jobs, "Solver threads")->check(CLI::PositiveNumber);

  cli::FuseOptions fo;
  std::string fuse_depths = "refined";
  auto* fuse = app.add_subcommand("fuse", "Fuse depth maps into a TSDF and mesh it");
  fuse->add_option("--in", fo.in, "Sequence or map output directory")->required();
  fuse->add_option("--out", fo.out, "Output PLY file")->required();
  fuse->add_option("--depths", fuse_depths, "auto|refined|initial|gt")->capture_default_str();
  fuse->add_option("--config", fo.config, "Run configuration file (fusion keys)");
  fuse->add_option("--voxel-size", fo.voxel_size, "Voxel size in meters");
  fuse->add_option("--truncation", fo.truncation, "Truncation distance in meters");

  cli::EvalOptions eo;
  std::string eval_depths = "auto";
  auto* eval = app.add_subcommand("eval", "Depth MAE/RMSE against ground truth");
  eval->add_option("--pred", eo.pred, "Predicted sequence directory")->required();
  eval->add_option("--gt", eo.gt, "Ground-truth sequence directory")->required();
  eval->add_option("--depths", eval_depths, "auto|refined|initial|gt")->capture_default_str();
  eval->add_option("--out", eo.out, "Also write the table as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) {
      cli::simulate(sim);
    } else if (*perturb) {
      per.emg = cli::parse_emg(emg);
      cli::perturb(per);
    } else if (*map) {
      const auto s = cli::map(mo);
      if (!s.metrics.empty()) std::cout << cli::format_metrics_csv(s.metrics);
    } else if (*fuse) {
      fo.depths = cli::parse_depth_source(fuse_depths);
      cli::fuse(fo);
    } else if (*eval) {
      eo.depths = cli::parse_depth_source(eval_depths);
      const auto s = cli::eval(eo);
      std::cout << "kf_id,mae,rmse\n";
      for (const auto& f : s.frames)
        std::cout << f.id << ',' << format_number(f.metrics.mae) << ',' << format_number(f.metrics.rmse) << '\n';
      std::cout << "all," << format_number(s.aggregate.mae) << ',' << format_number(s.aggregate.rmse) << '\n';
    }
  } catch (const Error& e) {
    spdlog::error("event=failed code={} message=\"{}\"", to_string(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("event=failed message=\"{}\"", e.what());
    return 1;
  }
  return 0;
}
