#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <sstream>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "codemap/error.hpp"
#include "codemap/fusion.hpp"
#include "codemap/io.hpp"
#include "codemap/synth.hpp"

namespace codemap::cli {

namespace {

const char* role_name(DepthSource s) {
  switch (s) {
    case DepthSource::refined: return "refined_depth";
    case DepthSource::initial: return "initial_depth";
    case DepthSource::gt: return "gt_depth";
    case DepthSource::automatic: break;
  }
  return "";
}

/// The requested depth image of a keyframe; automatic prefers refined, then
/// initial, then ground truth.
std::optional<DenseImage> pick_depth(const fs::path& dir, const KeyframeEntry& entry, DepthSource source) {
  if (source != DepthSource::automatic) return load_keyframe_image(dir, entry, role_name(source), ChannelKind::depth);
  for (DepthSource s : {DepthSource::refined, DepthSource::initial, DepthSource::gt})
    if (auto img = load_keyframe_image(dir, entry, role_name(s), ChannelKind::depth)) return img;
  return std::nullopt;
}

std::vector<std::size_t> timestamp_order(const std::vector<KeyframePacket>& packets) {
  std::vector<std::size_t> order(packets.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return packets[a].timestamp != packets[b].timestamp ? packets[a].timestamp < packets[b].timestamp
                                                        : packets[a].id < packets[b].id;
  });
  return order;
}

std::string pair_image_name(std::int64_t index, const std::string& role) {
  std::ostringstream os;
  os << "pair_" << std::setw(6) << std::setfill('0') << index << '_' << role << ".pfm";
  return os.str();
}

}  // namespace

void setup_logging() {
  auto logger = spdlog::stderr_logger_mt("codemap");
  logger->set_pattern("%Y-%m-%dT%H:%M:%S.%e level=%l %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("CODEMAP_LOG")) {
    const auto level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string(env) != "off")
      spdlog::warn("event=bad_log_level value={}", env);
    else
      spdlog::set_level(level);
  }
}

EmgParams parse_emg(const std::string& text) {
  std::vector<double> v;
  std::stringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) v.push_back(parse_number(tok, "--emg"));
  if (v.size() != 3) throw Error(ErrorCode::invalid_argument, "--emg expects K,LOC,SCALE");
  EmgParams p{v[0], v[1], v[2]};
  p.validate();
  return p;
}

DepthSource parse_depth_source(const std::string& text) {
  if (text == "auto") return DepthSource::automatic;
  if (text == "refined") return DepthSource::refined;
  if (text == "initial") return DepthSource::initial;
  if (text == "gt") return DepthSource::gt;
  throw Error(ErrorCode::invalid_argument, "unknown depth source '" + text + "' (auto|refined|initial|gt)");
}

void simulate(const SimulateOptions& o) {
  const SceneSpec spec = load_scene(o.scene);
  SequenceOptions so;
  so.n_points = o.points;
  so.seed = o.seed;
  if (o.noise) so.noise = EmgParams{};
  const auto packets = make_sequence(spec, so);
  save_sequence(o.out, packets, ProximityParams{}.scale);
  spdlog::info("event=simulate scene={} frames={} noise={} seed={} out={}", o.scene, packets.size(), o.noise, o.seed,
               o.out.string());
}

PerturbSummary perturb(const PerturbOptions& o) {
  o.emg.validate();
  const Sequence seq = load_sequence(o.in);
  fs::create_directories(o.out);
  TrainingPairManifest pm;
  pm.proximity_scale = seq.manifest.proximity_scale;
  pm.intrinsics = seq.manifest.intrinsics;
  PerturbSummary summary;

  for (const auto& frame : seq.packets) {
    if (!frame.gt_depth) {
      spdlog::warn("event=perturb_skip frame={} reason=no_ground_truth", frame.id);
      summary.skipped.push_back(frame.id);
      continue;
    }
    const KeyframePacket* neighbor = nullptr;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& other : seq.packets) {
      if (other.id == frame.id) continue;
      const double d = (other.pose.translation() - frame.pose.translation()).norm();
      if (d < best) {
        best = d;
        neighbor = &other;
      }
    }
    if (neighbor == nullptr || best > kMaxVirtualBaseline) {
      spdlog::warn("event=perturb_skip frame={} reason=no_neighbor_within_2m", frame.id);
      summary.skipped.push_back(frame.id);
      continue;
    }
    const TrainingPair pair = build_training_pair(frame, neighbor->pose, o.emg, o.points,
                                                  derive_seed(o.seed, static_cast<std::uint64_t>(frame.id)));
    TrainingPairEntry e;
    e.index = static_cast<std::int64_t>(pm.pairs.size());
    e.frame_id = frame.id;
    e.neighbor_id = neighbor->id;
    const auto put = [&](const std::string& role, const DenseImage& img) {
      const std::string name = pair_image_name(e.index, role);
      write_float_image(o.out / name, img);
      e.images[role] = name;
    };
    put("intensity", pair.conditioning.intensity);
    put("sparse_depth", pair.conditioning.sparse_depth);
    put("rep_error", pair.conditioning.rep_error);
    put("gt_depth", pair.gt_depth);
    if (pair.dropped_points > 0)
      spdlog::debug("event=perturb_dropped frame={} dropped={} requested={}", frame.id, pair.dropped_points,
                    pair.requested_points);
    pm.pairs.push_back(std::move(e));
  }
  write_text_file(o.out / kPairsFile, print_pairs(pm));
  summary.pairs = pm.pairs.size();
  spdlog::info("event=perturb pairs={} skipped={} out={}", summary.pairs, summary.skipped.size(), o.out.string());
  return summary;
}

MapSummary map(const MapOptions& o) {
  Sequence seq = load_sequence(o.in);
  RunConfig cfg;
  if (o.config)
    cfg = read_run_config(*o.config);
  else
    cfg.proximity_scale = seq.manifest.proximity_scale;
  if (o.factors) set_enabled_factors(cfg.problem.factors, *o.factors);
  if (o.jobs) cfg.problem.solver.jobs = *o.jobs;
  cfg.validate();

  Mapper mapper(MapperConfig{cfg.problem, make_decoder_factory(cfg), cfg.window_size});
  for (std::size_t k : timestamp_order(seq.packets)) {
    const IngestResult r = mapper.ingest(seq.packets[k]);
    if (!r.accepted) {
      spdlog::warn("event=ingest_rejected frame={} reason=\"{}\"", seq.packets[k].id, r.reason);
      continue;
    }
    while (auto w = mapper.step()) {
      for (std::int64_t id : w->skipped) spdlog::warn("event=decoder_failed frame={}", id);
      if (w->report)
        spdlog::debug("event=window frames={} iterations={} e0={} e1={}", w->ids.size(), w->report->iterations,
                      w->report->initial_energy, w->report->final_energy);
    }
  }

  SequenceManifest manifest = save_sequence(o.out, seq.packets, seq.manifest.proximity_scale);
  MapSummary summary;
  summary.windows = mapper.windows_scheduled();
  for (auto& entry : manifest.keyframes) {
    const KeyframeState& kf = mapper.keyframes().at(entry.id);
    const KeyframePacket& packet = kf.packet;
    const auto put = [&](const std::string& stage, const std::optional<DenseImage>& depth) {
      if (!depth) return;
      const std::string role = stage + "_depth";
      const std::string name = keyframe_image_name(entry.id, role);
      write_float_image(o.out / name, *depth);
      entry.images[role] = name;
      if (packet.gt_depth) summary.metrics.push_back({entry.id, stage, evaluate_depth(*depth, *packet.gt_depth)});
    };
    put("initial", kf.initial_depth);
    put("refined", kf.refined_depth);
    if (kf.refined_depth) ++summary.keyframes;
  }
  write_manifest(o.out / kManifestFile, manifest);
  if (!summary.metrics.empty()) write_text_file(o.out / "metrics.csv", format_metrics_csv(summary.metrics));
  spdlog::info("event=map keyframes={} windows={} out={}", summary.keyframes, summary.windows, o.out.string());
  return summary;
}

FuseSummary fuse(const FuseOptions& o) {
  const Sequence seq = load_sequence(o.in);
  TsdfParams params = o.config ? read_run_config(*o.config).fusion : TsdfParams{};
  if (o.voxel_size) params.voxel_size = *o.voxel_size;
  if (o.truncation) params.truncation = *o.truncation;
  if (!(params.voxel_size > 0) || !(params.truncation > 0))
    throw Error(ErrorCode::invalid_argument, "fuse: voxel size and truncation must be positive");

  struct Frame {
    DenseImage depth;
    Pose pose;
  };
  std::vector<Frame> frames;
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  const Intrinsics& k = seq.manifest.intrinsics;
  for (const auto& entry : seq.manifest.keyframes) {
    auto depth = pick_depth(o.in, entry, o.depths);
    if (!depth) {
      spdlog::warn("event=fuse_skip frame={} reason=no_depth", entry.id);
      continue;
    }
    for (int y = 0; y < depth->height(); ++y)
      for (int x = 0; x < depth->width(); ++x) {
        const float d = depth->at(x, y);
        if (!(d > 0.0f) || !std::isfinite(d)) continue;
        const Eigen::Vector3d p = entry.pose * unproject({double(x), double(y)}, d, k);
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
    frames.push_back({std::move(*depth), entry.pose});
  }
  if (frames.empty() || !lo.allFinite())
    throw Error(ErrorCode::not_found, "fuse: no usable depth maps in " + o.in.string());

  TsdfVolume volume = TsdfVolume::covering(lo, hi, params);
  constexpr double kMaxVoxels = 128.0 * 1024 * 1024;
  if (double(volume.dims().x()) * volume.dims().y() * volume.dims().z() > kMaxVoxels)
    throw Error(ErrorCode::invalid_argument, "fuse: volume too large; increase the voxel size");
  for (const auto& f : frames) volume.integrate(f.depth, f.pose, k);
  const TriangleMesh mesh = extract_mesh(volume);
  write_ply(o.out, mesh);

  FuseSummary s{frames.size(), mesh.vertices.size(), mesh.triangles.size(), mesh.surface_area()};
  spdlog::info("event=fuse frames={} vertices={} triangles={} out={}", s.frames, s.vertices, s.triangles,
               o.out.string());
  return s;
}

EvalSummary eval(const EvalOptions& o) {
  const SequenceManifest pred = read_manifest(o.pred / kManifestFile);
  const SequenceManifest gt = read_manifest(o.gt / kManifestFile);
  EvalSummary s;
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (const auto& g : gt.keyframes) {
    const auto truth = load_keyframe_image(o.gt, g, "gt_depth", ChannelKind::depth);
    if (!truth) continue;
    const auto it = std::find_if(pred.keyframes.begin(), pred.keyframes.end(),
                                 [&](const KeyframeEntry& e) { return e.id == g.id; });
    if (it == pred.keyframes.end()) {
      spdlog::warn("event=eval_missing frame={}", g.id);
      continue;
    }
    const auto depth = pick_depth(o.pred, *it, o.depths);
    if (!depth) {
      spdlog::warn("event=eval_missing frame={} reason=no_depth", g.id);
      continue;
    }
    const DepthMetrics m = evaluate_depth(*depth, *truth);
    s.frames.push_back({g.id, "eval", m});
    abs_sum += m.mae * double(m.count);
    sq_sum += m.rmse * m.rmse * double(m.count);
    s.aggregate.count += m.count;
  }
  if (s.aggregate.count == 0) throw Error(ErrorCode::insufficient_data, "eval: no keyframe with both depths");
  s.aggregate.mae = abs_sum / double(s.aggregate.count);
  s.aggregate.rmse = std::sqrt(sq_sum / double(s.aggregate.count));
  if (o.out) {
    auto rows = s.frames;
    rows.push_back({-1, "all", s.aggregate});
    write_text_file(*o.out, format_metrics_csv(rows));
  }
  return s;
}

std::string format_metrics_csv(const std::vector<FrameMetrics>& rows) {
  std::ostringstream os;
  os << "kf_id,stage,mae,rmse\n";
  for (const auto& r : rows)
    os << r.id << ',' << r.stage << ',' << format_number(r.metrics.mae) << ',' << format_number(r.metrics.rmse)
       << '\n';
  return os.str();
}

}  // namespace codemap::cli
