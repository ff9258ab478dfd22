#include "codemap/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "codemap/error.hpp"

namespace codemap {

DepthMetrics evaluate_depth(const DenseImage& pred, const DenseImage& gt) {
  if (!pred.same_shape(gt)) throw Error(ErrorCode::dimension_mismatch, "evaluate: image sizes differ");
  DepthMetrics m;
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!(gt[i] > 0.0f) || !std::isfinite(gt[i])) continue;
    const double e = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
    abs_sum += std::abs(e);
    sq_sum += e * e;
    ++m.count;
  }
  if (m.count == 0) throw Error(ErrorCode::insufficient_data, "evaluate: no valid ground-truth pixels");
  m.mae = abs_sum / static_cast<double>(m.count);
  m.rmse = std::sqrt(sq_sum / static_cast<double>(m.count));
  return m;
}

void validate_packet(const KeyframePacket& p) {
  const auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::invalid_argument, "keyframe " + std::to_string(p.id) + ": " + why);
  };
  try {
    p.intrinsics.validate();
  } catch (const Error& e) {
    fail(e.what());
  }
  const Intrinsics& k = p.intrinsics;
  for (const DenseImage* img : {&p.intensity, &p.sparse_depth, &p.rep_error})
    if (img->width() != k.width || img->height() != k.height) fail("image size differs from intrinsics");
  if (p.gt_depth && !p.gt_depth->same_shape(p.intensity)) fail("ground-truth size differs from intensity");
  for (std::size_t i = 0; i < p.sparse_depth.size(); ++i) {
    const float d = p.sparse_depth[i];
    const float r = p.rep_error[i];
    if (!std::isfinite(d) || d < 0.0f) fail("sparse depth must be finite and >= 0");
    if (!std::isfinite(r) || r < 0.0f) fail("reprojection error must be finite and >= 0");
    if (d == 0.0f && r != 0.0f) fail("reprojection error set where sparse depth is invalid");
  }
  for (const auto& o : p.observations)
    if (!(o.depth > 0.0) || !(o.rep_error >= 0.0)) fail("observation with invalid depth or error");
  if (!std::isfinite(p.timestamp)) fail("timestamp is not finite");
}

DecoderFactory analytic_decoder_factory(const AnalyticDecoderConfig& config) {
  return [config](const ConditioningSet& cond) {
    return std::make_shared<const LinearDecoder>(make_analytic_decoder(cond, config));
  };
}

Mapper::Mapper(MapperConfig config) : config_(std::move(config)) {
  if (!config_.decoder_factory) config_.decoder_factory = analytic_decoder_factory({});
  if (config_.window_size < 1) throw Error(ErrorCode::invalid_argument, "window size must be >= 1");
}

IngestResult Mapper::ingest(KeyframePacket packet) {
  try {
    validate_packet(packet);
  } catch (const Error& e) {
    return {false, false, e.what()};
  }
  auto it = keyframes_.find(packet.id);
  if (it != keyframes_.end()) {
    KeyframePacket& known = it->second.packet;
    known.pose = packet.pose;
    known.sparse_depth = std::move(packet.sparse_depth);
    known.rep_error = std::move(packet.rep_error);
    known.observations = std::move(packet.observations);
    known.matches = std::move(packet.matches);
    return {true, true, {}};
  }
  const std::int64_t id = packet.id;
  KeyframeState state;
  state.packet = std::move(packet);
  keyframes_.emplace(id, std::move(state));
  pending_.push_back(id);
  return {true, false, {}};
}

std::optional<WindowResult> Mapper::step() {
  if (pending_.empty()) return std::nullopt;
  const std::int64_t latest = pending_.back();
  pending_.clear();
  ++windows_;
  return process_window(select_window(latest));
}

std::size_t Mapper::covisibility(std::int64_t a, std::int64_t b) const {
  const KeyframePacket& pa = keyframes_.at(a).packet;
  const KeyframePacket& pb = keyframes_.at(b).packet;
  if (!pa.observations.empty() && !pb.observations.empty()) {
    std::set<std::int64_t> ids;
    for (const auto& o : pa.observations) ids.insert(o.landmark_id);
    std::set<std::int64_t> shared;
    for (const auto& o : pb.observations)
      if (ids.count(o.landmark_id)) shared.insert(o.landmark_id);
    return shared.size();
  }
  // Frustum overlap: sparse points of a that land inside b's image.
  const Pose b_from_a = relative_pose(pa.pose, pb.pose);
  std::size_t count = 0;
  for (int y = 0; y < pa.sparse_depth.height(); ++y) {
    for (int x = 0; x < pa.sparse_depth.width(); ++x) {
      const float d = pa.sparse_depth.at(x, y);
      if (!(d > 0.0f)) continue;
      const auto w = warp({double(x), double(y)}, d, b_from_a, pa.intrinsics);
      if (w && pb.intrinsics.in_bounds(w->pixel.u, w->pixel.v)) ++count;
    }
  }
  return count;
}

std::vector<std::int64_t> Mapper::select_window(std::int64_t latest_id) const {
  if (!keyframes_.count(latest_id)) throw Error(ErrorCode::not_found, "unknown keyframe " + std::to_string(latest_id));
  struct Candidate {
    std::int64_t id;
    std::size_t score;
    double timestamp;
  };
  std::vector<Candidate> candidates;
  for (const auto& [id, kf] : keyframes_)
    if (id != latest_id) candidates.push_back({id, covisibility(latest_id, id), kf.packet.timestamp});
  const auto more_recent = [](const Candidate& a, const Candidate& b) {
    return a.timestamp != b.timestamp ? a.timestamp > b.timestamp : a.id > b.id;
  };
  std::sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
    return a.score != b.score ? a.score > b.score : more_recent(a, b);
  });

  const auto slots = static_cast<std::size_t>(config_.window_size - 1);
  std::vector<std::int64_t> window{latest_id};
  for (const auto& c : candidates)
    if (c.score > 0 && window.size() <= slots) window.push_back(c.id);
  if (window.size() <= slots) {
    std::sort(candidates.begin(), candidates.end(), more_recent);
    for (const auto& c : candidates) {
      if (window.size() > slots) break;
      if (std::find(window.begin(), window.end(), c.id) == window.end()) window.push_back(c.id);
    }
  }
  return window;
}

bool Mapper::ensure_decoder(KeyframeState& kf) {
  if (kf.decoder) return true;
  if (kf.decoder_failed) return false;
  ConditioningSet cond{kf.packet.intensity, kf.packet.sparse_depth, kf.packet.rep_error};
  try {
    kf.decoder = config_.decoder_factory(cond);
  } catch (const Error&) {
    kf.decoder_failed = true;
    return false;
  }
  kf.code = DepthCode::zero(kf.decoder->code_size());
  kf.initial_depth = kf.decoder->decode_depth(kf.code);
  ++predictions_;
  return true;
}

WindowResult Mapper::process_window(const std::vector<std::int64_t>& ids) {
  WindowResult result;
  std::vector<KeyframeState*> usable;
  for (std::int64_t id : ids) {
    auto it = keyframes_.find(id);
    if (it == keyframes_.end()) throw Error(ErrorCode::not_found, "unknown keyframe " + std::to_string(id));
    if (ensure_decoder(it->second))
      usable.push_back(&it->second);
    else
      result.skipped.push_back(id);
  }
  std::sort(usable.begin(), usable.end(), [](const KeyframeState* a, const KeyframeState* b) {
    return a->packet.timestamp != b->packet.timestamp ? a->packet.timestamp < b->packet.timestamp
                                                      : a->packet.id < b->packet.id;
  });
  for (const auto* kf : usable) result.ids.push_back(kf->packet.id);

  if (usable.size() >= 2) {
    std::vector<FactorFrame> frames;
    std::vector<double> timestamps;
    std::vector<DepthCode> codes;
    for (const auto* kf : usable) {
      frames.push_back({kf->packet.id, kf->packet.pose, kf->packet.intrinsics, &kf->packet.intensity,
                        kf->decoder.get(), &kf->packet.matches});
      timestamps.push_back(kf->packet.timestamp);
      codes.push_back(kf->code);
    }
    const WindowProblem problem = build_problem(std::move(frames), std::move(timestamps), std::move(codes),
                                                config_.problem);
    SolveReport report = solve(problem);
    for (std::size_t k = 0; k < usable.size(); ++k) {
      KeyframeState& kf = *usable[k];
      if (report.ok) kf.code = report.codes[k];
      kf.refined_depth = kf.decoder->decode_depth(kf.code);
    }
    result.energy_change = report.initial_energy - report.final_energy;
    result.report = std::move(report);
  } else {
    for (auto* kf : usable) kf->refined_depth = kf->decoder->decode_depth(kf->code);
  }
  for (const auto* kf : usable) processed_.insert(kf->packet.id);
  return result;
}

AsyncMapper::AsyncMapper(MapperConfig config) : mapper_(std::move(config)) {
  worker_ = std::thread([this] { run(); });
}

AsyncMapper::~AsyncMapper() { stop(); }

IngestResult AsyncMapper::ingest(KeyframePacket packet) {
  try {
    validate_packet(packet);
  } catch (const Error& e) {
    return {false, false, e.what()};
  }
  {
    std::lock_guard lock(inbox_mutex_);
    if (stopping_) return {false, false, "mapper is stopped"};
    inbox_.push_back(std::move(packet));
  }
  inbox_cv_.notify_one();
  return {true, false, {}};
}

void AsyncMapper::run() {
  for (;;) {
    std::deque<KeyframePacket> batch;
    {
      std::unique_lock lock(inbox_mutex_);
      inbox_cv_.wait(lock, [&] { return stopping_ || !inbox_.empty(); });
      if (inbox_.empty()) break;
      batch.swap(inbox_);
      working_ = true;
    }
    {
      std::lock_guard state(state_mutex_);
      for (auto& p : batch) mapper_.ingest(std::move(p));
      while (mapper_.pending() > 0) mapper_.step();
    }
    {
      std::lock_guard lock(inbox_mutex_);
      working_ = false;
    }
    idle_cv_.notify_all();
  }
  idle_cv_.notify_all();
}

void AsyncMapper::flush() {
  std::unique_lock lock(inbox_mutex_);
  idle_cv_.wait(lock, [&] { return inbox_.empty() && !working_; });
}

void AsyncMapper::stop() {
  {
    std::lock_guard lock(inbox_mutex_);
    stopping_ = true;
  }
  inbox_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

bool AsyncMapper::busy() const {
  std::lock_guard lock(inbox_mutex_);
  return working_ || !inbox_.empty();
}

std::size_t AsyncMapper::prediction_count() const {
  std::lock_guard state(state_mutex_);
  return mapper_.prediction_count();
}

std::size_t AsyncMapper::windows_scheduled() const {
  std::lock_guard state(state_mutex_);
  return mapper_.windows_scheduled();
}

std::map<std::int64_t, DenseImage> AsyncMapper::refined_depths() const {
  std::lock_guard state(state_mutex_);
  std::map<std::int64_t, DenseImage> out;
  for (const auto& [id, kf] : mapper_.keyframes())
    if (kf.refined_depth) out.emplace(id, *kf.refined_depth);
  return out;
}

}  // namespace codemap
