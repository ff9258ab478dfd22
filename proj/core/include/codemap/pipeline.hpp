#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "codemap/window_optimizer.hpp"

namespace codemap {

struct DepthMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
};

/// MAE and RMSE over pixels with valid ground truth. Throws
/// ErrorCode::insufficient_data when there are none.
DepthMetrics evaluate_depth(const DenseImage& pred, const DenseImage& gt);

/// Throws ErrorCode::invalid_argument naming the violated invariant.
void validate_packet(const KeyframePacket& packet);

struct MapperConfig {
  ProblemSettings problem;
  DecoderFactory decoder_factory;
  int window_size = 4;
};

/// Analytic-decoder factory with the given settings.
DecoderFactory analytic_decoder_factory(const AnalyticDecoderConfig& config);

struct IngestResult {
  bool accepted = false;
  bool duplicate = false;
  std::string reason;
};

struct WindowResult {
  std::vector<std::int64_t> ids;
  /// Keyframes dropped from the window because their decoder failed.
  std::vector<std::int64_t> skipped;
  std::optional<SolveReport> report;
  double energy_change = 0.0;
};

/// Per-keyframe mapping state.
struct KeyframeState {
  KeyframePacket packet;
  DecoderPtr decoder;
  DepthCode code;
  std::optional<DenseImage> initial_depth;
  std::optional<DenseImage> refined_depth;
  bool decoder_failed = false;
};

/// Synchronous mapper core: ingestion with dedupe, covisibility window
/// selection and window refinement. Not thread-safe; see AsyncMapper.
class Mapper {
 public:
  explicit Mapper(MapperConfig config);

  /// New ids are queued; known ids only update pose and sparse data.
  IngestResult ingest(KeyframePacket packet);

  /// Handles the newest queued keyframe (older queued windows are
  /// superseded). Returns nullopt when nothing is pending.
  std::optional<WindowResult> step();

  /// The latest keyframe plus its top covisible keyframes.
  std::vector<std::int64_t> select_window(std::int64_t latest_id) const;
  /// Shared landmark count (or frustum overlap when ids are absent).
  std::size_t covisibility(std::int64_t a, std::int64_t b) const;

  WindowResult process_window(const std::vector<std::int64_t>& ids);

  const std::map<std::int64_t, KeyframeState>& keyframes() const { return keyframes_; }
  const std::set<std::int64_t>& processed() const { return processed_; }
  std::size_t prediction_count() const { return predictions_; }
  std::size_t windows_scheduled() const { return windows_; }
  std::size_t pending() const { return pending_.size(); }

 private:
  bool ensure_decoder(KeyframeState& kf);

  MapperConfig config_;
  std::map<std::int64_t, KeyframeState> keyframes_;
  std::set<std::int64_t> processed_;
  std::deque<std::int64_t> pending_;
  std::size_t predictions_ = 0;
  std::size_t windows_ = 0;
};

/// Mapper on a worker thread. ingest() validates and enqueues the packet; it
/// never waits for a solve.
class AsyncMapper {
 public:
  explicit AsyncMapper(MapperConfig config);
  ~AsyncMapper();
  AsyncMapper(const AsyncMapper&) = delete;
  AsyncMapper& operator=(const AsyncMapper&) = delete;

  IngestResult ingest(KeyframePacket packet);
  /// Blocks until every ingested packet has been handled.
  void flush();
  void stop();

  bool busy() const;
  std::size_t prediction_count() const;
  std::size_t windows_scheduled() const;
  /// Copy of the refined depths so far.
  std::map<std::int64_t, DenseImage> refined_depths() const;

 private:
  void run();

  Mapper mapper_;
  mutable std::mutex inbox_mutex_;
  std::condition_variable inbox_cv_;
  std::condition_variable idle_cv_;
  std::deque<KeyframePacket> inbox_;
  bool working_ = false;
  bool stopping_ = false;
  mutable std::mutex state_mutex_;
  std::thread worker_;
};

}  // namespace codemap
