#pragma once

#include <memory>
#include <vector>

#include "codemap/depth_codec.hpp"
#include "codemap/factors.hpp"
#include "codemap/synth.hpp"

namespace codemap::bench {

/// Plane sequence with one analytic decoder per keyframe, built once.
struct PlaneWindow {
  std::vector<KeyframePacket> packets;
  std::vector<std::shared_ptr<LinearDecoder>> decoders;

  PlaneWindow() : packets(make_sequence(preset_scene("plane"), SequenceOptions{})) {
    for (const auto& kf : packets)
      decoders.push_back(
          std::make_shared<LinearDecoder>(make_analytic_decoder({kf.intensity, kf.sparse_depth, kf.rep_error}, {})));
  }

  FactorFrame frame(std::size_t k) const {
    return {packets[k].id, packets[k].pose, packets[k].intrinsics, &packets[k].intensity, decoders[k].get(),
            &packets[k].matches};
  }
  std::vector<FactorFrame> frames() const {
    std::vector<FactorFrame> out;
    for (std::size_t k = 0; k < packets.size(); ++k) out.push_back(frame(k));
    return out;
  }
  std::vector<double> timestamps() const {
    std::vector<double> out;
    for (const auto& kf : packets) out.push_back(kf.timestamp);
    return out;
  }

  static const PlaneWindow& get() {
    static const PlaneWindow w;
    return w;
  }
};

}  // namespace codemap::bench
