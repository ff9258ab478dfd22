#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "codemap/image.hpp"
#include "codemap/keyframe.hpp"

namespace codemap {

struct WeightBundle;
struct TriangleMesh;

// ---------------------------------------------------------------------------
// Float images: PFM, single channel ("Pf"), little-endian (scale -1.0), rows
// stored bottom-to-top.

std::vector<std::byte> encode_pfm(const DenseImage& image);
DenseImage decode_pfm(std::span<const std::byte> bytes, ChannelKind kind);
void write_float_image(const std::filesystem::path& path, const DenseImage& image);
DenseImage read_float_image(const std::filesystem::path& path, ChannelKind kind);

// ---------------------------------------------------------------------------
// Sequence manifest: line-oriented "key value..." UTF-8 text.
//
//   codemap_sequence 1
//   proximity_scale <a>
//   intrinsics <fx> <fy> <cx> <cy> <width> <height>
//   keyframe <id>
//   timestamp <t>
//   pose <tx> <ty> <tz> <qw> <qx> <qy> <qz>
//   intensity <path>            (required)
//   sparse_depth <path>         (required)
//   rep_error <path>            (required)
//   gt_depth <path>             (optional; also initial_depth, refined_depth)
//   obs <landmark_id> <u> <v> <depth> <rep_error>
//   match <other_id> <landmark_id> <u_i> <v_i> <u_j> <v_j>
//   end
//
// Numbers are printed in shortest round-trip form, so print(parse(text)) is
// the identity on canonical text.

inline constexpr int kManifestVersion = 1;

struct KeyframeEntry {
  std::int64_t id = 0;
  double timestamp = 0.0;
  Pose pose;
  /// Image role -> path relative to the sequence directory.
  std::map<std::string, std::string> images;
  std::vector<SparseObservation> observations;
  std::vector<MatchSet> matches;
};

struct SequenceManifest {
  double proximity_scale = 2.0;
  Intrinsics intrinsics;
  std::vector<KeyframeEntry> keyframes;
};

std::string format_pose(const Pose& pose);
std::string print_manifest(const SequenceManifest& manifest);
SequenceManifest parse_manifest(const std::string& text);
void write_manifest(const std::filesystem::path& path, const SequenceManifest& manifest);
SequenceManifest read_manifest(const std::filesystem::path& path);

inline constexpr const char* kManifestFile = "manifest.txt";

struct Sequence {
  SequenceManifest manifest;
  std::vector<KeyframePacket> packets;
};

/// Loads manifest.txt and every referenced image. Throws ErrorCode::not_found
/// naming the first missing file.
Sequence load_sequence(const std::filesystem::path& dir);
/// Loads an extra per-keyframe depth image (e.g. "refined_depth"); nullopt if
/// the manifest does not list it for that keyframe.
std::optional<DenseImage> load_keyframe_image(const std::filesystem::path& dir, const KeyframeEntry& entry,
                                              const std::string& role, ChannelKind kind);
/// Writes packets (plus gt depth when present) and manifest.txt into dir.
SequenceManifest save_sequence(const std::filesystem::path& dir, const std::vector<KeyframePacket>& packets,
                               double proximity_scale);
std::string keyframe_image_name(std::int64_t id, const std::string& role);

// ---------------------------------------------------------------------------
// Decoder weights: CMWT binary, all multi-byte values little-endian.
//
//   "CMWT" | u32 version | u32 code_size | u32 input_width | u32 input_height
//   | f32 proximity_scale | f32 rep_error_scale | u32 layer_count
//   | per layer: u32 kind, u32 name_len, name bytes, u32 param_count,
//                u32 params[], u32 tensor_count, per tensor: u32 rank, u32 dims[]
//   | u64 float_count | f32 payload[float_count] (tensors in layer order, row-major)
//   | u32 crc32 of every preceding byte

inline constexpr std::uint32_t kWeightsVersion = 1;

std::vector<std::byte> serialize_weights(const WeightBundle& bundle);
WeightBundle parse_weights(std::span<const std::byte> bytes);
void write_weights(const std::filesystem::path& path, const WeightBundle& bundle);
WeightBundle read_weights(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Meshes: ASCII PLY.

std::string format_ply(const TriangleMesh& mesh);
void write_ply(const std::filesystem::path& path, const TriangleMesh& mesh);

// ---------------------------------------------------------------------------
// Training pairs (output of the perturbation procedure, input of the trainer).
//
//   codemap_pairs 1
//   proximity_scale <a>
//   intrinsics ...
//   pair <index>
//   frame <keyframe id>
//   neighbor <keyframe id>
//   intensity|sparse_depth|rep_error|gt_depth <path>
//   end

struct TrainingPairEntry {
  std::int64_t index = 0;
  std::int64_t frame_id = 0;
  std::int64_t neighbor_id = 0;
  std::map<std::string, std::string> images;
};

struct TrainingPairManifest {
  double proximity_scale = 2.0;
  Intrinsics intrinsics;
  std::vector<TrainingPairEntry> pairs;
};

inline constexpr const char* kPairsFile = "pairs.txt";

std::string print_pairs(const TrainingPairManifest& manifest);
TrainingPairManifest parse_pairs(const std::string& text);

// ---------------------------------------------------------------------------
// Shared helpers.

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Shortest decimal representation that parses back to the same double.
std::string format_number(double value);
double parse_number(const std::string& token, const std::string& context);

/// Splits text into non-empty, non-comment lines of whitespace-separated
/// tokens, keeping 1-based line numbers for error messages.
struct TokenLine {
  int line = 0;
  std::vector<std::string> tokens;
};
std::vector<TokenLine> tokenize_lines(const std::string& text);

}  // namespace codemap
