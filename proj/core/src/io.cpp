#include "codemap/io.hpp"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "codemap/error.hpp"
#include "codemap/fusion.hpp"
#include "codemap/learned_decoder.hpp"

namespace codemap {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Helpers

std::vector<std::byte> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::not_found, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(ErrorCode::format, "failed reading " + path.string());
  return bytes;
}

void write_file_bytes(const fs::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::not_found, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::format, "failed writing " + path.string());
}

std::string read_text_file(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

void write_text_file(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::as_bytes(std::span(text.data(), text.size())));
}

std::string format_number(double value) {
  if (value == 0.0) return "0";  // also folds -0
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_number(const std::string& token, const std::string& context) {
  double value = 0.0;
  const char* first = token.data();
  if (!token.empty() && token[0] == '+') ++first;
  const auto res = std::from_chars(first, token.data() + token.size(), value);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size())
    throw Error(ErrorCode::format, context + ": cannot parse number '" + token + "'");
  return value;
}

namespace {

std::int64_t parse_int(const std::string& token, const std::string& context) {
  std::int64_t value = 0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), value);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size())
    throw Error(ErrorCode::format, context + ": cannot parse integer '" + token + "'");
  return value;
}

std::string where(const TokenLine& line) { return "line " + std::to_string(line.line); }

void expect_arity(const TokenLine& line, std::size_t n) {
  if (line.tokens.size() != n)
    throw Error(ErrorCode::format, where(line) + ": '" + line.tokens[0] + "' expects " +
                                       std::to_string(n - 1) + " values");
}

}  // namespace

std::vector<TokenLine> tokenize_lines(const std::string& text) {
  std::vector<TokenLine> lines;
  std::istringstream in(text);
  std::string raw;
  int number = 0;
  while (std::getline(in, raw)) {
    ++number;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ls(raw);
    TokenLine line{number, {}};
    std::string tok;
    while (ls >> tok) line.tokens.push_back(tok);
    if (!line.tokens.empty()) lines.push_back(std::move(line));
  }
  return lines;
}

// ---------------------------------------------------------------------------
// Little-endian byte writer/reader

namespace {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::string_view s) {
    for (char c : s) bytes_.push_back(static_cast<std::byte>(c));
  }
  std::vector<std::byte>& bytes() { return bytes_; }

 private:
  std::vector<std::byte> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > bytes_.size()) {
      std::ostringstream os;
      os << "truncated stream reading " << what << " at byte " << pos_;
      throw Error(ErrorCode::format, os.str());
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

// ---------------------------------------------------------------------------
// PFM

std::vector<std::byte> encode_pfm(const DenseImage& image) {
  ByteWriter w;
  std::ostringstream header;
  header << "Pf\n" << image.width() << ' ' << image.height() << "\n-1.0\n";
  w.raw(header.str());
  for (int y = image.height() - 1; y >= 0; --y)
    for (int x = 0; x < image.width(); ++x) w.f32(image.at(x, y));
  return std::move(w.bytes());
}

DenseImage decode_pfm(std::span<const std::byte> bytes, ChannelKind kind) {
  std::size_t pos = 0;
  const auto next_token = [&](const char* what) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    std::string tok;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])))
      tok.push_back(static_cast<char>(bytes[pos++]));
    if (tok.empty()) throw Error(ErrorCode::format, std::string("pfm: missing ") + what);
    return tok;
  };
  const std::string magic = next_token("magic");
  if (magic == "PF") throw Error(ErrorCode::format, "pfm: 3-channel 'PF' images are not supported");
  if (magic != "Pf") throw Error(ErrorCode::format, "pfm: bad magic '" + magic + "'");
  const auto width = parse_int(next_token("width"), "pfm width");
  const auto height = parse_int(next_token("height"), "pfm height");
  if (width <= 0 || height <= 0 || width > (1 << 20) || height > (1 << 20))
    throw Error(ErrorCode::format, "pfm: invalid dimensions");
  const double scale = parse_number(next_token("scale"), "pfm scale");
  if (scale == 0.0) throw Error(ErrorCode::format, "pfm: scale must be non-zero");
  if (scale > 0.0) throw Error(ErrorCode::format, "pfm: big-endian payloads are not supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw Error(ErrorCode::format, "pfm: header not terminated");
  ++pos;

  const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() - pos != 4 * n) {
    std::ostringstream os;
    os << "pfm: payload has " << bytes.size() - pos << " bytes, expected " << 4 * n;
    throw Error(ErrorCode::format, os.str());
  }
  ByteReader r(bytes.subspan(pos));
  DenseImage image(static_cast<int>(width), static_cast<int>(height), kind);
  for (auto y = height - 1; y >= 0; --y)
    for (std::int64_t x = 0; x < width; ++x) image.at(static_cast<int>(x), static_cast<int>(y)) = r.f32("pfm pixel");
  return image;
}

void write_float_image(const fs::path& path, const DenseImage& image) {
  write_file_bytes(path, encode_pfm(image));
}

DenseImage read_float_image(const fs::path& path, ChannelKind kind) {
  try {
    return decode_pfm(read_file_bytes(path), kind);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Manifest

std::string format_pose(const Pose& pose) {
  const auto& t = pose.translation();
  const auto& q = pose.rotation();
  std::ostringstream os;
  os << format_number(t.x()) << ' ' << format_number(t.y()) << ' ' << format_number(t.z()) << ' '
     << format_number(q.w()) << ' ' << format_number(q.x()) << ' ' << format_number(q.y()) << ' '
     << format_number(q.z());
  return os.str();
}

namespace {

const std::vector<std::string> kRequiredImages = {"intensity", "sparse_depth", "rep_error"};
const std::set<std::string> kImageRoles = {"intensity",  "sparse_depth",  "rep_error",
                                           "gt_depth",   "initial_depth", "refined_depth"};

std::string format_intrinsics(const Intrinsics& k) {
  std::ostringstream os;
  os << format_number(k.fx) << ' ' << format_number(k.fy) << ' ' << format_number(k.cx) << ' '
     << format_number(k.cy) << ' ' << k.width << ' ' << k.height;
  return os.str();
}

Intrinsics parse_intrinsics(const TokenLine& line) {
  expect_arity(line, 7);
  Intrinsics k;
  const std::string ctx = where(line);
  k.fx = parse_number(line.tokens[1], ctx);
  k.fy = parse_number(line.tokens[2], ctx);
  k.cx = parse_number(line.tokens[3], ctx);
  k.cy = parse_number(line.tokens[4], ctx);
  k.width = static_cast<int>(parse_int(line.tokens[5], ctx));
  k.height = static_cast<int>(parse_int(line.tokens[6], ctx));
  k.validate();
  return k;
}

Pose parse_pose(const TokenLine& line) {
  expect_arity(line, 8);
  const std::string ctx = where(line);
  double v[7];
  for (int i = 0; i < 7; ++i) v[i] = parse_number(line.tokens[static_cast<std::size_t>(i + 1)], ctx);
  try {
    return Pose(Eigen::Quaterniond(v[3], v[4], v[5], v[6]), Eigen::Vector3d(v[0], v[1], v[2]));
  } catch (const Error& e) {
    throw Error(ErrorCode::format, ctx + ": " + e.what());
  }
}

void check_version(const std::vector<TokenLine>& lines, const std::string& magic, int version) {
  if (lines.empty() || lines[0].tokens[0] != magic)
    throw Error(ErrorCode::format, "expected '" + magic + "' header");
  expect_arity(lines[0], 2);
  const auto v = parse_int(lines[0].tokens[1], where(lines[0]));
  if (v != version)
    throw Error(ErrorCode::format, "unsupported " + magic + " version " + std::to_string(v));
}

}  // namespace

std::string print_manifest(const SequenceManifest& m) {
  std::ostringstream os;
  os << "codemap_sequence " << kManifestVersion << '\n';
  os << "proximity_scale " << format_number(m.proximity_scale) << '\n';
  os << "intrinsics " << format_intrinsics(m.intrinsics) << '\n';
  for (const auto& kf : m.keyframes) {
    os << "keyframe " << kf.id << '\n';
    os << "timestamp " << format_number(kf.timestamp) << '\n';
    os << "pose " << format_pose(kf.pose) << '\n';
    // Required roles first, then optional ones alphabetically.
    for (const auto& role : kRequiredImages)
      if (auto it = kf.images.find(role); it != kf.images.end()) os << role << ' ' << it->second << '\n';
    for (const auto& [role, path] : kf.images)
      if (std::find(kRequiredImages.begin(), kRequiredImages.end(), role) == kRequiredImages.end())
        os << role << ' ' << path << '\n';
    for (const auto& o : kf.observations)
      os << "obs " << o.landmark_id << ' ' << format_number(o.pixel.u) << ' ' << format_number(o.pixel.v)
         << ' ' << format_number(o.depth) << ' ' << format_number(o.rep_error) << '\n';
    for (const auto& ms : kf.matches)
      for (const auto& c : ms.correspondences)
        os << "match " << ms.other_id << ' ' << c.landmark_id << ' ' << format_number(c.pixel_i.u) << ' '
           << format_number(c.pixel_i.v) << ' ' << format_number(c.pixel_j.u) << ' '
           << format_number(c.pixel_j.v) << '\n';
    os << "end\n";
  }
  return os.str();
}

SequenceManifest parse_manifest(const std::string& text) {
  const auto lines = tokenize_lines(text);
  check_version(lines, "codemap_sequence", kManifestVersion);
  SequenceManifest m;
  bool have_intrinsics = false;
  std::set<std::int64_t> ids;
  KeyframeEntry* kf = nullptr;
  bool have_pose = false;
  bool have_timestamp = false;
  int kf_line = 0;

  const auto close_keyframe = [&](int line) {
    for (const auto& role : kRequiredImages)
      if (!kf->images.contains(role))
        throw Error(ErrorCode::format, "keyframe " + std::to_string(kf->id) + " (line " +
                                           std::to_string(kf_line) + "): missing required key '" + role + "'");
    if (!have_pose || !have_timestamp)
      throw Error(ErrorCode::format, "keyframe " + std::to_string(kf->id) + " (line " + std::to_string(line) +
                                         "): missing pose or timestamp");
    kf = nullptr;
  };

  for (std::size_t li = 1; li < lines.size(); ++li) {
    const TokenLine& line = lines[li];
    const std::string& key = line.tokens[0];
    const std::string ctx = where(line);
    if (!kf) {
      if (key == "proximity_scale") {
        expect_arity(line, 2);
        m.proximity_scale = parse_number(line.tokens[1], ctx);
        if (!(m.proximity_scale > 0.0)) throw Error(ErrorCode::format, ctx + ": proximity_scale must be > 0");
      } else if (key == "intrinsics") {
        m.intrinsics = parse_intrinsics(line);
        have_intrinsics = true;
      } else if (key == "keyframe") {
        expect_arity(line, 2);
        KeyframeEntry entry;
        entry.id = parse_int(line.tokens[1], ctx);
        if (!ids.insert(entry.id).second)
          throw Error(ErrorCode::format, ctx + ": duplicate keyframe id " + line.tokens[1]);
        m.keyframes.push_back(std::move(entry));
        kf = &m.keyframes.back();
        have_pose = have_timestamp = false;
        kf_line = line.line;
      } else {
        throw Error(ErrorCode::format, ctx + ": unexpected key '" + key + "'");
      }
      continue;
    }
    if (key == "end") {
      expect_arity(line, 1);
      close_keyframe(line.line);
    } else if (key == "timestamp") {
      expect_arity(line, 2);
      kf->timestamp = parse_number(line.tokens[1], ctx);
      have_timestamp = true;
    } else if (key == "pose") {
      kf->pose = parse_pose(line);
      have_pose = true;
    } else if (kImageRoles.contains(key)) {
      expect_arity(line, 2);
      kf->images[key] = line.tokens[1];
    } else if (key == "obs") {
      expect_arity(line, 6);
      SparseObservation o;
      o.landmark_id = parse_int(line.tokens[1], ctx);
      o.pixel = {parse_number(line.tokens[2], ctx), parse_number(line.tokens[3], ctx)};
      o.depth = parse_number(line.tokens[4], ctx);
      o.rep_error = parse_number(line.tokens[5], ctx);
      if (!(o.depth > 0.0) || !(o.rep_error >= 0.0))
        throw Error(ErrorCode::format, ctx + ": observation needs depth > 0 and rep_error >= 0");
      kf->observations.push_back(o);
    } else if (key == "match") {
      expect_arity(line, 7);
      const auto other = parse_int(line.tokens[1], ctx);
      Correspondence c;
      c.landmark_id = parse_int(line.tokens[2], ctx);
      c.pixel_i = {parse_number(line.tokens[3], ctx), parse_number(line.tokens[4], ctx)};
      c.pixel_j = {parse_number(line.tokens[5], ctx), parse_number(line.tokens[6], ctx)};
      if (kf->matches.empty() || kf->matches.back().other_id != other) kf->matches.push_back({other, {}});
      kf->matches.back().correspondences.push_back(c);
    } else {
      throw Error(ErrorCode::format, ctx + ": unknown keyframe key '" + key + "'");
    }
  }
  if (kf) throw Error(ErrorCode::format, "keyframe " + std::to_string(kf->id) + ": missing 'end'");
  if (!have_intrinsics) throw Error(ErrorCode::format, "manifest: missing required key 'intrinsics'");
  return m;
}

void write_manifest(const fs::path& path, const SequenceManifest& manifest) {
  write_text_file(path, print_manifest(manifest));
}

SequenceManifest read_manifest(const fs::path& path) {
  try {
    return parse_manifest(read_text_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string keyframe_image_name(std::int64_t id, const std::string& role) {
  std::ostringstream os;
  os << "kf_" << std::setw(6) << std::setfill('0') << id << '_' << role << ".pfm";
  return os.str();
}

namespace {

DenseImage load_role(const fs::path& dir, const KeyframeEntry& entry, const std::string& role, ChannelKind kind) {
  const fs::path path = dir / entry.images.at(role);
  if (!fs::exists(path))
    throw Error(ErrorCode::not_found, "keyframe " + std::to_string(entry.id) + ": missing image file " + path.string());
  return read_float_image(path, kind);
}

}  // namespace

std::optional<DenseImage> load_keyframe_image(const fs::path& dir, const KeyframeEntry& entry,
                                              const std::string& role, ChannelKind kind) {
  if (!entry.images.contains(role)) return std::nullopt;
  return load_role(dir, entry, role, kind);
}

Sequence load_sequence(const fs::path& dir) {
  const fs::path manifest_path = dir / kManifestFile;
  if (!fs::exists(manifest_path)) throw Error(ErrorCode::not_found, "missing manifest " + manifest_path.string());
  Sequence seq;
  seq.manifest = read_manifest(manifest_path);
  for (const auto& entry : seq.manifest.keyframes) {
    KeyframePacket p;
    p.id = entry.id;
    p.timestamp = entry.timestamp;
    p.pose = entry.pose;
    p.intrinsics = seq.manifest.intrinsics;
    p.intensity = load_role(dir, entry, "intensity", ChannelKind::intensity);
    p.sparse_depth = load_role(dir, entry, "sparse_depth", ChannelKind::depth);
    p.rep_error = load_role(dir, entry, "rep_error", ChannelKind::rep_error);
    p.gt_depth = load_keyframe_image(dir, entry, "gt_depth", ChannelKind::depth);
    p.observations = entry.observations;
    p.matches = entry.matches;
    seq.packets.push_back(std::move(p));
  }
  return seq;
}

SequenceManifest save_sequence(const fs::path& dir, const std::vector<KeyframePacket>& packets,
                               double proximity_scale) {
  fs::create_directories(dir);
  SequenceManifest m;
  m.proximity_scale = proximity_scale;
  if (!packets.empty()) m.intrinsics = packets.front().intrinsics;
  for (const auto& p : packets) {
    if (!(p.intrinsics == m.intrinsics))
      throw Error(ErrorCode::invalid_argument, "save_sequence: packets must share intrinsics");
    KeyframeEntry e;
    e.id = p.id;
    e.timestamp = p.timestamp;
    e.pose = p.pose;
    const auto put = [&](const std::string& role, const DenseImage& img) {
      const std::string name = keyframe_image_name(p.id, role);
      write_float_image(dir / name, img);
      e.images[role] = name;
    };
    put("intensity", p.intensity);
    put("sparse_depth", p.sparse_depth);
    put("rep_error", p.rep_error);
    if (p.gt_depth) put("gt_depth", *p.gt_depth);
    e.observations = p.observations;
    e.matches = p.matches;
    m.keyframes.push_back(std::move(e));
  }
  write_manifest(dir / kManifestFile, m);
  return m;
}

// ---------------------------------------------------------------------------
// Weights

std::vector<std::byte> serialize_weights(const WeightBundle& bundle) {
  validate_bundle(bundle);
  ByteWriter w;
  w.raw("CMWT");
  w.u32(kWeightsVersion);
  w.u32(bundle.code_size);
  w.u32(bundle.input_width);
  w.u32(bundle.input_height);
  w.f32(bundle.proximity_scale);
  w.f32(bundle.rep_error_scale);
  w.u32(static_cast<std::uint32_t>(bundle.layers.size()));
  std::uint64_t floats = 0;
  for (const auto& layer : bundle.layers) {
    w.u32(static_cast<std::uint32_t>(layer.kind));
    w.u32(static_cast<std::uint32_t>(layer.name.size()));
    w.raw(layer.name);
    w.u32(static_cast<std::uint32_t>(layer.params.size()));
    for (auto p : layer.params) w.u32(p);
    w.u32(static_cast<std::uint32_t>(layer.tensors.size()));
    for (const auto& t : layer.tensors) {
      w.u32(static_cast<std::uint32_t>(t.shape.size()));
      for (auto d : t.shape) w.u32(d);
      floats += t.data.size();
    }
  }
  w.u64(floats);
  for (const auto& layer : bundle.layers)
    for (const auto& t : layer.tensors)
      for (float v : t.data) w.f32(v);
  auto& bytes = w.bytes();
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
  w.u32(crc);
  return std::move(w.bytes());
}

WeightBundle parse_weights(std::span<const std::byte> bytes) {
  ByteReader br(bytes);
  if (br.str(4, "magic") != "CMWT") throw Error(ErrorCode::format, "weights: bad magic");
  const auto version = br.u32("version");
  if (version != kWeightsVersion)
    throw Error(ErrorCode::format, "weights: unsupported version " + std::to_string(version));

  // Descriptor first, structurally only; shapes are judged after the checksum.
  WeightBundle bundle;
  bundle.code_size = br.u32("code_size");
  bundle.input_width = br.u32("input_width");
  bundle.input_height = br.u32("input_height");
  bundle.proximity_scale = br.f32("proximity_scale");
  bundle.rep_error_scale = br.f32("rep_error_scale");
  const auto layer_count = br.u32("layer_count");
  if (layer_count > 4096) throw Error(ErrorCode::format, "weights: implausible layer count");
  for (std::uint32_t li = 0; li < layer_count; ++li) {
    LayerSpec layer;
    layer.kind = static_cast<LayerKind>(br.u32("layer kind"));
    const auto name_len = br.u32("layer name length");
    layer.name = br.str(name_len, "layer name");
    const auto np = br.u32("param count");
    if (np > 64) throw Error(ErrorCode::format, "layer '" + layer.name + "': implausible parameter count");
    for (std::uint32_t i = 0; i < np; ++i) layer.params.push_back(br.u32("param"));
    const auto nt = br.u32("tensor count");
    if (nt > 16) throw Error(ErrorCode::format, "layer '" + layer.name + "': implausible tensor count");
    for (std::uint32_t t = 0; t < nt; ++t) {
      WeightTensor tensor;
      const auto rank = br.u32("tensor rank");
      if (rank > 8) throw Error(ErrorCode::format, "layer '" + layer.name + "': implausible tensor rank");
      for (std::uint32_t d = 0; d < rank; ++d) tensor.shape.push_back(br.u32("tensor dim"));
      layer.tensors.push_back(std::move(tensor));
    }
    bundle.layers.push_back(std::move(layer));
  }
  const auto floats = br.u64("payload size");
  if (floats > br.remaining() / 4 || br.remaining() - floats * 4 < 4)
    throw Error(ErrorCode::format, "weights: truncated stream (payload or checksum missing)");
  if (br.remaining() - floats * 4 > 4) throw Error(ErrorCode::format, "weights: trailing bytes after checksum");

  const std::size_t body = bytes.size() - 4;
  ByteReader trailer(bytes.subspan(body));
  const auto stored = trailer.u32("checksum");
  const auto actual = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(body)));
  if (stored != actual) {
    std::ostringstream os;
    os << "weights: checksum mismatch (stored " << std::hex << stored << ", computed " << actual << ")";
    throw Error(ErrorCode::checksum, os.str());
  }

  std::uint64_t declared = 0;
  for (const auto& layer : bundle.layers) {
    const auto expected = expected_tensor_shapes(layer, bundle.code_size);
    if (expected.size() != layer.tensors.size())
      throw Error(ErrorCode::shape, "layer '" + layer.name + "': expected " + std::to_string(expected.size()) +
                                        " tensors, descriptor lists " + std::to_string(layer.tensors.size()));
    for (std::size_t t = 0; t < expected.size(); ++t) {
      if (expected[t] != layer.tensors[t].shape)
        throw Error(ErrorCode::shape, "layer '" + layer.name + "': tensor " + std::to_string(t) +
                                          " shape disagrees with layer parameters");
      declared += layer.tensors[t].expected_size();
    }
  }
  if (floats != declared) {
    // Name the first layer whose tensors the payload cannot cover exactly.
    std::uint64_t covered = 0;
    for (const auto& layer : bundle.layers) {
      for (const auto& t : layer.tensors) covered += t.expected_size();
      if (covered > floats || (covered == declared && floats > declared))
        throw Error(ErrorCode::shape, "layer '" + layer.name + "': payload holds " + std::to_string(floats) +
                                          " floats, descriptor needs " + std::to_string(declared));
    }
    throw Error(ErrorCode::shape, "weights: payload holds " + std::to_string(floats) +
                                      " floats, descriptor needs " + std::to_string(declared));
  }
  for (auto& layer : bundle.layers)
    for (auto& t : layer.tensors) {
      t.data.resize(t.expected_size());
      for (auto& v : t.data) v = br.f32("tensor value");
    }
  validate_bundle(bundle);
  return bundle;
}

void write_weights(const fs::path& path, const WeightBundle& bundle) {
  write_file_bytes(path, serialize_weights(bundle));
}

WeightBundle read_weights(const fs::path& path) { return parse_weights(read_file_bytes(path)); }

// ---------------------------------------------------------------------------
// PLY

std::string format_ply(const TriangleMesh& mesh) {
  const bool normals = !mesh.normals.empty() && mesh.normals.size() == mesh.vertices.size();
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\ncomment generated by codemap\n";
  os << "element vertex " << mesh.vertices.size() << '\n';
  os << "property float x\nproperty float y\nproperty float z\n";
  if (normals) os << "property float nx\nproperty float ny\nproperty float nz\n";
  os << "element face " << mesh.triangles.size() << '\n';
  os << "property list uchar int vertex_indices\nend_header\n";
  const auto f = [](double v) { return format_number(static_cast<float>(v)); };
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& v = mesh.vertices[i];
    os << f(v.x()) << ' ' << f(v.y()) << ' ' << f(v.z());
    if (normals) os << ' ' << f(mesh.normals[i].x()) << ' ' << f(mesh.normals[i].y()) << ' ' << f(mesh.normals[i].z());
    os << '\n';
  }
  for (const auto& t : mesh.triangles) os << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  return os.str();
}

void write_ply(const fs::path& path, const TriangleMesh& mesh) { write_text_file(path, format_ply(mesh)); }

// ---------------------------------------------------------------------------
// Training pairs

std::string print_pairs(const TrainingPairManifest& m) {
  std::ostringstream os;
  os << "codemap_pairs 1\n";
  os << "proximity_scale " << format_number(m.proximity_scale) << '\n';
  os << "intrinsics " << format_intrinsics(m.intrinsics) << '\n';
  for (const auto& p : m.pairs) {
    os << "pair " << p.index << '\n' << "frame " << p.frame_id << '\n' << "neighbor " << p.neighbor_id << '\n';
    for (const auto& role : {"intensity", "sparse_depth", "rep_error", "gt_depth"})
      if (auto it = p.images.find(role); it != p.images.end()) os << role << ' ' << it->second << '\n';
    os << "end\n";
  }
  return os.str();
}

TrainingPairManifest parse_pairs(const std::string& text) {
  const auto lines = tokenize_lines(text);
  check_version(lines, "codemap_pairs", 1);
  TrainingPairManifest m;
  bool have_intrinsics = false;
  TrainingPairEntry* cur = nullptr;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto& line = lines[li];
    const auto& key = line.tokens[0];
    const std::string ctx = where(line);
    if (!cur) {
      if (key == "proximity_scale") {
        expect_arity(line, 2);
        m.proximity_scale = parse_number(line.tokens[1], ctx);
      } else if (key == "intrinsics") {
        m.intrinsics = parse_intrinsics(line);
        have_intrinsics = true;
      } else if (key == "pair") {
        expect_arity(line, 2);
        m.pairs.push_back({});
        cur = &m.pairs.back();
        cur->index = parse_int(line.tokens[1], ctx);
      } else {
        throw Error(ErrorCode::format, ctx + ": unexpected key '" + key + "'");
      }
      continue;
    }
    if (key == "end") {
      for (const auto* role : {"intensity", "sparse_depth", "rep_error", "gt_depth"})
        if (!cur->images.contains(role))
          throw Error(ErrorCode::format, ctx + ": pair " + std::to_string(cur->index) + " missing '" + role + "'");
      cur = nullptr;
    } else if (key == "frame") {
      expect_arity(line, 2);
      cur->frame_id = parse_int(line.tokens[1], ctx);
    } else if (key == "neighbor") {
      expect_arity(line, 2);
      cur->neighbor_id = parse_int(line.tokens[1], ctx);
    } else if (key == "intensity" || key == "sparse_depth" || key == "rep_error" || key == "gt_depth") {
      expect_arity(line, 2);
      cur->images[key] = line.tokens[1];
    } else {
      throw Error(ErrorCode::format, ctx + ": unknown pair key '" + key + "'");
    }
  }
  if (cur) throw Error(ErrorCode::format, "pairs: missing 'end'");
  if (!have_intrinsics) throw Error(ErrorCode::format, "pairs: missing required key 'intrinsics'");
  return m;
}

}  // namespace codemap
