#include "codemap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <set>

#include <Eigen/Cholesky>

#include "codemap/error.hpp"
#include "codemap/io.hpp"

namespace codemap {

namespace {

double lattice(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t seed) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(x));
  h = splitmix64(h ^ static_cast<std::uint64_t>(y));
  h = splitmix64(h ^ static_cast<std::uint64_t>(z));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(const Eigen::Vector3d& p, std::uint64_t seed) {
  const Eigen::Vector3d f = p.array().floor();
  const auto ix = static_cast<std::int64_t>(f.x());
  const auto iy = static_cast<std::int64_t>(f.y());
  const auto iz = static_cast<std::int64_t>(f.z());
  const double sx = smoothstep(p.x() - f.x());
  const double sy = smoothstep(p.y() - f.y());
  const double sz = smoothstep(p.z() - f.z());
  double acc = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1;
    const int dy = (c >> 1) & 1;
    const int dz = (c >> 2) & 1;
    const double w = (dx ? sx : 1.0 - sx) * (dy ? sy : 1.0 - sy) * (dz ? sz : 1.0 - sz);
    acc += w * lattice(ix + dx, iy + dy, iz + dz, seed);
  }
  return acc;
}

std::optional<double> intersect(const PlanePrimitive& plane, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  const Eigen::Matrix3d r = plane.pose.rotation_matrix();
  const Eigen::Vector3d n = r.col(2);
  const double denom = d.dot(n);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = (plane.pose.translation() - o).dot(n) / denom;
  if (!(t > 1e-9)) return std::nullopt;
  const Eigen::Vector3d local = r.transpose() * (o + t * d - plane.pose.translation());
  if (plane.half_x > 0.0 && std::abs(local.x()) > plane.half_x) return std::nullopt;
  if (plane.half_y > 0.0 && std::abs(local.y()) > plane.half_y) return std::nullopt;
  return t;
}

std::optional<double> intersect(const BoxPrimitive& box, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < box.min[a] || o[a] > box.max[a]) return std::nullopt;
      continue;
    }
    double t0 = (box.min[a] - o[a]) / d[a];
    double t1 = (box.max[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
  }
  if (t_far < t_near || !(t_far > 1e-9)) return std::nullopt;
  return t_near > 1e-9 ? t_near : t_far;
}

const Texture& texture_of(const Primitive& p) {
  return std::visit([](const auto& prim) -> const Texture& { return prim.texture; }, p);
}

Eigen::Vector3d pixel_ray(const Pose& pose, const Intrinsics& k, const PixelCoord& x) {
  return pose.rotation() * bearing(x, k);
}

}  // namespace

double Texture::operator()(const Eigen::Vector3d& p) const {
  if (amplitude == 0.0) return std::clamp(base, 0.0, 1.0);
  const Eigen::Vector3d q = p / cell;
  const double n = (2.0 / 3.0) * value_noise(q, seed) + (1.0 / 3.0) * value_noise(2.0 * q, seed ^ 0x5bd1e995ull);
  return std::clamp(base + amplitude * (n - 0.5) * 2.0, 0.0, 1.0);
}

void SceneSpec::validate() const {
  intrinsics.validate();
  if (primitives.empty()) throw Error(ErrorCode::invalid_argument, "scene has no primitives");
  if (trajectory.empty()) throw Error(ErrorCode::invalid_argument, "scene has no camera poses");
  if (!timestamps.empty() && timestamps.size() != trajectory.size())
    throw Error(ErrorCode::invalid_argument, "scene timestamps and poses differ in count");
  for (const auto& p : primitives) {
    if (const auto* box = std::get_if<BoxPrimitive>(&p))
      if (!(box->min.array() < box->max.array()).all())
        throw Error(ErrorCode::invalid_argument, "scene box has min >= max");
    if (!(texture_of(p).cell > 0.0)) throw Error(ErrorCode::invalid_argument, "texture cell must be positive");
  }
}

double SceneSpec::timestamp(std::size_t frame) const {
  return timestamps.empty() ? static_cast<double>(frame) : timestamps[frame];
}

Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& down) {
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = down.cross(z);
  if (x.norm() < 1e-9) x = Eigen::Vector3d::UnitZ().cross(z);
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  Eigen::Quaterniond q(r);
  q.normalize();
  return Pose(q, eye);
}

std::optional<RayHit> cast_ray(const SceneSpec& spec, const Eigen::Vector3d& origin, const Eigen::Vector3d& direction) {
  std::optional<RayHit> best;
  for (const auto& prim : spec.primitives) {
    const auto t = std::visit([&](const auto& p) { return intersect(p, origin, direction); }, prim);
    if (!t || (best && *t >= best->t)) continue;
    RayHit hit;
    hit.t = *t;
    hit.point = origin + *t * direction;
    hit.intensity = texture_of(prim)(hit.point);
    best = hit;
  }
  return best;
}

RenderedFrame render(const SceneSpec& spec, std::size_t frame) {
  if (frame >= spec.trajectory.size()) throw Error(ErrorCode::invalid_argument, "render: frame index out of range");
  const Intrinsics& k = spec.intrinsics;
  const Pose& pose = spec.trajectory[frame];
  RenderedFrame out{DenseImage(k.width, k.height, ChannelKind::intensity),
                    DenseImage(k.width, k.height, ChannelKind::depth)};
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const auto hit = cast_ray(spec, pose.translation(), pixel_ray(pose, k, {double(x), double(y)}));
      if (!hit) continue;
      out.depth.at(x, y) = static_cast<float>(hit->t);
      out.intensity.at(x, y) = static_cast<float>(hit->intensity);
    }
  }
  return out;
}

std::optional<double> depth_at(const SceneSpec& spec, std::size_t frame, const PixelCoord& x) {
  if (frame >= spec.trajectory.size()) throw Error(ErrorCode::invalid_argument, "depth_at: frame index out of range");
  const Pose& pose = spec.trajectory[frame];
  const auto hit = cast_ray(spec, pose.translation(), pixel_ray(pose, spec.intrinsics, x));
  if (!hit) return std::nullopt;
  return hit->t;
}

std::vector<KeyframePacket> make_sequence(const SceneSpec& spec, const SequenceOptions& options) {
  spec.validate();
  const std::size_t n = spec.trajectory.size();
  if (n < 2) throw Error(ErrorCode::invalid_argument, "make_sequence: need at least 2 frames");
  const Intrinsics& k = spec.intrinsics;

  std::vector<RenderedFrame> frames;
  std::vector<std::vector<SparseObservation>> keypoints;
  for (std::size_t f = 0; f < n; ++f) {
    frames.push_back(render(spec, f));
    auto kp = sparsify_depth(frames[f].intensity, frames[f].depth, options.n_points, derive_seed(options.seed, 100 + f));
    for (auto& obs : kp.observations)
      obs.landmark_id = static_cast<std::int64_t>((static_cast<std::uint64_t>(f) << 32) |
                                                  static_cast<std::uint64_t>(obs.landmark_id));
    keypoints.push_back(std::move(kp.observations));
  }

  // Exact correspondences from each frame's own keypoints into every other frame.
  struct Link {
    std::size_t keypoint;
    PixelCoord pixel_j;
    double depth_j;
  };
  std::vector<std::map<std::size_t, std::vector<Link>>> links(n);
  std::vector<std::vector<int>> first_match(n);
  for (std::size_t f = 0; f < n; ++f) {
    first_match[f].assign(keypoints[f].size(), -1);
    const Pose& pf = spec.trajectory[f];
    for (std::size_t g = 0; g < n; ++g) {
      if (g == f) continue;
      const Pose g_from_world = spec.trajectory[g].inverse();
      std::vector<Link> candidates;
      for (std::size_t m = 0; m < keypoints[f].size(); ++m) {
        const auto& obs = keypoints[f][m];
        const Eigen::Vector3d pg = g_from_world * (pf * unproject(obs.pixel, obs.depth, k));
        if (pg.z() <= 1e-9) continue;
        const PixelCoord y = project(pg, k);
        if (!k.in_bounds(y.u, y.v)) continue;
        const auto seen = depth_at(spec, g, y);
        if (!seen || std::abs(*seen - pg.z()) > 1e-6 * std::max(1.0, pg.z())) continue;
        candidates.push_back({m, y, pg.z()});
      }
      std::vector<Link> kept;
      const std::size_t cap = options.max_correspondences;
      if (candidates.size() <= cap) {
        kept = std::move(candidates);
      } else {
        for (std::size_t c = 0; c < cap; ++c) kept.push_back(candidates[c * candidates.size() / cap]);
      }
      for (const auto& l : kept)
        if (first_match[f][l.keypoint] < 0) first_match[f][l.keypoint] = static_cast<int>(g);
      links[f][g] = std::move(kept);
    }
  }

  // Per-keypoint reprojection error and (with noise) displaced depth.
  std::vector<std::vector<std::optional<SparseObservation>>> final_kp(n);
  for (std::size_t f = 0; f < n; ++f) {
    std::optional<EmgSampler> sampler;
    if (options.noise) sampler.emplace(*options.noise, derive_seed(options.seed, 200 + f));
    std::mt19937_64 sign_rng(derive_seed(options.seed, 300 + f));
    std::bernoulli_distribution coin(0.5);
    for (std::size_t m = 0; m < keypoints[f].size(); ++m) {
      SparseObservation obs = keypoints[f][m];
      const int g = first_match[f][m];
      if (g < 0) {
        obs.rep_error = kUnmatchedRepError;
        final_kp[f].push_back(obs);
        continue;
      }
      obs.rep_error = 0.0;
      if (!sampler) {
        final_kp[f].push_back(obs);
        continue;
      }
      const double target = (*sampler)();
      const int sign = coin(sign_rng) ? 1 : -1;
      const Pose& ref = spec.trajectory[f];
      const Pose& virt = spec.trajectory[static_cast<std::size_t>(g)];
      if ((ref.translation() - virt.translation()).norm() > kMaxVirtualBaseline) {
        final_kp[f].push_back(std::nullopt);
        continue;
      }
      const auto outcome = perturb_along_ray(obs, ref, virt, k, target, sign);
      final_kp[f].push_back(outcome.observation);
    }
  }

  std::vector<KeyframePacket> packets(n);
  for (std::size_t f = 0; f < n; ++f) {
    KeyframePacket& p = packets[f];
    p.id = static_cast<std::int64_t>(f);
    p.timestamp = spec.timestamp(f);
    p.pose = spec.trajectory[f];
    p.intrinsics = k;
    p.intensity = frames[f].intensity;
    p.gt_depth = frames[f].depth;
    p.sparse_depth = DenseImage(k.width, k.height, ChannelKind::depth);
    p.rep_error = DenseImage(k.width, k.height, ChannelKind::rep_error);
    for (const auto& obs : final_kp[f]) {
      if (!obs || !(obs->depth > 0.0)) continue;
      const int x = static_cast<int>(obs->pixel.u);
      const int y = static_cast<int>(obs->pixel.v);
      p.sparse_depth.at(x, y) = static_cast<float>(obs->depth);
      p.rep_error.at(x, y) = static_cast<float>(obs->rep_error);
      p.observations.push_back(*obs);
    }
  }
  for (std::size_t f = 0; f < n; ++f) {
    for (const auto& [g, list] : links[f]) {
      MatchSet set;
      set.other_id = static_cast<std::int64_t>(g);
      for (const auto& l : list) {
        const auto& obs = final_kp[f][l.keypoint];
        if (!obs) continue;
        set.correspondences.push_back({keypoints[f][l.keypoint].pixel, l.pixel_j, obs->landmark_id});
        SparseObservation seen;
        seen.landmark_id = obs->landmark_id;
        seen.pixel = l.pixel_j;
        seen.depth = l.depth_j;
        seen.rep_error = obs->rep_error;
        packets[g].observations.push_back(seen);
      }
      if (!set.correspondences.empty()) packets[f].matches.push_back(std::move(set));
    }
  }
  return packets;
}

DepthCode fit_code(const LinearDecoder& decoder, const DenseImage& depth) {
  if (depth.width() != decoder.width() || depth.height() != decoder.height())
    throw Error(ErrorCode::dimension_mismatch, "fit_code: depth size differs from decoder");
  const int cs = decoder.code_size();
  Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(cs, cs);
  Eigen::VectorXd atb = Eigen::VectorXd::Zero(cs);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (!(depth[i] > 0.0f)) continue;
    const auto row = decoder.jacobian_row(i);
    const double target = depth_to_proximity(depth[i], decoder.proximity_params()) - decoder.prior()[i];
    ata.noalias() += row.transpose() * row;
    atb += target * row.transpose();
  }
  ata.diagonal().array() += 1e-12;
  return DepthCode(ata.ldlt().solve(atb));
}

SceneSpec preset_scene(const std::string& name) {
  SceneSpec s;
  if (name == "plane" || name == "textureless") {
    PlanePrimitive plane;
    plane.pose = Pose::from_axis_angle(Eigen::Vector3d::UnitX(), 0.25, {0.0, 0.0, 2.5});
    plane.texture = {7, 0.5, name == "plane" ? 0.4 : 0.0, 0.1};
    s.primitives.push_back(plane);
    const Eigen::Vector3d target(0.0, 0.0, 2.5);
    for (int f = 0; f < 4; ++f) {
      const double x = -0.15 + 0.1 * f;
      s.trajectory.push_back(look_at({x, 0.02 * f, 0.05 * f}, target + Eigen::Vector3d(0.3 * x, 0.0, 0.0)));
      s.timestamps.push_back(0.5 * f);
    }
    return s;
  }
  if (name == "room") {
    s.primitives.push_back(BoxPrimitive{{-2.0, -1.2, -1.0}, {2.0, 1.2, 4.0}, {11, 0.5, 0.4, 0.1}});
    s.primitives.push_back(BoxPrimitive{{-0.5, 0.2, 2.0}, {0.3, 1.2, 2.8}, {13, 0.45, 0.4, 0.08}});
    for (int f = 0; f < 4; ++f) {
      const Eigen::Vector3d eye(-0.3 + 0.15 * f, -0.1, 0.0);
      s.trajectory.push_back(look_at(eye, {0.1 * f - 0.1, 0.3, 3.0}));
      s.timestamps.push_back(0.5 * f);
    }
    return s;
  }
  if (name == "box") {
    s.primitives.push_back(BoxPrimitive{{-0.2, -0.15, -0.25}, {0.2, 0.15, 0.25}, {17, 0.5, 0.4, 0.05}});
    const Eigen::Vector3d center = Eigen::Vector3d::Zero();
    double t = 0.0;
    for (int sx : {-1, 1})
      for (int sy : {-1, 1})
        for (int sz : {-1, 1}) {
          s.trajectory.push_back(look_at(Eigen::Vector3d(sx, sy, sz).normalized() * 1.3, center));
          s.timestamps.push_back(t += 0.5);
        }
    for (const Eigen::Vector3d& eye :
         {Eigen::Vector3d(1.3, 0, 0), Eigen::Vector3d(-1.3, 0, 0), Eigen::Vector3d(0, 0, 1.3), Eigen::Vector3d(0, 0, -1.3)}) {
      s.trajectory.push_back(look_at(eye, center));
      s.timestamps.push_back(t += 0.5);
    }
    for (const Eigen::Vector3d& eye : {Eigen::Vector3d(0.05, 1.3, 0.0), Eigen::Vector3d(0.05, -1.3, 0.0)}) {
      s.trajectory.push_back(look_at(eye, center, Eigen::Vector3d::UnitZ()));
      s.timestamps.push_back(t += 0.5);
    }
    return s;
  }
  throw Error(ErrorCode::invalid_argument, "unknown scene preset '" + name + "'");
}

SceneSpec load_scene(const std::string& name_or_path) {
  if (std::filesystem::exists(name_or_path)) return parse_scene(read_text_file(name_or_path));
  return preset_scene(name_or_path);
}

SceneSpec parse_scene(const std::string& text) {
  SceneSpec s;
  const auto num = [](const TokenLine& line, std::size_t i) {
    return parse_number(line.tokens[i], "scene line " + std::to_string(line.line));
  };
  const auto arity = [](const TokenLine& line, std::size_t n) {
    if (line.tokens.size() != n)
      throw Error(ErrorCode::format, "scene line " + std::to_string(line.line) + ": '" + line.tokens[0] +
                                         "' expects " + std::to_string(n - 1) + " values");
  };
  for (const auto& line : tokenize_lines(text)) {
    const std::string& key = line.tokens[0];
    if (key == "intrinsics") {
      arity(line, 7);
      s.intrinsics = {num(line, 1), num(line, 2), num(line, 3), num(line, 4), static_cast<int>(num(line, 5)),
                      static_cast<int>(num(line, 6))};
    } else if (key == "plane") {
      arity(line, 13);
      PlanePrimitive p;
      Eigen::Quaterniond q(num(line, 4), num(line, 5), num(line, 6), num(line, 7));
      q.normalize();
      p.pose = Pose(q, {num(line, 1), num(line, 2), num(line, 3)});
      p.half_x = num(line, 8);
      p.half_y = num(line, 9);
      p.texture = {static_cast<std::uint64_t>(num(line, 10)), num(line, 11), num(line, 12), 0.1};
      s.primitives.push_back(p);
    } else if (key == "box") {
      arity(line, 10);
      s.primitives.push_back(BoxPrimitive{{num(line, 1), num(line, 2), num(line, 3)},
                                          {num(line, 4), num(line, 5), num(line, 6)},
                                          {static_cast<std::uint64_t>(num(line, 7)), num(line, 8), num(line, 9), 0.1}});
    } else if (key == "pose") {
      arity(line, 8);
      Eigen::Quaterniond q(num(line, 4), num(line, 5), num(line, 6), num(line, 7));
      q.normalize();
      s.trajectory.push_back(Pose(q, {num(line, 1), num(line, 2), num(line, 3)}));
    } else if (key == "look_at") {
      arity(line, 7);
      s.trajectory.push_back(look_at({num(line, 1), num(line, 2), num(line, 3)}, {num(line, 4), num(line, 5), num(line, 6)}));
    } else {
      throw Error(ErrorCode::format, "scene line " + std::to_string(line.line) + ": unknown key '" + key + "'");
    }
  }
  for (std::size_t f = 0; f < s.trajectory.size(); ++f) s.timestamps.push_back(0.5 * static_cast<double>(f));
  s.validate();
  return s;
}

}  // namespace codemap
