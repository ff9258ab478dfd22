#include <cmath>
#include <map>

#include "codemap/fusion.hpp"

namespace codemap {

namespace {

Eigen::Vector3i corner_offset(int k) { return {k & 1, (k >> 1) & 1, (k >> 2) & 1}; }

std::array<std::array<int, 2>, 12> make_edges() {
  std::array<std::array<int, 2>, 12> edges{};
  int e = 0;
  for (int axis = 0; axis < 3; ++axis)
    for (int k = 0; k < 8; ++k)
      if (!(k & (1 << axis))) edges[static_cast<std::size_t>(e++)] = {k, k | (1 << axis)};
  return edges;
}

int edge_between(const std::array<std::array<int, 2>, 12>& edges, int a, int b) {
  for (int e = 0; e < 12; ++e) {
    const auto& ed = edges[static_cast<std::size_t>(e)];
    if ((ed[0] == a && ed[1] == b) || (ed[0] == b && ed[1] == a)) return e;
  }
  return -1;
}

/// Corners of each face in counter-clockwise order seen from outside.
std::array<std::array<int, 4>, 6> make_faces() {
  std::array<std::array<int, 4>, 6> faces{};
  int f = 0;
  for (int a = 0; a < 3; ++a) {
    const int b = (a + 1) % 3;
    const int c = (a + 2) % 3;
    for (int side = 0; side < 2; ++side) {
      // (b, c) = (0,0), (1,0), (1,1), (0,1) is counter-clockwise about +a.
      const int bc[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
      std::array<int, 4> ring{};
      for (int m = 0; m < 4; ++m)
        ring[static_cast<std::size_t>(m)] = (side << a) | (bc[m][0] << b) | (bc[m][1] << c);
      if (side == 0) std::swap(ring[1], ring[3]);
      faces[static_cast<std::size_t>(f++)] = ring;
    }
  }
  return faces;
}

/// Each face contributes one directed segment per maximal run of negative
/// corners, from the edge where the run ends to the edge where it starts.
/// Diagonal negative corners form separate runs, so the ambiguous-face rule
/// depends only on the face and adjacent cubes stay watertight. Every crossed
/// edge starts one segment and ends another, so segments chain into loops.
std::array<CubeTriangulation, 256> build_table() {
  const auto edges = make_edges();
  const auto faces = make_faces();
  std::array<CubeTriangulation, 256> table{};
  for (int config = 0; config < 256; ++config) {
    const auto negative = [&](int corner) { return (config >> corner) & 1; };
    std::map<int, int> next;
    for (const auto& ring : faces) {
      int neg = 0;
      for (int m = 0; m < 4; ++m) neg += negative(ring[static_cast<std::size_t>(m)]);
      if (neg == 0 || neg == 4) continue;
      for (int m = 0; m < 4; ++m) {
        const int cur = ring[static_cast<std::size_t>(m)];
        const int prev = ring[static_cast<std::size_t>((m + 3) % 4)];
        if (!negative(cur) || negative(prev)) continue;  // m starts a negative run
        int last = m;
        while (negative(ring[static_cast<std::size_t>((last + 1) % 4)])) last = (last + 1) % 4;
        const int enter = edge_between(edges, prev, cur);
        const int leave = edge_between(edges, ring[static_cast<std::size_t>(last)],
                                       ring[static_cast<std::size_t>((last + 1) % 4)]);
        next[leave] = enter;
      }
    }
    std::map<int, bool> used;
    for (const auto& [start, unused] : next) {
      (void)unused;
      if (used[start]) continue;
      std::vector<int> loop;
      int e = start;
      while (!used[e]) {
        used[e] = true;
        loop.push_back(e);
        e = next.at(e);
      }
      // Loops wind so that the fan normal faces the negative corners; emit
      // reversed triangles so normals point into free space.
      for (std::size_t i = 1; i + 1 < loop.size(); ++i)
        table[static_cast<std::size_t>(config)].triangles.push_back({loop[0], loop[i + 1], loop[i]});
    }
  }
  return table;
}

}  // namespace

const std::array<std::array<int, 2>, 12>& cube_edge_corners() {
  static const auto edges = make_edges();
  return edges;
}

const std::array<CubeTriangulation, 256>& marching_cubes_table() {
  static const auto table = build_table();
  return table;
}

TriangleMesh extract_mesh(const TsdfVolume& volume) {
  const auto& table = marching_cubes_table();
  const auto& edges = cube_edge_corners();
  const Eigen::Vector3i dims = volume.dims();
  const auto tsdf = volume.tsdf_values();
  const auto weight = volume.weight_values();

  TriangleMesh mesh;
  // Vertex id per (voxel, axis) edge of the grid.
  std::vector<std::int64_t> edge_vertex(volume.voxel_count() * 3, -1);
  const auto vertex_on = [&](const Eigen::Vector3i& base, int e) -> std::uint32_t {
    const auto& ed = edges[static_cast<std::size_t>(e)];
    const Eigen::Vector3i a = base + corner_offset(ed[0]);
    const Eigen::Vector3i b = base + corner_offset(ed[1]);
    const int axis = e / 4;
    const std::size_t key = volume.index(a.x(), a.y(), a.z()) * 3 + static_cast<std::size_t>(axis);
    if (edge_vertex[key] >= 0) return static_cast<std::uint32_t>(edge_vertex[key]);
    const double fa = tsdf[volume.index(a.x(), a.y(), a.z())];
    const double fb = tsdf[volume.index(b.x(), b.y(), b.z())];
    const double t = fa / (fa - fb);
    const Eigen::Vector3d pa = volume.voxel_center(a.x(), a.y(), a.z());
    const Eigen::Vector3d pb = volume.voxel_center(b.x(), b.y(), b.z());
    mesh.vertices.push_back(pa + t * (pb - pa));
    edge_vertex[key] = static_cast<std::int64_t>(mesh.vertices.size() - 1);
    return static_cast<std::uint32_t>(edge_vertex[key]);
  };

  const double min_area = 1e-12 * volume.voxel_size() * volume.voxel_size();
  for (int z = 0; z + 1 < dims.z(); ++z) {
    for (int y = 0; y + 1 < dims.y(); ++y) {
      for (int x = 0; x + 1 < dims.x(); ++x) {
        int config = 0;
        bool observed = true;
        for (int k = 0; k < 8 && observed; ++k) {
          const Eigen::Vector3i c = Eigen::Vector3i(x, y, z) + corner_offset(k);
          const std::size_t i = volume.index(c.x(), c.y(), c.z());
          if (!(weight[i] > 0.0f)) observed = false;
          if (tsdf[i] < 0.0f) config |= 1 << k;
        }
        if (!observed || config == 0 || config == 255) continue;
        const Eigen::Vector3i base(x, y, z);
        for (const auto& tri : table[static_cast<std::size_t>(config)].triangles) {
          const std::array<std::uint32_t, 3> ids = {vertex_on(base, tri[0]), vertex_on(base, tri[1]),
                                                    vertex_on(base, tri[2])};
          const Eigen::Vector3d n =
              (mesh.vertices[ids[1]] - mesh.vertices[ids[0]]).cross(mesh.vertices[ids[2]] - mesh.vertices[ids[0]]);
          if (0.5 * n.norm() <= min_area) continue;
          mesh.triangles.push_back(ids);
        }
      }
    }
  }

  // Drop vertices left unreferenced by discarded degenerate triangles.
  std::vector<std::int64_t> remap(mesh.vertices.size(), -1);
  std::vector<Eigen::Vector3d> kept;
  for (auto& t : mesh.triangles)
    for (auto& id : t) {
      if (remap[id] < 0) {
        remap[id] = static_cast<std::int64_t>(kept.size());
        kept.push_back(mesh.vertices[id]);
      }
      id = static_cast<std::uint32_t>(remap[id]);
    }
  mesh.vertices = std::move(kept);

  mesh.normals.assign(mesh.vertices.size(), Eigen::Vector3d::Zero());
  for (const auto& t : mesh.triangles) {
    const Eigen::Vector3d n =
        (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    for (auto id : t) mesh.normals[id] += n;
  }
  for (auto& n : mesh.normals)
    if (n.norm() > 0.0) n.normalize();
  return mesh;
}

}  // namespace codemap
