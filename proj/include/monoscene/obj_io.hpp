#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "monoscene/geometry.hpp"

namespace monoscene {

/// Minimal Wavefront OBJ support: v and f records plus g groups. Faces with
/// more than three vertices are fan-triangulated on read; texture/normal
/// indices are ignored.
TriMesh read_obj(const std::filesystem::path& path);

/// One named OBJ group with polygonal faces (local, 0-based indices).
struct ObjGroup {
  std::string name;
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::vector<int>> faces;

  static ObjGroup from_mesh(std::string name, const TriMesh& mesh);
};

/// Write groups into one OBJ with a shared, deterministic vertex order.
void write_obj(const std::filesystem::path& path, const std::vector<ObjGroup>& groups);

}  // namespace monoscene
