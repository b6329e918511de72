#include "monoscene/obj_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "monoscene/errors.hpp"

namespace monoscene {

TriMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::MissingFile, path.string());
  TriMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    if (line.size() < 2) continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      double x, y, z;
      ss >> x >> y >> z;
      if (!ss) fail(Errc::SchemaViolation, path.string() + ": bad vertex record");
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) {
        // Strip /vt/vn suffixes.
        const auto slash = tok.find('/');
        if (slash != std::string::npos) tok.resize(slash);
        int v = std::stoi(tok);
        if (v < 0) v = static_cast<int>(mesh.vertices.size()) + v + 1;
        idx.push_back(v - 1);
      }
      if (idx.size() < 3) fail(Errc::SchemaViolation, path.string() + ": face with <3 vertices");
      for (std::size_t k = 2; k < idx.size(); ++k)
        mesh.triangles.push_back({idx[0], idx[k - 1], idx[k]});
    }
  }
  if (!mesh.indices_in_range())
    fail(Errc::InvariantViolation, path.string() + ": face index out of range");
  return mesh;
}

ObjGroup ObjGroup::from_mesh(std::string name, const TriMesh& mesh) {
  ObjGroup g;
  g.name = std::move(name);
  g.vertices = mesh.vertices;
  g.faces.reserve(mesh.triangles.size());
  for (const auto& t : mesh.triangles) g.faces.push_back({t[0], t[1], t[2]});
  return g;
}

void write_obj(const std::filesystem::path& path, const std::vector<ObjGroup>& groups) {
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot open for write: " + path.string());
  out << "# monoscene export\n";
  char buf[128];
  int base = 1;
  for (const auto& g : groups) {
    out << "g " << g.name << "\n";
    for (const auto& v : g.vertices) {
      std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
      out << buf;
    }
    for (const auto& f : g.faces) {
      out << "f";
      for (int k : f) out << ' ' << base + k;
      out << "\n";
    }
    base += static_cast<int>(g.vertices.size());
  }
  if (!out) fail(Errc::IoError, "write failed: " + path.string());
}

}  // namespace monoscene
