#pragma once

// ASCII PLY 1.0 point clouds: `float x float y float z` plus optional
// `uchar red uchar green uchar blue`, metres, LF line endings.

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "twinfuse/geometry.hpp"

namespace twinfuse::ply {

inline void write(std::ostream& out, const PointCloud& cloud) {
  const bool color = cloud.colors.has_value() && cloud.colors->size() == cloud.points.size();
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.points.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n";
  if (color) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";
  char buf[64];
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Vec3& p = cloud.points[i];
    for (int a = 0; a < 3; ++a) {
      auto res = std::to_chars(buf, buf + sizeof(buf), static_cast<float>(p[a]));
      out.write(buf, res.ptr - buf);
      out.put(a < 2 ? ' ' : (color ? ' ' : '\n'));
    }
    if (color) {
      const Rgb& c = (*cloud.colors)[i];
      out << int(c.r) << ' ' << int(c.g) << ' ' << int(c.b) << '\n';
    }
  }
}

inline std::string to_string(const PointCloud& cloud) {
  std::ostringstream os;
  write(os, cloud);
  return os.str();
}

inline void save(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path);
  write(out, cloud);
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path);
}

/// Reads ASCII vertex-only PLY files; x/y/z may be float or double and
/// colour properties are picked up by name. Other properties are skipped.
inline PointCloud read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw Error(ErrorCode::ParseError, "missing ply magic");
  std::size_t vertices = 0;
  bool in_vertex = false;
  std::vector<std::string> props;
  bool ascii = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (tok == "element") {
      std::string name;
      ls >> name;
      in_vertex = name == "vertex";
      if (in_vertex) ls >> vertices;
    } else if (tok == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      props.push_back(name);
    } else if (tok == "end_header") {
      break;
    }
  }
  if (!ascii) throw Error(ErrorCode::ParseError, "only ascii PLY is supported");
  int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
  for (int i = 0; i < static_cast<int>(props.size()); ++i) {
    const auto& n = props[i];
    if (n == "x") ix = i;
    else if (n == "y") iy = i;
    else if (n == "z") iz = i;
    else if (n == "red") ir = i;
    else if (n == "green") ig = i;
    else if (n == "blue") ib = i;
  }
  if (ix < 0 || iy < 0 || iz < 0) throw Error(ErrorCode::ParseError, "vertex lacks x/y/z");
  const bool color = ir >= 0 && ig >= 0 && ib >= 0;
  PointCloud cloud;
  cloud.points.reserve(vertices);
  if (color) cloud.colors.emplace().reserve(vertices);
  std::vector<double> vals(props.size());
  for (std::size_t n = 0; n < vertices; ++n) {
    for (double& v : vals) {
      if (!(in >> v)) throw Error(ErrorCode::ParseError, "truncated vertex list");
    }
    cloud.points.emplace_back(vals[ix], vals[iy], vals[iz]);
    if (color) {
      cloud.colors->push_back(Rgb{static_cast<std::uint8_t>(vals[ir]), static_cast<std::uint8_t>(vals[ig]),
                                  static_cast<std::uint8_t>(vals[ib])});
    }
  }
  return cloud;
}

inline PointCloud load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return read(in);
}

}  // namespace twinfuse::ply
