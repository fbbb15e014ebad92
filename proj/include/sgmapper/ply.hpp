// sgmapper - PLY point cloud serialization. Binary little-endian and ASCII,
// float32 positions, optional uint8 RGB, optional integer per-vertex label
// (used by ground-truth clouds).

#pragma once

#include <sgmapper/geometry.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace sgmapper {

enum class PlyFormat { kBinaryLittleEndian, kAscii };

struct LabeledCloud {
  PointCloud cloud;
  std::vector<std::int32_t> labels;  // empty, or one per point
  bool has_labels() const { return !labels.empty(); }
};

namespace detail {

inline std::uint8_t to_byte(double c) {
  const double v = c < 0.0 ? 0.0 : (c > 1.0 ? 1.0 : c);
  return static_cast<std::uint8_t>(v * 255.0 + 0.5);
}

struct PlyProperty {
  std::string type;
  std::string name;
};

inline std::size_t ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  throw std::runtime_error("unsupported ply property type: " + t);
}

inline double read_scalar_binary(std::istream& in, const std::string& type) {
  char raw[8];
  const std::size_t n = ply_type_size(type);
  if (!in.read(raw, static_cast<std::streamsize>(n))) throw std::runtime_error("truncated ply data");
  auto as = [&](auto v) {
    std::memcpy(&v, raw, sizeof(v));
    return static_cast<double>(v);
  };
  if (type == "char" || type == "int8") return as(std::int8_t{});
  if (type == "uchar" || type == "uint8") return as(std::uint8_t{});
  if (type == "short" || type == "int16") return as(std::int16_t{});
  if (type == "ushort" || type == "uint16") return as(std::uint16_t{});
  if (type == "int" || type == "int32") return as(std::int32_t{});
  if (type == "uint" || type == "uint32") return as(std::uint32_t{});
  if (type == "float" || type == "float32") return as(float{});
  return as(double{});
}

}  // namespace detail

inline void write_ply(const std::string& path, const LabeledCloud& data,
                      PlyFormat format = PlyFormat::kBinaryLittleEndian) {
  const PointCloud& cloud = data.cloud;
  if (data.has_labels() && data.labels.size() != cloud.size())
    throw std::invalid_argument("label count does not match point count");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);

  out << "ply\n";
  out << (format == PlyFormat::kAscii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n");
  out << "element vertex " << cloud.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (cloud.has_colors())
    out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (data.has_labels()) out << "property int label\n";
  out << "end_header\n";

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const float xyz[3] = {static_cast<float>(cloud.points[i].x()),
                          static_cast<float>(cloud.points[i].y()),
                          static_cast<float>(cloud.points[i].z())};
    if (format == PlyFormat::kAscii) {
      out << xyz[0] << " " << xyz[1] << " " << xyz[2];
      if (cloud.has_colors())
        out << " " << int(detail::to_byte(cloud.colors[i].x())) << " "
            << int(detail::to_byte(cloud.colors[i].y())) << " "
            << int(detail::to_byte(cloud.colors[i].z()));
      if (data.has_labels()) out << " " << data.labels[i];
      out << "\n";
    } else {
      out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
      if (cloud.has_colors()) {
        const std::uint8_t rgb[3] = {detail::to_byte(cloud.colors[i].x()),
                                     detail::to_byte(cloud.colors[i].y()),
                                     detail::to_byte(cloud.colors[i].z())};
        out.write(reinterpret_cast<const char*>(rgb), sizeof(rgb));
      }
      if (data.has_labels()) {
        const std::int32_t label = data.labels[i];
        out.write(reinterpret_cast<const char*>(&label), sizeof(label));
      }
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_ply(const std::string& path, const PointCloud& cloud,
                      PlyFormat format = PlyFormat::kBinaryLittleEndian) {
  write_ply(path, LabeledCloud{cloud, {}}, format);
}

inline LabeledCloud read_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open ply: " + path);

  std::string line;
  if (!std::getline(in, line) || line != "ply") throw std::runtime_error("not a ply file: " + path);

  bool ascii = false;
  std::size_t vertex_count = 0;
  std::vector<detail::PlyProperty> props;
  bool in_vertex_element = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii")
        ascii = true;
      else if (fmt == "binary_little_endian")
        ascii = false;
      else
        throw std::runtime_error("unsupported ply format: " + fmt);
    } else if (tok == "element") {
      std::string name;
      std::size_t count = 0;
      ls >> name >> count;
      in_vertex_element = (name == "vertex");
      if (in_vertex_element) vertex_count = count;
      else if (count != 0)
        throw std::runtime_error("unsupported non-vertex element in ply: " + name);
    } else if (tok == "property" && in_vertex_element) {
      detail::PlyProperty p;
      ls >> p.type;
      if (p.type == "list") throw std::runtime_error("list properties not supported");
      ls >> p.name;
      props.push_back(p);
    } else if (tok == "end_header") {
      break;
    }
  }

  int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1, il = -1;
  for (int i = 0; i < static_cast<int>(props.size()); ++i) {
    const std::string& n = props[i].name;
    if (n == "x") ix = i;
    else if (n == "y") iy = i;
    else if (n == "z") iz = i;
    else if (n == "red") ir = i;
    else if (n == "green") ig = i;
    else if (n == "blue") ib = i;
    else if (n == "label") il = i;
  }
  if (ix < 0 || iy < 0 || iz < 0) throw std::runtime_error("ply missing x/y/z properties");
  const bool has_rgb = ir >= 0 && ig >= 0 && ib >= 0;

  LabeledCloud out;
  out.cloud.points.reserve(vertex_count);
  std::vector<double> row(props.size());
  for (std::size_t v = 0; v < vertex_count; ++v) {
    if (ascii) {
      for (double& val : row)
        if (!(in >> val)) throw std::runtime_error("truncated ascii ply");
    } else {
      for (std::size_t p = 0; p < props.size(); ++p)
        row[p] = detail::read_scalar_binary(in, props[p].type);
    }
    out.cloud.points.emplace_back(row[ix], row[iy], row[iz]);
    if (has_rgb)
      out.cloud.colors.emplace_back(row[ir] / 255.0, row[ig] / 255.0, row[ib] / 255.0);
    if (il >= 0) out.labels.push_back(static_cast<std::int32_t>(row[il]));
  }
  return out;
}

inline PointCloud read_ply_cloud(const std::string& path) { return read_ply(path).cloud; }

}  // namespace sgmapper
