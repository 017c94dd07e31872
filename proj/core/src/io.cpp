#include "cinet/io.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace cinet {

namespace {

[[noreturn]] void fail(const std::string& name, std::size_t line, const std::string& what) {
  throw std::runtime_error(name + ": " + what + " at line " + std::to_string(line));
}

// Consumes one whitespace-delimited token starting at *cursor; nullptr at end of line.
const char* next_token(const char*& cursor) {
  while (*cursor == ' ' || *cursor == '\t' || *cursor == '\r') ++cursor;
  return *cursor == '\0' ? nullptr : cursor;
}

double parse_double_token(const char*& cursor, const std::string& name, std::size_t line) {
  const char* start = next_token(cursor);
  if (start == nullptr) fail(name, line, "missing numeric field");
  char* end = nullptr;
  const double value = std::strtod(start, &end);
  if (end == start) fail(name, line, "non-numeric field");
  cursor = end;
  return value;
}

int parse_label_token(const char*& cursor, const std::string& name, std::size_t line) {
  const char* start = next_token(cursor);
  if (start == nullptr) fail(name, line, "missing label field");
  char* end = nullptr;
  const long value = std::strtol(start, &end, 10);
  if (end == start) fail(name, line, "non-numeric field");
  cursor = end;
  if (value != 0 && value != 1) fail(name, line, "label outside {0,1}");
  return static_cast<int>(value);
}

void skip_token(const char*& cursor, const std::string& name, std::size_t line) {
  const char* start = next_token(cursor);
  if (start == nullptr) fail(name, line, "missing field");
  while (*cursor != '\0' && !std::isspace(static_cast<unsigned char>(*cursor))) ++cursor;
}

bool is_blank_or_comment(const std::string& line) {
  for (char c : line) {
    if (c == '#') return true;
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct PlyProperty {
  std::string type;
  std::string pname;
};

PointCloud read_xyz(std::istream& in, const std::string& name) {
  PointCloud cloud;
  std::string line;
  std::size_t line_no = 0;
  bool saw_label = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank_or_comment(line)) continue;
    const char* cursor = line.c_str();
    Eigen::Vector3d p;
    p.x() = parse_double_token(cursor, name, line_no);
    p.y() = parse_double_token(cursor, name, line_no);
    p.z() = parse_double_token(cursor, name, line_no);
    const char* rest = next_token(cursor);
    if (rest != nullptr) {
      const int label = parse_label_token(cursor, name, line_no);
      if (!saw_label && !cloud.points.empty())
        fail(name, line_no, "label column appears mid-file");
      saw_label = true;
      cloud.labels.push_back(static_cast<uint8_t>(label));
    } else if (saw_label) {
      fail(name, line_no, "missing label field");
    }
    if (next_token(cursor) != nullptr) fail(name, line_no, "trailing data");
    cloud.points.push_back(p);
  }
  if (cloud.points.empty()) throw std::runtime_error(name + ": zero points");
  return cloud;
}

PointCloud read_ply(std::istream& in, const std::string& name) {
  std::string line;
  std::size_t line_no = 0;

  auto read_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!read_line() || line != "ply") fail(name, line_no == 0 ? 1 : line_no, "malformed header, expected 'ply'");
  if (!read_line() || line != "format ascii 1.0")
    fail(name, line_no == 0 ? 1 : line_no, "malformed header, expected 'format ascii 1.0'");

  std::size_t vertex_count = 0;
  bool saw_vertex_element = false;
  bool in_vertex_element = false;
  std::vector<PlyProperty> props;

  while (true) {
    if (!read_line()) fail(name, line_no, "unexpected end of header");
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string keyword;
    ls >> keyword;
    if (keyword == "comment" || keyword == "obj_info") continue;
    if (keyword == "element") {
      std::string ename;
      long long count = -1;
      ls >> ename >> count;
      if (ename != "vertex" || count < 0) fail(name, line_no, "unsupported element '" + ename + "'");
      if (saw_vertex_element) fail(name, line_no, "duplicate vertex element");
      saw_vertex_element = true;
      in_vertex_element = true;
      vertex_count = static_cast<std::size_t>(count);
      continue;
    }
    if (keyword == "property") {
      if (!in_vertex_element) fail(name, line_no, "property outside vertex element");
      PlyProperty prop;
      ls >> prop.type >> prop.pname;
      if (prop.type == "list") fail(name, line_no, "list properties unsupported");
      if (prop.type.empty() || prop.pname.empty()) fail(name, line_no, "malformed property");
      props.push_back(prop);
      continue;
    }
    fail(name, line_no, "malformed header keyword '" + keyword + "'");
  }

  if (!saw_vertex_element) fail(name, line_no, "missing vertex element");
  if (vertex_count == 0) fail(name, line_no, "zero points");

  auto is_f64 = [](const std::string& t) { return t == "double" || t == "float64"; };
  auto is_u8 = [](const std::string& t) { return t == "uchar" || t == "uint8"; };

  int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1, ilabel = -1;
  for (int i = 0; i < static_cast<int>(props.size()); ++i) {
    const auto& p = props[i];
    if (p.pname == "x" || p.pname == "y" || p.pname == "z" || p.pname == "nx" ||
        p.pname == "ny" || p.pname == "nz") {
      if (!is_f64(p.type)) fail(name, line_no, "property '" + p.pname + "' must be float64");
      (p.pname == "x"    ? ix
       : p.pname == "y"  ? iy
       : p.pname == "z"  ? iz
       : p.pname == "nx" ? inx
       : p.pname == "ny" ? iny
                         : inz) = i;
    } else if (p.pname == "label") {
      if (!is_u8(p.type)) fail(name, line_no, "property 'label' must be uchar");
      ilabel = i;
    }
  }
  if (ix < 0 || iy < 0 || iz < 0) fail(name, line_no, "missing required x/y/z properties");
  const bool has_normals = inx >= 0 && iny >= 0 && inz >= 0;
  if ((inx >= 0 || iny >= 0 || inz >= 0) && !has_normals)
    fail(name, line_no, "incomplete normal properties");

  PointCloud cloud;
  cloud.points.reserve(vertex_count);
  if (has_normals) cloud.normals.reserve(vertex_count);
  if (ilabel >= 0) cloud.labels.reserve(vertex_count);

  std::vector<double> row(props.size());
  for (std::size_t v = 0; v < vertex_count; ++v) {
    if (!read_line()) fail(name, line_no, "unexpected end of file, expected vertex row");
    if (is_blank_or_comment(line)) {
      --v;
      continue;
    }
    const char* cursor = line.c_str();
    for (std::size_t c = 0; c < props.size(); ++c) {
      if (static_cast<int>(c) == ilabel) {
        row[c] = parse_label_token(cursor, name, line_no);
      } else if (static_cast<int>(c) == ix || static_cast<int>(c) == iy ||
                 static_cast<int>(c) == iz || static_cast<int>(c) == inx ||
                 static_cast<int>(c) == iny || static_cast<int>(c) == inz) {
        row[c] = parse_double_token(cursor, name, line_no);
      } else {
        skip_token(cursor, name, line_no);
      }
    }
    if (next_token(cursor) != nullptr) fail(name, line_no, "trailing data");
    cloud.points.emplace_back(row[ix], row[iy], row[iz]);
    if (has_normals) cloud.normals.emplace_back(row[inx], row[iny], row[inz]);
    if (ilabel >= 0) cloud.labels.push_back(static_cast<uint8_t>(row[ilabel]));
  }
  return cloud;
}

void write_xyz(const PointCloud& cloud, std::ostream& out) {
  const bool labeled = cloud.has_labels();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    out << fmt_double(p.x()) << ' ' << fmt_double(p.y()) << ' ' << fmt_double(p.z());
    if (labeled) out << ' ' << static_cast<int>(cloud.labels[i]);
    out << '\n';
  }
}

void write_ply(const PointCloud& cloud, std::ostream& out) {
  const bool labeled = cloud.has_labels();
  const bool normals = cloud.has_normals();
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << cloud.size() << '\n';
  out << "property double x\nproperty double y\nproperty double z\n";
  if (normals) out << "property double nx\nproperty double ny\nproperty double nz\n";
  if (labeled) out << "property uchar label\n";
  out << "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    out << fmt_double(p.x()) << ' ' << fmt_double(p.y()) << ' ' << fmt_double(p.z());
    if (normals) {
      const auto& n = cloud.normals[i];
      out << ' ' << fmt_double(n.x()) << ' ' << fmt_double(n.y()) << ' ' << fmt_double(n.z());
    }
    if (labeled) out << ' ' << static_cast<int>(cloud.labels[i]);
    out << '\n';
  }
}

}  // namespace

void PointCloud::validate() const {
  if (points.empty()) throw std::invalid_argument("PointCloud: point count must be >= 1");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i].allFinite())
      throw std::invalid_argument("PointCloud: non-finite coordinate at index " + std::to_string(i));
  }
  if (!labels.empty()) {
    if (labels.size() != points.size())
      throw std::invalid_argument("PointCloud: label count does not match point count");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] > 1)
        throw std::invalid_argument("PointCloud: label outside {0,1} at index " + std::to_string(i));
    }
  }
  if (!normals.empty()) {
    if (normals.size() != points.size())
      throw std::invalid_argument("PointCloud: normal count does not match point count");
    for (std::size_t i = 0; i < normals.size(); ++i) {
      if (std::abs(normals[i].norm() - 1.0) > 1e-6)
        throw std::invalid_argument("PointCloud: non-unit normal at index " + std::to_string(i));
    }
  }
}

PointCloud read_point_cloud(std::istream& in, CloudFormat format, const std::string& name) {
  PointCloud cloud = format == CloudFormat::xyz ? read_xyz(in, name) : read_ply(in, name);
  cloud.meta.source_id = name;
  cloud.validate();
  return cloud;
}

PointCloud load_point_cloud(const std::string& path, CloudFormat format) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_point_cloud: cannot open '" + path + "'");
  return read_point_cloud(in, format, path);
}

void write_point_cloud(const PointCloud& cloud, std::ostream& out, CloudFormat format) {
  cloud.validate();
  if (format == CloudFormat::xyz)
    write_xyz(cloud, out);
  else
    write_ply(cloud, out);
}

void save_point_cloud(const PointCloud& cloud, const std::string& path, CloudFormat format) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_point_cloud: cannot open '" + path + "' for writing");
  write_point_cloud(cloud, out, format);
  out.flush();
  if (!out) throw std::runtime_error("save_point_cloud: write failed for '" + path + "'");
}

void write_prediction_ply(const PointCloud& cloud,
                          const std::vector<double>& probabilities,
                          const std::vector<uint8_t>& predictions,
                          const std::string& path) {
  if (probabilities.size() != cloud.size() || predictions.size() != cloud.size())
    throw std::invalid_argument("write_prediction_ply: per-point arrays must match cloud size");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_prediction_ply: cannot open '" + path + "' for writing");
  const bool labeled = cloud.has_labels();
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << cloud.size() << '\n';
  out << "property double x\nproperty double y\nproperty double z\n";
  if (labeled) out << "property uchar label\n";
  out << "property double prob\nproperty uchar pred\n";
  out << "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    out << fmt_double(p.x()) << ' ' << fmt_double(p.y()) << ' ' << fmt_double(p.z());
    if (labeled) out << ' ' << static_cast<int>(cloud.labels[i]);
    out << ' ' << fmt_double(probabilities[i]) << ' ' << static_cast<int>(predictions[i]) << '\n';
  }
}

CloudFormat format_from_name(const std::string& name) {
  if (name == "ply" || name == "ply-ascii") return CloudFormat::ply_ascii;
  if (name == "xyz") return CloudFormat::xyz;
  throw std::invalid_argument("format_from_name: unknown format '" + name + "' (expected ply or xyz)");
}

}  // namespace cinet
