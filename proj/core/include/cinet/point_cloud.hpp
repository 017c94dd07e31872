#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cinet {

struct CloudMeta {
  std::string source_id;
  std::string unit = "mm";
  // Free-form annotations (achieved defect fraction, corrupted label count, ...).
  // Not persisted by the point formats; the dataset manifest carries them.
  std::map<std::string, std::string> extra;
};

// Finite 3D positions in millimeters. Labels, when present, are per point and
// binary (0 = normal, 1 = defect). Normals, when present, are unit length.
struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<uint8_t> labels;
  std::vector<Eigen::Vector3d> normals;
  CloudMeta meta;

  std::size_t size() const { return points.size(); }
  bool has_labels() const { return !labels.empty(); }
  bool has_normals() const { return !normals.empty(); }

  // Throws std::invalid_argument naming the first violated invariant.
  void validate() const;
};

}  // namespace cinet
