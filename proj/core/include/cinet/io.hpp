#pragma once

#include "cinet/point_cloud.hpp"

#include <iosfwd>
#include <string>

namespace cinet {

enum class CloudFormat { ply_ascii, xyz };

// Reads a cloud from disk. Formats:
//   xyz       whitespace separated "x y z [label]", '#' starts a comment
//   ply_ascii standard ascii ply; x/y/z double required, nx/ny/nz double and
//             uchar label optional; other declared properties are skipped
// Malformed input throws std::runtime_error carrying the 1-based line number.
PointCloud load_point_cloud(const std::string& path, CloudFormat format);
PointCloud read_point_cloud(std::istream& in, CloudFormat format, const std::string& name);

// Positions (and normals) are written with 17 significant digits so a
// save/load round trip reproduces every double exactly; labels are exact.
void save_point_cloud(const PointCloud& cloud, const std::string& path, CloudFormat format);
void write_point_cloud(const PointCloud& cloud, std::ostream& out, CloudFormat format);

// Per-point scores attached to an exported ply ("prob" double, "pred" uchar).
void write_prediction_ply(const PointCloud& cloud,
                          const std::vector<double>& probabilities,
                          const std::vector<uint8_t>& predictions,
                          const std::string& path);

CloudFormat format_from_name(const std::string& name);  // "ply" | "xyz"

}  // namespace cinet
