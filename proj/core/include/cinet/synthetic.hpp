#pragma once

#include "cinet/point_cloud.hpp"

#include <cstdint>

namespace cinet {

// Jittered-grid plate with extruded rectangular circuit traces. extent/pitch
// must land between 10K and 1M points, a guard against accidentally huge
// clouds.
struct SubstrateSpec {
  double extent_x = 7.0;  // mm
  double extent_y = 7.0;
  double pitch = 0.05;
  int trace_count = 6;
  double trace_width = 0.4;   // mm
  double trace_height = 0.08; // mm, z extrusion
  double noise_sigma = 0.008; // mm, Gaussian z noise
  std::uint64_t seed = 0;
};

// Four defect primitives. Sizes in mm. target_count instances are placed
// first; while the labeled fraction stays below band_lo more are added, and a
// final fraction outside [band_lo, band_hi] is an error. target_count = 0
// with band_lo = 0 requests no defects at all.
struct DefectSpec {
  int target_count = 4;
  double band_lo = 0.001;
  double band_hi = 0.01;

  double scratch_weight = 0.4;
  double hole_weight = 0.25;
  double bump_weight = 0.2;
  double stain_weight = 0.15;

  double scratch_length = 1.2;
  double scratch_width = 0.12;
  double scratch_depth = 0.06;
  int scratch_segments = 3;

  double hole_radius = 0.25;
  double hole_rim = 0.1;    // rim ring width outside the deleted disk
  double hole_depth = 0.05; // rim depression at the inner edge

  double bump_radius = 0.3;
  double bump_height = 0.1;

  double stain_radius = 0.35;
  double stain_amp = 0.05; // extra noise sigma at the stain centre
};

// Scan artifacts: occlusion stripes delete points (never fabricate); the
// aggregation blur flips normal labels to defect near defect boundaries,
// with the flip count tracked in metadata.
struct ArtifactSpec {
  int stripe_axis = 0;  // 0: stripes of constant x, 1: constant y
  int stripe_count = 2;
  double stripe_width = 0.25;        // mm
  double stripe_probability = 0.5;   // each candidate stripe applied with this probability
  double blur_radius = 0.08;         // mm around defect points
  double blur_rate = 0.25;           // flip probability inside the radius
};

PointCloud generate_substrate(const SubstrateSpec& spec);
PointCloud inject_defects(const PointCloud& cloud, const DefectSpec& spec, std::uint64_t seed);
PointCloud apply_scan_artifacts(const PointCloud& cloud, const ArtifactSpec& spec,
                                std::uint64_t seed);

}  // namespace cinet
