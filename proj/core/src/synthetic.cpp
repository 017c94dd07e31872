#include "cinet/synthetic.hpp"

#include "cinet/metrics.hpp"
#include "cinet/rng.hpp"
#include "cinet/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cinet {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

PointCloud generate_substrate(const SubstrateSpec& spec) {
  if (spec.extent_x <= 0 || spec.extent_y <= 0) {
    throw std::invalid_argument("generate_substrate: extent must be positive");
  }
  if (spec.pitch <= 0) throw std::invalid_argument("generate_substrate: pitch must be positive");
  const long nx = static_cast<long>(std::floor(spec.extent_x / spec.pitch)) + 1;
  const long ny = static_cast<long>(std::floor(spec.extent_y / spec.pitch)) + 1;
  const long count = nx * ny;
  if (count < 10000 || count > 1000000) {
    throw std::invalid_argument("generate_substrate: extent/pitch yields " +
                                std::to_string(count) + " points, outside 10000..1000000");
  }
  if (spec.trace_count < 0 || spec.trace_width < 0 || spec.trace_height < 0 ||
      spec.noise_sigma < 0) {
    throw std::invalid_argument("generate_substrate: negative trace or noise parameter");
  }

  Xoshiro256pp rng(spec.seed);

  // Traces alternate orientation; each is a full-extent bar of raised z.
  struct Trace {
    int axis;       // coordinate tested against the centre
    double center;
  };
  std::vector<Trace> traces(static_cast<std::size_t>(spec.trace_count));
  for (int t = 0; t < spec.trace_count; ++t) {
    const int axis = t % 2;
    const double extent = axis == 0 ? spec.extent_x : spec.extent_y;
    traces[t] = Trace{axis, rng.uniform(0.05 * extent, 0.95 * extent)};
  }

  PointCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(count));
  const double jitter = 0.3 * spec.pitch;
  for (long i = 0; i < nx; ++i) {
    for (long j = 0; j < ny; ++j) {
      const double x = static_cast<double>(i) * spec.pitch + rng.uniform(-jitter, jitter);
      const double y = static_cast<double>(j) * spec.pitch + rng.uniform(-jitter, jitter);
      double z = spec.noise_sigma > 0 ? rng.next_gaussian() * spec.noise_sigma : 0.0;
      for (const Trace& trace : traces) {
        const double coord = trace.axis == 0 ? x : y;
        if (std::abs(coord - trace.center) <= 0.5 * spec.trace_width) z += spec.trace_height;
      }
      cloud.points.emplace_back(x, y, z);
    }
  }
  cloud.labels.assign(cloud.points.size(), 0);
  cloud.meta.source_id = "substrate-" + std::to_string(spec.seed);
  cloud.meta.extra["pitch"] = fmt(spec.pitch);
  cloud.meta.extra["extent_x"] = fmt(spec.extent_x);
  cloud.meta.extra["extent_y"] = fmt(spec.extent_y);
  return cloud;
}

namespace {

enum class DefectKind { scratch, hole, bump, stain };

struct Workspace {
  std::vector<Eigen::Vector3d> points;
  std::vector<std::uint8_t> labels;
};

double point_segment_distance(double px, double py, const Eigen::Vector2d& a,
                              const Eigen::Vector2d& b) {
  const Eigen::Vector2d p(px, py);
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

// Every primitive follows one rule: a point is labeled defect iff its
// geometry was actually changed (holes delete instead). Aggregation-blur
// label corruption is the only exception and lives in apply_scan_artifacts.
void apply_scratch(Workspace& ws, const DefectSpec& spec, double ex, double ey,
                   Xoshiro256pp& rng) {
  const double margin = 0.5 * spec.scratch_length + spec.scratch_width;
  if (2 * margin >= ex || 2 * margin >= ey) {
    throw std::invalid_argument("inject_defects: scratch does not fit the plate");
  }
  const int segments = std::max(1, spec.scratch_segments);
  const double seg_len = spec.scratch_length / segments;
  std::vector<Eigen::Vector2d> vertices;
  Eigen::Vector2d cursor(rng.uniform(margin, ex - margin), rng.uniform(margin, ey - margin));
  double heading = rng.uniform(0.0, 2.0 * M_PI);
  vertices.push_back(cursor);
  for (int s = 0; s < segments; ++s) {
    if (s > 0) heading += rng.uniform(-0.5, 0.5);
    cursor += seg_len * Eigen::Vector2d(std::cos(heading), std::sin(heading));
    vertices.push_back(cursor);
  }
  const double half_w = 0.5 * spec.scratch_width;
  for (std::size_t i = 0; i < ws.points.size(); ++i) {
    double best = half_w + 1.0;
    for (std::size_t s = 0; s + 1 < vertices.size(); ++s) {
      best = std::min(best, point_segment_distance(ws.points[i].x(), ws.points[i].y(),
                                                   vertices[s], vertices[s + 1]));
      if (best == 0.0) break;
    }
    if (best > half_w) continue;
    const double ratio = best / half_w;
    const double delta = -spec.scratch_depth * (1.0 - ratio * ratio);
    if (delta != 0.0) {
      ws.points[i].z() += delta;
      ws.labels[i] = 1;
    }
  }
}

void apply_hole(Workspace& ws, const DefectSpec& spec, double ex, double ey, Xoshiro256pp& rng) {
  const double outer = spec.hole_radius + spec.hole_rim;
  if (2 * outer >= ex || 2 * outer >= ey) {
    throw std::invalid_argument("inject_defects: hole does not fit the plate");
  }
  const Eigen::Vector2d center(rng.uniform(outer, ex - outer), rng.uniform(outer, ey - outer));
  Workspace next;
  next.points.reserve(ws.points.size());
  next.labels.reserve(ws.labels.size());
  for (std::size_t i = 0; i < ws.points.size(); ++i) {
    const double r = (Eigen::Vector2d(ws.points[i].x(), ws.points[i].y()) - center).norm();
    if (r < spec.hole_radius) continue;  // deleted
    Eigen::Vector3d p = ws.points[i];
    std::uint8_t label = ws.labels[i];
    if (r < outer && spec.hole_rim > 0) {
      const double t = (r - spec.hole_radius) / spec.hole_rim;
      const double delta = -spec.hole_depth * (1.0 - t) * (1.0 - t);
      if (delta != 0.0) {
        p.z() += delta;
        label = 1;
      }
    }
    next.points.push_back(p);
    next.labels.push_back(label);
  }
  if (next.points.empty()) throw std::invalid_argument("inject_defects: hole removed every point");
  ws = std::move(next);
}

void apply_bump(Workspace& ws, const DefectSpec& spec, double ex, double ey, Xoshiro256pp& rng) {
  if (2 * spec.bump_radius >= ex || 2 * spec.bump_radius >= ey) {
    throw std::invalid_argument("inject_defects: bump does not fit the plate");
  }
  const Eigen::Vector2d center(rng.uniform(spec.bump_radius, ex - spec.bump_radius),
                               rng.uniform(spec.bump_radius, ey - spec.bump_radius));
  const double sigma = 0.5 * spec.bump_radius;
  for (std::size_t i = 0; i < ws.points.size(); ++i) {
    const double r = (Eigen::Vector2d(ws.points[i].x(), ws.points[i].y()) - center).norm();
    if (r > spec.bump_radius) continue;
    const double delta = spec.bump_height * std::exp(-r * r / (2.0 * sigma * sigma));
    if (delta != 0.0) {
      ws.points[i].z() += delta;
      ws.labels[i] = 1;
    }
  }
}

void apply_stain(Workspace& ws, const DefectSpec& spec, double ex, double ey, Xoshiro256pp& rng) {
  if (2 * spec.stain_radius >= ex || 2 * spec.stain_radius >= ey) {
    throw std::invalid_argument("inject_defects: stain does not fit the plate");
  }
  const Eigen::Vector2d center(rng.uniform(spec.stain_radius, ex - spec.stain_radius),
                               rng.uniform(spec.stain_radius, ey - spec.stain_radius));
  for (std::size_t i = 0; i < ws.points.size(); ++i) {
    const double r = (Eigen::Vector2d(ws.points[i].x(), ws.points[i].y()) - center).norm();
    if (r > spec.stain_radius) continue;
    const double ratio = r / spec.stain_radius;
    const double amp = spec.stain_amp * (1.0 - ratio * ratio);
    if (amp <= 0.0) continue;
    const double delta = rng.next_gaussian() * amp;
    if (delta != 0.0) {
      ws.points[i].z() += delta;
      ws.labels[i] = 1;
    }
  }
}

}  // namespace

PointCloud inject_defects(const PointCloud& cloud, const DefectSpec& spec, std::uint64_t seed) {
  if (cloud.size() == 0) throw std::invalid_argument("inject_defects: empty cloud");
  if (spec.target_count < 0) throw std::invalid_argument("inject_defects: negative target_count");
  if (spec.band_lo < 0 || spec.band_hi < spec.band_lo || spec.band_hi > 1) {
    throw std::invalid_argument("inject_defects: invalid defect fraction band");
  }

  double extent_x = 0.0, extent_y = 0.0;
  for (const Eigen::Vector3d& p : cloud.points) {
    extent_x = std::max(extent_x, p.x());
    extent_y = std::max(extent_y, p.y());
  }

  Workspace ws;
  ws.points = cloud.points;
  ws.labels.assign(cloud.size(), 0);

  const double weight_sum =
      spec.scratch_weight + spec.hole_weight + spec.bump_weight + spec.stain_weight;
  if (spec.target_count > 0 && weight_sum <= 0) {
    throw std::invalid_argument("inject_defects: defect kind weights sum to zero");
  }

  Xoshiro256pp rng(seed);
  auto draw_kind = [&] {
    const double u = rng.next_double() * weight_sum;
    if (u < spec.scratch_weight) return DefectKind::scratch;
    if (u < spec.scratch_weight + spec.hole_weight) return DefectKind::hole;
    if (u < spec.scratch_weight + spec.hole_weight + spec.bump_weight) return DefectKind::bump;
    return DefectKind::stain;
  };
  auto apply_one = [&] {
    switch (draw_kind()) {
      case DefectKind::scratch: apply_scratch(ws, spec, extent_x, extent_y, rng); break;
      case DefectKind::hole: apply_hole(ws, spec, extent_x, extent_y, rng); break;
      case DefectKind::bump: apply_bump(ws, spec, extent_x, extent_y, rng); break;
      case DefectKind::stain: apply_stain(ws, spec, extent_x, extent_y, rng); break;
    }
  };
  auto fraction = [&] { return defect_proportion(ws.labels); };

  int placed = 0;
  for (; placed < spec.target_count; ++placed) apply_one();

  if (spec.target_count > 0 || spec.band_lo > 0) {
    const int cap = 4 * std::max(spec.target_count, 1) + 256;
    while (fraction() < spec.band_lo) {
      if (placed >= cap) {
        throw std::invalid_argument("inject_defects: " + std::to_string(placed) +
                                    " defects reached fraction " + fmt(fraction()) +
                                    ", below band_lo " + fmt(spec.band_lo));
      }
      apply_one();
      ++placed;
    }
    const double achieved = fraction();
    if (achieved > spec.band_hi) {
      throw std::invalid_argument("inject_defects: defect fraction " + fmt(achieved) +
                                  " overshoots band [" + fmt(spec.band_lo) + ", " +
                                  fmt(spec.band_hi) + "]; shrink defect sizes");
    }
  }

  PointCloud out;
  out.points = std::move(ws.points);
  out.labels = std::move(ws.labels);
  out.meta = cloud.meta;
  out.meta.extra["defect_count"] = std::to_string(placed);
  out.meta.extra["defect_fraction"] = fmt(defect_proportion(out.labels));
  return out;
}

PointCloud apply_scan_artifacts(const PointCloud& cloud, const ArtifactSpec& spec,
                                std::uint64_t seed) {
  if (cloud.size() == 0) throw std::invalid_argument("apply_scan_artifacts: empty cloud");
  if (!cloud.has_labels()) throw std::invalid_argument("apply_scan_artifacts: cloud not labeled");
  if (spec.stripe_axis != 0 && spec.stripe_axis != 1) {
    throw std::invalid_argument("apply_scan_artifacts: stripe_axis must be 0 or 1");
  }
  if (spec.stripe_count < 0 || spec.stripe_width < 0 || spec.stripe_probability < 0 ||
      spec.stripe_probability > 1 || spec.blur_radius < 0 || spec.blur_rate < 0 ||
      spec.blur_rate > 1) {
    throw std::invalid_argument("apply_scan_artifacts: parameter out of range");
  }

  Xoshiro256pp rng(seed);

  double lo = 0.0, hi = 0.0;
  if (cloud.size() > 0) {
    lo = hi = cloud.points[0][spec.stripe_axis];
    for (const Eigen::Vector3d& p : cloud.points) {
      lo = std::min(lo, p[spec.stripe_axis]);
      hi = std::max(hi, p[spec.stripe_axis]);
    }
  }

  std::vector<std::pair<double, double>> stripes;  // [start, end) along the axis
  for (int s = 0; s < spec.stripe_count; ++s) {
    const double center = rng.uniform(lo, hi);
    const bool active = rng.next_double() < spec.stripe_probability;
    if (active && spec.stripe_width > 0) {
      stripes.emplace_back(center - 0.5 * spec.stripe_width, center + 0.5 * spec.stripe_width);
    }
  }

  PointCloud out;
  out.meta = cloud.meta;
  std::size_t removed = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double coord = cloud.points[i][spec.stripe_axis];
    bool occluded = false;
    for (const auto& [a, b] : stripes) {
      if (coord >= a && coord < b) {
        occluded = true;
        break;
      }
    }
    if (occluded) {
      ++removed;
      continue;
    }
    out.points.push_back(cloud.points[i]);
    out.labels.push_back(cloud.labels[i]);
    if (cloud.has_normals()) out.normals.push_back(cloud.normals[i]);
  }
  if (out.points.empty()) {
    throw std::invalid_argument("apply_scan_artifacts: occlusion removed every point");
  }

  // Aggregation blur: normal points near any defect point flip at blur_rate.
  // One rng draw per candidate, in point order, so the draw sequence does not
  // depend on non-candidates.
  std::size_t flips = 0;
  if (spec.blur_radius > 0 && spec.blur_rate > 0) {
    PointCloud defect_only;
    for (std::size_t i = 0; i < out.points.size(); ++i) {
      if (out.labels[i] == 1) defect_only.points.push_back(out.points[i]);
    }
    if (!defect_only.points.empty()) {
      SpatialIndex defect_index(defect_only);
      std::vector<std::pair<int, double>> hits;
      for (std::size_t i = 0; i < out.points.size(); ++i) {
        if (out.labels[i] == 1) continue;
        hits.clear();
        defect_index.radius_squared(out.points[i], spec.blur_radius, hits);
        if (hits.empty()) continue;
        if (rng.next_double() < spec.blur_rate) {
          out.labels[i] = 1;
          ++flips;
        }
      }
    }
  }

  out.meta.extra["occlusion_removed"] = std::to_string(removed);
  out.meta.extra["aggregation_flips"] = std::to_string(flips);
  out.meta.extra["defect_fraction"] = fmt(defect_proportion(out.labels));
  return out;
}

}  // namespace cinet
