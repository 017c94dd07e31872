#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "cinet/quality_features.hpp"
#include "cinet/spatial_index.hpp"
#include "cinet/synthetic.hpp"

#include "oracles.hpp"

using namespace cinet;

namespace {

// Small plate (~10K points) so property sweeps stay fast.
SubstrateSpec small_plate(std::uint64_t seed) {
  SubstrateSpec spec;
  spec.extent_x = 5.0;
  spec.extent_y = 5.0;
  spec.pitch = 0.05;
  spec.seed = seed;
  return spec;
}

// Primitive sizes scaled for the small plate: the defaults target full size
// substrates and would blow straight past a one percent band on ~10K points.
DefectSpec small_defects() {
  DefectSpec spec;
  spec.target_count = 2;
  spec.scratch_length = 0.6;
  spec.scratch_width = 0.08;
  spec.hole_radius = 0.12;
  spec.hole_rim = 0.08;
  spec.bump_radius = 0.15;
  spec.stain_radius = 0.18;
  return spec;
}

bool same_points(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.points[i] != b.points[i]) return false;
  }
  return a.labels == b.labels;
}

std::multiset<std::array<double, 3>> point_set(const PointCloud& c) {
  std::multiset<std::array<double, 3>> out;
  for (const auto& p : c.points) out.insert({p.x(), p.y(), p.z()});
  return out;
}

}  // namespace

TEST_CASE("substrate has the grid point count and zero labels") {
  const SubstrateSpec spec = small_plate(3);
  const PointCloud cloud = generate_substrate(spec);
  // floor(extent / pitch) + 1 grid nodes per axis.
  const int per_axis = static_cast<int>(std::floor(5.0 / 0.05)) + 1;
  CHECK(static_cast<int>(cloud.size()) == per_axis * per_axis);
  REQUIRE(cloud.has_labels());
  for (std::uint8_t l : cloud.labels) CHECK(l == 0);
  cloud.validate();

  // Jitter never moves a point farther than 0.3 * pitch per axis.
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double gx = std::round(cloud.points[i].x() / spec.pitch) * spec.pitch;
    const double gy = std::round(cloud.points[i].y() / spec.pitch) * spec.pitch;
    CHECK(std::abs(cloud.points[i].x() - gx) <= 0.3 * spec.pitch + 1e-12);
    CHECK(std::abs(cloud.points[i].y() - gy) <= 0.3 * spec.pitch + 1e-12);
  }
}

TEST_CASE("flat substrate without noise or traces is exactly planar") {
  SubstrateSpec spec = small_plate(5);
  spec.trace_count = 0;
  spec.noise_sigma = 0.0;
  const PointCloud cloud = generate_substrate(spec);
  for (const auto& p : cloud.points) CHECK(p.z() == 0.0);
}

TEST_CASE("traces extrude in exact height multiples") {
  SubstrateSpec spec = small_plate(6);
  spec.noise_sigma = 0.0;
  spec.trace_count = 3;
  const PointCloud cloud = generate_substrate(spec);
  // Crossing traces stack, so every z is a small integer multiple of the
  // trace height and both plain plate and single-trace levels must occur.
  std::set<double> zs;
  for (const auto& p : cloud.points) zs.insert(p.z());
  for (double z : zs) {
    const double k = z / spec.trace_height;
    CHECK(std::abs(k - std::round(k)) <= 1e-9);
    CHECK(k >= -1e-9);
    CHECK(k <= 3.0 + 1e-9);
  }
  CHECK(zs.count(0.0) == 1);
  CHECK(zs.count(spec.trace_height) == 1);
}

TEST_CASE("substrate generation is seed-deterministic") {
  const PointCloud a = generate_substrate(small_plate(7));
  const PointCloud b = generate_substrate(small_plate(7));
  const PointCloud c = generate_substrate(small_plate(8));
  CHECK(same_points(a, b));
  CHECK_FALSE(same_points(a, c));
}

TEST_CASE("substrate guards against absurd point counts") {
  SubstrateSpec tiny = small_plate(1);
  tiny.extent_x = 0.2;
  tiny.extent_y = 0.2;
  CHECK_THROWS_AS(generate_substrate(tiny), std::invalid_argument);

  SubstrateSpec huge = small_plate(1);
  huge.pitch = 0.001;
  huge.extent_x = 50.0;
  huge.extent_y = 50.0;
  CHECK_THROWS_AS(generate_substrate(huge), std::invalid_argument);
}

TEST_CASE("defect injection labels exactly the touched points") {
  const PointCloud base = generate_substrate(small_plate(11));
  DefectSpec spec;
  spec.target_count = 3;
  spec.band_lo = 0.0005;
  spec.band_hi = 0.05;
  const PointCloud out = inject_defects(base, spec, 99);
  out.validate();

  // Holes may delete points; map survivors back to their source by xy (the
  // jittered grid makes xy pairs unique).
  std::map<std::pair<double, double>, std::size_t> source;
  for (std::size_t i = 0; i < base.size(); ++i) {
    source[{base.points[i].x(), base.points[i].y()}] = i;
  }
  CHECK(out.size() <= base.size());
  int labeled = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto it = source.find({out.points[i].x(), out.points[i].y()});
    REQUIRE(it != source.end());
    const double dz = out.points[i].z() - base.points[it->second].z();
    // The label is equivalent to a geometric delta.
    CHECK((out.labels[i] == 1) == (dz != 0.0));
    labeled += out.labels[i];
  }
  CHECK(labeled > 0);

  const double fraction =
      static_cast<double>(labeled) / static_cast<double>(out.size());
  CHECK(fraction >= spec.band_lo);
  CHECK(fraction <= spec.band_hi);
}

TEST_CASE("zero requested defects is the identity") {
  const PointCloud base = generate_substrate(small_plate(13));
  DefectSpec spec;
  spec.target_count = 0;
  spec.band_lo = 0.0;
  const PointCloud out = inject_defects(base, spec, 5);
  CHECK(same_points(base, out));
}

TEST_CASE("hole defects delete points") {
  const PointCloud base = generate_substrate(small_plate(17));
  DefectSpec spec;
  spec.target_count = 2;
  spec.band_lo = 0.0001;
  spec.band_hi = 0.05;
  spec.scratch_weight = 0.0;
  spec.hole_weight = 1.0;
  spec.bump_weight = 0.0;
  spec.stain_weight = 0.0;
  const PointCloud out = inject_defects(base, spec, 31);
  CHECK(out.size() < base.size());
}

TEST_CASE("defect fraction lands in the band across one hundred seeds") {
  const PointCloud base = generate_substrate(small_plate(19));
  DefectSpec spec = small_defects();
  spec.band_lo = 0.008;
  spec.band_hi = 0.015;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const PointCloud out = inject_defects(base, spec, seed);
    double labeled = 0;
    for (std::uint8_t l : out.labels) labeled += l;
    const double fraction = labeled / static_cast<double>(out.size());
    CHECK(fraction >= spec.band_lo);
    CHECK(fraction <= spec.band_hi);
  }
}

TEST_CASE("defect injection is seed-deterministic and reports metadata") {
  const PointCloud base = generate_substrate(small_plate(23));
  const DefectSpec spec = small_defects();
  const PointCloud a = inject_defects(base, spec, 7);
  const PointCloud b = inject_defects(base, spec, 7);
  CHECK(same_points(a, b));
  CHECK(a.meta.extra.count("defect_fraction") == 1);
  CHECK(a.meta.extra.count("defect_count") == 1);
}

TEST_CASE("oversized defects refuse to fit the plate") {
  const PointCloud base = generate_substrate(small_plate(29));
  DefectSpec spec;
  spec.scratch_weight = 1.0;
  spec.hole_weight = 0.0;
  spec.bump_weight = 0.0;
  spec.stain_weight = 0.0;
  spec.scratch_length = 100.0;
  CHECK_THROWS_AS(inject_defects(base, spec, 1), std::invalid_argument);
}

TEST_CASE("occlusion stripes delete without fabricating or relabeling") {
  const PointCloud base = generate_substrate(small_plate(37));
  const PointCloud defected = inject_defects(base, small_defects(), 3);

  ArtifactSpec aspec;
  aspec.stripe_count = 2;
  aspec.stripe_probability = 1.0;
  aspec.stripe_width = 0.3;
  aspec.blur_rate = 0.0;  // isolate occlusion
  const PointCloud out = apply_scan_artifacts(defected, aspec, 41);
  out.validate();

  CHECK(out.size() < defected.size());
  // Survivors are a sub-multiset of the input, labels preserved.
  std::map<std::array<double, 3>, std::uint8_t> source;
  for (std::size_t i = 0; i < defected.size(); ++i) {
    source[{defected.points[i].x(), defected.points[i].y(), defected.points[i].z()}] =
        defected.labels[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto it = source.find({out.points[i].x(), out.points[i].y(), out.points[i].z()});
    REQUIRE(it != source.end());
    CHECK(out.labels[i] == it->second);
  }
  CHECK(out.meta.extra.count("occlusion_removed") == 1);

  // Width accounting: two stripes of 0.3 over a 5mm extent remove roughly
  // 12% of points (stripes may overlap, so this is an upper bound check).
  const double removed = static_cast<double>(defected.size() - out.size()) /
                         static_cast<double>(defected.size());
  CHECK(removed > 0.03);
  CHECK(removed < 0.15);
}

TEST_CASE("zero-width or zero-probability artifacts are the identity") {
  const PointCloud base = generate_substrate(small_plate(43));
  const PointCloud defected = inject_defects(base, small_defects(), 5);

  ArtifactSpec off;
  off.stripe_probability = 0.0;
  off.blur_rate = 0.0;
  CHECK(same_points(apply_scan_artifacts(defected, off, 1), defected));

  ArtifactSpec zero_width;
  zero_width.stripe_width = 0.0;
  zero_width.blur_rate = 0.0;
  CHECK(same_points(apply_scan_artifacts(defected, zero_width, 1), defected));
}

TEST_CASE("aggregation blur flips labels only near defects") {
  const PointCloud base = generate_substrate(small_plate(47));
  DefectSpec dspec;
  dspec.target_count = 6;
  dspec.band_lo = 0.004;
  dspec.band_hi = 0.05;
  const PointCloud defected = inject_defects(base, dspec, 9);

  ArtifactSpec aspec;
  aspec.stripe_probability = 0.0;  // isolate the blur
  aspec.blur_rate = 1.0;
  aspec.blur_radius = 0.08;
  const PointCloud out = apply_scan_artifacts(defected, aspec, 53);

  REQUIRE(out.size() == defected.size());
  PointCloud defect_only;
  for (std::size_t i = 0; i < defected.size(); ++i) {
    if (defected.labels[i] == 1) defect_only.points.push_back(defected.points[i]);
  }
  REQUIRE_FALSE(defect_only.points.empty());
  const SpatialIndex defect_index(defect_only);

  int flips = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (defected.labels[i] == 1) {
      CHECK(out.labels[i] == 1);  // blur never unlabels a defect
      continue;
    }
    if (out.labels[i] == 1) {
      ++flips;
      const auto nb = defect_index.knn(out.points[i], 1);
      CHECK(nb[0].distance <= aspec.blur_radius + 1e-12);
    }
  }
  CHECK(flips > 0);
  CHECK(std::to_string(flips) == out.meta.extra.at("aggregation_flips"));
}

TEST_CASE("artifacts are seed-deterministic") {
  const PointCloud base = generate_substrate(small_plate(59));
  const PointCloud defected = inject_defects(base, small_defects(), 11);
  ArtifactSpec aspec;
  const PointCloud a = apply_scan_artifacts(defected, aspec, 13);
  const PointCloud b = apply_scan_artifacts(defected, aspec, 13);
  CHECK(same_points(a, b));
  CHECK(point_set(a) == point_set(b));
}

TEST_CASE("occlusion strictly lowers grid uniformity") {
  // The pairing behind the quality-semantics link: a stripe of missing data
  // leaves empty grid cells, so the occupancy spread grows.
  int lowered = 0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    SubstrateSpec spec = small_plate(seed + 100);
    const PointCloud base = generate_substrate(spec);
    ArtifactSpec aspec;
    aspec.stripe_probability = 1.0;
    aspec.stripe_width = 0.4;
    aspec.blur_rate = 0.0;
    const PointCloud occluded = apply_scan_artifacts(base, aspec, seed + 200);
    if (grid_uniformity(occluded, 8) < grid_uniformity(base, 8)) ++lowered;
  }
  CHECK(lowered >= 7);
}
