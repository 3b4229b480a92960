#pragma once

// Toy point clouds in the plane: two concentric circles and a double crescent.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "sbmmd/error.hpp"
#include "sbmmd/kernel_mmd.hpp"
#include "sbmmd/rng.hpp"

namespace sbmmd {

enum class DatasetKind { two_circles, double_crescent };

struct ToyDatasetSpec {
  DatasetKind kind = DatasetKind::two_circles;
  std::int64_t count = 1000;
  double inner_radius = 0.5;  // two_circles
  double outer_radius = 1.0;
  double arc_radius = 1.0;  // double_crescent
  double horizontal_offset = 0.5;
  double vertical_offset = 0.5;
  double noise = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    require(count > 0, "dataset count must be positive");
    require(noise >= 0.0, "dataset noise must be nonnegative");
    require(inner_radius > 0.0 && outer_radius > 0.0 && arc_radius > 0.0, "radii must be positive");
  }
};

inline DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "two_circles" || s == "circles") return DatasetKind::two_circles;
  if (s == "double_crescent" || s == "moons") return DatasetKind::double_crescent;
  throw ConfigError("unknown dataset kind '" + s + "' (two_circles | double_crescent)");
}

inline std::string to_string(DatasetKind k) {
  return k == DatasetKind::two_circles ? "two_circles" : "double_crescent";
}

/// Points 0 .. count/2 - 1 lie on the first circle / upper arc, the rest on
/// the second. Angles are uniform; noise is isotropic Gaussian.
///
/// Upper arc: (r cos a - h, r sin a - v/2), a in [0, pi]; the lower arc is
/// its reflection through the origin.
inline EmpiricalMeasure generate_dataset(const ToyDatasetSpec& spec) {
  spec.validate();
  const CounterRng rng(spec.seed, make_stream(StreamTag::dataset, static_cast<std::uint64_t>(spec.kind)));
  const std::int64_t first = spec.count / 2;
  Matrix out(spec.count, 2);
  for (std::int64_t i = 0; i < spec.count; ++i) {
    const auto idx = static_cast<std::uint32_t>(i);
    const bool first_part = i < first;
    const double u = rng.uniform(idx, 1, 0);
    double x = 0.0, y = 0.0;
    if (spec.kind == DatasetKind::two_circles) {
      const double r = first_part ? spec.inner_radius : spec.outer_radius;
      const double a = 2.0 * std::numbers::pi * u;
      x = r * std::cos(a);
      y = r * std::sin(a);
    } else {
      const double a = std::numbers::pi * u;
      x = spec.arc_radius * std::cos(a) - spec.horizontal_offset;
      y = spec.arc_radius * std::sin(a) - 0.5 * spec.vertical_offset;
      if (!first_part) {
        x = -x;
        y = -y;
      }
    }
    if (spec.noise > 0.0) {
      const auto [z0, z1] = rng.normal_pair(idx, 2, 0);
      x += spec.noise * z0;
      y += spec.noise * z1;
    }
    out(i, 0) = x;
    out(i, 1) = y;
  }
  return EmpiricalMeasure(std::move(out));
}

}  // namespace sbmmd
