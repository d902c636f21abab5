#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gwhf/noise.hpp"

using namespace gwhf;

TEST_CASE("wiener sampling is deterministic per seed") {
  const WienerPath a = sample_wiener(42, 1.0, 0.01);
  const WienerPath b = sample_wiener(42, 1.0, 0.01);
  REQUIRE(a.w.size() == 101);
  CHECK(a.w == b.w);
  CHECK(a.w[0] == 0.0);
  const WienerPath c = sample_wiener(43, 1.0, 0.01);
  CHECK(a.w != c.w);
  CHECK(derive_stream(7, 0) != derive_stream(7, 1));
  CHECK(derive_stream(7, 0) != derive_stream(8, 0));
}

TEST_CASE("wiener endpoint statistics across derived streams") {
  const int paths = 10000;
  const double T = 1.0;
  double mean = 0.0, second = 0.0;
  for (int k = 0; k < paths; ++k) {
    const WienerPath p = sample_wiener(derive_stream(7, k), T, 0.25);
    const double wT = p.w.back();
    mean += wT;
    second += wT * wT;
  }
  mean /= paths;
  second /= paths;
  const double var = second - mean * mean;
  CHECK(std::abs(mean) <= 4.0 * std::sqrt(T / paths));
  CHECK(std::abs(var - T) <= 0.1 * T);
}

TEST_CASE("wiener parameter validation") {
  CHECK_THROWS_AS(sample_wiener(1, 0.0, 0.1), InvalidInput);
  CHECK_THROWS_AS(sample_wiener(1, 1.0, 0.0), InvalidInput);
  CHECK_THROWS_AS(sample_wiener(1, 1.0, 0.3), InvalidInput);  // 0.3 does not divide 1
}

TEST_CASE("wiener linear interpolation between grid points") {
  const WienerPath p = sample_wiener(5, 1.0, 0.25);
  CHECK(p.value(0.25) == p.w[1]);
  CHECK_THAT(p.value(0.375), Catch::Matchers::WithinAbs(0.5 * (p.w[1] + p.w[2]), 1e-15));
  CHECK(p.value(-1.0) == p.w[0]);  // clamped
  CHECK(p.value(99.0) == p.w[4]);
}

TEST_CASE("wong-zakai interpolation: knots, midpoints, slope telescoping") {
  const WienerPath base = sample_wiener(11, 2.0, 0.0125);
  const WongZakaiPath wz{base, 0.25};
  REQUIRE(wz.knot_count() == 8);

  for (long k = 0; k <= 8; ++k) {
    const double tk = 0.25 * static_cast<double>(k);
    CHECK(wz.value(tk) == base.value(tk));  // exact at knots
  }
  CHECK_THAT(wz.value(0.125),
             Catch::Matchers::WithinAbs(0.5 * (wz.knot_value(0) + wz.knot_value(1)), 1e-15));

  // the piecewise-constant slope integrates the path exactly
  double integral = 0.0;
  for (long k = 0; k < 8; ++k) integral += wz.slope(0.25 * static_cast<double>(k)) * 0.25;
  CHECK_THAT(integral, Catch::Matchers::WithinAbs(base.w.back(), 1e-12));
}

TEST_CASE("wong-zakai slope is right-continuous at knots") {
  const WienerPath base = sample_wiener(12, 1.0, 0.125);
  const WongZakaiPath wz{base, 0.25};
  const double eps = 1e-6;
  CHECK(wz.slope(0.25) == (wz.knot_value(2) - wz.knot_value(1)) / 0.25);
  CHECK(wz.slope(0.25 + eps) == wz.slope(0.25));
  CHECK(wz.slope(0.25 - eps) == (wz.knot_value(1) - wz.knot_value(0)) / 0.25);
  // final knot clamps to the last interval
  CHECK(wz.slope(1.0) == wz.slope(0.999));
}

TEST_CASE("wong-zakai refinement agrees at shared knots") {
  const WienerPath base = sample_wiener(13, 1.0, 0.0625);
  const WongZakaiPath coarse{base, 0.25};
  const WongZakaiPath fine{base, 0.125};
  for (long k = 0; k <= 4; ++k) {
    const double tk = 0.25 * static_cast<double>(k);
    CHECK(coarse.value(tk) == fine.value(tk));
  }
}

TEST_CASE("wong-zakai parameter validation") {
  const WienerPath base = sample_wiener(14, 1.0, 0.1);
  CHECK_THROWS_AS((WongZakaiPath{base, 0.15}), InvalidInput);  // not a multiple of dt
  CHECK_THROWS_AS((WongZakaiPath{base, 0.0}), InvalidInput);
  CHECK_THROWS_AS((WongZakaiPath{base, 2.0}), InvalidInput);  // longer than horizon
}

TEST_CASE("noise driver: null object is the deterministic run") {
  const NoiseDriver none;
  CHECK(none.slope(0.3) == 0.0);
  CHECK(none.increment(0.3, 0.1) == 0.0);

  const WienerPath base = sample_wiener(15, 1.0, 0.05);
  const WongZakaiPath wz{base, 0.2};
  const NoiseDriver drv{&wz};
  CHECK(drv.slope(0.0) == wz.slope(0.0));
  CHECK_THAT(drv.increment(0.2, 0.2),
             Catch::Matchers::WithinAbs(base.value(0.4) - base.value(0.2), 1e-15));
}
