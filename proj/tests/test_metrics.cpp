#include <doctest.h>

#include "litseg/error.hpp"
#include "litseg/metrics.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

using namespace litseg;
namespace lt = litseg::testing;

namespace {

Mask3D mask_from(Shape3 s, std::initializer_list<std::array<int, 3>> on, Spacing sp = {1, 1, 1}) {
  Mask3D m(s, sp, false);
  for (const auto& v : on) m(v[0], v[1], v[2]) = true;
  return m;
}

Mask3D ball(Shape3 s, std::array<double, 3> c, double r) {
  Mask3D m(s, {1, 1, 1}, false);
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < s.y; ++y)
      for (int x = 0; x < s.x; ++x) {
        const double dz = z - c[0], dy = y - c[1], dx = x - c[2];
        m(z, y, x) = dz * dz + dy * dy + dx * dx <= r * r;
      }
  return m;
}

Mask3D operator|(const Mask3D& a, const Mask3D& b) {
  Mask3D r = a;
  r.data = a.data || b.data;
  return r;
}

LabelVolume labels_with_burden(int liver, int tumor) {
  LabelVolume l({1, 1, 100}, {1, 1, 1}, 0);
  for (int i = 0; i < liver + tumor; ++i) l(0, 0, i) = i < tumor ? kTumor : kLiver;
  return l;
}

}  // namespace

TEST_CASE("dice and overlap examples") {
  const Shape3 s{1, 1, 8};
  const auto p = mask_from(s, {{0, 0, 0}, {0, 0, 1}, {0, 0, 2}, {0, 0, 3}});
  const auto g = mask_from(s, {{0, 0, 2}, {0, 0, 3}, {0, 0, 4}, {0, 0, 5}});
  CHECK(dice_binary(p, g) == doctest::Approx(0.5));
  CHECK(dice_binary(p, p) == 1.0);
  const Mask3D empty(s, {1, 1, 1}, false);
  CHECK(dice_binary(empty, empty) == 1.0);
  CHECK_THROWS_AS(dice_binary(p, Mask3D({1, 1, 7}, {1, 1, 1}, false)), Error);

  auto o = overlap_metrics(p, p);
  CHECK(o.voe == 0.0);
  CHECK(o.jaccard == 1.0);
  CHECK(o.rvd == 0.0);
  const auto half = mask_from(s, {{0, 0, 0}, {0, 0, 1}});
  CHECK(overlap_metrics(p, half).rvd == doctest::Approx(1.0));
  o = overlap_metrics(p, mask_from(s, {{0, 0, 6}}));
  CHECK(o.jaccard == 0.0);
  CHECK(o.voe == 1.0);
  CHECK(std::isnan(overlap_metrics(p, empty).rvd));
  CHECK(overlap_metrics(empty, empty).jaccard == 1.0);
}

TEST_CASE("surface distance examples") {
  const Shape3 s{8, 8, 8};
  const auto a = mask_from(s, {{1, 4, 4}}, {2, 1, 1});
  const auto b = mask_from(s, {{4, 4, 4}}, {2, 1, 1});
  const auto d = surface_distances(a, b);
  CHECK(d.assd == doctest::Approx(6.0));
  CHECK(d.msd == doctest::Approx(6.0));
  CHECK(d.rmsd == doctest::Approx(6.0));

  const auto blob = ball(s, {4, 4, 4}, 2.5);
  const auto same = surface_distances(blob, blob);
  CHECK(same.assd == 0.0);
  CHECK(same.msd == 0.0);
  CHECK(same.rmsd == 0.0);
  CHECK_THROWS_AS(surface_distances(blob, Mask3D(s, {1, 1, 1}, false)), Error);

  // Border = mask minus its cross erosion: a 3x3x3 cube keeps 26 voxels.
  const auto cube = ball(s, {4, 4, 4}, 1.8);
  CHECK(cube.data.count() == 27);
  CHECK(border_voxels(cube).data.count() == 26);
}

TEST_CASE("distance transform matches brute force") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const Shape3 s{int(4 + rng() % 6), int(4 + rng() % 8), int(4 + rng() % 8)};
    const Spacing sp{0.5 + double(rng() % 5) * 0.5, 0.7, 1.3};
    Mask3D set(s, sp, false);
    for (Eigen::Index i = 0; i < set.data.size(); ++i) set.data[i] = rng() % 17 == 0;
    set.data[0] = true;
    const auto dt = distance_to_set(set);
    double worst = 0;
    for (int z = 0; z < s.z; ++z)
      for (int y = 0; y < s.y; ++y)
        for (int x = 0; x < s.x; ++x) {
          double best = std::numeric_limits<double>::infinity();
          for (int zz = 0; zz < s.z; ++zz)
            for (int yy = 0; yy < s.y; ++yy)
              for (int xx = 0; xx < s.x; ++xx)
                if (set(zz, yy, xx))
                  best = std::min(best, std::hypot((z - zz) * sp.z, (y - yy) * sp.y, (x - xx) * sp.x));
          worst = std::max(worst, std::abs(best - dt(z, y, x)));
        }
    CHECK(worst < 1e-9);
  }
  const auto none = distance_to_set(Mask3D({3, 3, 3}, {1, 1, 1}, false));
  CHECK(std::isinf(none.data[0]));
}

TEST_CASE("surface distances match the all-pairs oracle") {
  std::mt19937_64 rng(22);
  int compared = 0;
  for (int trial = 0; trial < 25; ++trial) {
    const Shape3 s{int(6 + rng() % 11), int(6 + rng() % 11), int(6 + rng() % 11)};
    const Spacing sp{2.5, 0.8, 0.8};
    const auto p = lt::random_mask(rng, s, sp);
    const auto g = lt::random_mask(rng, s, sp);
    if (!p.data.any() || !g.data.any()) continue;
    const auto fast = surface_distances(p, g);
    const auto slow = lt::brute_surface_distances(p, g);
    CHECK(std::abs(fast.assd - slow.assd) < 1e-9);
    CHECK(std::abs(fast.msd - slow.msd) < 1e-9);
    CHECK(std::abs(fast.rmsd - slow.rmsd) < 1e-9);
    CHECK(fast.msd >= fast.assd);
    CHECK(fast.msd >= fast.rmsd);
    ++compared;
  }
  CHECK(compared >= 20);
}

TEST_CASE("overlap invariants on random masks") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const Shape3 s{5, 6, 7};
    const auto p = lt::random_mask(rng, s, {1, 1, 1});
    const auto g = lt::random_mask(rng, s, {1, 1, 1});
    const double d = dice_binary(p, g);
    const auto o = overlap_metrics(p, g);
    const auto c = lt::set_counts(p, g);
    CHECK(d == dice_binary(g, p));
    CHECK(o.jaccard <= d + 1e-15);
    CHECK(d <= 2 * o.jaccard / (1 + o.jaccard) + 1e-15);
    if (c.uni > 0) {
      CHECK(d == doctest::Approx(2 * c.inter / (c.p + c.g)));
      CHECK(o.jaccard == doctest::Approx(c.inter / c.uni));
    }
    CHECK(o.voe == doctest::Approx(1 - o.jaccard));

    // Common voxel permutation leaves voxel-count metrics unchanged.
    std::vector<Eigen::Index> perm(std::size_t(p.data.size()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Mask3D pp = p, gp = g;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      pp.data[Eigen::Index(i)] = p.data[perm[i]];
      gp.data[Eigen::Index(i)] = g.data[perm[i]];
    }
    CHECK(dice_binary(pp, gp) == d);
    CHECK(overlap_metrics(pp, gp).jaccard == o.jaccard);
  }
}

TEST_CASE("dice aggregation") {
  // Case A: 10 voxels, perfect. Case B: 10^6 voxels, disjoint.
  Mask3D a({1, 1, 10}, {1, 1, 1}, true);
  Mask3D bp({100, 100, 100}, {1, 1, 1}, false), bg = bp;
  bp.data.head(500000).setConstant(true);
  bg.data.tail(500000).setConstant(true);
  const auto scores = dice_scores({{a, a}, {bp, bg}});
  CHECK(scores.per_case == doctest::Approx(0.5));
  CHECK(scores.global < 1e-4);

  Mask3D shifted = bg;
  shifted.data.segment(400000, 200000).setConstant(true);
  const auto one = dice_scores({{bp, shifted}});
  CHECK(one.global == doctest::Approx(one.per_case));
  CHECK(one.global == doctest::Approx(dice_binary(bp, shifted)));

  std::mt19937_64 rng(24);
  const auto p = lt::random_mask(rng, {6, 6, 6}, {1, 1, 1});
  const auto g = lt::random_mask(rng, {6, 6, 6}, {1, 1, 1});
  const auto same = dice_scores({{p, g}, {p, g}, {p, g}});
  CHECK(same.global == doctest::Approx(same.per_case));
  CHECK(same.per_case == doctest::Approx(dice_binary(p, g)));
}

TEST_CASE("lesion detection examples") {
  const Shape3 s{12, 12, 12};
  const auto l1 = ball(s, {2, 2, 2}, 1.5), l2 = ball(s, {8, 8, 2}, 1.5), l3 = ball(s, {3, 8, 8}, 2.0);
  const auto three = l1 | l2 | l3;
  auto r = lesion_detection(three, three);
  CHECK(r.at_threshold.gt_total == 3);
  CHECK(r.at_threshold.recall() == 1.0);
  CHECK(r.at_threshold.precision() == 1.0);
  CHECK(r.greater_zero.recall() == 1.0);
  CHECK(r.greater_zero.precision() == 1.0);

  // 40% coverage of a 10-voxel lesion.
  Mask3D g(s, {1, 1, 1}, false), p(s, {1, 1, 1}, false);
  for (int x = 0; x < 10; ++x) g(5, 5, x) = true;
  for (int x = 0; x < 4; ++x) p(5, 5, x) = true;
  r = lesion_detection(p, g);
  CHECK(r.at_threshold.recall() == 0.0);
  CHECK(r.greater_zero.recall() == 1.0);
  REQUIRE(r.matches.size() == 1);
  CHECK(r.matches[0].overlap == doctest::Approx(0.4));

  // Perfect plus one spurious blob.
  const auto spurious = g | ball(s, {10, 10, 10}, 1.0);
  r = lesion_detection(spurious, g);
  CHECK(r.greater_zero.precision() == doctest::Approx(0.5));
  CHECK(r.at_threshold.recall() == 1.0);

  // No GT lesions: recall undefined.
  r = lesion_detection(p, Mask3D(s, {1, 1, 1}, false));
  CHECK(std::isnan(r.at_threshold.recall()));
  CHECK(r.at_threshold.precision() == 0.0);
}

TEST_CASE("lesion recall at zero dominates recall at one half") {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 30; ++trial) {
    const auto p = lt::random_mask(rng, {8, 8, 8}, {1, 1, 1});
    const auto g = lt::random_mask(rng, {8, 8, 8}, {1, 1, 1});
    const auto r = lesion_detection(p, g);
    CHECK(r.greater_zero.gt_detected >= r.at_threshold.gt_detected);
    CHECK(r.greater_zero.pred_true >= r.at_threshold.pred_true);
    for (const auto& m : r.matches) {
      CHECK(m.overlap >= 0.0);
      CHECK(m.overlap <= 1.0);
    }
  }
}

TEST_CASE("tumor burden") {
  CHECK(tumor_burden(labels_with_burden(90, 10)) == doctest::Approx(0.10));
  auto e = tumor_burden({{labels_with_burden(90, 10), labels_with_burden(94, 6)}});
  CHECK(e.rmse == doctest::Approx(0.04));
  CHECK(e.max == doctest::Approx(0.04));
  e = tumor_burden({{labels_with_burden(97, 3), labels_with_burden(100, 0)},
                    {labels_with_burden(95, 5), labels_with_burden(90, 10)}});
  CHECK(e.rmse == doctest::Approx(std::sqrt((0.0009 + 0.0025) / 2)));
  CHECK(e.max == doctest::Approx(0.05));
  e = tumor_burden({{labels_with_burden(90, 10), labels_with_burden(90, 10)}});
  CHECK(e.rmse == 0.0);
  CHECK(e.max == 0.0);
  CHECK_THROWS_AS(tumor_burden(labels_with_burden(0, 0)), Error);
}

TEST_CASE("evaluate, aggregate and CSV") {
  LabelVolume gt({10, 10, 10}, {2, 1, 1}, 0);
  gt.id = "c1";
  for (int z = 2; z < 8; ++z)
    for (int y = 2; y < 8; ++y)
      for (int x = 2; x < 8; ++x) gt(z, y, x) = kLiver;
  gt(4, 4, 4) = kTumor;
  LabelVolume pred = gt;
  auto c1 = evaluate_case(pred, gt);
  CHECK(c1.liver.dice == 1.0);
  CHECK(c1.lesion.dice == 1.0);
  CHECK(c1.liver.assd == 0.0);
  CHECK(c1.burden_gt == doctest::Approx(1.0 / 216));

  // Second case: ground truth without tumor, prediction with one.
  LabelVolume gt2 = gt;
  gt2.id = "c2";
  gt2(4, 4, 4) = kLiver;
  auto c2 = evaluate_case(pred, gt2);
  CHECK(c2.lesion_gt_empty);
  CHECK(c2.lesion.dice == 0.0);
  CHECK(std::isnan(c2.lesion.rvd));
  CHECK(std::isnan(c2.lesion.assd));

  const auto report = aggregate({c1, c2});
  CHECK(report.lesion.dice == 1.0);  // only the case with a GT lesion
  CHECK(report.lesion.dice_per_case == doctest::Approx(0.5));
  CHECK(report.liver.dice_global == 1.0);
  CHECK(report.burden_rmse == doctest::Approx(std::sqrt(0.5) / 216));

  lt::TempDir dir;
  const auto path = dir.path() / "metrics.csv";
  write_metrics_csv(report, path);
  std::ifstream f(path);
  std::string header, line;
  std::getline(f, header);
  CHECK(header ==
        "case,organ,voe,dice global,dice,rmsd,rvd,assd,jaccard,dice_per_case,msd,"
        "recall,precision_greater_zero,precision,recall_greater_zero,rmse,max");
  int rows = 0;
  bool saw_nan = false;
  while (std::getline(f, line)) {
    ++rows;
    saw_nan = saw_nan || line.find(",nan") != std::string::npos;
    CHECK(std::count(line.begin(), line.end(), ',') == 16);
  }
  CHECK(rows == 6);
  CHECK(saw_nan);

  CHECK_THROWS_AS(evaluate_case(pred, LabelVolume({10, 10, 9}, {1, 1, 1}, 0)), Error);
}
