#include <doctest.h>

#include "litseg/error.hpp"
#include "litseg/preprocess.hpp"

#include <random>

using namespace litseg;

namespace {

CtVolume uniform_volume(float hu, Shape3 s = {3, 4, 4}) { return CtVolume(s, {1, 1, 1}, hu); }

LabelVolume labels_with(int depth, int z0, int z1, std::uint8_t value) {
  LabelVolume l({depth, 4, 4}, {1, 1, 1}, 0);
  for (int z = z0; z <= z1; ++z) l(z, 1, 2) = value;
  return l;
}

}  // namespace

TEST_CASE("window_and_normalize examples") {
  CHECK(window_and_normalize(uniform_volume(-100), kLiverWindow).data[0] == 0.0f);
  CHECK(window_and_normalize(uniform_volume(300), kLiverWindow).data[0] == 1.0f);
  CHECK(window_and_normalize(uniform_volume(100), HuWindow(0, 100)).data[0] == 1.0f);
  CHECK(window_and_normalize(uniform_volume(100), HuWindow(-100, 400)).data[0] == doctest::Approx(0.4));
  CHECK_THROWS_AS(HuWindow(5, 5), Error);
}

TEST_CASE("window_and_normalize is monotone with range [0, 1]") {
  CtVolume v({1, 1, 200}, {1, 1, 1});
  for (int i = 0; i < 200; ++i) v(0, 0, i) = float(-1000 + 10 * i);
  const auto n = window_and_normalize(v, kLiverWindow);
  for (int i = 1; i < 200; ++i) CHECK(n(0, 0, i) >= n(0, 0, i - 1));
  CHECK(n.data.minCoeff() == 0.0f);
  CHECK(n.data.maxCoeff() == 1.0f);
}

TEST_CASE("downsample_slice") {
  const Image<float> c = Image<float>::Constant(512, 512, 0.37f);
  const auto d = downsample_slice(c);
  CHECK(d.rows() == 256);
  CHECK(d.cols() == 256);
  CHECK((d == 0.37f).all());

  Image<float> checker(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) checker(y, x) = float((x + y) % 2);
  CHECK((downsample_slice(checker) == 0.5f).all());

  CHECK_THROWS_AS(downsample_slice(Image<float>::Zero(513, 512)), Error);
}

TEST_CASE("stack_tumor_channels") {
  auto check_all = [](float hu, std::array<double, 3> expect) {
    const auto ch = stack_tumor_channels(uniform_volume(hu), 1);
    for (int c = 0; c < 3; ++c)
      for (Eigen::Index i = 0; i < ch[c].size(); ++i) CHECK(ch[c](i) == doctest::Approx(expect[c]).epsilon(1e-6));
  };
  check_all(100, {1.0, 2.0 / 3.0, 0.4});
  check_all(-100, {0, 0, 0});
  check_all(400, {1, 1, 1});
  CHECK_THROWS_AS(stack_tumor_channels(uniform_volume(0), 3), Error);
  CHECK_THROWS_AS(stack_tumor_channels(uniform_volume(0), -1), Error);
}

TEST_CASE("tumor channels are affine in one another where unclamped") {
  CtVolume v({1, 8, 8}, {1, 1, 1});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> hu(1.0f, 99.0f);  // inside all three windows
  for (Eigen::Index i = 0; i < v.data.size(); ++i) v.data[i] = hu(rng);
  const auto ch = stack_tumor_channels(v, 0);
  // c1 = (100 * c0 + 100) / 300, c2 = (100 * c0 + 100) / 500
  CHECK(((ch[1] - (100 * ch[0] + 100) / 300).abs() < 1e-5f).all());
  CHECK(((ch[2] - (100 * ch[0] + 100) / 500).abs() < 1e-5f).all());
}

TEST_CASE("liver input is windowed then halved") {
  const auto in = liver_input(uniform_volume(100, {2, 8, 6}), 0);
  CHECK(in.rows() == 4);
  CHECK(in.cols() == 3);
  CHECK((in == 0.5f).all());
}

TEST_CASE("plan_slices") {
  auto liver = plan_slices(labels_with(100, 30, 60, kLiver), Target::Liver);
  CHECK(liver.indices.front() == 20);
  CHECK(liver.indices.back() == 70);
  CHECK(liver.indices.size() == 51);

  auto tumor = plan_slices(labels_with(100, 0, 3, kTumor), Target::Tumor);
  CHECK(tumor.indices.front() == 0);
  CHECK(tumor.indices.back() == 8);

  // Tumor voxels also count as liver extent.
  auto liver_from_tumor = plan_slices(labels_with(20, 5, 5, kTumor), Target::Liver);
  CHECK(liver_from_tumor.indices.front() == 0);
  CHECK(liver_from_tumor.indices.back() == 15);

  CHECK_THROWS_AS(plan_slices(labels_with(10, 2, 4, kLiver), Target::Tumor), Error);
}

TEST_CASE("liver plan covers every liver slice") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    LabelVolume l({40, 3, 3}, {1, 1, 1}, 0);
    for (int z = 0; z < 40; ++z)
      if (rng() % 4 == 0) l(z, 1, 1) = std::uint8_t(1 + rng() % 2);
    if (!(l.data >= 1).any()) continue;
    const auto plan = plan_slices(l, Target::Liver);
    for (int z = 0; z < 40; ++z)
      if ((l.slice(z) >= 1).any())
        CHECK(std::find(plan.indices.begin(), plan.indices.end(), z) != plan.indices.end());
    CHECK(std::is_sorted(plan.indices.begin(), plan.indices.end()));
  }
}
