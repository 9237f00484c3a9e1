#include <doctest.h>

#include "litseg/losses.hpp"
#include "support/gradcheck.hpp"

#include <random>
#include <vector>

using namespace litseg;
using litseg::testing::check_gradient;

namespace {

Tensor<double> two_class(const Column<double>& fg, int n, int h, int w) {
  Tensor<double> t(n, 2, h, w);
  for (int i = 0; i < n; ++i) {
    Eigen::Map<Column<double>>(t.channel(i, 1), t.plane()) = fg.segment(Eigen::Index(i) * t.plane(), t.plane());
    Eigen::Map<Column<double>>(t.channel(i, 0), t.plane()) = 1.0 - fg.segment(Eigen::Index(i) * t.plane(), t.plane());
  }
  return t;
}

struct Instance {
  Tensor<double> probs;
  ClassMap target;
  Column<double> weights;
};

// Random softmax-valued probabilities over a 1x2x4x4 batch.
Instance random_instance(std::mt19937_64& rng, int n = 1) {
  std::uniform_real_distribution<double> p(0.05, 0.95), w(0.5, 5.0);
  const Eigen::Index px = Eigen::Index(n) * 16;
  Column<double> fg(px), wt(px);
  ClassMap tg(px);
  for (Eigen::Index i = 0; i < px; ++i) {
    fg[i] = p(rng);
    wt[i] = w(rng);
    tg[i] = std::uint8_t(rng() % 2);
  }
  return {two_class(fg, n, 4, 4), tg, wt};
}

}  // namespace

TEST_CASE("weighted cross-entropy examples") {
  const auto uniform = two_class(Column<double>::Constant(16, 0.5), 1, 4, 4);
  ClassMap tg(16);
  for (int i = 0; i < 16; ++i) tg[i] = std::uint8_t(i % 3 == 0);
  Column<double> w = Column<double>::LinSpaced(16, 1.0, 7.0);
  CHECK(weighted_cross_entropy(uniform, tg, w) == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  const auto perfect = two_class(tg.cast<double>() * (1 - 2e-7) + 1e-7, 1, 4, 4);
  CHECK(weighted_cross_entropy(perfect, tg, w) < 1e-6);

  Column<double> zeros = Column<double>::Zero(16);
  CHECK_THROWS_AS(weighted_cross_entropy(uniform, tg, zeros), Error);
  CHECK_THROWS_AS(weighted_cross_entropy(uniform, ClassMap(ClassMap::Zero(15)), w), Error);
  auto bad = uniform;
  bad.data[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(weighted_cross_entropy(bad, tg, w), Error);
}

TEST_CASE("weighted cross-entropy is invariant to weight scaling") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto in = random_instance(rng, 2);
    const double a = weighted_cross_entropy(in.probs, in.target, Column<double>(Column<double>::Ones(32)));
    const double b = weighted_cross_entropy(in.probs, in.target, Column<double>(Column<double>::Constant(32, 2.0)));
    CHECK(std::abs(a - b) <= 1e-12);
    const double c = weighted_cross_entropy(in.probs, in.target, in.weights);
    const double d = weighted_cross_entropy(in.probs, in.target, Column<double>(in.weights * 37.5));
    CHECK(std::abs(c - d) <= 1e-12);
  }
}

TEST_CASE("dice coefficient examples") {
  Column<double> p(4), g(4);
  p << 1, 1, 0, 0;
  g << 1, 0, 1, 0;
  CHECK(dice_coefficient(p, g, 0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(dice_coefficient(g, g, 1e-5) == doctest::Approx(1.0));
  Column<double> q(4);
  q << 0, 0, 0, 1;
  CHECK(dice_coefficient(q, p, 1e-5) < 1e-5);
  CHECK(dice_coefficient(Column<double>(Column<double>::Zero(4)), Column<double>(Column<double>::Zero(4)), 1e-5) == 1.0);
  CHECK_THROWS_AS(dice_coefficient(p, Column<double>(Column<double>::Zero(3)), 1e-5), Error);
}

TEST_CASE("dice is bounded and symmetric for binary inputs") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    Column<double> p(16), b(16), g(16);
    for (int i = 0; i < 16; ++i) {
      p[i] = u(rng);
      b[i] = double(rng() % 2);
      g[i] = double(rng() % 2);
    }
    const double d = dice_coefficient(p, g, 1e-5);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    CHECK(dice_coefficient(b, g, 1e-5) == doctest::Approx(dice_coefficient(g, b, 1e-5)).epsilon(1e-15));
  }
}

TEST_CASE("composite tumor loss example") {
  // Dice example vectors laid out as a 1x2x2x2 batch.
  Column<double> p(4);
  p << 1, 1, 0, 0;
  ClassMap tg(4);
  tg << 1, 0, 1, 0;
  const auto uniform = two_class(Column<double>::Constant(4, 0.5), 1, 2, 2);
  std::vector<Param<double>*> none;
  LossWeights lw;
  lw.l2 = 0;
  lw.dice_epsilon = 0;
  // Binary foreground for the dice term, uniform probabilities for WCE.
  const double wce = weighted_cross_entropy(uniform, tg, Column<double>(Column<double>::Ones(4)));
  const double dice = dice_coefficient(p, binary_target(tg), 0.0);
  CHECK(0.5 * wce + 0.5 * (1 - dice) == doctest::Approx(0.5 * std::log(2.0) + 0.25).epsilon(1e-14));

  // Through tumor_total_loss both terms see the uniform map: dice = 2/3.
  const double total = tumor_total_loss(uniform, tg, Column<double>(Column<double>::Ones(4)),
                                        std::span<Param<double>* const>(none), lw);
  CHECK(total == doctest::Approx(0.5 * std::log(2.0) + 0.5 * (1 - 2.0 / 3.0)).epsilon(1e-14));
}

TEST_CASE("tumor loss with lambda 1, gamma 0 equals liver loss") {
  std::mt19937_64 rng(4);
  std::vector<Param<double>*> none;
  LossWeights lw{1.0, 0.0, 0.0, 1e-5};
  for (int trial = 0; trial < 20; ++trial) {
    const auto in = random_instance(rng, 2);
    const double a = tumor_total_loss(in.probs, in.target, in.weights, std::span<Param<double>* const>(none), lw);
    const double b = liver_total_loss(in.probs, in.target, in.weights, std::span<Param<double>* const>(none), lw);
    CHECK(std::abs(a - b) <= 1e-12);
  }
}

TEST_CASE("L2 covers conv weights only and is quadratic") {
  Conv2d<double> conv("c", 3, 4, 3);
  BatchNorm<double> bn("bn", 4);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (auto* p : {&conv.weight(), &conv.bias(), &bn.gamma(), &bn.beta()})
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value[i] = nd(rng);
  std::vector<Param<double>*> ps{&conv.weight(), &conv.bias(), &bn.gamma(), &bn.beta()};
  const std::span<Param<double>* const> span(ps);
  const double base = l2_penalty(span);
  CHECK(base == doctest::Approx(conv.weight().value.square().sum()));
  conv.weight().value *= 2;
  CHECK(l2_penalty(span) == doctest::Approx(4 * base));
  conv.weight().value.setZero();
  CHECK(l2_penalty(span) == 0.0);
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(6);
  std::vector<Param<double>*> none;
  const std::span<Param<double>* const> span(none);
  double worst_wce = 0, worst_dice = 0, worst_total = 0;
  for (int trial = 0; trial < 25; ++trial) {
    auto in = random_instance(rng);

    Tensor<double> d;
    weighted_cross_entropy(in.probs, in.target, in.weights, &d);
    auto r = check_gradient([&] { return weighted_cross_entropy(in.probs, in.target, in.weights); },
                            in.probs.data.data(), in.probs.data.size(), d.data.data());
    worst_wce = std::max(worst_wce, r.max_rel_error);

    Column<double> p = foreground(in.probs);
    const Column<double> g = binary_target(in.target);
    Column<double> dg;
    dice_coefficient(p, g, 1e-5, &dg);
    r = check_gradient([&] { return dice_coefficient(p, g, 1e-5); }, p.data(), p.size(), dg.data());
    worst_dice = std::max(worst_dice, r.max_rel_error);

    tumor_total_loss(in.probs, in.target, in.weights, span, LossWeights{}, &d);
    r = check_gradient([&] { return tumor_total_loss(in.probs, in.target, in.weights, span, LossWeights{}); },
                       in.probs.data.data(), in.probs.data.size(), d.data.data());
    worst_total = std::max(worst_total, r.max_rel_error);
  }
  CHECK(worst_wce < 1e-5);
  CHECK(worst_dice < 1e-5);
  CHECK(worst_total < 1e-5);
}

TEST_CASE("L2 gradient is accumulated into conv weights") {
  Conv2d<double> conv("c", 1, 2, 3);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  for (Eigen::Index i = 0; i < conv.weight().value.size(); ++i) conv.weight().value[i] = nd(rng);
  std::vector<Param<double>*> ps{&conv.weight(), &conv.bias()};
  conv.weight().grad.setZero();
  conv.bias().grad.setZero();
  add_l2_gradient(std::span<Param<double>* const>(ps), 0.25);
  CHECK(((conv.weight().grad - 0.5 * conv.weight().value).abs() < 1e-15).all());
  CHECK((conv.bias().grad == 0.0).all());
}
