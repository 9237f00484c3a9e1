#include <doctest.h>

#include "litseg/bounded_queue.hpp"
#include "litseg/checkpoint.hpp"
#include "litseg/error.hpp"
#include "litseg/training.hpp"
#include "litseg/volumes.hpp"
#include "support/tempdir.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <thread>

using namespace litseg;

namespace {

std::vector<TrainingCase> phantoms(int n, std::uint64_t seed, Shape3 shape = {16, 32, 32}) {
  std::vector<TrainingCase> v;
  for (int i = 0; i < n; ++i) {
    auto [ct, labels] = generate_phantom(seed + std::uint64_t(i), shape, 1);
    v.push_back({std::move(ct), std::move(labels)});
  }
  return v;
}

TrainConfig small_config(Target t) {
  auto c = desk_train_config(t);
  c.iters_train_per_epoch = 6;
  c.iters_val_per_epoch = 2;
  c.batch_size = 2;
  c.epochs = 2;
  c.seed = 5;
  return c;
}

bool same_params(Model<float>& a, Model<float>& b) {
  for (std::size_t i = 0; i < a.params().size(); ++i)
    if (!(a.params()[i]->value == b.params()[i]->value).all()) return false;
  for (std::size_t i = 0; i < a.buffers().size(); ++i)
    if (!(*a.buffers()[i].value == *b.buffers()[i].value).all()) return false;
  return true;
}

// Liver on every slice, so every slice is eligible.
TrainingCase slab_case(int depth) {
  TrainingCase tc{CtVolume({depth, 16, 16}, {1, 1, 1}, 0.0f), LabelVolume({depth, 16, 16}, {1, 1, 1}, 0)};
  for (int z = 0; z < depth; ++z) tc.labels(z, 8, 8) = kLiver;
  return tc;
}

double median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + std::ptrdiff_t(v.size() / 2), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("Adam matches a scalar reference") {
  Param<float> p("w", 3, 0.0f, true);
  p.value << 0.5f, -1.0f, 2.0f;
  std::vector<Param<float>*> ps{&p};
  Adam adam(std::span<Param<float>* const>(ps), 1e-2);
  double ref[3] = {0.5, -1.0, 2.0}, m[3] = {}, v[3] = {};
  for (int t = 1; t <= 25; ++t) {
    for (int i = 0; i < 3; ++i) p.grad[i] = float(std::sin(t + i) * (i + 1));
    adam.step();
    for (int i = 0; i < 3; ++i) {
      const double g = double(float(std::sin(t + i) * (i + 1)));
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  CHECK(adam.state().step == 25);
  for (int i = 0; i < 3; ++i) CHECK(p.value[i] == doctest::Approx(ref[i]).epsilon(1e-5));
}

TEST_CASE("sampler statistics and determinism") {
  const std::vector<TrainingCase> cases{slab_case(10), slab_case(30)};
  const auto cfg = desk_train_config(Target::Liver);
  BatchSampler s(cases, cfg, 1);
  CHECK(s.eligible_count() == 40);
  std::map<int, int> hits;
  for (const auto& [c, z] : s.draw(10000)) ++hits[c];
  CHECK(s.samples_drawn() == 10000);
  const double ratio = double(hits[1]) / hits[0];
  CHECK(ratio > 3.0 * 0.95);
  CHECK(ratio < 3.0 * 1.05);

  BatchSampler a(cases, cfg, 9), b(cases, cfg, 9);
  CHECK(a.draw(500) == b.draw(500));

  // A depth-1 volume has exactly one eligible slice.
  const std::vector<TrainingCase> one{slab_case(1)};
  BatchSampler single(one, cfg, 3);
  for (const auto& r : single.draw(20)) CHECK(r == SliceRef{0, 0});

  const std::vector<TrainingCase> none{TrainingCase{CtVolume({4, 16, 16}, {1, 1, 1}, 0.0f),
                                                    LabelVolume({4, 16, 16}, {1, 1, 1}, 0)}};
  CHECK_THROWS_AS(BatchSampler(none, cfg, 1), Error);
}

TEST_CASE("batches carry per-target inputs, targets and weights") {
  const auto cases = phantoms(2, 40);
  BatchSampler liver(cases, desk_train_config(Target::Liver), 2);
  const auto lb = liver.sample_batch(3);
  CHECK(lb.input.shape_string() == Tensor<float>(3, 1, 16, 16).shape_string());
  CHECK(lb.target.size() == 3 * 32 * 32);
  CHECK((lb.weights >= 1.0f).all());
  CHECK(lb.target.maxCoeff() <= 1);

  BatchSampler tumor(cases, desk_train_config(Target::Tumor), 2);
  const auto refs = tumor.draw(4);
  const auto tb = tumor.assemble(refs);
  CHECK(tb.input.c == 3);
  CHECK(tb.input.h == 32);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& lab = cases[std::size_t(refs[i].first)].labels;
    const auto slice = lab.slice(refs[i].second);
    for (int p = 0; p < 32 * 32; ++p) {
      const bool tumor_px = slice(p / 32, p % 32) == kTumor;
      CHECK(tb.target[Eigen::Index(i) * 1024 + p] == tumor_px);
      CHECK(tb.weights[Eigen::Index(i) * 1024 + p] == (tumor_px ? 10.0f : 1.0f));
    }
  }
}

TEST_CASE("epoch consumes iterations times batch size") {
  const auto cases = phantoms(2, 50);
  auto cfg = small_config(Target::Liver);
  cfg.iters_train_per_epoch = 7;
  cfg.batch_size = 3;
  cfg.iters_val_per_epoch = 0;
  Trainer t(cfg, cases, cases);
  const auto r = t.run_epoch();
  CHECK(r.train_samples == 21);
  CHECK(t.train_sampler().samples_drawn() == 21);
  CHECK(r.val_samples == 0);
  CHECK(std::isnan(r.val_loss));
  CHECK(std::isnan(r.val_dice));
  CHECK(std::isfinite(r.train_loss));
}

TEST_CASE("validation never changes parameters") {
  const auto cases = phantoms(3, 60);
  auto with_val = small_config(Target::Tumor);
  auto without = with_val;
  without.iters_val_per_epoch = 0;
  Trainer a(with_val, cases, cases), b(without, cases, cases);
  for (int e = 0; e < 2; ++e) {
    const auto ra = a.run_epoch();
    const auto rb = b.run_epoch();
    CHECK(ra.train_loss == rb.train_loss);
    CHECK(ra.val_samples == std::uint64_t(with_val.iters_val_per_epoch * with_val.batch_size));
    CHECK(same_params(a.model(), b.model()));
  }
}

TEST_CASE("training is deterministic with and without prefetch") {
  const auto cases = phantoms(2, 70);
  auto cfg = small_config(Target::Liver);
  auto sync = cfg;
  sync.prefetch_capacity = 0;
  Trainer a(cfg, cases, cases), b(cfg, cases, cases), c(sync, cases, cases);
  for (int e = 0; e < 2; ++e) {
    const auto ra = a.run_epoch(), rb = b.run_epoch(), rc = c.run_epoch();
    CHECK(ra.train_loss == rb.train_loss);
    CHECK(ra.train_loss == rc.train_loss);
    CHECK(ra.val_dice == rc.val_dice);
  }
  CHECK(same_params(a.model(), c.model()));
}

TEST_CASE("resume continues exactly where an unbroken run would be") {
  const auto cases = phantoms(2, 80);
  const auto cfg = small_config(Target::Tumor);
  testing::TempDir dir;
  Trainer unbroken(cfg, cases, cases);
  unbroken.run_epoch();
  const auto last = unbroken.run_epoch();

  Trainer first(cfg, cases, cases);
  first.run_epoch();
  save_checkpoint(first.capture(), dir.path() / "mid.ckpt");
  Trainer second(cfg, cases, cases);
  second.restore(load_checkpoint(dir.path() / "mid.ckpt"));
  CHECK(second.epochs_done() == 1);
  const auto resumed = second.run_epoch();
  CHECK(resumed.epoch == 2);
  CHECK(resumed.train_loss == last.train_loss);
  CHECK(resumed.val_loss == last.val_loss);
  CHECK(same_params(unbroken.model(), second.model()));
  CHECK(second.optimizer().state().step == unbroken.optimizer().state().step);
}

TEST_CASE("checkpoint round trip and corruption") {
  const auto cases = phantoms(1, 90);
  const auto cfg = small_config(Target::Liver);
  Trainer t(cfg, cases, cases);
  t.run_epoch();
  testing::TempDir dir;
  const auto path = dir.path() / "a.ckpt";
  save_checkpoint(t.capture(), path);
  const auto ck = load_checkpoint(path);
  CHECK(ck.config == cfg);
  auto model = ck.build_model();
  CHECK(same_params(*model, t.model()));

  // Truncated and foreign files.
  std::string bytes;
  {
    std::ifstream f(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(f), {});
  }
  {
    std::ofstream f(dir.path() / "cut.ckpt", std::ios::binary);
    f.write(bytes.data(), std::streamsize(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "cut.ckpt"), Error);
  {
    std::ofstream f(dir.path() / "junk.ckpt", std::ios::binary);
    f << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "junk.ckpt"), Error);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.ckpt"), Error);

  // Architecture mismatch.
  Model<float> other(tiny_tumor_spec(), 1);
  CHECK_THROWS_AS(ck.apply_to(other), Error);
}

TEST_CASE("train_model writes logs and checkpoints, and resumes numbering") {
  const auto cases = phantoms(2, 100);
  auto cfg = small_config(Target::Liver);
  testing::TempDir dir;
  auto r = train_model(cfg, cases, cases, dir.path());
  CHECK(r.epochs.size() == 2);
  CHECK(std::filesystem::exists(r.best_checkpoint));
  CHECK(std::filesystem::exists(r.final_checkpoint));

  cfg.epochs = 3;
  r = train_model(cfg, cases, cases, dir.path(), true);
  REQUIRE(r.epochs.size() == 1);
  CHECK(r.epochs[0].epoch == 3);
  std::ifstream f(dir.path() / "epochs.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(f, line)) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "epoch,train_loss,val_loss,val_dice,seconds");
  CHECK(lines[3].rfind("3,", 0) == 0);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  const auto cases = phantoms(1, 110);
  Trainer t(small_config(Target::Liver), cases, cases);
  t.model().params()[0]->value.setConstant(std::numeric_limits<float>::quiet_NaN());
  try {
    t.run_epoch();
    FAIL("expected NonfiniteLoss");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonfiniteLoss);
    CHECK(std::string(e.what()).find("iteration 1") != std::string::npos);
  }
}

TEST_CASE("desk-scale loss trends downward over 200 iterations") {
  const auto cases = phantoms(4, 120, {16, 64, 64});
  auto cfg = desk_train_config(Target::Liver);
  cfg.iters_train_per_epoch = 1;
  cfg.iters_val_per_epoch = 0;
  cfg.seed = 3;
  Trainer t(cfg, cases, cases);
  std::vector<double> losses;
  for (int i = 0; i < 200; ++i) losses.push_back(t.run_epoch().train_loss);
  const double head = median({losses.begin(), losses.begin() + 50});
  const double tail = median({losses.end() - 50, losses.end()});
  CHECK(tail < head);
}

TEST_CASE("bounded queue hands items over in order and unblocks on close") {
  BoundedQueue<int> q(2);
  std::thread producer([&] {
    for (int i = 0; i < 100; ++i) q.push(i);
    q.close();
  });
  int expected = 0;
  while (auto v = q.pop()) CHECK(*v == expected++);
  producer.join();
  CHECK(expected == 100);
  CHECK(!q.push(1));
}
