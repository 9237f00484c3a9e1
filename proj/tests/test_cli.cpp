#include <doctest.h>

#include "litseg/checkpoint.hpp"
#include "litseg/commands.hpp"
#include "litseg/error.hpp"
#include "litseg/volumes.hpp"
#include "support/tempdir.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace litseg;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LITSEG_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Untrained checkpoints are enough to exercise the plumbing.
void write_untrained(const fs::path& dir) {
  fs::create_directories(dir);
  for (Target t : {Target::Liver, Target::Tumor}) {
    auto cfg = desk_train_config(t);
    Model<float> m(cfg.network, 1);
    save_checkpoint(Checkpoint::of(cfg, m), dir / (std::string(to_string(t)) + ".ckpt"));
  }
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

}  // namespace

TEST_CASE("phantom command") {
  testing::TempDir a, b;
  PhantomArgs args{a.path(), 13, 5, {16, 32, 32}, 1};
  const auto split = cmd_phantom(args);
  CHECK(split.train.size() == 9);
  CHECK(split.validation.size() == 2);
  CHECK(split.test.size() == 2);
  CHECK(fs::exists(a.path() / "phantom_5_ct.nii.gz"));
  CHECK(fs::exists(a.path() / "phantom_17_label.nii.gz"));
  CHECK(fs::exists(a.path() / "phantom_manifest.json"));

  args.out = b.path();
  cmd_phantom(args);
  for (const auto& name : {"phantom_9_ct.nii.gz", "phantom_9_label.nii.gz", "split.json"})
    CHECK(slurp(a.path() / name) == slurp(b.path() / name));

  args.count = 0;
  CHECK_THROWS_AS(cmd_phantom(args), Error);
  CHECK(run_cli("phantom --out " + b.path().string() + "/x --count 0") == 3);
}

TEST_CASE("evaluate command") {
  testing::TempDir data, pred;
  cmd_phantom({data.path(), 3, 1, {16, 32, 32}, 1});
  for (const auto& [id, path] : label_files(data.path())) fs::copy_file(path, pred.path() / path.filename());
  const auto report = cmd_evaluate({pred.path(), data.path(), pred.path() / "report.csv", {}});
  CHECK(report.liver.dice_global == 1.0);
  CHECK(report.lesion.dice_global == 1.0);
  CHECK(report.burden_rmse == 0.0);
  CHECK(fs::exists(pred.path() / "evaluate_manifest.json"));
  const std::string csv = slurp(pred.path() / "report.csv");
  CHECK(csv.find("summary,liver,0,1,1,0,0,0,1,1,0") != std::string::npos);

  fs::remove(pred.path() / "phantom_2_label.nii.gz");
  try {
    cmd_evaluate({pred.path(), data.path(), pred.path() / "r2.csv", {}});
    FAIL("expected UnmatchedCases");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnmatchedCases);
    CHECK(std::string(e.what()).find("phantom_2") != std::string::npos);
  }
  CHECK(run_cli("evaluate --pred " + pred.path().string() + " --gt " + data.path().string() + " --out " +
                (pred.path() / "r3.csv").string()) == 3);
}

TEST_CASE("predict command") {
  testing::TempDir data, ck, out;
  cmd_phantom({data.path(), 2, 3, {16, 32, 32}, 1});
  write_untrained(ck.path());
  const std::vector<fs::path> inputs{ct_path(data.path(), "phantom_3"), ct_path(data.path(), "phantom_4")};
  const auto written = cmd_predict({ck.path() / "liver.ckpt", ck.path() / "tumor.ckpt", inputs, out.path(), true});
  REQUIRE(written.size() == 2);
  const auto labels = load_labels(written[0]);
  CHECK(labels.shape == Shape3{16, 32, 32});
  CHECK(case_id_from_path(written[0]) == "phantom_3");
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(out.path() / "overlay" / "phantom_3")) pngs += e.path().extension() == ".png";
  CHECK(pngs == 16);

  const auto side = nlohmann::json::parse(slurp(out.path() / "phantom_3.json"));
  CHECK(side["case"] == "phantom_3");
  CHECK(side["seconds"].contains("total"));
  const auto manifest = nlohmann::json::parse(slurp(out.path() / "predict_manifest.json"));
  CHECK(manifest["command"] == "predict");
  CHECK(manifest["checksums_crc32"].size() == 4);

  // Swapped checkpoints are rejected.
  CHECK_THROWS_AS(cmd_predict({ck.path() / "tumor.ckpt", ck.path() / "liver.ckpt", inputs, out.path(), false}), Error);
  CHECK(run_cli("predict --liver-ckpt " + (ck.path() / "tumor.ckpt").string() + " --tumor-ckpt " +
                (ck.path() / "liver.ckpt").string() + " --in " + inputs[0].string() + " --out " +
                out.path().string()) == 3);
}

TEST_CASE("train command and exit codes") {
  testing::TempDir data, out;
  cmd_phantom({data.path(), 4, 9, {16, 32, 32}, 1});
  const auto cfg = data.path() / "liver.cfg";
  write_file(cfg, "target = liver\ndesk_scale = true\nepochs = 1\niters_train_per_epoch = 2\niters_val_per_epoch = 1\n");
  const std::string common = " --data " + data.path().string() + " --out " + out.path().string();
  CHECK(run_cli("train --config " + cfg.string() + " --target liver" + common) == 0);
  CHECK(fs::exists(out.path() / "best.ckpt"));
  CHECK(fs::exists(out.path() / "train_manifest.json"));

  write_file(cfg, "target = liver\ndesk_scale = true\nepochs = 2\niters_train_per_epoch = 2\niters_val_per_epoch = 1\n");
  CHECK(run_cli("train --resume --config " + cfg.string() + " --target liver" + common) == 0);
  const std::string log = slurp(out.path() / "epochs.csv");
  CHECK(log.find("\n1,") != std::string::npos);
  CHECK(log.find("\n2,") != std::string::npos);

  CHECK(run_cli("train --config " + cfg.string() + common) == 2);
  CHECK(run_cli("train --target spleen" + common) == 2);
  CHECK(run_cli("frobnicate") == 2);
  write_file(cfg, "target = liver\nlearning_rate = 0.1\n");
  CHECK(run_cli("train --config " + cfg.string() + " --target liver" + common) == 2);
  write_file(cfg, "target = liver\ndesk_scale = true\nlr = 1e30\nepochs = 1\niters_train_per_epoch = 20\n");
  CHECK(run_cli("train --config " + cfg.string() + " --target liver --data " + data.path().string() + " --out " +
                (out.path() / "diverge").string()) == 4);
}

TEST_CASE("thread count honours the environment") {
  setenv("LITSEG_THREADS", "3", 1);
  CHECK(thread_count() == 3);
  setenv("LITSEG_THREADS", "zero", 1);
  CHECK(thread_count() >= 1);
  unsetenv("LITSEG_THREADS");
}
