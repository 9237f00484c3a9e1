#include "litseg/commands.hpp"
#include "litseg/error.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

litseg::Shape3 parse_shape(const std::string& s) {
  litseg::Shape3 shape;
  char c1 = 0, c2 = 0;
  std::istringstream in(s);
  if (!(in >> shape.z >> c1 >> shape.y >> c2 >> shape.x) || c1 != ',' || c2 != ',' || !in.eof())
    throw CLI::ValidationError("--shape", "expected Z,Y,X");
  return shape;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace litseg;
  CLI::App app{"Cascaded liver and tumor segmentation of CT volumes"};
  app.require_subcommand(1);

  PhantomArgs ph;
  std::string shape = "24,64,64";
  auto* phantom = app.add_subcommand("phantom", "Generate synthetic CT/label pairs and a split file");
  phantom->add_option("--out", ph.out, "Output directory")->required();
  phantom->add_option("--count", ph.count, "Number of phantoms")->capture_default_str();
  phantom->add_option("--seed", ph.seed, "Seed of the first phantom")->capture_default_str();
  phantom->add_option("--shape", shape, "Volume shape Z,Y,X")->capture_default_str();
  phantom->add_option("--tumors", ph.tumors, "Tumors per phantom")->capture_default_str();

  TrainArgs tr;
  std::string target;
  auto* train = app.add_subcommand("train", "Train the liver or tumor model");
  train->add_option("--config", tr.config, "key = value config file (default: desk recipe)");
  train->add_option("--target", target, "liver or tumor")->required()->check(CLI::IsMember({"liver", "tumor"}));
  train->add_option("--data", tr.data, "Directory with volumes and split.json")->required();
  train->add_option("--out", tr.out, "Output directory")->required();
  train->add_flag("--resume", tr.resume, "Continue from <out>/final.ckpt");
  train->add_flag("-v,--verbose", tr.verbose, "Print one line per epoch");

  PredictArgs pr;
  auto* predict = app.add_subcommand("predict", "Run the cascade on CT volumes");
  predict->add_option("--liver-ckpt", pr.liver_checkpoint, "Liver checkpoint")->required();
  predict->add_option("--tumor-ckpt", pr.tumor_checkpoint, "Tumor checkpoint")->required();
  predict->add_option("--in", pr.inputs, "Input CT volumes")->required();
  predict->add_option("--out", pr.out, "Output directory")->required();
  predict->add_flag("--overlay", pr.overlay, "Write per-slice PNG overlays");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score predicted label volumes");
  evaluate->add_option("--pred", ev.pred, "Directory of predicted *_label.nii.gz")->required();
  evaluate->add_option("--gt", ev.gt, "Directory of ground-truth *_label.nii.gz")->required();
  evaluate->add_option("--out", ev.out, "Report CSV")->required();
  evaluate->add_option("--split", ev.split, "Only score the test ids of this split file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*phantom) {
      ph.shape = parse_shape(shape);
      const auto split = cmd_phantom(ph);
      std::cout << "wrote " << ph.count << " phantoms (split " << split.train.size() << '/'
                << split.validation.size() << '/' << split.test.size() << ") to " << ph.out.string() << '\n';
    } else if (*train) {
      tr.target = parse_target(target);
      const auto best = cmd_train(tr);
      std::cout << "best checkpoint: " << best.string() << '\n';
    } else if (*predict) {
      for (const auto& p : cmd_predict(pr)) std::cout << p.string() << '\n';
    } else if (*evaluate) {
      const auto r = cmd_evaluate(ev);
      std::cout << "liver dice global " << r.liver.dice_global << ", lesion dice global " << r.lesion.dice_global
                << " -> " << ev.out.string() << '\n';
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (e.code() == ErrorCode::NonfiniteLoss) return kNumeric;
    return e.code() == ErrorCode::InvalidConfig ? kUsage : kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
