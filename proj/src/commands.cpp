#include "litseg/commands.hpp"

#include "litseg/cascade.hpp"
#include "litseg/checkpoint.hpp"
#include "litseg/error.hpp"
#include "litseg/overlay.hpp"
#include "litseg/training.hpp"
#include "litseg/volumes.hpp"

#include <json.hpp>
#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace litseg {

namespace {

using nlohmann::json;

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string crc32_of(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return "missing";
  uLong crc = crc32(0L, Z_NULL, 0);
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof buf);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(buf), uInt(f.gcount()));
  }
  char hex[16];
  std::snprintf(hex, sizeof hex, "%08lx", crc);
  return hex;
}

void write_json_atomically(const json& j, const fs::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    f << j.dump(2) << '\n';
    if (!f) throw Error(ErrorCode::IoError, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot move " + path.string() + " into place");
}

// Collects the fields of a run manifest; written once at the end.
struct Manifest {
  json j;
  explicit Manifest(const std::string& command) {
    j["command"] = command;
    j["started"] = utc_now();
    j["inputs"] = json::array();
    j["outputs"] = json::array();
  }
  void write(const fs::path& path) {
    j["finished"] = utc_now();
    json sums = json::object();
    for (const auto& p : j["outputs"]) sums[p.get<std::string>()] = crc32_of(p.get<std::string>());
    j["checksums_crc32"] = sums;
    write_json_atomically(j, path);
  }
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

std::vector<TrainingCase> load_cases(const fs::path& dir, const std::vector<std::string>& ids) {
  std::vector<TrainingCase> out;
  const auto labels = label_files(dir);
  for (const auto& id : ids) {
    auto it = std::find_if(labels.begin(), labels.end(), [&](const auto& l) { return l.first == id; });
    if (it == labels.end()) throw Error(ErrorCode::FileNotFound, "no label file for case " + id + " in " + dir.string());
    TrainingCase tc{load_volume(ct_path(dir, id)), load_labels(it->second)};
    tc.ct.id = tc.labels.id = id;
    if (!(tc.ct.shape == tc.labels.shape)) throw Error(ErrorCode::ShapeMismatch, id + ": CT and labels differ in shape");
    out.push_back(std::move(tc));
  }
  return out;
}

template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, std::size_t(thread_count()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i, w);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

int thread_count() {
  if (const char* env = std::getenv("LITSEG_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return int(std::max(1u, std::thread::hardware_concurrency()));
}

std::vector<std::pair<std::string, fs::path>> label_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::FileNotFound, "not a directory: " + dir.string());
  std::vector<std::pair<std::string, fs::path>> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.find("_label.nii") == std::string::npos) continue;
    out.push_back({case_id_from_path(e.path()), e.path()});
  }
  std::sort(out.begin(), out.end());
  return out;
}

fs::path ct_path(const fs::path& dir, const std::string& id) {
  for (const char* ext : {"_ct.nii.gz", "_ct.nii"})
    if (fs::exists(dir / (id + ext))) return dir / (id + ext);
  throw Error(ErrorCode::FileNotFound, "no CT volume for case " + id + " in " + dir.string());
}

DatasetSplit cmd_phantom(const PhantomArgs& a) {
  if (a.count < 1) throw Error(ErrorCode::InvalidCount, "phantom count must be >= 1");
  Manifest m("phantom");
  m.j["seed"] = a.seed;
  m.j["config"] = {{"count", a.count}, {"shape", {a.shape.z, a.shape.y, a.shape.x}}, {"tumors", a.tumors}};
  ensure_dir(a.out);
  std::vector<std::string> ids;
  for (int i = 0; i < a.count; ++i) {
    const auto [ct, labels] = generate_phantom(a.seed + std::uint64_t(i), a.shape, a.tumors);
    const fs::path ctp = a.out / (ct.id + "_ct.nii.gz"), lp = a.out / (ct.id + "_label.nii.gz");
    save_volume(ct, ctp);
    save_labels(labels, lp);
    m.j["outputs"].push_back(ctp.string());
    m.j["outputs"].push_back(lp.string());
    ids.push_back(ct.id);
  }
  const auto split = make_split(ids);
  save_split(split, a.out / "split.json");
  m.j["outputs"].push_back((a.out / "split.json").string());
  m.write(a.out / "phantom_manifest.json");
  return split;
}

fs::path cmd_train(const TrainArgs& a) {
  TrainConfig cfg = a.config.empty() ? desk_train_config(a.target) : load_train_config(a.config);
  if (cfg.target != a.target)
    throw Error(ErrorCode::InvalidConfig, "config target " + std::string(to_string(cfg.target)) +
                                              " disagrees with --target " + to_string(a.target));
  Manifest m("train");
  m.j["config_path"] = a.config.string();
  m.j["config"] = to_config_text(cfg);
  m.j["seed"] = cfg.seed;
  m.j["resume"] = a.resume;
  const auto split = load_split(a.data / "split.json");
  const auto train = load_cases(a.data, split.train);
  const auto val = load_cases(a.data, split.validation);
  for (const auto& id : split.train) m.j["inputs"].push_back(id);
  for (const auto& id : split.validation) m.j["inputs"].push_back(id);
  ensure_dir(a.out);
  const auto result = train_model(cfg, train, val, a.out, a.resume, [&](const EpochReport& r) {
    if (a.verbose)
      std::cerr << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_loss " << r.val_loss << " val_dice "
                << r.val_dice << " (" << r.seconds << " s)\n";
  });
  for (const auto& p : {result.best_checkpoint, result.final_checkpoint, a.out / "epochs.csv"})
    m.j["outputs"].push_back(p.string());
  m.write(a.out / "train_manifest.json");
  return result.best_checkpoint;
}

std::vector<fs::path> cmd_predict(const PredictArgs& a) {
  const auto liver_ck = load_checkpoint(a.liver_checkpoint);
  const auto tumor_ck = load_checkpoint(a.tumor_checkpoint);
  if (liver_ck.config.target != Target::Liver || tumor_ck.config.target != Target::Tumor)
    throw Error(ErrorCode::CheckpointMismatch, "expected a liver checkpoint and a tumor checkpoint");
  Manifest m("predict");
  m.j["config"] = {{"liver_checkpoint", a.liver_checkpoint.string()},
                   {"tumor_checkpoint", a.tumor_checkpoint.string()},
                   {"overlay", a.overlay}};
  for (const auto& p : a.inputs) m.j["inputs"].push_back(p.string());
  ensure_dir(a.out);

  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(a.inputs.size(), std::size_t(thread_count())));
  std::vector<std::unique_ptr<Model<float>>> livers, tumors;
  for (std::size_t w = 0; w < workers; ++w) {
    livers.push_back(liver_ck.build_model());
    tumors.push_back(tumor_ck.build_model());
  }
  std::vector<fs::path> outputs(a.inputs.size());
  std::vector<std::vector<fs::path>> extras(a.inputs.size());
  parallel_for(a.inputs.size(), [&](std::size_t i, std::size_t w) {
    CtVolume ct = load_volume(a.inputs[i]);
    const std::string id = case_id_from_path(a.inputs[i]);
    const auto p = predict_case(ct, *livers[w], *tumors[w]);
    LabelVolume labels = p.labels;
    labels.id = id;
    outputs[i] = a.out / (id + "_label.nii.gz");
    save_labels(labels, outputs[i]);
    json side = {{"case", id},
                 {"shape", {ct.shape.z, ct.shape.y, ct.shape.x}},
                 {"seconds", {{"liver", p.seconds.liver}, {"postprocess", p.seconds.postprocess},
                              {"tumor", p.seconds.tumor}, {"total", p.seconds.total}}},
                 {"voxels", {{"liver_raw", p.liver_raw.data.count()}, {"liver_post", p.liver_post.data.count()},
                             {"tumor_raw", p.tumor_raw.data.count()}, {"tumor_final", p.tumor_final.data.count()}}},
                 {"tumor_slices", p.tumor_range.empty() ? json(nullptr) : json{p.tumor_range.lo, p.tumor_range.hi}}};
    const fs::path side_path = a.out / (id + ".json");
    write_json_atomically(side, side_path);
    extras[i].push_back(side_path);
    if (a.overlay) write_overlays(ct, labels, a.out / "overlay" / id, id);
  });
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    m.j["outputs"].push_back(outputs[i].string());
    for (const auto& e : extras[i]) m.j["outputs"].push_back(e.string());
  }
  m.write(a.out / "predict_manifest.json");
  return outputs;
}

MetricsReport cmd_evaluate(const EvaluateArgs& a) {
  Manifest m("evaluate");
  auto pred = label_files(a.pred);
  auto gt = label_files(a.gt);
  if (!a.split.empty()) {
    const auto split = load_split(a.split);
    const std::set<std::string> test(split.test.begin(), split.test.end());
    std::erase_if(gt, [&](const auto& g) { return !test.count(g.first); });
    m.j["config"] = {{"split", a.split.string()}};
  }
  std::map<std::string, fs::path> pmap(pred.begin(), pred.end());
  std::map<std::string, fs::path> gmap(gt.begin(), gt.end());
  std::vector<std::string> missing_pred, missing_gt;
  for (const auto& [id, _] : gmap)
    if (!pmap.count(id)) missing_pred.push_back(id);
  for (const auto& [id, _] : pmap)
    if (!gmap.count(id)) missing_gt.push_back(id);
  if (!missing_pred.empty() || !missing_gt.empty()) {
    std::string msg = "cases do not pair up;";
    auto list = [&](const char* what, const std::vector<std::string>& ids) {
      if (ids.empty()) return;
      msg += std::string(" ") + what + ":";
      for (const auto& id : ids) msg += " " + id;
    };
    list("no prediction for", missing_pred);
    list("no ground truth for", missing_gt);
    throw Error(ErrorCode::UnmatchedCases, msg);
  }
  if (gmap.empty()) throw Error(ErrorCode::UnmatchedCases, "no label files to evaluate");

  std::vector<std::string> ids;
  for (const auto& [id, path] : gmap) {
    ids.push_back(id);
    m.j["inputs"].push_back(pmap[id].string());
    m.j["inputs"].push_back(path.string());
  }
  std::vector<CaseMetrics> cases(ids.size());
  parallel_for(ids.size(), [&](std::size_t i, std::size_t) {
    LabelVolume p = load_labels(pmap[ids[i]]), g = load_labels(gmap[ids[i]]);
    g.id = ids[i];
    cases[i] = evaluate_case(p, g);
  });
  auto report = aggregate(std::move(cases));
  if (!a.out.parent_path().empty()) ensure_dir(a.out.parent_path());
  write_metrics_csv(report, a.out);
  m.j["outputs"].push_back(a.out.string());
  const fs::path dir = a.out.parent_path().empty() ? fs::path(".") : a.out.parent_path();
  m.write(dir / "evaluate_manifest.json");
  return report;
}

}  // namespace litseg
