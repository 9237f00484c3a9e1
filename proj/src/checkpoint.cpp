#include "litseg/checkpoint.hpp"

#include "litseg/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace litseg {

static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");

namespace {

constexpr char kMagic[8] = {'L', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <class T>
  void pod(const T& v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void str(const std::string& s) {
    pod(std::uint64_t(s.size()));
    buf_.append(s);
  }
  void array(const Eigen::ArrayXf& a) {
    pod(std::uint64_t(a.size()));
    buf_.append(reinterpret_cast<const char*>(a.data()), std::size_t(a.size()) * sizeof(float));
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}

  template <class T>
  T pod() {
    T v;
    need(sizeof v);
    std::memcpy(&v, buf_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string str() {
    const auto n = std::size_t(pod<std::uint64_t>());
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Eigen::ArrayXf array() {
    const auto n = std::size_t(pod<std::uint64_t>());
    need(n * sizeof(float));
    Eigen::ArrayXf a(static_cast<Eigen::Index>(n));
    std::memcpy(a.data(), buf_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
    return a;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw Error(ErrorCode::CheckpointMismatch, "checkpoint is truncated");
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

void write_named(Writer& w, const std::vector<NamedArray>& v) {
  w.pod(std::uint64_t(v.size()));
  for (const auto& a : v) {
    w.str(a.name);
    w.array(a.values);
  }
}

std::vector<NamedArray> read_named(Reader& r) {
  std::vector<NamedArray> v(std::size_t(r.pod<std::uint64_t>()));
  for (auto& a : v) {
    a.name = r.str();
    a.values = r.array();
  }
  return v;
}

}  // namespace

Checkpoint Checkpoint::of(const TrainConfig& cfg, const Model<float>& model) {
  Checkpoint ck;
  ck.config = cfg;
  for (const auto* p : model.params()) ck.params.push_back({p->name, p->value});
  for (const auto& b : model.buffers()) ck.buffers.push_back({b.name, *b.value});
  return ck;
}

void Checkpoint::apply_to(Model<float>& model) const {
  const auto& ps = model.params();
  const auto& bs = model.buffers();
  if (ps.size() != params.size() || bs.size() != buffers.size())
    throw Error(ErrorCode::CheckpointMismatch, "checkpoint holds a different architecture");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i]->name != params[i].name || ps[i]->value.size() != params[i].values.size())
      throw Error(ErrorCode::CheckpointMismatch, "parameter " + params[i].name + " does not match " + ps[i]->name);
    ps[i]->value = params[i].values;
  }
  for (std::size_t i = 0; i < bs.size(); ++i) {
    if (bs[i].name != buffers[i].name || bs[i].value->size() != buffers[i].values.size())
      throw Error(ErrorCode::CheckpointMismatch, "buffer " + buffers[i].name + " does not match " + bs[i].name);
    *bs[i].value = buffers[i].values;
  }
}

std::unique_ptr<Model<float>> Checkpoint::build_model() const {
  auto m = std::make_unique<Model<float>>(config.network, config.seed);
  apply_to(*m);
  return m;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  Writer w;
  w.pod(kMagic);
  w.pod(kVersion);
  w.str(to_config_text(ck.config));
  write_named(w, ck.params);
  write_named(w, ck.buffers);
  w.pod(std::uint8_t(ck.training.has_value()));
  if (ck.training) {
    const auto& t = *ck.training;
    w.pod(std::int32_t(t.epoch));
    w.pod(t.best_val_dice);
    w.pod(t.adam_step);
    w.pod(std::uint64_t(t.adam_m.size()));
    for (std::size_t i = 0; i < t.adam_m.size(); ++i) {
      w.array(t.adam_m[i]);
      w.array(t.adam_v[i]);
    }
    w.str(t.train_rng);
    w.str(t.val_rng);
    w.str(t.model_rng);
    w.pod(t.train_samples);
    w.pod(t.val_samples);
  }

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    f.write(w.bytes().data(), std::streamsize(w.bytes().size()));
    if (!f) throw Error(ErrorCode::IoError, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::FileNotFound, "cannot open checkpoint " + path.string());
  std::ostringstream bytes;
  bytes << f.rdbuf();
  Reader r(bytes.str());
  char magic[8];
  for (char& c : magic) c = r.pod<char>();
  if (std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw Error(ErrorCode::CheckpointMismatch, path.string() + " is not a checkpoint");
  if (const auto v = r.pod<std::uint32_t>(); v != kVersion)
    throw Error(ErrorCode::CheckpointMismatch, "unsupported checkpoint version " + std::to_string(v));
  Checkpoint ck;
  ck.config = parse_train_config(r.str(), path.string());
  ck.params = read_named(r);
  ck.buffers = read_named(r);
  if (r.pod<std::uint8_t>()) {
    TrainingState t;
    t.epoch = r.pod<std::int32_t>();
    t.best_val_dice = r.pod<double>();
    t.adam_step = r.pod<std::int64_t>();
    const auto n = std::size_t(r.pod<std::uint64_t>());
    for (std::size_t i = 0; i < n; ++i) {
      t.adam_m.push_back(r.array());
      t.adam_v.push_back(r.array());
    }
    t.train_rng = r.str();
    t.val_rng = r.str();
    t.model_rng = r.str();
    t.train_samples = r.pod<std::uint64_t>();
    t.val_samples = r.pod<std::uint64_t>();
    ck.training = std::move(t);
  }
  if (!r.done()) throw Error(ErrorCode::CheckpointMismatch, "trailing bytes in " + path.string());
  return ck;
}

}  // namespace litseg
