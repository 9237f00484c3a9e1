#include "litseg/config.hpp"

#include "litseg/error.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace litseg {

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::InvalidConfig, what);
  };
  need(batch_size >= 1, "batch_size must be >= 1");
  need(epochs >= 1, "epochs must be >= 1");
  need(iters_train_per_epoch >= 1, "iters_train_per_epoch must be >= 1");
  need(iters_val_per_epoch >= 0, "iters_val_per_epoch must be >= 0");
  need(lr > 0, "lr must be > 0");
  need(l2 >= 0 && lambda >= 0 && gamma >= 0, "l2, lambda and gamma must be >= 0");
  need(dice_epsilon >= 0, "dice_epsilon must be >= 0");
  need(prefetch_capacity >= 0, "prefetch_capacity must be >= 0");
  need(weights.edge_band >= 0 && weights.w_edge > 0 && weights.w_tumor > 0, "weight map settings out of range");
  try {
    network.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  const bool liver_shape = network.in_channels == 1 && network.final_sbu;
  const bool tumor_shape = network.in_channels == 3 && !network.final_sbu;
  need(target == Target::Liver ? liver_shape : tumor_shape,
       std::string("network shape does not fit the ") + to_string(target) + " target");
}

TrainConfig default_train_config(Target target) {
  TrainConfig c;
  c.target = target;
  c.network = target == Target::Liver ? default_liver_spec() : default_tumor_spec();
  return c;
}

TrainConfig desk_train_config(Target target) {
  TrainConfig c = default_train_config(target);
  c.desk_scale = true;
  c.iters_train_per_epoch = 50;
  c.iters_val_per_epoch = 10;
  c.network = target == Target::Liver ? tiny_liver_spec() : tiny_tumor_spec();
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
T parse_number(const std::string& v) {
  T out{};
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) throw std::invalid_argument("not a number: '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("not a boolean: '" + v + "'");
}

using Setter = std::function<void(TrainConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table{
      {"batch_size", [](TrainConfig& c, const std::string& v) { c.batch_size = parse_number<int>(v); }},
      {"epochs", [](TrainConfig& c, const std::string& v) { c.epochs = parse_number<int>(v); }},
      {"lr", [](TrainConfig& c, const std::string& v) { c.lr = parse_number<double>(v); }},
      {"l2", [](TrainConfig& c, const std::string& v) { c.l2 = parse_number<double>(v); }},
      {"iters_train_per_epoch",
       [](TrainConfig& c, const std::string& v) { c.iters_train_per_epoch = parse_number<int>(v); }},
      {"iters_val_per_epoch", [](TrainConfig& c, const std::string& v) { c.iters_val_per_epoch = parse_number<int>(v); }},
      {"seed", [](TrainConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>(v); }},
      {"prefetch_capacity", [](TrainConfig& c, const std::string& v) { c.prefetch_capacity = parse_number<int>(v); }},
      {"lambda", [](TrainConfig& c, const std::string& v) { c.lambda = parse_number<double>(v); }},
      {"gamma", [](TrainConfig& c, const std::string& v) { c.gamma = parse_number<double>(v); }},
      {"dice_epsilon", [](TrainConfig& c, const std::string& v) { c.dice_epsilon = parse_number<double>(v); }},
      {"edge_band", [](TrainConfig& c, const std::string& v) { c.weights.edge_band = parse_number<int>(v); }},
      {"w_edge", [](TrainConfig& c, const std::string& v) { c.weights.w_edge = parse_number<float>(v); }},
      {"w_tumor", [](TrainConfig& c, const std::string& v) { c.weights.w_tumor = parse_number<float>(v); }},
      {"initial_filters", [](TrainConfig& c, const std::string& v) { c.network.initial_filters = parse_number<int>(v); }},
      {"growth_rate", [](TrainConfig& c, const std::string& v) { c.network.growth_rate = parse_number<int>(v); }},
      {"layers_per_block", [](TrainConfig& c, const std::string& v) { c.network.layers_per_block = parse_number<int>(v); }},
      {"n_pool", [](TrainConfig& c, const std::string& v) { c.network.n_pool = parse_number<int>(v); }},
      {"dropout", [](TrainConfig& c, const std::string& v) { c.network.dropout_p = parse_number<double>(v); }},
  };
  return table;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text, const std::string& source) {
  struct Entry {
    int line;
    std::string value;
  };
  std::map<std::string, Entry> entries;
  std::vector<std::string> order;
  std::istringstream in(text);
  std::string raw;
  for (int line = 1; std::getline(in, raw); ++line) {
    const std::string s = trim(raw.substr(0, raw.find('#')));
    if (s.empty()) continue;
    const auto eq = s.find('=');
    auto where = [&] { return source + ":" + std::to_string(line) + ": "; };
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidConfig, where() + "expected 'key = value'");
    const std::string key = trim(s.substr(0, eq)), value = trim(s.substr(eq + 1));
    if (key != "target" && key != "desk_scale" && !setters().count(key))
      throw Error(ErrorCode::InvalidConfig, where() + "unknown key '" + key + "'");
    if (value.empty()) throw Error(ErrorCode::InvalidConfig, where() + "missing value for '" + key + "'");
    if (!entries.emplace(key, Entry{line, value}).second)
      throw Error(ErrorCode::InvalidConfig, where() + "duplicate key '" + key + "'");
    order.push_back(key);
  }

  auto fail = [&](const std::string& key, const std::string& why) {
    return Error(ErrorCode::InvalidConfig,
                 source + ":" + std::to_string(entries.at(key).line) + ": " + key + ": " + why);
  };
  Target target = Target::Liver;
  bool desk = false;
  if (entries.count("target")) {
    try {
      target = parse_target(entries.at("target").value);
    } catch (const Error&) {
      throw fail("target", "expected liver or tumor");
    }
  }
  if (entries.count("desk_scale")) {
    try {
      desk = parse_bool(entries.at("desk_scale").value);
    } catch (const std::exception& e) {
      throw fail("desk_scale", e.what());
    }
  }
  TrainConfig cfg = desk ? desk_train_config(target) : default_train_config(target);
  for (const auto& key : order) {
    if (key == "target" || key == "desk_scale") continue;
    try {
      setters().at(key)(cfg, entries.at(key).value);
    } catch (const std::exception& e) {
      throw fail(key, e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, source + ": " + e.what());
  }
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::FileNotFound, "cannot open config " + path.string());
  std::ostringstream text;
  text << f.rdbuf();
  return parse_train_config(text.str(), path.string());
}

std::string to_config_text(const TrainConfig& c) {
  std::ostringstream o;
  o << "target = " << to_string(c.target) << '\n'
    << "desk_scale = " << (c.desk_scale ? "true" : "false") << '\n'
    << "batch_size = " << c.batch_size << '\n'
    << "epochs = " << c.epochs << '\n'
    << "lr = " << fmt(c.lr) << '\n'
    << "l2 = " << fmt(c.l2) << '\n'
    << "iters_train_per_epoch = " << c.iters_train_per_epoch << '\n'
    << "iters_val_per_epoch = " << c.iters_val_per_epoch << '\n'
    << "seed = " << c.seed << '\n'
    << "prefetch_capacity = " << c.prefetch_capacity << '\n'
    << "lambda = " << fmt(c.lambda) << '\n'
    << "gamma = " << fmt(c.gamma) << '\n'
    << "dice_epsilon = " << fmt(c.dice_epsilon) << '\n'
    << "edge_band = " << c.weights.edge_band << '\n'
    << "w_edge = " << fmt(c.weights.w_edge) << '\n'
    << "w_tumor = " << fmt(c.weights.w_tumor) << '\n'
    << "initial_filters = " << c.network.initial_filters << '\n'
    << "growth_rate = " << c.network.growth_rate << '\n'
    << "layers_per_block = " << c.network.layers_per_block << '\n'
    << "n_pool = " << c.network.n_pool << '\n'
    << "dropout = " << fmt(c.network.dropout_p) << '\n';
  return o.str();
}

}  // namespace litseg
