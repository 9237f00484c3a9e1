#include "litseg/network.hpp"

namespace litseg {

void NetworkSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidSpec, msg); };
  if (in_channels < 1) fail("in_channels must be >= 1");
  if (initial_filters < 1) fail("initial_filters must be >= 1");
  if (growth_rate < 1) fail("growth_rate must be >= 1");
  if (layers_per_block < 1) fail("layers_per_block must be >= 1");
  if (n_pool < 0 || n_pool > 10) fail("n_pool must be in [0, 10]");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must be in [0, 1)");
  if (n_classes != 2) fail("only 2-class heads are supported");
}

NetworkSpec default_liver_spec() { return NetworkSpec{}; }

NetworkSpec default_tumor_spec() {
  NetworkSpec s;
  s.in_channels = 3;
  s.final_sbu = false;
  return s;
}

NetworkSpec tiny_liver_spec() {
  NetworkSpec s;
  s.initial_filters = 8;
  s.growth_rate = 2;
  s.n_pool = 2;
  return s;
}

NetworkSpec tiny_tumor_spec() {
  NetworkSpec s = tiny_liver_spec();
  s.in_channels = 3;
  s.final_sbu = false;
  return s;
}

const char* to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::InitConv: return "InitConv";
    case BlockKind::DenseBlock: return "DenseBlock";
    case BlockKind::TD: return "TD";
    case BlockKind::Bottleneck: return "Bottleneck";
    case BlockKind::TU: return "TU";
    case BlockKind::SBU: return "SBU";
    case BlockKind::Head: return "Head";
  }
  return "?";
}

LayerPlan plan_network(const NetworkSpec& spec) {
  spec.validate();
  const int block_growth = spec.layers_per_block * spec.growth_rate;
  LayerPlan plan;
  double scale = 1.0;
  int c = spec.initial_filters;
  plan.push_back({BlockKind::InitConv, spec.in_channels, c, scale});
  for (int i = 0; i < spec.n_pool; ++i) {
    plan.push_back({BlockKind::DenseBlock, c, c + block_growth, scale, true});
    c += block_growth;
    scale /= 2;
    plan.push_back({BlockKind::TD, c, c, scale});
  }
  plan.push_back({BlockKind::Bottleneck, c, c + block_growth, scale, true});
  c += block_growth;
  for (int i = 0; i < spec.n_pool; ++i) {
    scale *= 2;
    plan.push_back({BlockKind::TU, c, block_growth, scale});
    plan.push_back({BlockKind::DenseBlock, block_growth, block_growth, scale, false});
    c = block_growth;
  }
  if (spec.final_sbu) {
    scale *= 2;
    plan.push_back({BlockKind::SBU, c, c, scale});
  }
  plan.push_back({BlockKind::Head, c, spec.n_classes, scale});
  return plan;
}

}  // namespace litseg
