#include "litseg/metrics.hpp"

#include "litseg/error.hpp"
#include "litseg/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace litseg {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_same_shape(const Mask3D& p, const Mask3D& g) {
  if (!(p.shape == g.shape)) throw Error(ErrorCode::ShapeMismatch, "masks differ in shape");
}

double count(const Mask3D& m) { return double(m.data.count()); }

// Lower envelope of parabolas along one line (Felzenszwalb & Huttenlocher),
// with squared sample spacing folded in.
void distance_1d(const std::vector<double>& f, double spacing, std::vector<double>& d, std::vector<int>& v,
                 std::vector<double>& z) {
  const int n = int(f.size());
  const double s2 = spacing * spacing;
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    if (k < 0) {
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      k = 0;
      continue;
    }
    auto meet = [&](int r) { return ((f[q] + s2 * q * q) - (f[r] + s2 * double(r) * r)) / (2.0 * s2 * (q - r)); };
    double s = meet(v[std::size_t(k)]);
    while (s <= z[std::size_t(k)]) {  // z[0] is -inf, so this stops at k = 0
      --k;
      s = meet(v[std::size_t(k)]);
    }
    ++k;
    v[std::size_t(k)] = q;
    z[std::size_t(k)] = s;
    z[std::size_t(k) + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  int j = 0;
  for (int p = 0; p < n; ++p) {
    while (z[std::size_t(j) + 1] < p) ++j;
    const double dp = spacing * (p - v[std::size_t(j)]);
    d[std::size_t(p)] = dp * dp + f[std::size_t(v[std::size_t(j)])];
  }
}

std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

double mean_finite(const std::vector<double>& values) {
  double sum = 0;
  int n = 0;
  for (double v : values)
    if (std::isfinite(v)) {
      sum += v;
      ++n;
    }
  return n ? sum / n : kNaN;
}

}  // namespace

double dice_binary(const Mask3D& p, const Mask3D& g) {
  check_same_shape(p, g);
  const double denom = count(p) + count(g);
  if (denom == 0) return 1.0;
  return 2.0 * double((p.data && g.data).count()) / denom;
}

OverlapMetrics overlap_metrics(const Mask3D& p, const Mask3D& g) {
  check_same_shape(p, g);
  const double inter = double((p.data && g.data).count());
  const double uni = double((p.data || g.data).count());
  OverlapMetrics m;
  m.jaccard = uni == 0 ? 1.0 : inter / uni;
  m.voe = 1.0 - m.jaccard;
  m.rvd = count(g) == 0 ? kNaN : (count(p) - count(g)) / count(g);
  return m;
}

Mask3D border_voxels(const Mask3D& mask) {
  if (mask.data.count() == 0) return mask;
  Mask3D out = mask;
  out.data = mask.data && !binary_erode(mask, StructuringElement::Cross6, 1).data;
  return out;
}

Volume<double> distance_to_set(const Mask3D& set) {
  Volume<double> d = set.like<double>(kInf);
  for (Eigen::Index i = 0; i < d.data.size(); ++i)
    if (set.data[i]) d.data[i] = 0.0;
  const Shape3& s = set.shape;
  const int longest = std::max({s.x, s.y, s.z});
  std::vector<double> f, out;
  std::vector<int> v(static_cast<std::size_t>(longest));
  std::vector<double> z(static_cast<std::size_t>(longest) + 1);

  auto pass = [&](int len, double spacing, auto&& at) {
    f.resize(std::size_t(len));
    out.resize(std::size_t(len));
    v.resize(std::size_t(len));
    z.resize(std::size_t(len) + 1);
    for (int i = 0; i < len; ++i) f[std::size_t(i)] = at(i);
    distance_1d(f, spacing, out, v, z);
    for (int i = 0; i < len; ++i) at(i) = out[std::size_t(i)];
  };
  for (int zz = 0; zz < s.z; ++zz)
    for (int yy = 0; yy < s.y; ++yy) pass(s.x, set.spacing.x, [&](int i) -> double& { return d(zz, yy, i); });
  for (int zz = 0; zz < s.z; ++zz)
    for (int xx = 0; xx < s.x; ++xx) pass(s.y, set.spacing.y, [&](int i) -> double& { return d(zz, i, xx); });
  for (int yy = 0; yy < s.y; ++yy)
    for (int xx = 0; xx < s.x; ++xx) pass(s.z, set.spacing.z, [&](int i) -> double& { return d(i, yy, xx); });
  d.data = d.data.sqrt();
  return d;
}

SurfaceDistances surface_distances(const Mask3D& p, const Mask3D& g) {
  check_same_shape(p, g);
  if (p.data.count() == 0 || g.data.count() == 0)
    throw Error(ErrorCode::EmptyMask, "surface distances need two non-empty masks");
  Mask3D pb = border_voxels(p), gb = border_voxels(g);
  gb.spacing = pb.spacing = p.spacing;
  const Volume<double> to_g = distance_to_set(gb);
  const Volume<double> to_p = distance_to_set(pb);
  double sum = 0, sum_sq = 0, max = 0;
  std::size_t n = 0;
  auto gather = [&](const Mask3D& from, const Volume<double>& dist) {
    for (Eigen::Index i = 0; i < from.data.size(); ++i) {
      if (!from.data[i]) continue;
      const double d = dist.data[i];
      sum += d;
      sum_sq += d * d;
      max = std::max(max, d);
      ++n;
    }
  };
  gather(pb, to_g);
  gather(gb, to_p);
  return {sum / double(n), max, std::sqrt(sum_sq / double(n))};
}

DiceScores dice_scores(const std::vector<std::pair<Mask3D, Mask3D>>& cases) {
  if (cases.empty()) throw Error(ErrorCode::InvalidCount, "dice_scores needs at least one case");
  double inter = 0, total = 0, per_case = 0;
  for (const auto& [p, g] : cases) {
    check_same_shape(p, g);
    inter += double((p.data && g.data).count());
    total += count(p) + count(g);
    per_case += dice_binary(p, g);
  }
  return {total == 0 ? 1.0 : 2.0 * inter / total, per_case / double(cases.size())};
}

LesionCounts& LesionCounts::operator+=(const LesionCounts& o) {
  gt_total += o.gt_total;
  gt_detected += o.gt_detected;
  pred_total += o.pred_total;
  pred_true += o.pred_true;
  return *this;
}

LesionDetection lesion_detection(const Mask3D& p, const Mask3D& g, double threshold) {
  check_same_shape(p, g);
  const Components gc = label_components(g, Connectivity::TwentySix);
  const Components pc = label_components(p, Connectivity::TwentySix);
  std::map<std::pair<int, int>, std::size_t> inter;
  for (Eigen::Index i = 0; i < gc.labels.data.size(); ++i) {
    const int a = gc.labels.data[i], b = pc.labels.data[i];
    if (a > 0 && b > 0) ++inter[{a, b}];
  }
  const int n_gt = int(gc.sizes.size()), n_pred = int(pc.sizes.size());
  std::vector<double> best_gt(std::size_t(n_gt), 0.0), best_pred(std::size_t(n_pred), 0.0);
  LesionDetection out;
  out.matches.resize(std::size_t(n_gt));
  for (int i = 0; i < n_gt; ++i) out.matches[std::size_t(i)].gt_id = i + 1;
  for (const auto& [key, n] : inter) {
    const auto [a, b] = key;
    const double frac_gt = double(n) / double(gc.sizes[std::size_t(a - 1)]);
    const double frac_pred = double(n) / double(pc.sizes[std::size_t(b - 1)]);
    auto& m = out.matches[std::size_t(a - 1)];
    if (frac_gt > m.overlap) {
      m.overlap = frac_gt;
      m.pred_id = b;
    }
    best_gt[std::size_t(a - 1)] = std::max(best_gt[std::size_t(a - 1)], frac_gt);
    best_pred[std::size_t(b - 1)] = std::max(best_pred[std::size_t(b - 1)], frac_pred);
  }
  auto counts = [&](double t) {
    LesionCounts c;
    c.gt_total = n_gt;
    c.pred_total = n_pred;
    c.gt_detected = int(std::count_if(best_gt.begin(), best_gt.end(), [t](double f) { return f > t; }));
    c.pred_true = int(std::count_if(best_pred.begin(), best_pred.end(), [t](double f) { return f > t; }));
    return c;
  };
  out.at_threshold = counts(threshold);
  out.greater_zero = counts(0.0);
  return out;
}

double tumor_burden(const LabelVolume& labels) {
  const double liver = double((labels.data >= kLiver).count());
  if (liver == 0) throw Error(ErrorCode::EmptyLiver, labels.id + " has an empty liver region");
  return double((labels.data == kTumor).count()) / liver;
}

namespace {
double burden_or_zero(const LabelVolume& labels) {
  return (labels.data >= kLiver).any() ? tumor_burden(labels) : 0.0;
}
}  // namespace

BurdenError tumor_burden(const std::vector<std::pair<LabelVolume, LabelVolume>>& cases) {
  if (cases.empty()) throw Error(ErrorCode::InvalidCount, "tumor_burden needs at least one case");
  double sum_sq = 0, max = 0;
  for (const auto& [pred, gt] : cases) {
    const double diff = burden_or_zero(pred) - tumor_burden(gt);
    sum_sq += diff * diff;
    max = std::max(max, std::abs(diff));
  }
  return {std::sqrt(sum_sq / double(cases.size())), max};
}

namespace {

OrganMetrics organ_metrics(const Mask3D& p, const Mask3D& g, double& inter, double& volume_sum) {
  OrganMetrics m;
  inter = double((p.data && g.data).count());
  volume_sum = count(p) + count(g);
  m.dice = dice_binary(p, g);
  m.dice_global = m.dice;
  m.dice_per_case = m.dice;
  const auto o = overlap_metrics(p, g);
  m.voe = o.voe;
  m.jaccard = o.jaccard;
  m.rvd = o.rvd;
  const bool pe = p.data.count() == 0, ge = g.data.count() == 0;
  if (!pe && !ge) {
    const auto s = surface_distances(p, g);
    m.assd = s.assd;
    m.msd = s.msd;
    m.rmsd = s.rmsd;
  } else if (pe && ge) {
    m.assd = m.msd = m.rmsd = 0.0;
  }
  return m;
}

}  // namespace

CaseMetrics evaluate_case(const LabelVolume& pred, const LabelVolume& gt) {
  if (!(pred.shape == gt.shape)) throw Error(ErrorCode::ShapeMismatch, gt.id + ": prediction shape differs");
  LabelVolume p = pred;
  p.spacing = gt.spacing;
  CaseMetrics c;
  c.id = gt.id;
  const Mask3D pl = liver_region(p), gl = liver_region(gt);
  const Mask3D pt = tumor_region(p), gt_t = tumor_region(gt);
  c.liver = organ_metrics(pl, gl, c.liver_intersection, c.liver_volume_sum);
  c.lesion = organ_metrics(pt, gt_t, c.lesion_intersection, c.lesion_volume_sum);
  c.lesion_gt_empty = gt_t.data.count() == 0;
  const auto det = lesion_detection(pt, gt_t, 0.5);
  c.detection = det.at_threshold;
  c.detection_greater_zero = det.greater_zero;
  c.burden_gt = (gt.data >= kLiver).any() ? tumor_burden(gt) : kNaN;
  c.burden_pred = burden_or_zero(p);
  return c;
}

MetricsReport aggregate(std::vector<CaseMetrics> cases) {
  MetricsReport r;
  r.cases = std::move(cases);
  if (r.cases.empty()) return r;

  auto summarize = [&](auto organ, auto inter, auto vol, bool lesion) {
    OrganMetrics s;
    double i_sum = 0, v_sum = 0;
    std::vector<double> voe, rmsd, rvd, assd, jac, dpc, msd, dice_nonempty;
    for (const auto& c : r.cases) {
      const OrganMetrics& m = c.*organ;
      i_sum += c.*inter;
      v_sum += c.*vol;
      voe.push_back(m.voe);
      rmsd.push_back(m.rmsd);
      rvd.push_back(m.rvd);
      assd.push_back(m.assd);
      jac.push_back(m.jaccard);
      dpc.push_back(m.dice_per_case);
      msd.push_back(m.msd);
      const bool gt_empty = lesion ? c.lesion_gt_empty : false;
      if (!gt_empty) dice_nonempty.push_back(m.dice);
    }
    s.dice_global = v_sum == 0 ? 1.0 : 2.0 * i_sum / v_sum;
    s.dice = mean_finite(dice_nonempty);
    s.voe = mean_finite(voe);
    s.rmsd = mean_finite(rmsd);
    s.rvd = mean_finite(rvd);
    s.assd = mean_finite(assd);
    s.jaccard = mean_finite(jac);
    s.dice_per_case = mean_finite(dpc);
    s.msd = mean_finite(msd);
    return s;
  };
  r.liver = summarize(&CaseMetrics::liver, &CaseMetrics::liver_intersection, &CaseMetrics::liver_volume_sum, false);
  r.lesion = summarize(&CaseMetrics::lesion, &CaseMetrics::lesion_intersection, &CaseMetrics::lesion_volume_sum, true);

  LesionCounts at, gz;
  double sum_sq = 0, max = 0;
  int n_burden = 0;
  for (const auto& c : r.cases) {
    at += c.detection;
    gz += c.detection_greater_zero;
    if (std::isnan(c.burden_gt)) continue;
    const double diff = c.burden_pred - c.burden_gt;
    sum_sq += diff * diff;
    max = std::max(max, std::abs(diff));
    ++n_burden;
  }
  r.recall = at.recall();
  r.precision = at.precision();
  r.recall_greater_zero = gz.recall();
  r.precision_greater_zero = gz.precision();
  if (n_burden) {
    r.burden_rmse = std::sqrt(sum_sq / n_burden);
    r.burden_max = max;
  }
  return r;
}

std::string metrics_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "case,organ,voe,dice global,dice,rmsd,rvd,assd,jaccard,dice_per_case,msd,"
         "recall,precision_greater_zero,precision,recall_greater_zero,rmse,max\n";
  auto organ_cells = [&](const OrganMetrics& m) {
    for (double v : {m.voe, m.dice_global, m.dice, m.rmsd, m.rvd, m.assd, m.jaccard, m.dice_per_case, m.msd})
      out << ',' << format_value(v);
  };
  for (const auto& c : report.cases) {
    out << c.id << ",liver";
    organ_cells(c.liver);
    out << ",,,,,,\n";
    out << c.id << ",lesion";
    organ_cells(c.lesion);
    const double err = std::abs(c.burden_pred - c.burden_gt);
    for (double v : {c.detection.recall(), c.detection_greater_zero.precision(), c.detection.precision(),
                     c.detection_greater_zero.recall(), err, err})
      out << ',' << format_value(v);
    out << '\n';
  }
  out << "summary,liver";
  organ_cells(report.liver);
  out << ",,,,,,\n";
  out << "summary,lesion";
  organ_cells(report.lesion);
  for (double v : {report.recall, report.precision_greater_zero, report.precision, report.recall_greater_zero,
                   report.burden_rmse, report.burden_max})
    out << ',' << format_value(v);
  out << '\n';
  return out.str();
}

void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  f << metrics_csv(report);
  if (!f) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace litseg
