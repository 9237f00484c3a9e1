#pragma once

#include "litseg/volume.hpp"

#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace litseg {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// 2|P∩G| / (|P|+|G|); both empty gives 1.
double dice_binary(const Mask3D& p, const Mask3D& g);

struct OverlapMetrics {
  double voe = 0;
  double jaccard = 0;
  double rvd = 0;  // NaN when G is empty
};

OverlapMetrics overlap_metrics(const Mask3D& p, const Mask3D& g);

struct SurfaceDistances {
  double assd = 0;
  double msd = 0;   // Hausdorff
  double rmsd = 0;
};

/// Mask voxels with a 6-neighbour outside the mask (or outside the grid).
Mask3D border_voxels(const Mask3D& mask);

/// Exact Euclidean distance (mm) from every voxel centre to the nearest set
/// voxel, with anisotropic spacing; +inf everywhere when the set is empty.
Volume<double> distance_to_set(const Mask3D& set);

/// Symmetric distances between the border voxel centres of p and g, in mm
/// using p.spacing. Throws EmptyMask if either mask is empty.
SurfaceDistances surface_distances(const Mask3D& p, const Mask3D& g);

struct DiceScores {
  double global = 0;
  double per_case = 0;
};

DiceScores dice_scores(const std::vector<std::pair<Mask3D, Mask3D>>& cases);

/// Best overlap of one ground-truth lesion with any predicted component.
struct LesionMatch {
  int gt_id = 0;
  std::optional<int> pred_id;
  double overlap = 0;  // |GT ∩ Pred| / |GT|
};

struct LesionCounts {
  int gt_total = 0;
  int gt_detected = 0;
  int pred_total = 0;
  int pred_true = 0;

  double recall() const { return gt_total ? double(gt_detected) / gt_total : kNaN; }
  double precision() const { return pred_total ? double(pred_true) / pred_total : kNaN; }
  LesionCounts& operator+=(const LesionCounts& o);
};

struct LesionDetection {
  LesionCounts at_threshold;   // overlap > threshold
  LesionCounts greater_zero;   // any overlap
  std::vector<LesionMatch> matches;
};

/// Lesions are 26-connected components. A GT lesion is detected when some
/// predicted component covers more than `threshold` of it; a predicted
/// component is a true positive when more than `threshold` of it lies in a
/// single GT lesion.
LesionDetection lesion_detection(const Mask3D& p, const Mask3D& g, double threshold = 0.5);

struct BurdenError {
  double rmse = 0;
  double max = 0;
};

/// Tumor volume over liver-region (label >= 1) volume.
double tumor_burden(const LabelVolume& labels);

/// Throws EmptyLiver when a ground-truth liver region is empty.
BurdenError tumor_burden(const std::vector<std::pair<LabelVolume, LabelVolume>>& cases);

struct OrganMetrics {
  double voe = kNaN;
  double dice_global = kNaN;
  double dice = kNaN;
  double rmsd = kNaN;
  double rvd = kNaN;
  double assd = kNaN;
  double jaccard = kNaN;
  double dice_per_case = kNaN;
  double msd = kNaN;
};

struct CaseMetrics {
  std::string id;
  OrganMetrics liver;
  OrganMetrics lesion;
  // Dice ingredients for global aggregation.
  double liver_intersection = 0, liver_volume_sum = 0;
  double lesion_intersection = 0, lesion_volume_sum = 0;
  bool lesion_gt_empty = true;
  LesionCounts detection;
  LesionCounts detection_greater_zero;
  double burden_pred = 0;
  double burden_gt = 0;  // NaN when the ground-truth liver is empty
};

struct MetricsReport {
  std::vector<CaseMetrics> cases;
  OrganMetrics liver;
  OrganMetrics lesion;
  double recall = kNaN;
  double precision = kNaN;
  double precision_greater_zero = kNaN;
  double recall_greater_zero = kNaN;
  double burden_rmse = kNaN;
  double burden_max = kNaN;
};

/// pred and gt must share shape; spacing is taken from gt.
CaseMetrics evaluate_case(const LabelVolume& pred, const LabelVolume& gt);

/// Summary row: dice global pools voxels over cases; dice_per_case averages
/// per-case dice over all cases; dice averages over cases whose ground
/// truth is non-empty; distance and volume metrics average over cases where
/// they are defined; lesion detection pools lesion counts.
MetricsReport aggregate(std::vector<CaseMetrics> cases);

/// One row per case and organ, then one summary row per organ.
std::string metrics_csv(const MetricsReport& report);
void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace litseg
