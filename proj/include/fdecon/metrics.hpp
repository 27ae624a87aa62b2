#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "fdecon/imaging.hpp"

namespace fdecon {

struct MatchedPair {
  std::size_t estimate = 0;  // index into the estimated point list
  std::size_t truth = 0;     // index into the ground-truth point list
  double distance_nm = 0.0;
};

struct MatchReport {
  std::size_t correct = 0;          // CD
  std::size_t false_negatives = 0;  // FN
  std::size_t false_positives = 0;  // FP
  std::vector<MatchedPair> pairs;
  double tolerance_nm = 0.0;
  // Both sets empty; the index is then reported as 1.
  bool degenerate = false;
};

struct JaccardResult {
  double index = 0.0;
  MatchReport report;
};

// Maximum-cardinality one-to-one matching at distance <= tolerance, ties
// broken by minimum total distance. JI = CD / (CD + FN + FP).
JaccardResult jaccard_index(const std::vector<Point>& estimate, const std::vector<Point>& truth, double tolerance_nm);

// Pixel support (nonzero entries of `mask`) against continuous ground truth.
// Support pixels become their centres; ground truth is reduced to one point
// per occupied pixel (the centroid of the emitters binned there).
JaccardResult jaccard_index(const Image& mask, const std::vector<Point>& truth, double tolerance_nm,
                            double pixel_size_nm);

std::vector<Point> points_from_mask(const Image& mask, double pixel_size_nm);
std::vector<Point> deduplicate_to_pixels(const std::vector<Point>& points, double pixel_size_nm);

// 10 log10(peak² / MSE); +inf when MSE = 0. Default peak is max(truth).
double psnr(const Image& estimate, const Image& truth, std::optional<double> peak = std::nullopt);

}  // namespace fdecon
