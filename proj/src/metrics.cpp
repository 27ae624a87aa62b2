#include "fdecon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <utility>

#include "fdecon/error.hpp"
#include "fdecon/simulator.hpp"

namespace fdecon {

namespace {

double distance(const Point& a, const Point& b) { return std::hypot(a.x_nm - b.x_nm, a.y_nm - b.y_nm); }

class DisjointSets {
public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t i) {
    while (parent_[i] != i) i = parent_[i] = parent_[parent_[i]];
    return i;
  }
  void unite(std::size_t a, std::size_t b) { parent_[find(a)] = find(b); }

private:
  std::vector<std::size_t> parent_;
};

// Minimum-cost assignment of every row to a distinct column (rows <= cols),
// potentials formulation. Returns the column of each row.
std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  const std::size_t m = n == 0 ? 0 : cost[0].size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = owner[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (owner[j] != 0) assignment[owner[j] - 1] = j - 1;
  }
  return assignment;
}

// Optimal matching inside one connected component of the tolerance graph.
void match_component(const std::vector<std::size_t>& est_ids, const std::vector<std::size_t>& gt_ids,
                     const std::vector<Point>& estimate, const std::vector<Point>& truth, double tolerance,
                     std::vector<MatchedPair>& pairs) {
  const bool est_rows = est_ids.size() <= gt_ids.size();
  const auto& rows = est_rows ? est_ids : gt_ids;
  const auto& cols = est_rows ? gt_ids : est_ids;
  // Any extra match outweighs the total distance of all others.
  const double big = static_cast<double>(rows.size() + 1) * tolerance + 1.0;
  std::vector<std::vector<double>> cost(rows.size(), std::vector<double>(cols.size(), big));
  for (std::size_t a = 0; a < rows.size(); ++a) {
    for (std::size_t b = 0; b < cols.size(); ++b) {
      const double d = est_rows ? distance(estimate[rows[a]], truth[cols[b]])
                                : distance(estimate[cols[b]], truth[rows[a]]);
      if (d <= tolerance) cost[a][b] = d;
    }
  }
  const auto assignment = hungarian(cost);
  for (std::size_t a = 0; a < rows.size(); ++a) {
    const double d = cost[a][assignment[a]];
    if (d == big) continue;
    const std::size_t e = est_rows ? rows[a] : cols[assignment[a]];
    const std::size_t g = est_rows ? cols[assignment[a]] : rows[a];
    pairs.push_back(MatchedPair{e, g, d});
  }
}

}  // namespace

JaccardResult jaccard_index(const std::vector<Point>& estimate, const std::vector<Point>& truth, double tolerance_nm) {
  if (!(tolerance_nm > 0.0) || !std::isfinite(tolerance_nm)) throw InvalidArgument("tolerance must be positive");

  JaccardResult out;
  out.report.tolerance_nm = tolerance_nm;
  if (estimate.empty() && truth.empty()) {
    out.index = 1.0;
    out.report.degenerate = true;
    return out;
  }

  const std::size_t ne = estimate.size(), ng = truth.size();
  DisjointSets sets(ne + ng);
  std::vector<char> linked(ne + ng, 0);
  for (std::size_t i = 0; i < ne; ++i) {
    for (std::size_t j = 0; j < ng; ++j) {
      if (distance(estimate[i], truth[j]) <= tolerance_nm) {
        sets.unite(i, ne + j);
        linked[i] = linked[ne + j] = 1;
      }
    }
  }

  std::map<std::size_t, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> components;
  for (std::size_t i = 0; i < ne; ++i) {
    if (linked[i]) components[sets.find(i)].first.push_back(i);
  }
  for (std::size_t j = 0; j < ng; ++j) {
    if (linked[ne + j]) components[sets.find(ne + j)].second.push_back(j);
  }
  for (const auto& [root, members] : components) {
    match_component(members.first, members.second, estimate, truth, tolerance_nm, out.report.pairs);
  }
  std::sort(out.report.pairs.begin(), out.report.pairs.end(),
            [](const MatchedPair& a, const MatchedPair& b) { return a.estimate < b.estimate; });

  out.report.correct = out.report.pairs.size();
  out.report.false_negatives = ng - out.report.correct;
  out.report.false_positives = ne - out.report.correct;
  out.index = static_cast<double>(out.report.correct) /
              static_cast<double>(out.report.correct + out.report.false_negatives + out.report.false_positives);
  return out;
}

std::vector<Point> points_from_mask(const Image& mask, double pixel_size_nm) {
  if (!(pixel_size_nm > 0.0)) throw InvalidArgument("pixel size must be positive");
  std::vector<Point> points;
  for (std::size_t r = 0; r < mask.height(); ++r) {
    for (std::size_t c = 0; c < mask.width(); ++c) {
      if (mask(r, c) != 0.0) {
        points.push_back(Point{(static_cast<double>(c) + 0.5) * pixel_size_nm,
                               (static_cast<double>(r) + 0.5) * pixel_size_nm});
      }
    }
  }
  return points;
}

std::vector<Point> deduplicate_to_pixels(const std::vector<Point>& points, double pixel_size_nm) {
  if (!(pixel_size_nm > 0.0)) throw InvalidArgument("pixel size must be positive");
  struct Sum {
    double x = 0.0, y = 0.0;
    std::size_t n = 0;
  };
  std::map<std::pair<std::size_t, std::size_t>, Sum> cells;
  for (const auto& p : points) {
    if (!(p.x_nm >= 0.0) || !(p.y_nm >= 0.0)) throw InvalidArgument("point has a negative coordinate");
    auto& s = cells[{nearest_pixel(p.y_nm, pixel_size_nm), nearest_pixel(p.x_nm, pixel_size_nm)}];
    s.x += p.x_nm;
    s.y += p.y_nm;
    ++s.n;
  }
  std::vector<Point> out;
  out.reserve(cells.size());
  for (const auto& [cell, s] : cells) {
    out.push_back(Point{s.x / static_cast<double>(s.n), s.y / static_cast<double>(s.n)});
  }
  return out;
}

JaccardResult jaccard_index(const Image& mask, const std::vector<Point>& truth, double tolerance_nm,
                            double pixel_size_nm) {
  return jaccard_index(points_from_mask(mask, pixel_size_nm), deduplicate_to_pixels(truth, pixel_size_nm),
                       tolerance_nm);
}

double psnr(const Image& estimate, const Image& truth, std::optional<double> peak) {
  require_same_shape(estimate, truth, "psnr");
  if (truth.empty()) throw InvalidArgument("psnr of an empty image");
  const double p = peak ? *peak : max_value(truth);
  if (!(p > 0.0) || !std::isfinite(p)) throw InvalidArgument("psnr peak must be positive");
  double se = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) se += (estimate[i] - truth[i]) * (estimate[i] - truth[i]);
  const double mse = se / static_cast<double>(truth.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(p * p / mse);
}

}  // namespace fdecon
