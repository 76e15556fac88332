#pragma once

// Pixel accuracy and IoU under the region permutation that best matches ground truth.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "redo/error.hpp"
#include "redo/scene.hpp"

namespace redo {

/// perm[p] = ground-truth region matched to predicted region p (both 0-based).
using Permutation = std::vector<int>;

enum class MatchLevel { Dataset, Image };
enum class MatchSolver { Auto, Exhaustive, Assignment };

struct IouResult {
  double mean = 0;
  std::vector<double> per_region;  // indexed by ground-truth region
};

struct ImageScore {
  double acc = 0;
  double iou = 0;
  Permutation permutation;
};

struct EvalResult {
  double acc = 0;
  double iou = 0;
  Permutation permutation;         // the dataset-level one, or the one of the first image
  std::vector<double> per_region_iou;
  std::vector<ImageScore> images;
};

/// Per-pixel argmax, lowest index on ties.
inline std::vector<std::uint8_t> region_labels(const MaskSet& m) {
  const int hw = m.width() * m.height(), n = m.regions();
  const std::vector<float>& v = m.values();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(hw));
  for (int p = 0; p < hw; ++p) {
    int best = 0;
    for (int k = 1; k < n; ++k)
      if (v[static_cast<std::size_t>(k) * hw + p] > v[static_cast<std::size_t>(best) * hw + p]) best = k;
    out[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

inline MaskSet masks_from_labels(const std::vector<std::uint8_t>& labels, int regions, int width, int height) {
  require(labels.size() == static_cast<std::size_t>(width) * height, "label map size mismatch");
  MaskStack s(regions, width, height);
  const std::size_t hw = labels.size();
  for (std::size_t p = 0; p < hw; ++p) {
    require(labels[p] < regions, "label outside region range");
    s.values[labels[p] * hw + p] = 1.f;
  }
  return MaskSet(std::move(s));
}

inline MaskSet binarize_masks(const MaskSet& soft) {
  return masks_from_labels(region_labels(soft), soft.regions(), soft.width(), soft.height());
}

namespace detail {

inline void check_pair(const MaskSet& pred, const MaskSet& gt, const Permutation& perm) {
  require(pred.width() == gt.width() && pred.height() == gt.height(), "prediction and ground truth sizes differ");
  if (pred.regions() != gt.regions())
    throw ContractError("region count mismatch: prediction has " + std::to_string(pred.regions()) +
                        ", ground truth " + std::to_string(gt.regions()));
  require(static_cast<int>(perm.size()) == pred.regions(), "permutation has the wrong length");
  std::vector<int> seen(perm.size(), 0);
  for (int t : perm) {
    require(t >= 0 && t < static_cast<int>(perm.size()) && !seen[t], "permutation is not a bijection");
    seen[t] = 1;
  }
}

// counts[p * n + g]
inline std::vector<long> confusion(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt, int n) {
  std::vector<long> c(static_cast<std::size_t>(n) * n, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) ++c[pred[i] * n + gt[i]];
  return c;
}

inline double iou_cell(const std::vector<long>& c, int n, int p, int g) {
  long row = 0, col = 0;
  for (int k = 0; k < n; ++k) {
    row += c[p * n + k];
    col += c[k * n + g];
  }
  const long inter = c[p * n + g];
  const long uni = row + col - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// iou[p * n + g] for one image.
inline std::vector<double> iou_matrix(const std::vector<long>& c, int n) {
  std::vector<double> m(static_cast<std::size_t>(n) * n);
  for (int p = 0; p < n; ++p)
    for (int g = 0; g < n; ++g) m[p * n + g] = iou_cell(c, n, p, g);
  return m;
}

inline double perm_score(const std::vector<double>& s, int n, const Permutation& perm) {
  double t = 0;
  for (int p = 0; p < n; ++p) t += s[p * n + perm[p]];
  return t;
}

inline Permutation best_exhaustive(const std::vector<double>& s, int n) {
  Permutation perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Permutation best = perm;
  double best_score = perm_score(s, n, perm);
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double sc = perm_score(s, n, perm);
    if (sc > best_score) {
      best_score = sc;
      best = perm;
    }
  }
  return best;
}

// Kuhn-Munkres with potentials, maximizing sum s[p][perm p].
inline Permutation best_assignment(const std::vector<double>& s, int n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0), minv(n + 1);
  std::vector<int> owner(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  auto cost = [&](int p, int g) { return -s[(p - 1) * n + (g - 1)]; };
  for (int p = 1; p <= n; ++p) {
    owner[0] = p;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = owner[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
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
      const int j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0);
  }
  Permutation perm(static_cast<std::size_t>(n));
  for (int j = 1; j <= n; ++j) perm[owner[j] - 1] = j - 1;
  return perm;
}

inline Permutation best_permutation(const std::vector<double>& s, int n, MatchSolver solver) {
  if (solver == MatchSolver::Exhaustive || (solver == MatchSolver::Auto && n <= 6)) return best_exhaustive(s, n);
  return best_assignment(s, n);
}

inline double accuracy_from(const std::vector<long>& c, int n, const Permutation& perm) {
  long hit = 0, total = 0;
  for (int p = 0; p < n; ++p)
    for (int g = 0; g < n; ++g) {
      total += c[p * n + g];
      if (perm[p] == g) hit += c[p * n + g];
    }
  return total == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(total);
}

inline IouResult iou_from(const std::vector<long>& c, int n, const Permutation& perm) {
  IouResult r;
  r.per_region.assign(static_cast<std::size_t>(n), 0.0);
  for (int p = 0; p < n; ++p) r.per_region[perm[p]] = iou_cell(c, n, p, perm[p]);
  for (double x : r.per_region) r.mean += x;
  r.mean /= n;
  return r;
}

}  // namespace detail

/// Fraction of pixels whose predicted region, mapped through perm, equals the ground truth.
inline double pixel_accuracy(const MaskSet& pred, const MaskSet& gt, const Permutation& perm) {
  detail::check_pair(pred, gt, perm);
  const int n = pred.regions();
  return detail::accuracy_from(detail::confusion(region_labels(pred), region_labels(gt), n), n, perm);
}

/// Per ground-truth region |pred ∩ gt| / |pred ∪ gt| (empty union counts as 1), and their mean over all n regions.
inline IouResult intersection_over_union(const MaskSet& pred, const MaskSet& gt, const Permutation& perm) {
  detail::check_pair(pred, gt, perm);
  const int n = pred.regions();
  return detail::iou_from(detail::confusion(region_labels(pred), region_labels(gt), n), n, perm);
}

inline Permutation identity_permutation(int n) {
  Permutation p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  return p;
}

/// Binarizes predictions and scores them under the permutation maximizing mean IoU:
/// one permutation for the whole list (dataset level) or one per image.
inline EvalResult best_permutation_match(const std::vector<MaskSet>& preds, const std::vector<MaskSet>& gts,
                                         MatchLevel level = MatchLevel::Dataset,
                                         MatchSolver solver = MatchSolver::Auto) {
  require(!preds.empty() && preds.size() == gts.size(), "best_permutation_match needs aligned, non-empty lists");
  const int n = gts.front().regions();
  std::vector<std::vector<long>> conf;
  conf.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].regions() != n || gts[i].regions() != n)
      throw ContractError("region count mismatch in example " + std::to_string(i) + ": prediction " +
                          std::to_string(preds[i].regions()) + ", ground truth " + std::to_string(gts[i].regions()));
    detail::check_pair(preds[i], gts[i], identity_permutation(n));
    conf.push_back(detail::confusion(region_labels(preds[i]), region_labels(gts[i]), n));
  }

  EvalResult r;
  if (level == MatchLevel::Dataset) {
    std::vector<double> total(static_cast<std::size_t>(n) * n, 0.0);
    for (const auto& c : conf) {
      const std::vector<double> m = detail::iou_matrix(c, n);
      for (std::size_t k = 0; k < m.size(); ++k) total[k] += m[k];
    }
    r.permutation = detail::best_permutation(total, n, solver);
  }
  r.per_region_iou.assign(static_cast<std::size_t>(n), 0.0);
  for (const auto& c : conf) {
    ImageScore s;
    s.permutation = level == MatchLevel::Dataset ? r.permutation
                                                 : detail::best_permutation(detail::iou_matrix(c, n), n, solver);
    s.acc = detail::accuracy_from(c, n, s.permutation);
    const IouResult iou = detail::iou_from(c, n, s.permutation);
    s.iou = iou.mean;
    for (int g = 0; g < n; ++g) r.per_region_iou[g] += iou.per_region[g];
    r.acc += s.acc;
    r.iou += s.iou;
    r.images.push_back(std::move(s));
  }
  const double count = static_cast<double>(conf.size());
  r.acc /= count;
  r.iou /= count;
  for (double& x : r.per_region_iou) x /= count;
  if (level == MatchLevel::Image) r.permutation = r.images.front().permutation;
  return r;
}

struct ModelCandidate {
  std::string id;
  long step = 0;
  double val_iou = 0;
};

/// Highest validation IoU; ties go to the later step.
inline std::string select_model(const std::vector<ModelCandidate>& candidates) {
  require(!candidates.empty(), "select_model: no candidates");
  const ModelCandidate* best = &candidates.front();
  for (const ModelCandidate& c : candidates)
    if (c.val_iou > best->val_iou || (c.val_iou == best->val_iou && c.step > best->step)) best = &c;
  return best->id;
}

/// Scores every candidate on the validation set with `evaluate` and picks one with select_model().
template <class Candidate, class Example>
std::string select_model(const std::vector<Candidate>& candidates, const std::vector<Example>& validation,
                         const std::function<ModelCandidate(const Candidate&, const std::vector<Example>&)>& evaluate) {
  if (validation.empty()) throw ContractError("select_model: empty validation set");
  std::vector<ModelCandidate> scored;
  for (const Candidate& c : candidates) scored.push_back(evaluate(c, validation));
  return select_model(scored);
}

/// "2 1" means predicted region 1 -> ground-truth region 2, predicted 2 -> 1 (1-based).
inline std::string format_permutation(const Permutation& perm) {
  std::string s;
  for (std::size_t p = 0; p < perm.size(); ++p) {
    if (p) s += ' ';
    s += std::to_string(perm[p] + 1);
  }
  return s;
}

inline void write_eval_report(const std::string& path, const std::vector<std::string>& ids, const EvalResult& r) {
  require(ids.size() == r.images.size(), "report: id count does not match results");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write evaluation report " + path);
  out.precision(17);
  out << "id,acc,iou,permutation\n";
  for (std::size_t i = 0; i < ids.size(); ++i)
    out << ids[i] << ',' << r.images[i].acc << ',' << r.images[i].iou << ',' << format_permutation(r.images[i].permutation)
        << '\n';
  out << "summary," << r.acc << ',' << r.iou << ',' << format_permutation(r.permutation) << '\n';
  if (!out) throw IoError("failed writing evaluation report " + path);
}

}  // namespace redo
