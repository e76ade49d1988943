#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "iil/error.hpp"
#include "iil/ii_layer.hpp"
#include "iil/monomial.hpp"
#include "iil/tensor.hpp"
#include "json.hpp"

namespace iil {

/// Ridge-regularized least-squares classifier on one-hot targets.
/// weights: (D + 1) x C, last row is the bias.
struct LinearClassifier {
  Tensor weights;
  double lambda = 0.0;
  double residual = 0.0;  // ||(X'X + lambda I) W - X'Y|| / ||X'Y|| of the fit

  [[nodiscard]] std::size_t num_features() const { return weights.dim(0) - 1; }
  [[nodiscard]] std::size_t num_classes() const { return weights.dim(1); }
};

inline constexpr double kDefaultRidge = 1e-4;

namespace detail {

inline Eigen::MatrixXd with_bias(const Tensor& features) {
  const std::size_t s = features.dim(0), d = features.dim(1);
  Eigen::MatrixXd x(s, d + 1);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = features[i * d + j];
    x(i, d) = 1.0;
  }
  return x;
}

}  // namespace detail

/// W = (X'X + lambda I')^{-1} X'Y with a bias column appended to X; the bias
/// row is not penalized.
inline LinearClassifier fit_closed_form(const Tensor& features, std::span<const int> labels, int num_classes,
                                        double lambda = kDefaultRidge) {
  if (features.rank() != 2 || features.dim(0) == 0) throw ShapeError("fit_closed_form: need S x D features, S >= 1");
  if (labels.size() != features.dim(0)) throw ShapeError("fit_closed_form: label count mismatch");
  if (num_classes < 1) throw ShapeError("fit_closed_form: need at least one class");
  if (lambda < 0.0) throw ShapeError("fit_closed_form: lambda must be >= 0");
  const std::size_t d = features.dim(1);
  const Eigen::MatrixXd x = detail::with_bias(features);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(x.rows(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw ShapeError("fit_closed_form: label out of range");
    y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  Eigen::MatrixXd a = x.transpose() * x;
  for (std::size_t j = 0; j < d; ++j) a(j, j) += lambda;
  const Eigen::MatrixXd rhs = x.transpose() * y;

  // With lambda > 0 the system is positive definite even when a feature is
  // constant (collinear with the unpenalized bias), so only lambda = 0 can be
  // genuinely singular.
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  const auto diag = ldlt.vectorD().cwiseAbs();
  const bool rank_deficient = lambda == 0.0 && diag.minCoeff() <= 1e-13 * std::max(diag.maxCoeff(), 1.0);
  const Eigen::MatrixXd w = ldlt.solve(rhs);
  if (ldlt.info() != Eigen::Success || rank_deficient || !w.allFinite()) {
    throw SingularMatrixError("closed-form classifier: X'X + lambda I is singular; use lambda > 0");
  }

  LinearClassifier clf;
  clf.lambda = lambda;
  clf.weights = Tensor({d + 1, static_cast<std::size_t>(num_classes)});
  for (std::size_t i = 0; i <= d; ++i)
    for (int c = 0; c < num_classes; ++c) clf.weights[i * num_classes + c] = w(i, c);
  const double rhs_norm = rhs.norm();
  clf.residual = (a * w - rhs).norm() / (rhs_norm > 0.0 ? rhs_norm : 1.0);
  return clf;
}

/// Scores X W (with bias), S x C.
inline Tensor classifier_scores(const LinearClassifier& clf, const Tensor& features) {
  if (features.rank() != 2 || features.dim(1) != clf.num_features())
    throw ShapeError("classifier: feature dimension mismatch");
  const std::size_t s = features.dim(0), d = features.dim(1), c = clf.num_classes();
  Tensor scores({s, c});
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      double v = clf.weights[d * c + k];
      for (std::size_t j = 0; j < d; ++j) v += features[i * d + j] * clf.weights[j * c + k];
      scores[i * c + k] = v;
    }
  return scores;
}

/// Argmax class per row; ties go to the lowest class id.
inline std::vector<int> predict(const LinearClassifier& clf, const Tensor& features) {
  const Tensor scores = classifier_scores(clf, features);
  const std::size_t s = scores.dim(0), c = scores.dim(1);
  std::vector<int> out(s, 0);
  for (std::size_t i = 0; i < s; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (scores[i * c + k] > scores[i * c + best]) best = k;
    out[i] = static_cast<int>(best);
  }
  return out;
}

inline double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size() || labels.empty()) throw ShapeError("accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

/// Mean squared error against one-hot targets.
inline double one_hot_lse(const LinearClassifier& clf, const Tensor& features, std::span<const int> labels) {
  const Tensor scores = classifier_scores(clf, features);
  const std::size_t s = scores.dim(0), c = scores.dim(1);
  double sum = 0.0;
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      const double t = static_cast<std::size_t>(labels[i]) == k ? 1.0 : 0.0;
      sum += (scores[i * c + k] - t) * (scores[i * c + k] - t);
    }
  return sum / static_cast<double>(s);
}

/// Random candidate monomials: exponent vectors uniform over the enumeration
/// without the all-zero vector, offsets uniform in the disk of radius r_max.
inline std::vector<Monomial> generate_candidates(std::size_t pool_size, int k, int group_order, double r_max,
                                                 std::uint64_t seed) {
  if (pool_size < 1) throw ShapeError("generate_candidates: pool_size must be >= 1");
  auto exps = enumerate_monomial_exponents(k, group_order);
  exps.erase(exps.begin());  // lexicographic order puts the zero vector first
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, exps.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Monomial> pool;
  pool.reserve(pool_size);
  for (std::size_t p = 0; p < pool_size; ++p) {
    const auto& e = exps[pick(rng)];
    Monomial m;
    for (int i = 0; i < k; ++i) {
      const double radius = r_max * std::sqrt(unit(rng));
      const double theta = 2.0 * std::numbers::pi * unit(rng);
      m.factors.push_back({radius * std::cos(theta), radius * std::sin(theta), static_cast<double>(e[i])});
    }
    pool.push_back(std::move(m));
  }
  return pool;
}

struct SelectionConfig {
  std::size_t max_monomials = 5;
  int patience = 10;
  double lambda = kDefaultRidge;
  int num_angles = 8;
  double r_max = kDefaultRadius;
  int num_classes = 2;
};

struct SelectionIteration {
  std::vector<std::size_t> pool_ids;  // candidates scored this iteration
  std::size_t chosen = 0;             // best-ranked candidate
  double val_accuracy = 0.0;
  double train_lse = 0.0;
  bool appended = false;
  double best_accuracy = 0.0;  // running best after this iteration
};

struct SelectionTrace {
  std::vector<SelectionIteration> iterations;
  std::vector<std::size_t> selected_ids;
  int stagnation_counter = 0;
  double best_accuracy = 0.0;
  std::string stop_reason;
};

struct SelectionResult {
  std::vector<Monomial> monomials;
  SelectionTrace trace;
};

/// Per-candidate II features, [candidate] -> samples x channels.
inline std::vector<Tensor> candidate_features(const Tensor& shifted, const std::vector<Monomial>& candidates,
                                              const ShiftStats& shift, const SelectionConfig& config) {
  IILayerState state{candidates, shift, RotationGroupSampling::uniform(config.num_angles), config.r_max};
  const Tensor all = ii_forward(shifted, state);  // batch x channels x candidates
  const std::size_t nb = all.dim(0), ch = all.dim(1), nm = all.dim(2);
  std::vector<Tensor> out(nm, Tensor({nb, ch}));
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t m = 0; m < nm; ++m) out[m][n * ch + c] = all[(n * ch + c) * nm + m];
  return out;
}

/// Column-concatenation of per-candidate feature blocks.
inline Tensor stack_features(const std::vector<Tensor>& blocks, std::span<const std::size_t> ids) {
  const std::size_t nb = blocks.at(ids[0]).dim(0), ch = blocks.at(ids[0]).dim(1);
  Tensor out({nb, ch * ids.size()});
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t j = 0; j < ids.size(); ++j)
      for (std::size_t c = 0; c < ch; ++c) out[n * ch * ids.size() + j * ch + c] = blocks[ids[j]][n * ch + c];
  return out;
}

namespace detail {

inline void check_labels(std::span<const int> labels, int num_classes, const char* split) {
  if (labels.empty()) throw ShapeError(std::string("selection: empty ") + split + " split");
  bool two = false;
  for (int l : labels) {
    if (l < 0 || l >= num_classes) throw ShapeError("selection: label out of range");
    two |= l != labels[0];
  }
  if (!two && std::string(split) == "train")
    throw ShapeError("selection: degenerate single-class training labels");
}

}  // namespace detail

/// Greedy monomial selection scored by closed-form classifier validation accuracy.
///
/// Each iteration scores every remaining candidate appended to the current set
/// (rank: val accuracy desc, train LSE asc, id asc). The winner is appended if
/// it strictly improves the best accuracy; otherwise it is discarded from the
/// pool and the stagnation counter grows. Stops at `patience` consecutive
/// non-improving iterations, at max_monomials, or when the pool runs dry.
inline SelectionResult select_monomials(const Tensor& train_shifted, std::span<const int> train_labels,
                                        const Tensor& val_shifted, std::span<const int> val_labels,
                                        const std::vector<Monomial>& candidates, const ShiftStats& shift,
                                        const SelectionConfig& config) {
  if (candidates.empty()) throw ShapeError("selection: empty candidate pool");
  if (config.max_monomials < 1) throw ShapeError("selection: M cap must be >= 1");
  if (train_shifted.dim(0) != train_labels.size() || val_shifted.dim(0) != val_labels.size())
    throw ShapeError("selection: label count mismatch");
  detail::check_labels(train_labels, config.num_classes, "train");
  detail::check_labels(val_labels, config.num_classes, "val");

  const auto train_blocks = candidate_features(train_shifted, candidates, shift, config);
  const auto val_blocks = candidate_features(val_shifted, candidates, shift, config);

  std::vector<bool> available(candidates.size(), true);
  SelectionResult result;
  auto& trace = result.trace;
  trace.best_accuracy = -std::numeric_limits<double>::infinity();

  while (true) {
    if (trace.selected_ids.size() >= config.max_monomials) {
      trace.stop_reason = "max_monomials";
      break;
    }
    if (trace.stagnation_counter >= config.patience) {
      trace.stop_reason = "stagnation";
      break;
    }
    SelectionIteration it;
    for (std::size_t id = 0; id < candidates.size(); ++id)
      if (available[id]) it.pool_ids.push_back(id);
    if (it.pool_ids.empty()) {
      trace.stop_reason = "pool_exhausted";
      break;
    }
    bool have = false;
    for (std::size_t id : it.pool_ids) {
      std::vector<std::size_t> ids = trace.selected_ids;
      ids.push_back(id);
      const Tensor xtr = stack_features(train_blocks, ids);
      const Tensor xval = stack_features(val_blocks, ids);
      const LinearClassifier clf = fit_closed_form(xtr, train_labels, config.num_classes, config.lambda);
      const double acc = accuracy(predict(clf, xval), val_labels);
      const double lse = one_hot_lse(clf, xtr, train_labels);
      if (!have || acc > it.val_accuracy || (acc == it.val_accuracy && lse < it.train_lse)) {
        it.chosen = id;
        it.val_accuracy = acc;
        it.train_lse = lse;
        have = true;
      }
    }
    if (it.val_accuracy > trace.best_accuracy) {
      trace.best_accuracy = it.val_accuracy;
      trace.selected_ids.push_back(it.chosen);
      trace.stagnation_counter = 0;
      it.appended = true;
    } else {
      ++trace.stagnation_counter;
    }
    available[it.chosen] = false;
    it.best_accuracy = trace.best_accuracy;
    trace.iterations.push_back(std::move(it));
  }
  for (std::size_t id : trace.selected_ids) result.monomials.push_back(candidates[id]);
  return result;
}

inline nlohmann::json selection_trace_to_json(const SelectionTrace& trace, const std::vector<Monomial>& candidates) {
  nlohmann::json iters = nlohmann::json::array();
  for (const auto& it : trace.iterations) {
    iters.push_back({{"pool_ids", it.pool_ids},
                     {"chosen", it.chosen},
                     {"val_accuracy", it.val_accuracy},
                     {"train_lse", it.train_lse},
                     {"appended", it.appended},
                     {"best_accuracy", it.best_accuracy}});
  }
  std::vector<Monomial> chosen;
  for (std::size_t id : trace.selected_ids) chosen.push_back(candidates.at(id));
  return {{"iterations", iters},
          {"selected_ids", trace.selected_ids},
          {"stagnation_counter", trace.stagnation_counter},
          {"best_accuracy", trace.best_accuracy},
          {"stop_reason", trace.stop_reason},
          {"selected_monomials", monomials_to_json(chosen)}};
}

}  // namespace iil
