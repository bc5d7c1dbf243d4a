#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "treecode/autoencoder.hpp"
#include "treecode/corpus.hpp"
#include "treecode/numerics.hpp"

namespace treecode {

// ---------------------------------------------------------------------------
// Progress-variance projection

struct ProjectionModel {
  Vec x0;
  Vec xstar;
  Vec delta_hat;          // (x⋆ − x₀)/‖x⋆ − x₀‖
  Vec nu;                 // unit, orthogonal to delta_hat
  double delta_norm = 0;  // ‖x⋆ − x₀‖
  bool fallback = false;  // residual variance was zero
};

// Throws DataError when x⋆ = x₀ or the dimension is below 2.
ProjectionModel fit_projection(const std::vector<Vec>& data, const Vec& x0, const Vec& xstar);
std::pair<double, double> project(const ProjectionModel& pm, const Vec& x);
Vec embed(const ProjectionModel& pm, std::pair<double, double> y);

// ---------------------------------------------------------------------------
// Linear dynamical system f(x) = x + W(x⋆ − x)

struct DynSys {
  Mat W;
  std::vector<Vec> solutions;  // one entry, or several for the multi-attractor variant
  double lambda = 1e-3;
};

using CodeTrace = std::vector<Vec>;

// Closest solution by Euclidean distance; ties go to the lowest index.
const Vec& nearest_solution(const std::vector<Vec>& solutions, const Vec& x);

// Ridge regression in closed form. Throws DataError for λ ≤ 0 or no transitions.
DynSys fit_dynsys(const std::vector<CodeTrace>& traces, std::vector<Vec> solutions, double lambda);
double dynsys_objective(const Mat& W, const std::vector<CodeTrace>& traces, const std::vector<Vec>& solutions,
                        double lambda);
Mat dynsys_gradient(const Mat& W, const std::vector<CodeTrace>& traces, const std::vector<Vec>& solutions,
                    double lambda);

Vec dynsys_step(const DynSys& ds, const Vec& x);
// Iterates until ‖x_{t+1} − x_t‖ < tol or max_iters steps; includes x_start.
std::vector<Vec> simulate(const DynSys& ds, const Vec& x_start, double tol, std::size_t max_iters);

struct StabilityReport {
  double op_norm = 0;  // σ_max(I − W)
  bool sufficient = false;
};
StabilityReport stability_check(const DynSys& ds);

// ---------------------------------------------------------------------------
// PCA + Gaussian mixture

struct Pca {
  Vec mean;
  std::vector<Vec> basis;  // principal directions, descending variance
  std::vector<double> variances;
  double retained = 0;  // fraction of total variance kept
};
Pca fit_pca(const std::vector<Vec>& data, double var_fraction);
Vec pca_transform(const Pca& pca, const Vec& x);

struct GmmModel {
  std::vector<Vec> means;
  std::vector<Mat> covariances;
  std::vector<double> priors;
  double reg = 1e-6;
};

struct GmmFit {
  GmmModel model;
  std::vector<std::vector<double>> loglik_traces;  // one per restart
  std::size_t best_restart = 0;
  double loglik = 0;
};

struct GmmOptions {
  double reg = 1e-6;
  std::size_t restarts = 5;
  std::size_t max_iters = 500;
  double tol = 1e-9;
};

// EM started from hard responsibilities around K distinct random data points;
// keeps the restart with the highest final log-likelihood. Throws DataError
// when N < K and NumericError when a covariance stays singular.
GmmFit fit_gmm(const std::vector<Vec>& data, std::size_t k, std::uint64_t seed, const GmmOptions& options = {});
std::vector<double> gmm_posterior(const GmmModel& gm, const Vec& y);
double gmm_logdensity(const GmmModel& gm, const Vec& y);
double gmm_loglik(const GmmModel& gm, const std::vector<Vec>& data);

// s_i = ℓ_i / min ℓ; index i is flagged when s_i ≥ 2·mean(s).
std::vector<std::size_t> detect_outliers(const std::vector<double>& logdensities);

// ---------------------------------------------------------------------------
// Next-step prediction

enum class PredictMethod { kIdentity, kOneNN, kLinear };
std::string method_name(PredictMethod m);
PredictMethod parse_method(const std::string& name);  // throws DataError

struct ErrorSum {
  double sse = 0;
  std::size_t count = 0;
  double rmse() const;
};

struct PredictionReport {
  // (method, task) → accumulated squared TED.
  std::map<std::pair<PredictMethod, std::string>, ErrorSum> by_task;
  std::map<PredictMethod, ErrorSum> overall;
  std::vector<Tree> linear_predictions;

  void merge(const PredictionReport& other);
};

struct PredictOptions {
  double lambda = 1e-3;
  std::vector<PredictMethod> methods{PredictMethod::kIdentity, PredictMethod::kOneNN, PredictMethod::kLinear};
  // Solutions for the linear model. Empty: the final tree of every training trace.
  std::vector<Tree> solutions;
};

PredictionReport predict_eval(const std::vector<Trace>& train, const std::vector<Trace>& test, const Model& model,
                              const PredictOptions& options);

// k-fold by student, accumulated over folds.
PredictionReport predict_eval_kfold(const std::vector<Trace>& traces, const Model& model, std::size_t folds,
                                    std::uint64_t seed, std::optional<std::size_t> train_students,
                                    const PredictOptions& options);

// ---------------------------------------------------------------------------
// Autoencoding error by tree size

struct SizeRow {
  std::size_t size = 0;
  std::size_t count = 0;
  double mean = 0;
  double median = 0;
  double std = 0;
};

struct AutoencodeResult {
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> errors;  // TED(t, decode(encode(t)))
  std::vector<SizeRow> table;
};
AutoencodeResult eval_autoencode(const Model& model, const std::vector<Tree>& trees);

double median(std::vector<double> values);

}  // namespace treecode
