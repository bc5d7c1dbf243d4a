#include "treecode/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <unordered_map>

#include "treecode/error.hpp"
#include "treecode/ted.hpp"

namespace treecode {

namespace {

void require_same_dim(const Vec& a, const Vec& b, const char* what) {
  if (a.size() != b.size()) throw DataError(std::string(what) + ": dimension mismatch");
}

}  // namespace

// ---------------------------------------------------------------------------
// Projection

ProjectionModel fit_projection(const std::vector<Vec>& data, const Vec& x0, const Vec& xstar) {
  require_same_dim(x0, xstar, "fit_projection");
  const std::size_t n = x0.size();
  if (n < 2) throw DataError("fit_projection: need dimension >= 2");
  if (data.empty()) throw DataError("fit_projection: no data");
  ProjectionModel pm;
  pm.x0 = x0;
  pm.xstar = xstar;
  Vec delta = xstar - x0;
  pm.delta_norm = norm(delta);
  if (!(pm.delta_norm > 0)) throw DataError("fit_projection: solution equals the empty-program code");
  pm.delta_hat = (1.0 / pm.delta_norm) * delta;

  Mat c(n, n);
  double scale = 0;
  for (const Vec& x : data) {
    require_same_dim(x, x0, "fit_projection");
    Vec r = x - x0;
    scale += dot(r, r);
    const double a = dot(r, pm.delta_hat);
    for (std::size_t j = 0; j < n; ++j) r[j] -= a * pm.delta_hat[j];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) c(i, j) += r[i] * r[j];
    }
  }

  auto orthonormal = [&](Vec v) {
    const double a = dot(v, pm.delta_hat);
    for (std::size_t j = 0; j < n; ++j) v[j] -= a * pm.delta_hat[j];
    const double len = norm(v);
    return std::make_pair((1.0 / len) * v, len);
  };

  EigenPairs top = sym_eig_topk(c, 1);
  if (top.values[0] > 1e-20 * (1.0 + scale)) {
    pm.nu = orthonormal(top.vectors[0]).first;
  } else {
    pm.fallback = true;
    for (std::size_t i = 0; i < n; ++i) {
      auto [v, len] = orthonormal(Vec::basis(n, i));
      if (len > 1e-6) {
        pm.nu = v;
        break;
      }
    }
  }
  return pm;
}

std::pair<double, double> project(const ProjectionModel& pm, const Vec& x) {
  require_same_dim(x, pm.x0, "project");
  Vec r = x - pm.x0;
  return {dot(pm.delta_hat, r) / pm.delta_norm, dot(pm.nu, r) / pm.delta_norm};
}

Vec embed(const ProjectionModel& pm, std::pair<double, double> y) {
  Vec x = pm.x0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    x[j] += pm.delta_norm * (y.first * pm.delta_hat[j] + y.second * pm.nu[j]);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Dynamical system

const Vec& nearest_solution(const std::vector<Vec>& solutions, const Vec& x) {
  if (solutions.empty()) throw DataError("no solutions given");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < solutions.size(); ++i) {
    require_same_dim(solutions[i], x, "nearest_solution");
    double d = 0;
    for (std::size_t j = 0; j < x.size(); ++j) d += (solutions[i][j] - x[j]) * (solutions[i][j] - x[j]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return solutions[best];
}

DynSys fit_dynsys(const std::vector<CodeTrace>& traces, std::vector<Vec> solutions, double lambda) {
  if (!(lambda > 0)) throw DataError("fit_dynsys: lambda must be > 0");
  if (solutions.empty()) throw DataError("fit_dynsys: no solutions given");
  const std::size_t n = solutions[0].size();
  Mat a = scale(Mat::identity(n), lambda);
  Mat bt(n, n);  // (Σ r dᵀ)ᵀ = Σ d rᵀ
  std::size_t transitions = 0;
  for (const auto& tr : traces) {
    for (std::size_t t = 0; t + 1 < tr.size(); ++t) {
      require_same_dim(tr[t], solutions[0], "fit_dynsys");
      require_same_dim(tr[t + 1], solutions[0], "fit_dynsys");
      Vec d = nearest_solution(solutions, tr[t]) - tr[t];
      Vec r = tr[t + 1] - tr[t];
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          a(i, j) += d[i] * d[j];
          bt(i, j) += d[i] * r[j];
        }
      }
      ++transitions;
    }
  }
  if (transitions == 0) throw DataError("fit_dynsys: no transitions");
  return DynSys{transpose(cholesky_solve(a, bt)), std::move(solutions), lambda};
}

double dynsys_objective(const Mat& W, const std::vector<CodeTrace>& traces, const std::vector<Vec>& solutions,
                        double lambda) {
  double f = lambda * frobenius(W) * frobenius(W);
  for (const auto& tr : traces) {
    for (std::size_t t = 0; t + 1 < tr.size(); ++t) {
      Vec e = tr[t] + matvec(W, nearest_solution(solutions, tr[t]) - tr[t]) - tr[t + 1];
      f += dot(e, e);
    }
  }
  return f;
}

Mat dynsys_gradient(const Mat& W, const std::vector<CodeTrace>& traces, const std::vector<Vec>& solutions,
                    double lambda) {
  Mat g = scale(W, 2.0 * lambda);
  for (const auto& tr : traces) {
    for (std::size_t t = 0; t + 1 < tr.size(); ++t) {
      Vec d = nearest_solution(solutions, tr[t]) - tr[t];
      Vec e = tr[t] + matvec(W, d) - tr[t + 1];
      g = add(g, scale(outer(e, d), 2.0));
    }
  }
  return g;
}

Vec dynsys_step(const DynSys& ds, const Vec& x) {
  return x + matvec(ds.W, nearest_solution(ds.solutions, x) - x);
}

std::vector<Vec> simulate(const DynSys& ds, const Vec& x_start, double tol, std::size_t max_iters) {
  std::vector<Vec> out{x_start};
  for (std::size_t i = 0; i < max_iters; ++i) {
    Vec next = dynsys_step(ds, out.back());
    const double step = norm(next - out.back());
    out.push_back(std::move(next));
    if (step < tol) break;
  }
  return out;
}

StabilityReport stability_check(const DynSys& ds) {
  StabilityReport r;
  r.op_norm = op_norm(sub(Mat::identity(ds.W.rows()), ds.W));
  r.sufficient = r.op_norm < 1.0;
  return r;
}

// ---------------------------------------------------------------------------
// PCA

Pca fit_pca(const std::vector<Vec>& data, double var_fraction) {
  if (data.empty()) throw DataError("fit_pca: no data");
  if (!(var_fraction > 0 && var_fraction <= 1)) throw DataError("fit_pca: var_fraction must be in (0, 1]");
  const std::size_t n = data[0].size();
  Pca p;
  p.mean = Vec(n);
  for (const Vec& x : data) {
    require_same_dim(x, p.mean, "fit_pca");
    p.mean += x;
  }
  p.mean *= 1.0 / static_cast<double>(data.size());
  Mat c(n, n);
  for (const Vec& x : data) {
    Vec r = x - p.mean;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) c(i, j) += r[i] * r[j];
    }
  }
  c = scale(c, 1.0 / static_cast<double>(data.size()));
  EigenPairs e = sym_eig_topk(c, n);
  double total = 0;
  for (double v : e.values) total += std::max(v, 0.0);
  double kept = 0;
  for (std::size_t i = 0; i < n; ++i) {
    p.basis.push_back(e.vectors[i]);
    p.variances.push_back(std::max(e.values[i], 0.0));
    kept += p.variances.back();
    if (total <= 0 || kept >= var_fraction * total) break;
  }
  p.retained = total > 0 ? kept / total : 1.0;
  return p;
}

Vec pca_transform(const Pca& pca, const Vec& x) {
  Vec r = x - pca.mean;
  Vec y(pca.basis.size());
  for (std::size_t i = 0; i < pca.basis.size(); ++i) y[i] = dot(pca.basis[i], r);
  return y;
}

// ---------------------------------------------------------------------------
// Gaussian mixture

namespace {

struct Component {
  Mat chol;  // lower Cholesky factor of the covariance
  double log_norm = 0;  // −½(d log 2π + log|Σ|)
};

Component factor(const Mat& cov) {
  const std::size_t d = cov.rows();
  Component c{Mat(d, d), 0};
  double logdet = 0;
  for (std::size_t j = 0; j < d; ++j) {
    double s = cov(j, j);
    for (std::size_t k = 0; k < j; ++k) s -= c.chol(j, k) * c.chol(j, k);
    if (!(s > 0)) throw NumericError("gmm: covariance is not positive definite");
    const double l = std::sqrt(s);
    c.chol(j, j) = l;
    logdet += 2.0 * std::log(l);
    for (std::size_t i = j + 1; i < d; ++i) {
      double t = cov(i, j);
      for (std::size_t k = 0; k < j; ++k) t -= c.chol(i, k) * c.chol(j, k);
      c.chol(i, j) = t / l;
    }
  }
  c.log_norm = -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + logdet);
  return c;
}

double log_gauss(const Component& c, const Vec& mean, const Vec& y) {
  const std::size_t d = mean.size();
  std::vector<double> z(d);
  double q = 0;
  for (std::size_t i = 0; i < d; ++i) {
    double s = y[i] - mean[i];
    for (std::size_t k = 0; k < i; ++k) s -= c.chol(i, k) * z[k];
    z[i] = s / c.chol(i, i);
    q += z[i] * z[i];
  }
  return c.log_norm - 0.5 * q;
}

double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Per-point weighted log densities log π_k + log N(y; μ_k, Σ_k).
std::vector<double> joint(const GmmModel& gm, const std::vector<Component>& comps, const Vec& y) {
  std::vector<double> out(gm.priors.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::log(gm.priors[k]) + log_gauss(comps[k], gm.means[k], y);
  return out;
}

std::vector<Component> factor_all(const GmmModel& gm) {
  std::vector<Component> comps;
  for (const auto& c : gm.covariances) comps.push_back(factor(c));
  return comps;
}

void m_step(const std::vector<Vec>& data, const std::vector<std::vector<double>>& resp, GmmModel& gm) {
  const std::size_t d = data[0].size(), k = resp[0].size();
  const double n = static_cast<double>(data.size());
  gm.means.assign(k, Vec(d));
  gm.covariances.assign(k, Mat(d, d));
  gm.priors.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    double nk = 0;
    for (std::size_t i = 0; i < data.size(); ++i) nk += resp[i][c];
    nk = std::max(nk, 1e-300);
    for (std::size_t i = 0; i < data.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) gm.means[c][j] += resp[i][c] * data[i][j];
    }
    gm.means[c] *= 1.0 / nk;
    Mat& cov = gm.covariances[c];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double w = resp[i][c];
      if (w == 0) continue;
      Vec r = data[i] - gm.means[c];
      for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) cov(a, b) += w * r[a] * r[b];
      }
    }
    cov = scale(cov, 1.0 / nk);
    for (std::size_t a = 0; a < d; ++a) cov(a, a) += gm.reg;
    gm.priors[c] = nk / n;
  }
  double total = 0;
  for (double p : gm.priors) total += p;
  for (double& p : gm.priors) p /= total;
}

}  // namespace

double gmm_loglik(const GmmModel& gm, const std::vector<Vec>& data) {
  auto comps = factor_all(gm);
  double ll = 0;
  for (const Vec& y : data) ll += log_sum_exp(joint(gm, comps, y));
  return ll;
}

GmmFit fit_gmm(const std::vector<Vec>& data, std::size_t k, std::uint64_t seed, const GmmOptions& options) {
  if (k < 1) throw DataError("fit_gmm: K must be >= 1");
  if (data.size() < k) throw DataError("fit_gmm: fewer points than components");
  if (!(options.reg > 0)) throw DataError("fit_gmm: reg must be > 0");
  for (const Vec& y : data) require_same_dim(y, data[0], "fit_gmm");

  GmmFit best;
  best.loglik = -std::numeric_limits<double>::infinity();
  const std::size_t restarts = std::max<std::size_t>(options.restarts, 1);
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng(seed + 0x9E3779B97F4A7C15ull * r);
    // Hard responsibilities: each point goes to the nearest of K distinct random data points.
    std::vector<std::size_t> pool(data.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t c = 0; c < k; ++c) std::swap(pool[c], pool[c + rng.uniform_index(pool.size() - c)]);
    std::vector<std::vector<double>> resp(data.size(), std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::size_t nearest = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dist = norm(data[i] - data[pool[c]]);
        if (dist < best_d) {
          best_d = dist;
          nearest = c;
        }
      }
      resp[i][nearest] = 1.0;
    }
    GmmModel gm;
    gm.reg = options.reg;
    m_step(data, resp, gm);

    std::vector<double> trace;
    for (std::size_t it = 0; it < options.max_iters; ++it) {
      auto comps = factor_all(gm);
      double ll = 0;
      for (std::size_t i = 0; i < data.size(); ++i) {
        auto j = joint(gm, comps, data[i]);
        const double lse = log_sum_exp(j);
        ll += lse;
        for (std::size_t c = 0; c < k; ++c) resp[i][c] = std::exp(j[c] - lse);
      }
      trace.push_back(ll);
      if (trace.size() >= 2 && ll - trace[trace.size() - 2] < options.tol) break;
      m_step(data, resp, gm);
    }
    const double final_ll = gmm_loglik(gm, data);
    best.loglik_traces.push_back(trace);
    if (final_ll > best.loglik) {
      best.loglik = final_ll;
      best.model = gm;
      best.best_restart = r;
    }
  }
  return best;
}

std::vector<double> gmm_posterior(const GmmModel& gm, const Vec& y) {
  auto j = joint(gm, factor_all(gm), y);
  const double lse = log_sum_exp(j);
  for (double& x : j) x = std::exp(x - lse);
  return j;
}

double gmm_logdensity(const GmmModel& gm, const Vec& y) { return log_sum_exp(joint(gm, factor_all(gm), y)); }

std::vector<std::size_t> detect_outliers(const std::vector<double>& logdensities) {
  if (logdensities.empty()) throw DataError("detect_outliers: no samples");
  const double lmin = *std::min_element(logdensities.begin(), logdensities.end());
  if (!(lmin < 0)) throw DataError("detect_outliers: need at least one negative log density");
  std::vector<double> s;
  double mean = 0;
  for (double l : logdensities) {
    s.push_back(l / lmin);
    mean += s.back();
  }
  mean /= static_cast<double>(s.size());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] >= 2.0 * mean) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction

std::string method_name(PredictMethod m) {
  switch (m) {
    case PredictMethod::kIdentity: return "identity";
    case PredictMethod::kOneNN: return "onenn";
    case PredictMethod::kLinear: return "linear";
  }
  return "?";
}

PredictMethod parse_method(const std::string& name) {
  if (name == "identity") return PredictMethod::kIdentity;
  if (name == "onenn" || name == "1nn") return PredictMethod::kOneNN;
  if (name == "linear") return PredictMethod::kLinear;
  throw DataError("unknown prediction method: " + name);
}

double ErrorSum::rmse() const {
  return count == 0 ? std::numeric_limits<double>::quiet_NaN() : std::sqrt(sse / static_cast<double>(count));
}

void PredictionReport::merge(const PredictionReport& other) {
  for (const auto& [key, e] : other.by_task) {
    by_task[key].sse += e.sse;
    by_task[key].count += e.count;
  }
  for (const auto& [key, e] : other.overall) {
    overall[key].sse += e.sse;
    overall[key].count += e.count;
  }
  linear_predictions.insert(linear_predictions.end(), other.linear_predictions.begin(),
                            other.linear_predictions.end());
}

PredictionReport predict_eval(const std::vector<Trace>& train, const std::vector<Trace>& test, const Model& model,
                              const PredictOptions& options) {
  const Grammar& g = model.grammar();
  auto wants = [&](PredictMethod m) {
    return std::find(options.methods.begin(), options.methods.end(), m) != options.methods.end();
  };
  const bool need_train = wants(PredictMethod::kOneNN) || wants(PredictMethod::kLinear);
  std::size_t train_transitions = 0;
  for (const auto& t : train) train_transitions += t.steps.size() > 0 ? t.steps.size() - 1 : 0;
  if (need_train && train_transitions == 0) throw DataError("predict_eval: no training transitions");

  // Training states with their first recorded successor, ordered by serialization.
  struct State {
    std::string key;
    FlatTree flat;
    const Tree* successor;
  };
  std::vector<State> states;
  if (wants(PredictMethod::kOneNN)) {
    std::unordered_map<std::string, std::size_t> seen;
    for (const auto& t : train) {
      for (std::size_t i = 0; i + 1 < t.steps.size(); ++i) {
        std::string key = serialize_tree(g, t.steps[i].tree);
        if (seen.emplace(key, states.size()).second) {
          states.push_back(State{key, FlatTree::from(t.steps[i].tree), &t.steps[i + 1].tree});
        }
      }
    }
    std::stable_sort(states.begin(), states.end(), [](const State& a, const State& b) { return a.key < b.key; });
  }

  std::unordered_map<std::string, Vec> codes;
  auto code_of = [&](const Tree& t) -> const Vec& {
    std::string key = serialize_tree(g, t);
    auto it = codes.find(key);
    if (it == codes.end()) it = codes.emplace(std::move(key), encode(model, t)).first;
    return it->second;
  };

  DynSys ds;
  if (wants(PredictMethod::kLinear)) {
    std::vector<Vec> solutions;
    if (options.solutions.empty()) {
      for (const auto& t : train) {
        if (!t.steps.empty()) solutions.push_back(code_of(t.steps.back().tree));
      }
    } else {
      for (const auto& s : options.solutions) solutions.push_back(code_of(s));
    }
    std::vector<CodeTrace> code_traces;
    for (const auto& t : train) {
      CodeTrace ct;
      for (const auto& s : t.steps) ct.push_back(code_of(s.tree));
      code_traces.push_back(std::move(ct));
    }
    ds = fit_dynsys(code_traces, std::move(solutions), options.lambda);
  }

  PredictionReport report;
  auto record = [&](PredictMethod m, const std::string& task, double err) {
    auto& a = report.by_task[{m, task}];
    a.sse += err * err;
    ++a.count;
    auto& b = report.overall[m];
    b.sse += err * err;
    ++b.count;
  };
  for (const auto& t : test) {
    for (std::size_t j = 0; j + 1 < t.steps.size(); ++j) {
      const Tree& cur = t.steps[j].tree;
      const Tree& next = t.steps[j + 1].tree;
      for (PredictMethod m : options.methods) {
        switch (m) {
          case PredictMethod::kIdentity:
            record(m, t.task, static_cast<double>(ted(cur, next)));
            break;
          case PredictMethod::kOneNN: {
            const FlatTree fc = FlatTree::from(cur);
            std::size_t best = 0, best_d = std::numeric_limits<std::size_t>::max();
            for (std::size_t s = 0; s < states.size(); ++s) {
              const std::size_t d = ted(fc, states[s].flat);
              if (d < best_d) {
                best_d = d;
                best = s;
              }
            }
            record(m, t.task, static_cast<double>(ted(*states[best].successor, next)));
            break;
          }
          case PredictMethod::kLinear: {
            Tree pred = decode(model, dynsys_step(ds, code_of(cur)));
            record(m, t.task, static_cast<double>(ted(pred, next)));
            report.linear_predictions.push_back(std::move(pred));
            break;
          }
        }
      }
    }
  }
  return report;
}

PredictionReport predict_eval_kfold(const std::vector<Trace>& traces, const Model& model, std::size_t folds,
                                    std::uint64_t seed, std::optional<std::size_t> train_students,
                                    const PredictOptions& options) {
  PredictionReport total;
  for (const auto& split : kfold_by_student(traces, folds, seed, train_students)) {
    total.merge(predict_eval(split.train, split.test, model, options));
  }
  return total;
}

// ---------------------------------------------------------------------------

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

AutoencodeResult eval_autoencode(const Model& model, const std::vector<Tree>& trees) {
  AutoencodeResult r;
  std::map<std::size_t, std::vector<double>> by_size;
  for (const Tree& t : trees) {
    const std::size_t size = tree_size(t);
    const std::size_t err = ted(t, decode(model, encode(model, t)));
    r.sizes.push_back(size);
    r.errors.push_back(err);
    by_size[size].push_back(static_cast<double>(err));
  }
  for (const auto& [size, errs] : by_size) {
    SizeRow row;
    row.size = size;
    row.count = errs.size();
    for (double e : errs) row.mean += e;
    row.mean /= static_cast<double>(errs.size());
    for (double e : errs) row.std += (e - row.mean) * (e - row.mean);
    row.std = std::sqrt(row.std / static_cast<double>(errs.size()));
    row.median = median(errs);
    r.table.push_back(row);
  }
  return r;
}

}  // namespace treecode
