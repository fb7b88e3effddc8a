#include "vecross/study.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <Eigen/Cholesky>

#include "vecross/inference.hpp"

namespace vecross {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Per-year slope of the least-squares line through the true curve on the
// same grid linear_trend uses.
double truth_slope(const VEProfile& truth, double s_max_days, int grid = 201) {
  Eigen::MatrixXd g(grid, 2);
  Eigen::VectorXd y(grid);
  for (int k = 0; k < grid; ++k) {
    const double s = s_max_days * k / (grid - 1);
    g(k, 0) = 1.0;
    g(k, 1) = s / kDaysPerYear;
    y(k) = linear_predictor(truth, s);
  }
  const Eigen::Vector2d b = (g.transpose() * g).ldlt().solve(g.transpose() * y);
  return b(1);
}

FrailtySummary summarize(std::vector<double> v) {
  FrailtySummary s;
  s.n = static_cast<int>(v.size());
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.sd = v.size() > 1 ? std::sqrt(ss / (v.size() - 1)) : 0.0;
  auto quantile = [&](double p) {
    const double h = (v.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - lo) * (v[hi] - v[lo]);
  };
  s.q25 = quantile(0.25);
  s.q50 = quantile(0.5);
  s.q75 = quantile(0.75);
  return s;
}

std::optional<double> analysis_day(const AnalysisTime& at, const SimulatedTrial& trial) {
  switch (at.kind) {
    case AnalysisTime::Kind::end:
      return std::nullopt;
    case AnalysisTime::Kind::day:
      return at.day;
    case AnalysisTime::Kind::crossover:
      return trial.metadata.trigger_day;
    case AnalysisTime::Kind::cases: {
      std::vector<double> cases;
      for (const auto& r : trial.records) {
        if (r.status == 1 && (!r.has_window() || r.eventtime > *r.xend)) cases.push_back(r.eventtime);
      }
      if (static_cast<int>(cases.size()) < at.cases || at.cases < 1) return std::nullopt;
      std::nth_element(cases.begin(), cases.begin() + (at.cases - 1), cases.end());
      return cases[static_cast<std::size_t>(at.cases - 1)];
    }
  }
  return std::nullopt;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  return format_number(v);
}

std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "NA";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

std::string model_label(ModelKind kind) {
  switch (kind) {
    case ModelKind::constant:
      return "constant";
    case ModelKind::loglinear:
      return "loglinear";
    case ModelKind::pspline:
      return "pspline";
  }
  return "?";
}

std::uint64_t replicate_seed(std::uint64_t base_seed, int replicate) {
  return derive_seed(base_seed, static_cast<std::uint64_t>(replicate), 0x5354554459ULL);
}

ReplicateResult run_replicate(const StudySpec& spec, int replicate) {
  ReplicateResult out;
  out.index = replicate;
  out.seed = replicate_seed(spec.base_seed, replicate);
  Scenario scenario = spec.scenario;
  scenario.design.seed = out.seed;
  const SimulatedTrial trial = simulate_trial(scenario);
  out.metadata = trial.metadata;

  if (spec.collect_frailty) {
    std::array<std::vector<double>, 2> alive;
    for (std::size_t i = 0; i < trial.records.size(); ++i) {
      const auto& r = trial.records[i];
      if (r.status == 0 && r.eventtime == r.entry + scenario.design.followup_days) {
        alive[static_cast<std::size_t>(r.arm)].push_back(trial.frailty[i]);
      }
    }
    for (int a = 0; a < 2; ++a) out.frailty[a] = summarize(std::move(alive[a]));
  }

  std::vector<ParticipantRecord> records = trial.records;
  if (const auto day = analysis_day(spec.analysis, trial)) records = censor_records_at(records, *day);
  ReshapeOptions ro;
  ro.open_label_strata = spec.open_label_strata;
  std::vector<RiskInterval> intervals = reshape_counting_process(records, ro).intervals;
  if (spec.time_axis == TimeAxis::entry) intervals = align_on_entry(intervals);
  for (const auto& iv : intervals) out.n_events += iv.event;
  const CoxData data(std::move(intervals));

  ModelSpec base;
  base.stratified = spec.open_label_strata;
  std::vector<std::optional<FitResult>> fits(spec.models.size());
  const double max_eval_days = spec.eval_years.empty()
                                   ? kDaysPerYear
                                   : *std::max_element(spec.eval_years.begin(), spec.eval_years.end()) *
                                         kDaysPerYear;

  for (std::size_t m = 0; m < spec.models.size(); ++m) {
    ModelOutcome mo;
    mo.kind = spec.models[m].kind;
    try {
      FitResult f;
      double trend_range = max_eval_days;
      if (mo.kind == ModelKind::pspline) {
        f = fit_pspline(data, spec.models[m].pspline, base);
        trend_range = std::get<SplineForm>(f.spec.form).basis->s_max();
      } else {
        ModelSpec ms = base;
        if (mo.kind == ModelKind::constant) ms.form = ConstantForm{};
        f = fit(data, ms);
      }
      mo.iterations = f.iterations;
      mo.df = mo.kind == ModelKind::pspline ? f.spline_df : f.effective_df;
      if (!f.converged) {
        mo.error = "did not converge";
      } else {
        mo.ok = true;
        const double f0 = linear_predictor(scenario.truth, 0.0);
        for (double sy : spec.eval_years) {
          const double s = sy * kDaysPerYear;
          const Contrast c = linear_predictor_at(f, s);
          const Contrast ch = ve_change(f, s);
          const double truth = linear_predictor(scenario.truth, s);
          mo.at_s.push_back({c.estimate, c.se, truth});
          if (mo.kind == ModelKind::constant) {
            mo.change.push_back({kNaN, kNaN, truth - f0});
          } else {
            mo.change.push_back({ch.estimate, ch.se, truth - f0});
          }
        }
        const LinearTrend lt = linear_trend(f, trend_range);
        const double ts = truth_slope(scenario.truth, trend_range);
        // The intercept is f(0), the log hazard ratio at vaccination.
        const Contrast c0 = linear_predictor_at(f, 0.0);
        mo.intercept = {c0.estimate, c0.se, f0};
        mo.slope = {lt.slope_per_year, std::sqrt(std::max(0.0, lt.covariance(1, 1))), ts};
        // No trend or change is estimated under a constant profile.
        if (mo.kind == ModelKind::constant) mo.slope.value = mo.slope.se = kNaN;
        fits[m] = std::move(f);
      }
    } catch (const std::exception& e) {
      mo.error = e.what();
    }
    out.models.push_back(std::move(mo));
  }

  // LRT of each time-varying model against the constant model.
  std::optional<std::size_t> null_index;
  for (std::size_t m = 0; m < spec.models.size(); ++m) {
    if (spec.models[m].kind == ModelKind::constant && fits[m]) null_index = m;
  }
  if (null_index) {
    for (std::size_t m = 0; m < spec.models.size(); ++m) {
      if (m == *null_index || !fits[m] || spec.models[m].kind == ModelKind::constant) continue;
      try {
        const LRTResult lrt = lrt_time_varying(*fits[m], *fits[*null_index]);
        out.models[m].lrt_p = lrt.p_value;
        out.models[m].lrt_df = lrt.df;
        out.models[m].lrt_statistic = lrt.statistic;
      } catch (const std::exception&) {
        // Non-nested optimum; leave the test unreported for this replicate.
      }
    }
  }
  return out;
}

const MetricRow* MetricsTable::find(ModelKind model, const std::string& quantity,
                                    double s_years) const {
  for (const auto& r : rows) {
    if (r.model == model && r.quantity == quantity && std::abs(r.s_years - s_years) < 1e-9) return &r;
  }
  return nullptr;
}

MetricsTable aggregate(const StudySpec& spec, const std::vector<ReplicateResult>& reps) {
  MetricsTable t;
  t.n_replicates = static_cast<int>(reps.size());
  t.eval_years = spec.eval_years;

  auto metric = [&](std::size_t m, const std::string& quantity, double s_years,
                    auto&& pick) {
    MetricRow row;
    row.model = spec.models[m].kind;
    row.quantity = quantity;
    row.s_years = s_years;
    double sum_err = 0.0, sum_se = 0.0;
    int covered = 0;
    std::vector<double> errs;
    for (const auto& r : reps) {
      const auto& mo = r.models[m];
      if (!mo.ok) continue;
      const Estimate e = pick(mo);
      if (std::isnan(e.value)) continue;
      const double err = e.value - e.truth;
      errs.push_back(err);
      sum_err += err;
      sum_se += e.se;
      covered += std::abs(err) <= kZ95 * e.se ? 1 : 0;
    }
    row.n = static_cast<int>(errs.size());
    if (row.n == 0) {
      row.bias = row.emp_var = row.coverage = row.mean_se = kNaN;
      return row;
    }
    row.bias = sum_err / row.n;
    row.coverage = static_cast<double>(covered) / row.n;
    row.mean_se = sum_se / row.n;
    if (row.n < 2) {
      row.emp_var = kNaN;
    } else {
      double ss = 0.0;
      for (double e : errs) ss += (e - row.bias) * (e - row.bias);
      row.emp_var = ss / (row.n - 1);
    }
    return row;
  };

  for (std::size_t m = 0; m < spec.models.size(); ++m) {
    for (std::size_t k = 0; k < spec.eval_years.size(); ++k) {
      t.rows.push_back(metric(m, "f", spec.eval_years[k],
                              [k](const ModelOutcome& mo) { return mo.at_s[k]; }));
      t.rows.push_back(metric(m, "change", spec.eval_years[k],
                              [k](const ModelOutcome& mo) { return mo.change[k]; }));
    }
    t.rows.push_back(metric(m, "intercept", 0.0, [](const ModelOutcome& mo) { return mo.intercept; }));
    t.rows.push_back(metric(m, "slope", 0.0, [](const ModelOutcome& mo) { return mo.slope; }));

    MetricsTable::ModelSummary ms{spec.models[m].kind};
    int n_lrt = 0, r05 = 0, r001 = 0;
    double df_sum = 0.0, lrt_df_sum = 0.0;
    for (const auto& r : reps) {
      const auto& mo = r.models[m];
      if (!mo.ok) {
        ++ms.non_converged;
        continue;
      }
      ++ms.n_used;
      df_sum += mo.df;
      if (mo.lrt_p) {
        ++n_lrt;
        r05 += *mo.lrt_p < 0.05;
        r001 += *mo.lrt_p < 0.001;
        lrt_df_sum += mo.lrt_df;
      }
    }
    ms.mean_df = ms.n_used ? df_sum / ms.n_used : kNaN;
    ms.has_lrt = n_lrt > 0;
    if (ms.has_lrt) {
      ms.reject_05 = static_cast<double>(r05) / n_lrt;
      ms.reject_001 = static_cast<double>(r001) / n_lrt;
      ms.mean_lrt_df = lrt_df_sum / n_lrt;
    }
    if (t.n_replicates > 0 && ms.non_converged > 0.05 * t.n_replicates) {
      std::ostringstream os;
      os << "WARNING: " << model_label(ms.model) << " model failed in " << ms.non_converged << " of "
         << t.n_replicates << " replicates (more than 5%); aggregates exclude them";
      t.warnings.push_back(os.str());
    }
    t.models.push_back(ms);
  }
  if (t.n_replicates < 2) {
    t.warnings.push_back("empirical variances unavailable with fewer than two replicates");
  }

  std::vector<double> tau, nx;
  double events = 0.0;
  for (const auto& r : reps) {
    events += r.n_events;
    if (r.metadata.trigger_day) {
      tau.push_back(*r.metadata.trigger_day / kDaysPerYear);
      nx.push_back(r.metadata.cases_before_crossover);
    }
  }
  t.events_mean = reps.empty() ? kNaN : events / reps.size();
  t.n_triggered = static_cast<int>(tau.size());
  auto mean_sd = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = sd = kNaN;
    if (v.empty()) return;
    double s = 0.0;
    for (double x : v) s += x;
    mean = s / v.size();
    if (v.size() < 2) return;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = std::sqrt(ss / (v.size() - 1));
  };
  mean_sd(tau, t.tau_x_mean, t.tau_x_sd);
  mean_sd(nx, t.n_x_mean, t.n_x_sd);

  if (spec.collect_frailty && !reps.empty()) {
    t.has_frailty = true;
    for (int a = 0; a < 2; ++a) {
      double lm = 0.0, ls = 0.0, l25 = 0.0, l50 = 0.0, l75 = 0.0;
      int n = 0;
      for (const auto& r : reps) {
        const auto& f = r.frailty[static_cast<std::size_t>(a)];
        if (f.n < 2) continue;
        lm += std::log(f.mean);
        ls += std::log(f.sd);
        l25 += std::log(f.q25);
        l50 += std::log(f.q50);
        l75 += std::log(f.q75);
        ++n;
      }
      auto& out = t.frailty[static_cast<std::size_t>(a)];
      out.n = n;
      if (n > 0) {
        out.mean = std::exp(lm / n);
        out.sd = std::exp(ls / n);
        out.q25 = std::exp(l25 / n);
        out.q50 = std::exp(l50 / n);
        out.q75 = std::exp(l75 / n);
      }
    }
  }
  return t;
}

StudyResult run_study(const StudySpec& spec) {
  if (spec.n_replicates < 1) throw std::invalid_argument("study: n_replicates must be >= 1");
  if (spec.models.empty()) throw std::invalid_argument("study: no models requested");
  for (double s : spec.eval_years) {
    if (!(s >= 0.0)) throw std::invalid_argument("study: evaluation times must be >= 0");
  }
  check_scenario(spec.scenario);

  StudyResult out;
  out.replicates.resize(static_cast<std::size_t>(spec.n_replicates));
  std::atomic<int> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= spec.n_replicates) return;
      try {
        out.replicates[static_cast<std::size_t>(r)] = run_replicate(spec, r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(spec.n_replicates);
      }
    }
  };
  const int jobs = std::clamp(spec.jobs, 1, spec.n_replicates);
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);

  out.table = aggregate(spec, out.replicates);
  return out;
}

std::vector<VarianceRatio> compare_designs(const MetricsTable& a, const MetricsTable& b) {
  if (a.eval_years != b.eval_years) {
    throw std::invalid_argument("compare_designs: evaluation grids differ");
  }
  std::vector<VarianceRatio> out;
  for (const auto& ra : a.rows) {
    const MetricRow* rb = b.find(ra.model, ra.quantity, ra.s_years);
    if (!rb) {
      throw std::invalid_argument("compare_designs: no matching row for " + model_label(ra.model) +
                                  " " + ra.quantity);
    }
    out.push_back({ra.model, ra.quantity, ra.s_years, ra.emp_var / rb->emp_var});
  }
  return out;
}

void write_metrics_csv(std::ostream& out, const MetricsTable& t) {
  out << "model,quantity,s_years,bias,emp_var,coverage,mean_se,n\n";
  for (const auto& r : t.rows) {
    out << model_label(r.model) << ',' << r.quantity << ',' << fmt(r.s_years) << ','
        << fmt(r.bias) << ',' << fmt(r.emp_var) << ',' << fmt(r.coverage) << ','
        << fmt(r.mean_se) << ',' << r.n << '\n';
  }
}

void write_metrics_markdown(std::ostream& out, const MetricsTable& t, const std::string& title) {
  out << "# " << title << "\n\n";
  for (const auto& w : t.warnings) out << "**" << w << "**\n\n";
  out << "Replicates: " << t.n_replicates << "; mean counted events per analysis: "
      << fixed(t.events_mean, 1) << "\n\n";
  if (t.n_triggered > 0) {
    out << "Crossover triggered in " << t.n_triggered << " replicates: tau_x = "
        << fixed(t.tau_x_mean, 3) << " +/- " << fixed(t.tau_x_sd, 3) << " years, N_x = "
        << fixed(t.n_x_mean, 1) << " +/- " << fixed(t.n_x_sd, 1) << "\n\n";
  }
  out << "| Model | Time (yr) | Bias | Emp. Var. | Covg. | Change bias | Change emp. var. | Change covg. |\n";
  out << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& ms : t.models) {
    for (double s : t.eval_years) {
      const MetricRow* f = t.find(ms.model, "f", s);
      const MetricRow* c = t.find(ms.model, "change", s);
      out << "| " << model_label(ms.model) << " | " << fixed(s, 1) << " | " << fixed(f->bias, 3)
          << " | " << fixed(f->emp_var, 3) << " | " << fixed(f->coverage, 3) << " | "
          << fixed(c->bias, 3) << " | " << fixed(c->emp_var, 3) << " | " << fixed(c->coverage, 3)
          << " |\n";
    }
  }
  out << "\n| Model | Quantity | Bias | Emp. Var. | Covg. | Used | Failed | LRT reject 0.05 | LRT reject 0.001 | Mean df |\n";
  out << "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& ms : t.models) {
    for (const char* q : {"intercept", "slope"}) {
      const MetricRow* r = t.find(ms.model, q, 0.0);
      out << "| " << model_label(ms.model) << " | " << q << " | " << fixed(r->bias, 3) << " | "
          << fixed(r->emp_var, 3) << " | " << fixed(r->coverage, 3) << " | " << ms.n_used << " | "
          << ms.non_converged << " | " << (ms.has_lrt ? fixed(ms.reject_05, 3) : "-") << " | "
          << (ms.has_lrt ? fixed(ms.reject_001, 3) : "-") << " | " << fixed(ms.mean_df, 2) << " |\n";
    }
  }
  if (t.has_frailty) {
    out << "\nFrailty of participants at risk at end of follow-up (geometric means across replicates)\n\n";
    out << "| Original arm | Mean | SD | 25% | 50% | 75% |\n|---|---|---|---|---|---|\n";
    for (int a = 0; a < 2; ++a) {
      const auto& f = t.frailty[static_cast<std::size_t>(a)];
      out << "| " << (a == 0 ? "placebo" : "vaccine") << " | " << fixed(f.mean, 3) << " | "
          << fixed(f.sd, 3) << " | " << fixed(f.q25, 3) << " | " << fixed(f.q50, 3) << " | "
          << fixed(f.q75, 3) << " |\n";
    }
  }
}

void write_replicates_csv(std::ostream& out, const std::vector<ReplicateResult>& reps,
                          const std::vector<double>& eval_years) {
  out << "replicate,seed,model,ok,quantity,s_years,value,se,truth,lrt_p,trigger_day,n_x,events\n";
  for (const auto& r : reps) {
    const std::string trig = r.metadata.trigger_day ? fmt(*r.metadata.trigger_day) : "NA";
    for (const auto& mo : r.models) {
      auto line = [&](const std::string& q, double s, const Estimate& e) {
        out << r.index << ',' << r.seed << ',' << model_label(mo.kind) << ',' << (mo.ok ? 1 : 0)
            << ',' << q << ',' << fmt(s) << ',' << fmt(mo.ok ? e.value : kNaN) << ','
            << fmt(mo.ok ? e.se : kNaN) << ',' << fmt(e.truth) << ','
            << (mo.lrt_p ? fmt(*mo.lrt_p) : "NA") << ',' << trig << ','
            << r.metadata.cases_before_crossover << ',' << r.n_events << '\n';
      };
      if (!mo.ok) {
        line("none", 0.0, Estimate{kNaN, kNaN, kNaN});
        continue;
      }
      for (std::size_t k = 0; k < eval_years.size(); ++k) {
        line("f", eval_years[k], mo.at_s[k]);
        line("change", eval_years[k], mo.change[k]);
      }
      line("intercept", 0.0, mo.intercept);
      line("slope", 0.0, mo.slope);
    }
  }
}

}  // namespace vecross
