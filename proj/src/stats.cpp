#include "zen/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace zen {

RunSummary summarize(const std::vector<double>& values) {
  std::size_t n = values.size();
  if (n < 2)
    throw std::invalid_argument("summarize: need at least 2 runs, got " +
                                std::to_string(n));
  RunSummary s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(n);
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std_dev = std::sqrt(ss / double(n - 1));
  s.se = s.std_dev / std::sqrt(double(n));
  s.ci95 = 1.96 * s.se;
  return s;
}

namespace {

// Lentz continued fraction for the incomplete beta (Numerical Recipes form)
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 1e-15;
  constexpr double kFpMin = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                    a * std::log(x) + b * std::log(1.0 - x);
  double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double dof) {
  double x = dof / (dof + t * t);
  return incomplete_beta(dof / 2.0, 0.5, x);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

TestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("paired_t_test: unequal lengths");
  std::size_t n = a.size();
  if (n < 2) throw std::invalid_argument("paired_t_test: need n >= 2");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  double mean = std::accumulate(d.begin(), d.end(), 0.0) / double(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  double sd = std::sqrt(ss / double(n - 1));
  TestResult res;
  if (sd == 0.0) {
    res.degenerate = true;
    res.p_value = mean == 0.0 ? 1.0 : 0.0;
    res.statistic = mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return res;
  }
  res.statistic = mean / (sd / std::sqrt(double(n)));
  res.p_value = student_t_two_sided(res.statistic, double(n - 1));
  return res;
}

namespace {

// average ranks of |d|, ascending
std::vector<double> abs_ranks(const std::vector<double>& d) {
  std::size_t m = d.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return std::abs(d[x]) < std::abs(d[y]);
  });
  std::vector<double> ranks(m, 0.0);
  std::size_t i = 0;
  while (i < m) {
    std::size_t j = i;
    while (j + 1 < m && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    double avg = 0.5 * double(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

TestResult wilcoxon_signed_rank(const std::vector<double>& a,
                                const std::vector<double>& b,
                                std::size_t max_exact) {
  if (a.size() != b.size())
    throw std::invalid_argument("wilcoxon_signed_rank: unequal lengths");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double v = a[i] - b[i];
    if (v != 0.0) d.push_back(v);  // drop zeros, classical convention
  }
  TestResult res;
  if (d.empty()) {
    res.degenerate = true;
    res.p_value = 1.0;
    return res;
  }
  std::size_t m = d.size();
  std::vector<double> ranks = abs_ranks(d);
  double w_plus = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    if (d[i] > 0.0) w_plus += ranks[i];
  res.statistic = w_plus;

  if (m <= max_exact) {
    // full enumeration over sign assignments
    std::uint64_t total = std::uint64_t(1) << m;
    std::uint64_t le = 0, ge = 0;
    constexpr double kTol = 1e-9;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
      double w = 0.0;
      for (std::size_t i = 0; i < m; ++i)
        if (mask & (std::uint64_t(1) << i)) w += ranks[i];
      le += w <= w_plus + kTol;
      ge += w >= w_plus - kTol;
    }
    double p = 2.0 * double(std::min(le, ge)) / double(total);
    res.p_value = std::min(p, 1.0);
    res.exact = true;
  } else {
    double mean = double(m) * double(m + 1) / 4.0;
    double var = double(m) * double(m + 1) * double(2 * m + 1) / 24.0;
    // tie correction: subtract sum(t^3 - t)/48 per tie group
    std::vector<double> sorted_abs(m);
    for (std::size_t i = 0; i < m; ++i) sorted_abs[i] = std::abs(d[i]);
    std::sort(sorted_abs.begin(), sorted_abs.end());
    std::size_t i = 0;
    while (i < m) {
      std::size_t j = i;
      while (j + 1 < m && sorted_abs[j + 1] == sorted_abs[i]) ++j;
      double t = double(j - i + 1);
      var -= (t * t * t - t) / 48.0;
      i = j + 1;
    }
    double z = (w_plus - mean) / std::sqrt(var);
    res.p_value = std::min(1.0, 2.0 * (1.0 - normal_cdf(std::abs(z))));
    res.exact = false;
  }
  return res;
}

std::vector<double> rank_values(const std::vector<double>& values, TaskDirection dir) {
  std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return dir == TaskDirection::higher_better ? values[x] > values[y]
                                               : values[x] < values[y];
  });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    double avg = 0.5 * double(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

MeanRankResult mean_rank(const RunTable& table,
                         const std::map<std::string, TaskDirection>& directions) {
  if (table.models.empty() || table.tasks.empty())
    throw std::invalid_argument("mean_rank: empty table");
  MeanRankResult out;
  for (const auto& task : table.tasks) {
    auto dit = directions.find(task);
    if (dit == directions.end())
      throw std::invalid_argument("mean_rank: no direction for task " + task);
    std::vector<double> cell_means;
    for (const auto& model : table.models) {
      auto mit = table.values.find(model);
      if (mit == table.values.end() || !mit->second.count(task) ||
          mit->second.at(task).empty())
        throw std::invalid_argument("mean_rank: missing cell for model " + model +
                                    ", task " + task);
      const auto& runs = mit->second.at(task);
      cell_means.push_back(std::accumulate(runs.begin(), runs.end(), 0.0) /
                           double(runs.size()));
    }
    std::vector<double> ranks = rank_values(cell_means, dit->second);
    for (std::size_t i = 0; i < table.models.size(); ++i)
      out.rank[table.models[i]][task] = ranks[i];
  }
  for (const auto& model : table.models) {
    double sum = 0.0;
    for (const auto& task : table.tasks) sum += out.rank[model][task];
    out.mean_rank[model] = sum / double(table.tasks.size());
  }
  return out;
}

RunTable RunTable::from_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open for read: " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("model,task,run,value", 0) != 0)
    throw std::runtime_error("run table: bad header in " + path);
  RunTable t;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string model, task, run, value;
    if (!std::getline(ss, model, ',') || !std::getline(ss, task, ',') ||
        !std::getline(ss, run, ',') || !std::getline(ss, value, ','))
      throw std::runtime_error("run table: malformed line " + std::to_string(lineno));
    if (!t.values.count(model)) t.models.push_back(model);
    if (std::find(t.tasks.begin(), t.tasks.end(), task) == t.tasks.end())
      t.tasks.push_back(task);
    t.values[model][task].push_back(std::stod(value));
  }
  return t;
}

void RunTable::to_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << "model,task,run,value\n";
  f.precision(17);
  for (const auto& model : models)
    for (const auto& task : tasks) {
      const auto& runs = values.at(model).at(task);
      for (std::size_t r = 0; r < runs.size(); ++r)
        f << model << "," << task << "," << r << "," << runs[r] << "\n";
    }
}

}  // namespace zen
