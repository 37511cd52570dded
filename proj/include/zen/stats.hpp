#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace zen {

struct RunSummary {
  double mean = 0.0;
  double std_dev = 0.0;  // sample (n-1) standard deviation
  double se = 0.0;
  double ci95 = 0.0;     // 1.96 * se
};

RunSummary summarize(const std::vector<double>& values);

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  bool degenerate = false;
  bool exact = true;  // Wilcoxon: exact enumeration vs normal approximation
};

// two-sided paired t-test on differences a - b, Student t with n-1 dof
TestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Wilcoxon signed-rank, zero differences dropped, average ranks on ties.
// Exact 2^m enumeration for m <= max_exact, normal approximation with tie
// correction beyond.
TestResult wilcoxon_signed_rank(const std::vector<double>& a,
                                const std::vector<double>& b,
                                std::size_t max_exact = 20);

// regularized incomplete beta I_x(a,b), series/continued-fraction evaluation
double incomplete_beta(double a, double b, double x);

double student_t_two_sided(double t, double dof);
double normal_cdf(double x);

enum class TaskDirection { higher_better, lower_better };

struct RunTable {
  std::vector<std::string> models;
  std::vector<std::string> tasks;
  // values[model][task] = runs
  std::map<std::string, std::map<std::string, std::vector<double>>> values;

  // CSV with header model,task,run,value
  static RunTable from_csv(const std::string& path);
  void to_csv(const std::string& path) const;
};

struct MeanRankResult {
  // rank[model][task], 1 = best, ties get average rank
  std::map<std::string, std::map<std::string, double>> rank;
  std::map<std::string, double> mean_rank;
};

MeanRankResult mean_rank(const RunTable& table,
                         const std::map<std::string, TaskDirection>& directions);

// average ranks (1 = best) of descending-sorted values
std::vector<double> rank_values(const std::vector<double>& values, TaskDirection dir);

}  // namespace zen
