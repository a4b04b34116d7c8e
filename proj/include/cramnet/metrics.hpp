#pragma once

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cramnet/data.hpp"
#include "cramnet/graph.hpp"

namespace cramnet {

struct MetricsReport {
  long long params_new = 0, params_old = 0;
  double param_ratio = 0;  // percent
  long long flops_new = 0, flops_old = 0;
  double flop_ratio = 0;  // percent
  double a_100 = 0;       // baseline accuracy, percent
  double a_c = 0;         // compressed accuracy, percent
  double delta_a = 0;     // a_c - a_100, un-normalised
};

nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_from_json(const nlohmann::json& j);

/// 100 * num / den; throws on a zero denominator.
double ratio_percent(long long num, long long den);

double param_ratio(const ArchitectureSpec& compressed, const ArchitectureSpec& original);
double flop_ratio(const ArchitectureSpec& compressed, const ArchitectureSpec& original);

/// Percent of samples whose argmax logit matches the label; argmax ties
/// resolve to the lowest class index.
double accuracy(const Model& model, const Dataset& test_set);

inline double delta_a(double a_c, double a_100) { return a_c - a_100; }

MetricsReport make_metrics(const ArchitectureSpec& compressed, const ArchitectureSpec& original,
                           double a_c, double a_100);

struct RunSummary {
  std::string run_id;
  std::optional<long long> params;
  std::optional<double> param_ratio, flop_ratio, delta_a;
};

/// Writes points.csv (run_id,param_ratio,flop_ratio,delta_a) and a
/// Markdown table (report.md); absent values render as "-".
void emit_report(const std::vector<RunSummary>& runs, const std::filesystem::path& out_dir);

}  // namespace cramnet
