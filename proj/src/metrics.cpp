#include "cramnet/metrics.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>

#include "cramnet/train.hpp"

namespace cramnet {

using nlohmann::json;

json to_json(const MetricsReport& r) {
  return json{{"params_new", r.params_new}, {"params_old", r.params_old},
              {"param_ratio", r.param_ratio}, {"flops_new", r.flops_new},
              {"flops_old", r.flops_old},   {"flop_ratio", r.flop_ratio},
              {"a_100", r.a_100},           {"a_c", r.a_c},
              {"delta_a", r.delta_a}};
}

MetricsReport metrics_from_json(const json& j) {
  MetricsReport r;
  r.params_new = j.at("params_new").get<long long>();
  r.params_old = j.at("params_old").get<long long>();
  r.param_ratio = j.at("param_ratio").get<double>();
  r.flops_new = j.at("flops_new").get<long long>();
  r.flops_old = j.at("flops_old").get<long long>();
  r.flop_ratio = j.at("flop_ratio").get<double>();
  r.a_100 = j.at("a_100").get<double>();
  r.a_c = j.at("a_c").get<double>();
  r.delta_a = j.at("delta_a").get<double>();
  return r;
}

double ratio_percent(long long num, long long den) {
  if (den == 0) throw std::invalid_argument("ratio against a zero-cost network");
  return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

double param_ratio(const ArchitectureSpec& compressed, const ArchitectureSpec& original) {
  return ratio_percent(count_params(compressed), count_params(original));
}

double flop_ratio(const ArchitectureSpec& compressed, const ArchitectureSpec& original) {
  return ratio_percent(count_flops(compressed), count_flops(original));
}

double accuracy(const Model& model, const Dataset& test_set) {
  if (test_set.size() == 0) throw std::invalid_argument("accuracy: empty test set");
  return evaluate(model, test_set, nullptr, LossKind::plain_ce).accuracy;
}

MetricsReport make_metrics(const ArchitectureSpec& compressed, const ArchitectureSpec& original,
                           double a_c, double a_100) {
  MetricsReport r;
  r.params_new = count_params(compressed);
  r.params_old = count_params(original);
  r.param_ratio = ratio_percent(r.params_new, r.params_old);
  r.flops_new = count_flops(compressed);
  r.flops_old = count_flops(original);
  r.flop_ratio = ratio_percent(r.flops_new, r.flops_old);
  r.a_100 = a_100;
  r.a_c = a_c;
  r.delta_a = delta_a(a_c, a_100);
  return r;
}

namespace {

std::string cell(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << *v;
  return s.str();
}

std::string cell(const std::optional<long long>& v) {
  return v ? std::to_string(*v) : std::string("-");
}

}  // namespace

void emit_report(const std::vector<RunSummary>& runs, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);

  std::ofstream csv(out_dir / "points.csv");
  if (!csv) throw std::runtime_error("cannot write points.csv");
  csv << "run_id,param_ratio,flop_ratio,delta_a\n";
  for (const RunSummary& r : runs)
    csv << r.run_id << ',' << cell(r.param_ratio) << ',' << cell(r.flop_ratio) << ','
        << cell(r.delta_a) << '\n';

  std::ofstream md(out_dir / "report.md");
  if (!md) throw std::runtime_error("cannot write report.md");
  md << "# Compression results\n\n";
  md << "| Test | # Parameters | % of Parameters | % of FLOPs | Accuracy Difference (%) |\n";
  md << "|------|--------------|-----------------|------------|-------------------------|\n";
  for (const RunSummary& r : runs) {
    std::optional<double> signed_delta = r.delta_a;
    std::string delta = cell(signed_delta);
    if (signed_delta && *signed_delta >= 0) delta = "+" + delta;
    md << "| " << r.run_id << " | " << cell(r.params) << " | " << cell(r.param_ratio) << " | "
       << cell(r.flop_ratio) << " | " << delta << " |\n";
  }
}

}  // namespace cramnet
