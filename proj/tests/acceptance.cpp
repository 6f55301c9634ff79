#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "mycobow.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

namespace fs = std::filesystem;
using namespace mycobow;
using clock_type = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double seconds_since(clock_type::time_point t) { return std::chrono::duration<double>(clock_type::now() - t).count(); }

oracle::Gmm to_oracle(const GmmModel& m) {
  oracle::Gmm g;
  for (Eigen::Index k = 0; k < m.means.rows(); ++k) {
    g.weights.push_back(m.weights[k]);
    g.means.emplace_back(m.means.row(k).data(), m.means.row(k).data() + m.means.cols());
    g.variances.emplace_back(m.variances.row(k).data(), m.variances.row(k).data() + m.variances.cols());
  }
  return g;
}

void fv_oracle() {
  Rng rng(1001);
  const auto start = clock_type::now();
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto k = static_cast<Eigen::Index>(1 + rng.below(3));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(4));
    const auto n = static_cast<Eigen::Index>(1 + rng.below(8));
    GmmModel m;
    m.weights = Vector(k);
    for (Eigen::Index j = 0; j < k; ++j) m.weights[j] = 0.2 + rng.uniform();
    m.weights /= m.weights.sum();
    m.means = testing_helpers::random_matrix(rng, k, d);
    m.variances = Matrix(k, d);
    for (Eigen::Index j = 0; j < k; ++j)
      for (Eigen::Index t = 0; t < d; ++t) m.variances(j, t) = 0.3 + 2.0 * rng.uniform();
    DescriptorSet set;
    set.descriptors = testing_helpers::random_matrix(rng, n, d, 2.0).cast<float>();
    std::vector<std::vector<double>> xs;
    for (Eigen::Index i = 0; i < n; ++i) {
      std::vector<double> row;
      for (Eigen::Index t = 0; t < d; ++t) row.push_back(set.descriptors(i, t));
      xs.push_back(row);
    }
    const auto fv = encode(m, set);
    const auto o = oracle::fv(to_oracle(m), xs);
    double scale = 0, err = 0;
    for (std::size_t i = 0; i < o.size(); ++i) {
      scale = std::max(scale, std::abs(o[i]));
      err = std::max(err, std::abs(fv.values[static_cast<Eigen::Index>(i)] - o[i]));
    }
    worst = std::max(worst, scale > 0 ? err / scale : err);
  }
  const double secs = seconds_since(start);
  report("FV oracle equivalence", worst < 1e-10 && secs < 5.0,
         fmt("200 instances, max relative error %.3g (< 1e-10), %.2f s (< 5 s)", worst, secs));
}

void fv_stationarity() {
  Rng rng(1002);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(300));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(16));
    DescriptorSet set;
    set.descriptors = testing_helpers::random_matrix(rng, n, d, 0.5 + 10 * rng.uniform()).cast<float>();
    const Matrix x = set.descriptors.cast<double>();
    GmmModel m;
    m.weights = Vector::Ones(1);
    m.means = x.colwise().mean();
    m.variances = ((x.rowwise() - m.means.row(0)).array().square().colwise().sum() / static_cast<double>(n)).matrix();
    worst = std::max(worst, encode(m, set).values.cwiseAbs().maxCoeff());
  }
  report("FV stationarity", worst < 1e-10, fmt("50 datasets, max |entry| %.3g (< 1e-10)", worst));
}

void em_checks() {
  double worst_drop = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(5000 + seed);
    const auto n = static_cast<Eigen::Index>(16 + rng.below(485));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(8));
    EmConfig cfg;
    cfg.k = 1 + rng.below(8);
    cfg.seed = seed;
    Matrix x = testing_helpers::random_matrix(rng, n, d);
    for (Eigen::Index i = 0; i < n; ++i) x.row(i).array() += 3.0 * static_cast<double>(i % 4);
    const auto [model, trace] = em_fit(x, cfg);
    for (std::size_t t = 1; t < trace.log_likelihood.size(); ++t) {
      worst_drop = std::max(worst_drop, trace.log_likelihood[t - 1] - trace.log_likelihood[t]);
    }
  }
  Rng rng(2024);
  Matrix x(400, 1);
  for (int i = 0; i < 200; ++i) {
    x(i, 0) = 0.1 * rng.normal();
    x(200 + i, 0) = 10.0 + 0.1 * rng.normal();
  }
  EmConfig cfg;
  cfg.k = 2;
  cfg.seed = 1;
  const auto [m, trace] = em_fit(x, cfg);
  const double lo = std::min(m.means(0, 0), m.means(1, 0));
  const double hi = std::max(m.means(0, 0), m.means(1, 0));
  const bool recovered = std::abs(lo) < 0.1 && std::abs(hi - 10.0) < 0.1;
  report("EM monotonicity and recovery", worst_drop <= 1e-8 && recovered,
         fmt("100 runs, largest log-likelihood drop %.3g (<= 1e-8); recovered means %.4f, %.4f", worst_drop, lo, hi));
}

Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

void svm_checks() {
  double worst_gap = 0, worst_w = 0;
  auto check = [&](const std::vector<std::vector<double>>& x, const std::vector<int>& y, double c) {
    const auto fit = train_binary_svm(to_matrix(x), y, c, 11);
    const auto o = oracle::svm_small(x, y, c);
    worst_gap = std::max(worst_gap, fit.duality_gap);
    for (std::size_t t = 0; t < o.w.size(); ++t) worst_w = std::max(worst_w, std::abs(fit.w[static_cast<Eigen::Index>(t)] - o.w[t]));
  };
  check({{1, 2}, {2, 0.5}, {-1, -1}, {0.5, -1.5}}, {1, 1, -1, -1}, 1.0);
  Rng rng(3003);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 2 + rng.below(7);
    const std::size_t d = 1 + rng.below(3);
    std::vector<std::vector<double>> x(m, std::vector<double>(d));
    std::vector<int> y(m);
    for (std::size_t i = 0; i < m; ++i) {
      y[i] = i % 2 ? 1 : -1;
      for (auto& v : x[i]) v = rng.normal() + 0.8 * y[i];
    }
    check(x, y, std::pow(10.0, rng.uniform() * 3 - 1.5));
  }
  Matrix pair(2, 1);
  pair << -1, 1;
  double pair_acc = 1.0;
  for (double c : {1.0, 10.0, 100.0}) {
    const auto model = train_svm_ovr(pair, {Species::CA, Species::CG}, c, 3);
    for (Eigen::Index gap_class = 0; gap_class < 2; ++gap_class) worst_gap = std::max(worst_gap, model.duality_gap[static_cast<std::size_t>(gap_class)]);
    const bool ok = argmax(decision_scores(model, pair.row(0))) == 0 && argmax(decision_scores(model, pair.row(1))) == 1;
    pair_acc = std::min(pair_acc, ok ? 1.0 : 0.5);
  }
  report("SVM", worst_gap <= 1e-6 && worst_w <= 1e-4 && pair_acc == 1.0,
         fmt("max duality gap %.3g (<= 1e-6), max |w - oracle| %.3g (<= 1e-4), separable-pair accuracy %.1f", worst_gap,
             worst_w, pair_acc));
}

void head_gradients() {
  Rng rng(4004);
  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    HeadConfig cfg;
    cfg.hidden = 6 + static_cast<std::size_t>(trial);
    cfg.seed = static_cast<std::uint64_t>(trial);
    auto head = init_baseline_head(5, cfg);
    head.b1 = testing_helpers::random_matrix(rng, head.b1.size(), 1, 0.1);
    head.b2 = testing_helpers::random_matrix(rng, 9, 1, 0.1);
    head.input_mean = testing_helpers::random_matrix(rng, 1, 5, 0.2);
    const Matrix pooled = testing_helpers::random_matrix(rng, 3, 5);
    std::vector<Species> labels;
    for (int i = 0; i < 3; ++i) labels.push_back(species_at(rng.below(9)));
    const std::vector<std::size_t> rows = {0, 1, 2};
    const auto grad = head_loss_and_gradient(head, pooled, labels, rows).second;
    double err = 0, scale = 0;
    auto probe = [&](double& p, double analytic) {
      const double keep = p;
      p = keep + 1e-5;
      const double up = head_loss_and_gradient(head, pooled, labels, rows).first;
      p = keep - 1e-5;
      const double down = head_loss_and_gradient(head, pooled, labels, rows).first;
      p = keep;
      const double numeric = (up - down) / 2e-5;
      err = std::max(err, std::abs(numeric - analytic));
      scale = std::max(scale, std::abs(numeric));
    };
    for (Eigen::Index i = 0; i < head.w1.size(); ++i) probe(head.w1.data()[i], grad.w1.data()[i]);
    for (Eigen::Index i = 0; i < head.b1.size(); ++i) probe(head.b1[i], grad.b1[i]);
    for (Eigen::Index i = 0; i < head.w2.size(); ++i) probe(head.w2.data()[i], grad.w2.data()[i]);
    for (Eigen::Index i = 0; i < head.b2.size(); ++i) probe(head.b2[i], grad.b2[i]);
    worst = std::max(worst, err / scale);
  }
  report("Baseline head gradients", worst < 1e-4, fmt("10 parameter points, max relative error %.3g (< 1e-4)", worst));
}

void protocol_integrity(const fs::path& data) {
  const auto records = load_manifest((data / "manifest.jsonl").string());
  PipelineConfig config = synthetic_pipeline_config();
  config.data_root = data;
  config.grids.k_grid = {4, 8};
  config.grids.c_grid = {0.1, 1};
  const auto patches = load_patches(records, config, default_threads());
  std::size_t leaks = 0, mismatches = 0, checked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = run_experiment(records, patches, Method::fv_svm, config, {seed, default_threads()});
    for (const auto& f : r.folds) {
      const std::set<std::string> test(f.test_scans.begin(), f.test_scans.end());
      for (const auto& s : f.train_scans) leaks += test.count(s);
      for (const auto& s : f.train_scans) leaks += f.internal_fold.count(s) == 1 ? 0 : 1;
      for (const auto& [s, k] : f.internal_fold) leaks += test.count(s);
      const std::set<std::string> train(f.train_scans.begin(), f.train_scans.end());
      std::size_t train_patches = 0, test_patches = 0;
      for (const auto& p : patches) {
        if (p.foreground) train_patches += train.count(p.scan_id);
        test_patches += test.count(p.scan_id);
      }
      if (train_patches != f.train_patches || test_patches != f.test_patches) ++leaks;
      ++checked;
    }
    const double a = r.folds[0].scan_accuracy, b = r.folds[1].scan_accuracy;
    const double mean = (a + b) / 2.0;
    const double sd = std::sqrt(((a - mean) * (a - mean) + (b - mean) * (b - mean)) / 2.0);
    const double pa = r.folds[0].patch_accuracy, pb = r.folds[1].patch_accuracy;
    const double pmean = (pa + pb) / 2.0;
    const double psd = std::sqrt(((pa - pmean) * (pa - pmean) + (pb - pmean) * (pb - pmean)) / 2.0);
    char scan_text[64], patch_text[64];
    std::snprintf(scan_text, sizeof scan_text, "%.1f \xC2\xB1 %.1f", 100 * mean, 100 * sd);
    std::snprintf(patch_text, sizeof patch_text, "%.1f \xC2\xB1 %.1f", 100 * pmean, 100 * psd);
    const auto table = format_table({r});
    if (mean != r.scan.mean || sd != r.scan.std || pmean != r.patch.mean || psd != r.patch.std ||
        table.find(scan_text) == std::string::npos || table.find(patch_text) == std::string::npos)
      ++mismatches;
  }
  report("Protocol integrity", leaks == 0 && mismatches == 0,
         fmt("20 seeded runs, %.0f folds checked, %.0f leaked scan ids, %.0f mean/std mismatches",
             static_cast<double>(checked), static_cast<double>(leaks), static_cast<double>(mismatches)));
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MYCOBOW_CLI_PATH) + " " + args + " > /dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

void end_to_end_and_determinism(const fs::path& data, const fs::path& work) {
  const std::string base = " --config " + (data / "fixture_config.json").string() + " --seed 7 --method fv-svm";
  const auto start = clock_type::now();
  const int code1 = run_cli("crossval" + base + " --threads 1 --out " + (work / "run_t1").string());
  const double secs = seconds_since(start);
  const int code4 = run_cli("crossval" + base + " --threads 4 --out " + (work / "run_t4").string());
  if (code1 != 0 || code4 != 0) {
    report("End-to-end desk-scale", false, fmt("crossval exit codes %.0f and %.0f", code1, code4));
    report("Determinism", false, "crossval failed");
    return;
  }
  auto r1 = read_json(work / "run_t1" / "report.json");
  auto r4 = read_json(work / "run_t4" / "report.json");
  const auto& e = r1["experiments"][0];
  const double s1 = e["folds"][0]["scan_accuracy"], s2 = e["folds"][1]["scan_accuracy"];
  const double scan = e["summary"]["scan_accuracy"]["mean"], patch = e["summary"]["patch_accuracy"]["mean"];
  const bool ok = s1 >= 0.95 && s2 >= 0.95 && scan >= patch && secs < 600;
  report("End-to-end desk-scale", ok,
         fmt("scan accuracy per fold %.3f / %.3f (>= 0.95), ", s1, s2) +
             fmt("scan %.3f >= patch %.3f, ", scan, patch) + fmt("%.1f s on one thread (< 600 s)", secs));

  r1.erase("timing");
  r4.erase("timing");
  const bool same = r1.dump() == r4.dump();
  report("Determinism", same, same ? "--threads 1 and --threads 4 reports byte-identical outside timing"
                                   : "reports differ outside timing");
  std::ifstream table(work / "run_t1" / "table.txt");
  std::stringstream ss;
  ss << table.rdbuf();
  std::printf("%s", ss.str().c_str());
}

void table_format() {
  const auto a = format_mean_std(mean_std({0.822, 0.826}));
  const auto b = format_mean_std(mean_std({0.9, 0.978}));
  ExperimentReport r;
  r.patch = mean_std({0.822, 0.826});
  r.scan = mean_std({0.9, 0.978});
  const auto table = format_table({r});
  const bool ok = a == "82.4 \xC2\xB1 0.2" && b == "93.9 \xC2\xB1 3.9" && table.find("Patch-based") != std::string::npos &&
                  table.find("Scan-based") != std::string::npos && table.find(a) != std::string::npos &&
                  table.find(b) != std::string::npos;
  report("Table 1 format", ok, "rendered '" + a + "' and '" + b + "' in a Method / Patch-based / Scan-based table");
}

}  // namespace

int main() {
  testing_helpers::TempDir work("acceptance");
  const fs::path data = work.path() / "fixture";
  try {
    fv_oracle();
    fv_stationarity();
    em_checks();
    svm_checks();
    head_gradients();
    if (run_cli("make-fixture --seed 0 --out " + data.string()) != 0) {
      report("Synthetic fixture", false, "make-fixture failed");
    } else {
      protocol_integrity(data);
      end_to_end_and_determinism(data, work.path());
    }
    table_format();
  } catch (const std::exception& e) {
    report("Acceptance run", false, e.what());
  }
  std::printf("%s: %d failing criteria\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
