#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <opencv2/core.hpp>

#include "mycobow.hpp"

namespace fs = std::filesystem;
using namespace mycobow;

namespace {

struct Common {
  std::string config;
  std::string manifest;
  std::string out;
  std::size_t threads = default_threads();
  std::optional<std::uint64_t> seed;
  std::optional<int> patch_size;
  std::optional<int> stride;
  std::optional<std::string> source;
  std::optional<std::string> descriptor_dir;
  std::optional<int> preparation;
};

struct Resolved {
  PipelineConfig config;
  fs::path manifest;
  std::vector<ScanRecord> records;
  std::uint64_t seed = 0;
  nlohmann::json file;  // raw config document
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--config", c.config, "JSON config file (flags override its values)");
  auto* out = cmd->add_option("--out", c.out, "Output directory");
  if (needs_out) out->required();
  cmd->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "Run seed");
}

void add_data(CLI::App* cmd, Common& c) {
  cmd->add_option("--manifest", c.manifest, "Manifest (JSON Lines)");
  cmd->add_option("--patch-size", c.patch_size, "Patch edge in pixels");
  cmd->add_option("--stride", c.stride, "Patch stride in pixels");
  cmd->add_option("--descriptors", c.source, "Descriptor source: builtin or dfb");
  cmd->add_option("--descriptor-dir", c.descriptor_dir, "Directory of <patch_id>.dfb files");
}

fs::path relative_to(const fs::path& p, const fs::path& base) { return p.is_relative() ? base / p : p; }

/// Precedence: base < config file < flags.
Resolved resolve(const Common& c, bool needs_manifest = true, const PipelineConfig& base = {}) {
  Resolved r;
  r.config = base;
  if (!c.config.empty()) {
    r.file = detail::read_json_file(c.config);
    fs::path dir = fs::path(c.config).parent_path();
    if (dir.empty()) dir = ".";
    merge_json(r.config, r.file);
    if (r.file.contains("manifest")) r.manifest = relative_to(r.file["manifest"].get<std::string>(), dir);
    if (r.file.contains("descriptor_dir") && !r.config.descriptor_dir.empty()) {
      r.config.descriptor_dir = relative_to(r.config.descriptor_dir, dir);
    }
    if (r.file.contains("seed")) r.seed = r.file["seed"].get<std::uint64_t>();
  }
  if (!c.manifest.empty()) r.manifest = c.manifest;
  if (c.seed) r.seed = *c.seed;
  if (c.patch_size) r.config.patch.patch_size = *c.patch_size;
  if (c.stride) r.config.patch.stride = *c.stride;
  if (c.source) r.config.source = parse_source(*c.source);
  if (c.descriptor_dir) r.config.descriptor_dir = *c.descriptor_dir;
  r.config.patch.validate();
  if (r.config.source == DescriptorSourceKind::dfb && r.config.descriptor_dir.empty()) {
    throw usage_error("--descriptors dfb needs --descriptor-dir");
  }
  if (needs_manifest) {
    if (r.manifest.empty()) throw usage_error("no manifest given (--manifest or \"manifest\" in --config)");
    r.records = load_manifest(r.manifest.string());
    if (r.records.empty()) throw data_error(r.manifest.string() + ": manifest has no records");
    r.config.data_root = r.manifest.parent_path();
    if (c.preparation) {
      std::erase_if(r.records, [&](const ScanRecord& s) { return s.preparation != *c.preparation; });
      if (r.records.empty()) throw data_error("no scans of preparation " + std::to_string(*c.preparation));
    }
  }
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot write '" + path.string() + "'");
  out << text;
}

/// resolved_config.json: everything that determines the artifacts.
void echo_config(const fs::path& out, const std::string& command, const Resolved& r,
                 const nlohmann::ordered_json& extra = {}) {
  fs::create_directories(out);
  nlohmann::ordered_json j;
  j["tool"] = "mycobow";
  j["version"] = kVersion;
  j["command"] = command;
  j["seed"] = r.seed;
  j["manifest"] = r.manifest.string();
  j["pipeline"] = to_json(r.config);
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  detail::write_json_file(j, out / "resolved_config.json");
}

std::vector<std::size_t> foreground_rows(const std::vector<PatchData>& patches) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < patches.size(); ++i)
    if (patches[i].foreground) rows.push_back(i);
  if (rows.empty()) throw data_error("no foreground patches");
  return rows;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

Codebook load_codebook(const fs::path& dir) {
  Codebook cb;
  cb.gmm = gmm_from_json(detail::read_json_file(dir / "gmm.json"));
  if (fs::exists(dir / "whitening.json")) cb.whitening = whitening_from_json(detail::read_json_file(dir / "whitening.json"));
  return cb;
}

int cmd_validate(const Common& c, bool check_files) {
  const Resolved r = resolve(c);
  if (check_files) {
    for (const auto& rec : r.records) {
      const auto p = resolve_scan_path(rec, r.config);
      if (!fs::exists(p)) throw data_error("scan '" + rec.scan_id + "': missing image '" + p.string() + "'");
    }
  }
  std::cout << summary_line(summarize(r.records)) << "\n";
  if (!c.out.empty()) echo_config(c.out, "validate-manifest", r);
  return 0;
}

int cmd_extract(const Common& c) {
  const Resolved r = resolve(c);
  const fs::path out = c.out;
  fs::create_directories(out / "patches");
  std::vector<std::string> lines(r.records.size());
  parallel_for(r.records.size(), c.threads, [&](std::size_t i) {
    const auto& rec = r.records[i];
    const Image image = read_image(resolve_scan_path(rec, r.config));
    for (const auto& p : extract_patch_grid(image, r.config.patch, rec.scan_id)) {
      write_image(patch_to_image(p), out / "patches" / (patch_id(p) + ".png"));
      nlohmann::ordered_json j;
      j["patch_id"] = patch_id(p);
      j["scan_id"] = rec.scan_id;
      j["species"] = std::string(code_of(rec.species));
      j["row"] = p.row;
      j["col"] = p.col;
      j["foreground"] = is_foreground(p, r.config.patch.foreground_threshold);
      lines[i] += j.dump() + "\n";
    }
  });
  std::string all;
  for (const auto& l : lines) all += l;
  write_text(out / "patches.jsonl", all);
  echo_config(out, "extract-patches", r);
  return 0;
}

int cmd_describe(const Common& c) {
  Resolved r = resolve(c);
  r.config.source = DescriptorSourceKind::builtin;
  const fs::path out = c.out;
  const auto patches = load_patches(r.records, r.config, c.threads);
  parallel_for(patches.size(), c.threads, [&](std::size_t i) {
    write_descriptors_file(patches[i].descriptors, out / "descriptors" / (patches[i].id() + ".dfb"));
  });
  std::cout << patches.size() << " descriptor files, D=" << patches.front().descriptors.dim() << "\n";
  echo_config(out, "describe", r);
  return 0;
}

int cmd_fit_gmm(const Common& c, std::size_t k) {
  const Resolved r = resolve(c);
  const fs::path out = c.out;
  const auto patches = load_patches(r.records, r.config, c.threads);
  const auto cb = fit_codebook(patches, foreground_rows(patches), k, r.config, derive_seed(r.seed, "fit-gmm"));
  echo_config(out, "fit-gmm", r, {{"K", k}});
  detail::write_json_file(to_json(cb.gmm, &cb.trace), out / "gmm.json");
  if (cb.whitening) detail::write_json_file(to_json(*cb.whitening), out / "whitening.json");
  std::printf("K=%zu D=%zu iterations=%d mean log-likelihood %.6f\n", cb.gmm.k(), cb.gmm.dim(), cb.trace.iterations,
              cb.trace.log_likelihood.back());
  return 0;
}

int cmd_encode(const Common& c, const std::string& gmm_dir) {
  const Resolved r = resolve(c);
  const fs::path out = c.out;
  const Codebook cb = load_codebook(gmm_dir);
  const auto patches = load_patches(r.records, r.config, c.threads);
  const Matrix fv = encode_patches(cb, patches, all_rows(patches.size()), r.config.fisher.alpha, c.threads);
  echo_config(out, "encode", r, {{"gmm", gmm_dir}});
  write_feature_matrix(fv, out / "fv.dfb");
  std::string rows;
  for (const auto& p : patches) {
    nlohmann::ordered_json j;
    j["patch_id"] = p.id();
    j["scan_id"] = p.scan_id;
    j["species"] = std::string(code_of(p.species));
    rows += j.dump() + "\n";
  }
  write_text(out / "fv_rows.jsonl", rows);
  return 0;
}

int cmd_train(const Common& c, const std::string& method) {
  const Resolved r = resolve(c);
  const fs::path out = c.out;
  const Method m = parse_method(method);
  const auto patches = load_patches(r.records, r.config, c.threads);
  const auto trained = train_model(patches, foreground_rows(patches), m, r.config, {r.seed, c.threads});
  echo_config(out, "train", r, {{"method", method}});
  save_bundle(trained.bundle, out / "model");
  if (trained.search) {
    nlohmann::ordered_json grid = nlohmann::ordered_json::array();
    for (const auto& cell : trained.search->cells) {
      grid.push_back({{"K", cell.k}, {"C", cell.c}, {"mean_accuracy", cell.mean_accuracy}, {"fold_accuracy", cell.fold_accuracy}});
    }
    detail::write_json_file({{"selected", {{"K", trained.search->k}, {"C", trained.search->c}}}, {"grid", grid}},
                            out / "grid_search.json");
  }
  return 0;
}

int cmd_predict(const Common& c, const std::string& model_dir) {
  ModelBundle bundle = load_bundle(model_dir);
  const Resolved r = resolve(c, true, bundle.config);
  bundle.config.data_root = r.config.data_root;
  const fs::path out = c.out;
  const auto patches = load_patches(r.records, r.config, c.threads);
  const auto scores = score_patches(bundle, patches, all_rows(patches.size()), c.threads);
  std::map<std::string, std::vector<ScoreVector>> per_scan;
  std::size_t patch_ok = 0;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    per_scan[patches[i].scan_id].push_back(scores[i]);
    patch_ok += species_at(argmax(scores[i])) == patches[i].species;
  }
  nlohmann::ordered_json scans = nlohmann::ordered_json::array();
  std::size_t scan_ok = 0;
  for (const auto& rec : r.records) {
    const auto agg = aggregate_scan(per_scan.at(rec.scan_id), r.config.aggregation);
    scan_ok += agg.predicted == rec.species;
    std::vector<double> aggregated(agg.aggregated.begin(), agg.aggregated.end());
    for (auto& v : aggregated)
      if (!std::isfinite(v)) v = std::numeric_limits<double>::lowest();
    scans.push_back({{"scan_id", rec.scan_id},
                     {"truth", std::string(code_of(rec.species))},
                     {"predicted", std::string(code_of(agg.predicted))},
                     {"patches", per_scan.at(rec.scan_id).size()},
                     {"aggregated", aggregated}});
  }
  nlohmann::ordered_json j;
  j["method"] = to_string(bundle.method);
  j["patch_accuracy"] = static_cast<double>(patch_ok) / static_cast<double>(patches.size());
  j["scan_accuracy"] = static_cast<double>(scan_ok) / static_cast<double>(r.records.size());
  j["scans"] = scans;
  echo_config(out, "predict", r, {{"model", model_dir}});
  detail::write_json_file(j, out / "predictions.json");
  std::printf("patch accuracy %.4f, scan accuracy %.4f\n", j["patch_accuracy"].get<double>(),
              j["scan_accuracy"].get<double>());
  return 0;
}

struct CrossvalFlags {
  std::string method = "both";
  std::vector<std::size_t> k_grid;
  std::vector<double> c_grid;
  std::optional<std::string> aggregation;
  bool whitening = false;
};

int cmd_crossval(const Common& c, const CrossvalFlags& f) {
  Resolved r = resolve(c);
  if (!f.k_grid.empty()) r.config.grids.k_grid = f.k_grid;
  if (!f.c_grid.empty()) r.config.grids.c_grid = f.c_grid;
  if (f.aggregation) r.config.aggregation = parse_aggregation(*f.aggregation);
  if (f.whitening) r.config.fisher.whitening = true;
  std::vector<Method> methods;
  if (f.method == "both") {
    methods = {Method::baseline_head, Method::fv_svm};
  } else {
    methods = {parse_method(f.method)};
  }
  const fs::path out = c.out;
  echo_config(out, "crossval", r, {{"method", f.method}});

  const auto patches = load_patches(r.records, r.config, c.threads);
  std::vector<ExperimentReport> reports;
  nlohmann::ordered_json experiments = nlohmann::ordered_json::array();
  nlohmann::ordered_json timing;
  for (const Method m : methods) {
    reports.push_back(run_experiment(r.records, patches, m, r.config, {r.seed, c.threads}));
    auto j = to_json(reports.back());
    timing[to_string(m)] = j["timing"];
    j.erase("timing");
    experiments.push_back(j);
    for (const auto& fold : reports.back().folds) {
      const std::string stem = "confusion_" + to_string(m) + "_fold" + std::to_string(fold.fold);
      write_text(out / (stem + "_patch.csv"), confusion_csv(fold.patch_confusion));
      write_text(out / (stem + "_scan.csv"), confusion_csv(fold.scan_confusion));
    }
  }
  const std::string table = format_table(reports);
  nlohmann::ordered_json report;
  report["version"] = kVersion;
  report["seed"] = r.seed;
  report["experiments"] = experiments;
  report["table"] = table;
  report["timing"] = timing;
  detail::write_json_file(report, out / "report.json");
  write_text(out / "table.txt", table);
  std::cout << table;
  return 0;
}

int cmd_clusters(const Common& c, const std::string& model_dir, std::size_t count, std::vector<std::size_t> components,
                 std::size_t top) {
  const fs::path model(model_dir);
  PipelineConfig base;
  if (fs::exists(model / "config.json")) merge_json(base, detail::read_json_file(model / "config.json").at("pipeline"));
  const Resolved r = resolve(c, true, base);
  const Codebook cb = load_codebook(model);
  if (top < 1) throw usage_error("--top must be >= 1");
  if (components.empty()) {
    components = random_clusters(cb.gmm.k(), count, derive_seed(r.seed, "clusters"));
  }
  for (auto k : components)
    if (k >= cb.gmm.k()) throw usage_error("component " + std::to_string(k) + " out of range (K=" + std::to_string(cb.gmm.k()) + ")");

  const fs::path out = c.out;
  fs::create_directories(out);
  const auto patches = load_patches(r.records, r.config, c.threads);
  std::vector<DescriptorSet> sets(patches.size());
  std::vector<Vector> masses(patches.size());
  parallel_for(patches.size(), c.threads, [&](std::size_t i) {
    sets[i] = cb.whitening ? apply_whitening(*cb.whitening, patches[i].descriptors) : patches[i].descriptors;
    sets[i].source_id = patches[i].id();
    masses[i] = cluster_mass(cb.gmm, sets[i]);
  });
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < patches.size(); ++i) index[patches[i].id()] = i;
  std::map<std::string, fs::path> scan_path;
  for (const auto& rec : r.records) scan_path[rec.scan_id] = resolve_scan_path(rec, r.config);

  const int grid_cols = 3;
  const int grid_rows = static_cast<int>((top + grid_cols - 1) / grid_cols);
  nlohmann::ordered_json listing = nlohmann::ordered_json::array();
  for (auto k : components) {
    const auto best = top_patches(cb.gmm, sets, k, top);
    std::vector<MontageTile> tiles;
    for (const auto& id : best.ids) {
      const auto& p = patches[index.at(id)];
      tiles.push_back({scan_path.at(p.scan_id), p.position.row, p.position.col, r.config.patch.patch_size});
    }
    const std::string file = "cluster_" + std::to_string(k) + ".png";
    export_montage(tiles, grid_rows, grid_cols, out / file);
    listing.push_back({{"component", k}, {"montage", file}, {"patches", best.ids}, {"short", best.short_list}});
  }
  std::vector<Species> species;
  for (const auto& p : patches) species.push_back(p.species);
  echo_config(out, "clusters", r, {{"model", model_dir}, {"components", components}, {"top", top}});
  detail::write_json_file({{"K", cb.gmm.k()}, {"clusters", listing}}, out / "clusters.json");
  detail::write_json_file(attribute_template(cb.gmm), out / "annotations_template.json");
  write_text(out / "species_similarity.csv", similarity_csv(species_similarity(masses, species)));
  return 0;
}

int cmd_make_fixture(const Common& c, const SyntheticOptions& base) {
  SyntheticOptions opt = base;
  opt.seed = c.seed.value_or(0);
  const fs::path out = c.out;
  const auto ds = generate_synthetic_dataset(out, opt);
  nlohmann::ordered_json cfg = to_json(synthetic_pipeline_config());
  cfg["manifest"] = ds.manifest_path.filename().string();
  detail::write_json_file(cfg, out / "fixture_config.json");
  Resolved r;
  r.config = synthetic_pipeline_config();
  r.manifest = ds.manifest_path;
  r.seed = opt.seed;
  echo_config(out, "make-fixture", r,
              {{"classes", opt.classes}, {"scans_per_class_per_preparation", opt.scans_per_class_per_preparation},
               {"size", opt.size}});
  std::cout << summary_line(summarize(ds.records())) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fungal microscopy bag-of-words classification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  Common common;
  bool check_files = false;
  auto* validate = app.add_subcommand("validate-manifest", "Parse a manifest and print its summary");
  add_common(validate, common, false);
  add_data(validate, common);
  validate->add_flag("--check-files", check_files, "Also check that every scan image exists");

  auto* extract = app.add_subcommand("extract-patches", "Cut scans into patch PNGs");
  add_common(extract, common);
  add_data(extract, common);

  auto* describe = app.add_subcommand("describe", "Built-in filter bank descriptors as .dfb files");
  add_common(describe, common);
  add_data(describe, common);

  std::size_t k = 16;
  auto* fit = app.add_subcommand("fit-gmm", "Fit the GMM dictionary on foreground patch descriptors");
  add_common(fit, common);
  add_data(fit, common);
  fit->add_option("--k", k, "Number of components")->check(CLI::PositiveNumber);
  fit->add_option("--preparation", common.preparation, "Use only scans of this preparation");

  std::string gmm_dir;
  auto* encode_cmd = app.add_subcommand("encode", "Fisher Vectors of every patch");
  add_common(encode_cmd, common);
  add_data(encode_cmd, common);
  encode_cmd->add_option("--gmm", gmm_dir, "Directory with gmm.json")->required();

  std::string method = "fv-svm";
  auto* train = app.add_subcommand("train", "Grid search and fit a classifier");
  add_common(train, common);
  add_data(train, common);
  train->add_option("--method", method, "fv-svm or baseline-head");
  train->add_option("--preparation", common.preparation, "Use only scans of this preparation");

  std::string model_dir;
  auto* predict = app.add_subcommand("predict", "Score patches and aggregate per scan");
  add_common(predict, common);
  add_data(predict, common);
  predict->add_option("--model", model_dir, "Model bundle directory")->required();

  CrossvalFlags cv;
  auto* crossval = app.add_subcommand("crossval", "Two-fold preparation cross-validation");
  add_common(crossval, common);
  add_data(crossval, common);
  crossval->get_option("--seed")->required();
  crossval->add_option("--method", cv.method, "fv-svm, baseline-head or both");
  crossval->add_option("--k-grid", cv.k_grid, "GMM sizes to search");
  crossval->add_option("--c-grid", cv.c_grid, "SVM C values to search");
  crossval->add_option("--aggregation", cv.aggregation, "sum or vote");
  crossval->add_flag("--whitening", cv.whitening, "PCA-whiten descriptors before the GMM");

  std::size_t cluster_count = 6;
  std::vector<std::size_t> components;
  std::size_t top = 9;
  auto* clusters = app.add_subcommand("clusters", "Montages of the patches closest to GMM components");
  add_common(clusters, common);
  add_data(clusters, common);
  clusters->add_option("--model", model_dir, "Model bundle or directory with gmm.json")->required();
  auto* count_opt = clusters->add_option("--clusters", cluster_count, "Number of randomly drawn components");
  clusters->add_option("--components", components, "Explicit component ids")->excludes(count_opt)->delimiter(',');
  clusters->add_option("--top", top, "Patches per montage");

  SyntheticOptions fixture;
  auto* make_fixture = app.add_subcommand("make-fixture", "Write the synthetic desk-scale dataset");
  add_common(make_fixture, common);
  make_fixture->add_option("--classes", fixture.classes, "Number of classes");
  make_fixture->add_option("--scans", fixture.scans_per_class_per_preparation, "Scans per class and preparation");
  make_fixture->add_option("--size", fixture.size, "Image edge in pixels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*validate) return cmd_validate(common, check_files);
    if (*extract) return cmd_extract(common);
    if (*describe) return cmd_describe(common);
    if (*fit) return cmd_fit_gmm(common, k);
    if (*encode_cmd) return cmd_encode(common, gmm_dir);
    if (*train) return cmd_train(common, method);
    if (*predict) return cmd_predict(common, model_dir);
    if (*crossval) return cmd_crossval(common, cv);
    if (*clusters) return cmd_clusters(common, model_dir, cluster_count, components, top);
    if (*make_fixture) return cmd_make_fixture(common, fixture);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::usage:
        return 1;
      case ErrorKind::data:
        return 2;
      case ErrorKind::numerical:
        return 3;
    }
  } catch (const cv::Exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
