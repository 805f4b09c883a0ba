#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fcns/corpus.hpp"
#include "fcns/error.hpp"
#include "fcns/explain.hpp"
#include "fcns/ingest.hpp"
#include "fcns/metrics.hpp"
#include "fcns/net.hpp"
#include "fcns/reader_server.hpp"
#include "fcns/reader_study.hpp"
#include "fcns/run_manifest.hpp"
#include "fcns/synth.hpp"
#include "fcns/trainer.hpp"

namespace fcns::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    raise(ErrorKind::kParse, path.string() + ": " + e.what());
  }
}

Task require_task(const std::string& text) {
  const auto task = parse_task(text);
  if (!task) {
    raise(ErrorKind::kConfig, "unknown task '" + text + "' (4class, 5class, binary)");
  }
  return *task;
}

// Resolves a class given by name or index within the model's task.
int resolve_class(const std::string& text, int num_classes) {
  if (!text.empty() && std::all_of(text.begin(), text.end(), ::isdigit)) {
    return std::stoi(text);
  }
  const auto names = class_names(train::task_for_classes(num_classes));
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == text) return static_cast<int>(i);
  }
  std::string valid;
  for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
  raise(ErrorKind::kLabel, "unknown class '" + text + "'; valid: " + valid, names);
}

std::atomic<reader::ReaderServer*> g_server{nullptr};

extern "C" void handle_stop(int) {
  if (auto* s = g_server.load()) s->stop();
}

struct Context {
  std::ostream& out;
  std::ostream& err;
  RunManifest manifest;

  void log(const std::string& line) const { err << line << std::endl; }
  void finish(const fs::path& path) {
    manifest.finished_at = utc_timestamp();
    write_run_manifest(path, manifest);
  }
};

// --- ingest ---------------------------------------------------------------

struct IngestArgs {
  std::string videos, stills, crops, out;
  int stride = 80;
};

void run_ingest(Context& ctx, const IngestArgs& a) {
  ingest::IngestOptions o;
  if (!a.videos.empty()) o.videos_index = a.videos;
  if (!a.stills.empty()) o.stills_index = a.stills;
  if (!a.crops.empty()) o.crops = a.crops;
  if (!o.videos_index && !o.stills_index) {
    raise(ErrorKind::kConfig, "ingest needs --videos and/or --stills");
  }
  o.stride = a.stride;
  o.out_dir = a.out;
  ctx.manifest.config = {{"videos", a.videos}, {"stills", a.stills},
                         {"crops", a.crops},   {"stride", a.stride},
                         {"out", a.out}};
  for (const auto& p : {a.videos, a.stills, a.crops}) {
    if (!p.empty()) ctx.manifest.add_input(p);
  }
  const auto summary = ingest::ingest_corpus(o);
  ctx.log("ingested " + std::to_string(summary.manifest.records.size()) +
          " images (" + std::to_string(summary.video_frames) + " video frames, " +
          std::to_string(summary.stills) + " stills, " +
          std::to_string(summary.cropped) + " cropped) from " +
          std::to_string(summary.manifest.patient_count()) + " patients");
  ctx.finish(fs::path(a.out) / "run_manifest.json");
}

// --- split ----------------------------------------------------------------

struct SplitArgs {
  std::string manifest, scheme = "loocv", out;
  int k = 5;
  std::uint64_t seed = 0;
};

void run_split(Context& ctx, const SplitArgs& a) {
  const auto manifest = ingest::read_manifest(a.manifest);
  corpus::SplitPlan plan;
  if (a.scheme == "loocv") {
    plan = corpus::loocv_splits(manifest);
  } else if (a.scheme == "kfold") {
    plan = corpus::grouped_kfold(manifest, a.k, a.seed);
  } else {
    raise(ErrorKind::kConfig, "unknown scheme '" + a.scheme + "' (loocv, kfold)");
  }
  const auto report = corpus::verify_no_leakage(plan, manifest);
  if (!report.ok()) raise(ErrorKind::kValidation, "generated split leaks patients");
  corpus::write_split_plan(a.out, plan);
  ctx.manifest.config = {{"manifest", a.manifest}, {"scheme", a.scheme},
                         {"k", a.k},               {"out", a.out}};
  ctx.manifest.seed = a.seed;
  ctx.manifest.add_input(a.manifest);
  ctx.log("wrote " + std::to_string(plan.folds.size()) + " folds to " + a.out);
  ctx.finish(a.out + ".run.json");
}

void write_configs(const fs::path& out, const net::NetConfig& net_config,
                  const json& train_config) {
  std::ofstream(out / "net_config.json") << net::to_json(net_config).dump(2) << "\n";
  std::ofstream(out / "train_config.json") << train_config.dump(2) << "\n";
}

// --- train ----------------------------------------------------------------

struct TrainArgs {
  std::string manifest, split, fold = "all", net_config, train_config, out;
  std::string task = "5class", profile = "desk";
  int jobs = 1;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_epochs, patience, batch_size;
};

void run_train(Context& ctx, const TrainArgs& a) {
  const auto task = require_task(a.task);
  net::NetConfig net_config;
  if (!a.net_config.empty()) {
    net_config = net::net_config_from_json(read_json_file(a.net_config));
    ctx.manifest.add_input(a.net_config);
  } else if (a.profile == "desk") {
    net_config = net::NetConfig::desk(num_classes(task));
  } else if (a.profile == "resnet34") {
    net_config = net::NetConfig::resnet34(num_classes(task));
  } else {
    raise(ErrorKind::kConfig, "unknown profile '" + a.profile + "' (desk, resnet34)");
  }
  if (net_config.num_classes != num_classes(task)) {
    raise(ErrorKind::kConfig, "net config has " +
                                  std::to_string(net_config.num_classes) +
                                  " classes but task " + a.task + " needs " +
                                  std::to_string(num_classes(task)));
  }
  train::TrainConfig config;
  if (!a.train_config.empty()) {
    config = train::train_config_from_json(read_json_file(a.train_config));
    ctx.manifest.add_input(a.train_config);
  }
  if (a.seed) config.seed = *a.seed;
  if (a.max_epochs) config.max_epochs = *a.max_epochs;
  if (a.patience) config.early_stop_patience = *a.patience;
  if (a.batch_size) config.batch_size = *a.batch_size;
  config.validate();

  const auto manifest = ingest::read_manifest(a.manifest);
  const auto plan = corpus::read_split_plan(a.split);
  const auto leakage = corpus::verify_no_leakage(plan, manifest);
  if (!leakage.ok()) {
    std::vector<std::string> details;
    for (const auto& v : leakage.violations) {
      details.push_back(std::string(corpus::to_string(v.kind)) + " fold " +
                        std::to_string(v.fold_id) + " patient " + v.patient_id);
    }
    raise(ErrorKind::kValidation, "split plan leaks patients", details);
  }
  ctx.manifest.add_input(a.manifest);
  ctx.manifest.add_input(a.split);

  std::vector<int> folds;
  if (a.fold != "all") {
    try {
      folds.push_back(std::stoi(a.fold));
    } catch (const std::exception&) {
      raise(ErrorKind::kConfig, "--fold must be 'all' or a fold id");
    }
  }
  const fs::path out(a.out);
  fs::create_directories(out);
  json cfg = train::to_json(config);
  write_configs(out, net_config, cfg);
  ctx.manifest.config = {{"net_config", net::to_json(net_config)},
                         {"train_config", cfg},
                         {"task", a.task},
                         {"fold", a.fold},
                         {"jobs", a.jobs}};
  ctx.manifest.seed = config.seed;

  const auto data = train::load_dataset(manifest, task);
  ctx.log("loaded " + std::to_string(data.items.size()) + " images for task " + a.task);
  const auto result = train::cross_validate(
      data, plan, net_config, config, out, a.jobs, folds,
      [&](const std::string& line) { ctx.log(line); });
  for (const auto& f : result.folds) {
    ctx.log("fold " + std::to_string(f.result.fold_id) + ": best val accuracy " +
            std::to_string(f.result.best_val_accuracy) + " at epoch " +
            std::to_string(f.result.epoch_of_best));
  }
  ctx.finish(out / "run_manifest.json");
}

// --- evaluate -------------------------------------------------------------

struct EvaluateArgs {
  std::string predictions, task = "4class", report = "report.json";
  int cutoff = 140;
  bool welch = false;
};

void run_evaluate(Context& ctx, const EvaluateArgs& a) {
  metrics::EvaluationOptions o;
  o.task = require_task(a.task);
  o.subgroup_cutoff_days = a.cutoff;
  o.subgroup_test = a.welch ? metrics::SubgroupTest::kWelch
                            : metrics::SubgroupTest::kMannWhitney;
  const auto records = metrics::read_predictions(a.predictions);
  const auto report = metrics::evaluate(records, o);
  metrics::write_report(a.report, report);
  ctx.manifest.config = {{"predictions", a.predictions}, {"task", a.task},
                         {"subgroup_cutoff_days", a.cutoff},
                         {"welch", a.welch},           {"report", a.report}};
  ctx.manifest.add_input(a.predictions);
  const auto& p = report.patient_level;
  ctx.log("patient-level accuracy " + std::to_string(p.macro.accuracy) + " over " +
          std::to_string(p.confusion.total()) + " patients");
  ctx.finish(a.report + ".run.json");
}

// --- explain --------------------------------------------------------------

struct ExplainArgs {
  std::string checkpoint, image, cls, out, sample_id;
  double alpha = 0.35;
};

void run_explain(Context& ctx, const ExplainArgs& a) {
  const auto model = net::load_checkpoint(a.checkpoint);
  const auto image = read_png(a.image);
  std::optional<int> cls;
  if (!a.cls.empty()) cls = resolve_class(a.cls, model.config.num_classes);
  explain::OverlayConfig oc;
  oc.alpha = a.alpha;
  const auto e = explain::explain_image(model, image, cls, oc);
  const auto id = a.sample_id.empty() ? fs::path(a.image).stem().string() : a.sample_id;
  explain::write_triptych(a.out, id, e);
  const json info{{"sample_id", id},
                  {"class_index", e.heatmap.class_index},
                  {"probabilities", e.probabilities},
                  {"feature_map", {e.heatmap.source_height, e.heatmap.source_width}},
                  {"alpha", a.alpha}};
  std::ofstream(fs::path(a.out) / (id + ".explain.json")) << info.dump(2) << "\n";
  ctx.manifest.config = {{"checkpoint", a.checkpoint}, {"image", a.image},
                         {"class", a.cls},             {"alpha", a.alpha},
                         {"out", a.out}};
  ctx.manifest.add_input(a.checkpoint);
  ctx.manifest.add_input(a.image);
  ctx.log("explained class " + std::to_string(e.heatmap.class_index) + " for " + id);
  ctx.finish(fs::path(a.out) / (id + ".run.json"));
}

// --- predict --------------------------------------------------------------

struct PredictArgs {
  std::vector<std::string> checkpoints;
  std::string train_dir, image, out;
};

void run_predict(Context& ctx, const PredictArgs& a) {
  std::vector<fs::path> paths(a.checkpoints.begin(), a.checkpoints.end());
  if (!a.train_dir.empty()) {
    for (const auto& entry : fs::directory_iterator(a.train_dir)) {
      const auto ckpt = entry.path() / "best.ckpt";
      if (entry.is_directory() && fs::exists(ckpt)) paths.push_back(ckpt);
    }
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) raise(ErrorKind::kConfig, "no checkpoints given");
  const auto probs = train::ensemble_predict(std::span<const fs::path>(paths),
                                             read_png(a.image));
  const auto names = class_names(train::task_for_classes(static_cast<int>(probs.size())));
  json by_class = json::object();
  for (std::size_t i = 0; i < probs.size(); ++i) by_class[names[i]] = probs[i];
  const json result{{"image", a.image},
                    {"models", paths.size()},
                    {"probabilities", probs},
                    {"by_class", by_class},
                    {"predicted", names[metrics::argmax(probs)]}};
  std::ofstream(a.out) << result.dump(2) << "\n";
  for (const auto& p : paths) ctx.manifest.add_input(p);
  ctx.manifest.add_input(a.image);
  ctx.manifest.config = {{"image", a.image}, {"out", a.out}};
  ctx.finish(a.out + ".run.json");
}

// --- serve ----------------------------------------------------------------

struct ServeArgs {
  std::optional<int> port;
  std::string data_dir, cases, host = "127.0.0.1", admin_token;
  std::vector<std::string> readers;
};

void run_serve(Context& ctx, const ServeArgs& a) {
  const int port = a.port ? *a.port : std::stoi(env_or("PORT", "8080"));
  const fs::path data_dir = a.data_dir.empty() ? env_or("DATA_DIR", "data") : a.data_dir;
  const std::string token =
      a.admin_token.empty() ? env_or("ADMIN_TOKEN", "") : a.admin_token;
  const fs::path cases_path = a.cases.empty() ? data_dir / "cases.jsonl" : fs::path(a.cases);
  if (token.empty()) ctx.log("warning: no admin token set; /api/summary is disabled");

  reader::ReaderStudy study(reader::read_cases(cases_path), data_dir);
  for (const auto& r : a.readers) study.register_reader(r);
  reader::ReaderServer server(study, token);
  const int bound = server.bind(a.host, port);
  ctx.manifest.config = {{"host", a.host}, {"port", bound},
                         {"data_dir", data_dir.string()},
                         {"cases", cases_path.string()}};
  ctx.manifest.add_input(cases_path);
  ctx.manifest.started_at = utc_timestamp();
  write_run_manifest(data_dir / "run_manifest.json", ctx.manifest);
  ctx.log("serving " + std::to_string(study.cases().size()) + " cases on http://" +
          a.host + ":" + std::to_string(bound));
  g_server = &server;
  std::signal(SIGINT, handle_stop);
  std::signal(SIGTERM, handle_stop);
  server.serve();
  g_server = nullptr;
  ctx.finish(data_dir / "run_manifest.json");
}

// --- synth ----------------------------------------------------------------

void run_synth(Context& ctx, const synth::SynthOptions& o) {
  const auto manifest = synth::generate_corpus(o);
  ctx.manifest.config = {{"patients", o.patients},
                         {"images_per_patient", o.images_per_patient},
                         {"image_size", o.image_size},
                         {"out", o.out_dir.string()}};
  ctx.manifest.seed = o.seed;
  ctx.log("wrote " + std::to_string(manifest.records.size()) + " images for " +
          std::to_string(manifest.patient_count()) + " patients to " +
          o.out_dir.string());
  ctx.finish(o.out_dir / "run_manifest.json");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fetal cranial anomaly classification toolkit", "fcns"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  IngestArgs ingest_args;
  auto* ingest_cmd = app.add_subcommand("ingest", "Extract, crop and catalog images");
  ingest_cmd->add_option("--videos", ingest_args.videos, "Video index (JSON Lines)");
  ingest_cmd->add_option("--stills", ingest_args.stills, "Still-image index (JSON Lines)");
  ingest_cmd->add_option("--stride", ingest_args.stride, "Frame sampling stride")
      ->check(CLI::PositiveNumber);
  ingest_cmd->add_option("--crops", ingest_args.crops, "Crop sidecar (JSON Lines)");
  ingest_cmd->add_option("--out", ingest_args.out, "Output directory")->required();

  SplitArgs split_args;
  auto* split_cmd = app.add_subcommand("split", "Build a patient-grouped split plan");
  split_cmd->add_option("--manifest", split_args.manifest)->required();
  split_cmd->add_option("--scheme", split_args.scheme)
      ->check(CLI::IsMember({"loocv", "kfold"}));
  split_cmd->add_option("--k", split_args.k)->check(CLI::Range(2, 1 << 20));
  split_cmd->add_option("--seed", split_args.seed);
  split_cmd->add_option("--out", split_args.out)->required();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train folds of a split plan");
  train_cmd->add_option("--manifest", train_args.manifest)->required();
  train_cmd->add_option("--split", train_args.split)->required();
  train_cmd->add_option("--fold", train_args.fold, "'all' or a fold id");
  train_cmd->add_option("--net-config", train_args.net_config, "Net config JSON");
  train_cmd->add_option("--profile", train_args.profile, "desk or resnet34");
  train_cmd->add_option("--task", train_args.task, "4class, 5class or binary");
  train_cmd->add_option("--train-config", train_args.train_config, "Train config JSON");
  train_cmd->add_option("--out", train_args.out)->required();
  train_cmd->add_option("--jobs", train_args.jobs)->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", train_args.seed);
  train_cmd->add_option("--max-epochs", train_args.max_epochs);
  train_cmd->add_option("--patience", train_args.patience);
  train_cmd->add_option("--batch-size", train_args.batch_size);

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "Compute metrics for predictions");
  eval_cmd->add_option("--predictions", eval_args.predictions)->required();
  eval_cmd->add_option("--task", eval_args.task)
      ->check(CLI::IsMember({"4class", "5class", "binary"}));
  eval_cmd->add_option("--subgroup-cutoff-days", eval_args.cutoff);
  eval_cmd->add_flag("--welch", eval_args.welch, "Use Welch's t test for subgroups");
  eval_cmd->add_option("--report", eval_args.report);

  ExplainArgs explain_args;
  auto* explain_cmd = app.add_subcommand("explain", "Grad-CAM triptych for one image");
  explain_cmd->add_option("--checkpoint", explain_args.checkpoint)->required();
  explain_cmd->add_option("--image", explain_args.image)->required();
  explain_cmd->add_option("--class", explain_args.cls, "Class name or index");
  explain_cmd->add_option("--alpha", explain_args.alpha)->check(CLI::Range(0.0, 1.0));
  explain_cmd->add_option("--sample-id", explain_args.sample_id);
  explain_cmd->add_option("--out", explain_args.out)->required();

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "Ensemble prediction for one image");
  predict_cmd->add_option("--checkpoint", predict_args.checkpoints);
  predict_cmd->add_option("--train-dir", predict_args.train_dir,
                          "Uses every fold_*/best.ckpt below it");
  predict_cmd->add_option("--image", predict_args.image)->required();
  predict_cmd->add_option("--out", predict_args.out)->required();

  ServeArgs serve_args;
  auto* serve_cmd = app.add_subcommand("serve", "Run the reader-study HTTP service");
  serve_cmd->add_option("--port", serve_args.port);
  serve_cmd->add_option("--host", serve_args.host);
  serve_cmd->add_option("--data-dir", serve_args.data_dir);
  serve_cmd->add_option("--cases", serve_args.cases);
  serve_cmd->add_option("--admin-token", serve_args.admin_token);
  serve_cmd->add_option("--readers", serve_args.readers)->delimiter(',');

  synth::SynthOptions synth_args;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic corpus");
  synth_cmd->add_option("--patients", synth_args.patients)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--images-per-patient", synth_args.images_per_patient)
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth_args.seed);
  synth_cmd->add_option("--image-size", synth_args.image_size);
  synth_cmd->add_option("--out", synth_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    out << kToolVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  Context ctx{out, err, {}};
  ctx.manifest.started_at = utc_timestamp();
  try {
    if (*ingest_cmd) {
      ctx.manifest.command = "ingest";
      run_ingest(ctx, ingest_args);
    } else if (*split_cmd) {
      ctx.manifest.command = "split";
      run_split(ctx, split_args);
    } else if (*train_cmd) {
      ctx.manifest.command = "train";
      run_train(ctx, train_args);
    } else if (*eval_cmd) {
      ctx.manifest.command = "evaluate";
      run_evaluate(ctx, eval_args);
    } else if (*explain_cmd) {
      ctx.manifest.command = "explain";
      run_explain(ctx, explain_args);
    } else if (*predict_cmd) {
      ctx.manifest.command = "predict";
      run_predict(ctx, predict_args);
    } else if (*serve_cmd) {
      ctx.manifest.command = "serve";
      run_serve(ctx, serve_args);
    } else if (*synth_cmd) {
      ctx.manifest.command = "synth";
      synth_args.out_dir = synth_out;
      run_synth(ctx, synth_args);
    }
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    for (const auto& d : e.details()) err << "  " << d << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace fcns::cli
