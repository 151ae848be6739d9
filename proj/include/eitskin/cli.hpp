#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eitskin/bend.hpp"
#include "eitskin/classifier.hpp"
#include "eitskin/error.hpp"
#include "eitskin/nn/network.hpp"
#include "eitskin/nn/train.hpp"
#include "eitskin/pipeline.hpp"
#include "eitskin/report.hpp"
#include "eitskin/scenario.hpp"
#include "eitskin/scenario_io.hpp"
#include "eitskin/world.hpp"

namespace eitskin::cli {

/// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kScenarioOrFile = 2,
  kSolver = 3,
  kDivergence = 4,
  kDimensionMismatch = 5,
  kInsufficientGroups = 6,
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Scenario:
    case ErrorKind::Io: return kScenarioOrFile;
    case ErrorKind::Solver:
    case ErrorKind::NotPositiveDefinite: return kSolver;
    case ErrorKind::Divergence: return kDivergence;
    case ErrorKind::DimensionMismatch: return kDimensionMismatch;
    case ErrorKind::InsufficientGroups: return kInsufficientGroups;
    case ErrorKind::InvalidArgument: return kUsage;
  }
  return kUsage;
}

/// `code=<n> msg=<text>` on one line; newlines in the message are flattened.
inline void diagnostic(std::ostream& err, int code, std::string msg) {
  for (char& c : msg)
    if (c == '\n' || c == '\r') c = ' ';
  err << "code=" << code << " msg=" << msg << std::endl;
}

namespace detail {

inline std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, mode);
  if (!out) throw Error(ErrorKind::Io, "cannot open '" + path + "' for writing");
  return out;
}

inline void close_checked(std::ofstream& out, const std::string& path) {
  out.close();
  if (!out) throw Error(ErrorKind::Io, "failed writing '" + path + "'");
}

inline FrameLog load_log(const std::string& path) {
  auto in = open_in(path);
  return read_frame_log(in);
}

/// Mean of the first n frames, or the simulator's noise-free flat frame when
/// n is 0.
inline Eigen::VectorXd reference_from_log(const FrameLog& log, const World& world, int n) {
  require(n >= 0, "reference frame count must be nonnegative");
  if (!log.empty())
    require(log.M() == world.M(),
            "log has " + std::to_string(log.M()) + " channels, sensor model has " + std::to_string(world.M()),
            ErrorKind::DimensionMismatch);
  if (n == 0) return world.homogeneous_frame;
  require(static_cast<int>(log.size()) >= n, "log has fewer frames than --reference-frames");
  std::vector<MeasurementFrame> frames;
  for (int i = 0; i < n; ++i) frames.push_back(log.frames[static_cast<std::size_t>(i)].frame);
  return capture_global_reference(frames).global_ref;
}

inline Scenario resolve_scenario(const std::string& spec, std::uint64_t seed, bool seed_given) {
  for (const auto& name : scenarios::builtin_names())
    if (name == spec) return scenarios::builtin(name, seed);
  Scenario s = load_scenario(spec);
  if (seed_given) s.seed = seed;
  return s;
}

struct PipelineArgs {
  std::string log_path;
  std::string model_path;
  std::string bend_path;
  std::string classifier = "network";
  int reference_frames = scenarios::kLeadInIdleFrames;
  double threshold = 1.0;
  int confirm = 2;
  std::uint64_t seed = 0;
  std::string name;
};

struct PipelineRun {
  FrameLog log;
  std::vector<FrameResult> results;
  RunReport report;
  double median_frame_ms = 0.0;
  double total_ms = 0.0;
};

inline PipelineRun run_pipeline_job(const PipelineArgs& a, const World& world) {
  PipelineRun run;
  run.log = load_log(a.log_path);
  const Eigen::VectorXd ref = reference_from_log(run.log, world, a.reference_frames);

  PipelineConfig cfg;
  cfg.bend_update_threshold = a.threshold;
  cfg.bend_confirm_frames = a.confirm;
  std::optional<ModalityClassifier> classifier;
  if (a.classifier == "baseline") {
    cfg.classifier = ClassifierChoice::Baseline;
    classifier = ModalityClassifier::baseline();
  } else {
    require(a.classifier == "network", "--classifier must be 'network' or 'baseline'");
    require(!a.model_path.empty(), "--model is required with the network classifier");
    auto in = open_in(a.model_path, std::ios::binary);
    auto net = nn::read_weights<float>(in);
    require(net.input_h() == kRasterSize && net.input_w() == kRasterSize,
            "network input is " + std::to_string(net.input_h()) + "x" + std::to_string(net.input_w()) +
                ", reconstructions are " + std::to_string(kRasterSize) + "x" + std::to_string(kRasterSize),
            ErrorKind::DimensionMismatch);
    classifier = ModalityClassifier::network(std::move(net));
  }
  auto bin = open_in(a.bend_path);
  BendModel bend = read_bend_model(bin);
  require(bend.M == world.M(), "bend model has " + std::to_string(bend.M) + " channels, sensor model has " +
                                   std::to_string(world.M()),
          ErrorKind::DimensionMismatch);

  ReferenceState state;
  state.global_ref = ref;
  state.touch_ref = ref;
  state.touch_ref_frame_id = a.reference_frames > 0 ? run.log.frames[a.reference_frames - 1].frame.frame_id : -1;
  Pipeline pipeline({world.reconstructor, *classifier, bend}, cfg, state);

  // The reference frames are consumed by the capture, the stream starts after them.
  std::vector<double> ms;
  for (std::size_t i = static_cast<std::size_t>(a.reference_frames); i < run.log.frames.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run.results.push_back(pipeline.process(run.log.frames[i].frame));
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  for (double m : ms) run.total_ms += m;
  if (!ms.empty()) {
    std::nth_element(ms.begin(), ms.begin() + static_cast<std::ptrdiff_t>(ms.size() / 2), ms.end());
    run.median_frame_ms = ms[ms.size() / 2];
  }

  const std::string name = a.name.empty() ? std::filesystem::path(a.log_path).stem().string() : a.name;
  run.report = build_report(name, a.seed, {{"classifier", a.classifier},
                                           {"reference_frames", std::to_string(a.reference_frames)},
                                           {"bend_update_threshold", eitskin::detail::format_double(a.threshold)},
                                           {"bend_confirm_frames", std::to_string(a.confirm)},
                                           {"lambda", eitskin::detail::format_double(world.reconstructor->lambda())},
                                           {"frames", std::to_string(run.results.size())}},
                            run.log, run.results);
  return run;
}

inline void add_pipeline_options(CLI::App& sub, PipelineArgs& a) {
  sub.add_option("--log", a.log_path, "frame log CSV")->required();
  sub.add_option("--model", a.model_path, "EITNN1 weights (network classifier)");
  sub.add_option("--bend-model", a.bend_path, "bend model text artifact")->required();
  sub.add_option("--classifier", a.classifier, "network | baseline")->capture_default_str();
  sub.add_option("--reference-frames", a.reference_frames,
                 "leading idle frames averaged into the global reference; 0 = simulated flat frame")
      ->capture_default_str();
  sub.add_option("--bend-threshold", a.threshold, "degrees of change that trigger a touch-reference update")
      ->capture_default_str();
  sub.add_option("--bend-confirm", a.confirm, "consecutive frames required for an update")->capture_default_str();
  sub.add_option("--name", a.name, "experiment name in the report (default: log file stem)");
}

}  // namespace detail

/// Runs one CLI invocation. Normal output goes to `out`, diagnostics to `err`.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Dual-modal EIT skin: simulation, training, calibration and the adaptive-reference pipeline"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;

  // simulate
  auto* sim = app.add_subcommand("simulate", "synthesize a frame log from a builtin or YAML scenario");
  std::string scenario_spec, log_out;
  sim->add_option("--scenario", scenario_spec, "builtin name or YAML file")->required();
  sim->add_option("--out", log_out, "frame log CSV to write")->required();
  auto* sim_seed = sim->add_option("--seed", seed, "noise seed")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "train the modality classifier on a labeled log");
  std::string train_log, model_out, history_out;
  nn::TrainConfig tcfg;
  int train_ref_frames = scenarios::kLeadInIdleFrames;
  tr->add_option("--log", train_log, "labeled frame log")->required();
  tr->add_option("--out", model_out, "EITNN1 weights to write")->required();
  tr->add_option("--history", history_out, "per-epoch CSV (default: <out>.history.csv)");
  tr->add_option("--epochs", tcfg.epochs)->capture_default_str();
  tr->add_option("--batch-size", tcfg.batch_size)->capture_default_str();
  tr->add_option("--lr", tcfg.learning_rate)->capture_default_str();
  tr->add_option("--momentum", tcfg.momentum)->capture_default_str();
  tr->add_option("--test-fraction", tcfg.test_fraction)->capture_default_str();
  tr->add_option("--reference-frames", train_ref_frames)->capture_default_str();
  tr->add_option("--seed", seed, "initialization, split and shuffling seed")->capture_default_str();
  bool quiet = false;
  tr->add_flag("--quiet", quiet, "suppress per-epoch lines");

  // fit-bend
  auto* fb = app.add_subcommand("fit-bend", "calibrate the bend-angle regressor");
  std::string bend_log, bend_out;
  int bend_ref_frames = 0;
  int k = kBendFeatures;
  fb->add_option("--log", bend_log, "log with bend frames at >= 2 angles")->required();
  fb->add_option("--out", bend_out, "bend model to write")->required();
  fb->add_option("--reference-frames", bend_ref_frames)->capture_default_str();
  fb->add_option("--features", k)->capture_default_str();
  fb->add_option("--seed", seed)->capture_default_str();

  // run-pipeline
  auto* rp = app.add_subcommand("run-pipeline", "replay a log through the adaptive-reference pipeline");
  detail::PipelineArgs pargs;
  std::string results_out, images_dir, report_out;
  detail::add_pipeline_options(*rp, pargs);
  rp->add_option("--results", results_out, "line-delimited frame results")->required();
  rp->add_option("--images", images_dir, "directory for per-frame PGM images");
  rp->add_option("--report", report_out, "run report to write");
  rp->add_option("--seed", pargs.seed)->capture_default_str();

  // report
  auto* rep = app.add_subcommand("report", "regenerate the run report of a log");
  detail::PipelineArgs rargs;
  std::string rep_out;
  detail::add_pipeline_options(*rep, rargs);
  rep->add_option("--out", rep_out, "report file (default: stdout)");
  rep->add_option("--seed", rargs.seed)->capture_default_str();

  // mesh-dump
  auto* md = app.add_subcommand("mesh-dump", "write the sensor mesh and electrode layout");
  std::string mesh_out;
  WorldConfig mesh_cfg;
  md->add_option("--out", mesh_out, "mesh text file (default: stdout)");
  md->add_option("--element-size", mesh_cfg.element_size)->capture_default_str();
  md->add_option("--electrodes", mesh_cfg.electrodes)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    diagnostic(err, kUsage, e.what());
    return kUsage;
  }

  try {
    if (*sim) {
      const World world = build_world();
      const Scenario s = detail::resolve_scenario(scenario_spec, seed, sim_seed->count() > 0);
      const FrameLog log = run_scenario(s, world);
      auto os = detail::open_out(log_out);
      write_frame_log(os, log, world.M());
      detail::close_checked(os, log_out);
      out << "scenario=" << s.name << " frames=" << log.size() << " M=" << world.M() << " seed=" << s.seed << "\n";
    } else if (*tr) {
      const World world = build_world();
      const FrameLog log = detail::load_log(train_log);
      const Eigen::VectorXd ref = detail::reference_from_log(log, world, train_ref_frames);
      const nn::Dataset data = build_dataset(log, world, ref);
      tcfg.seed = seed;
      auto net = nn::make_classifier<float>({}, seed);
      const auto res = nn::train(net, data, tcfg, [&](const nn::EpochStats& st) {
        if (quiet) return;
        char buf[128];
        std::snprintf(buf, sizeof buf, "epoch=%d loss=%.6f train_acc=%.4f test_acc=%.4f", st.epoch, st.train_loss,
                      st.train_acc, st.test_acc);
        out << buf << std::endl;
      });
      auto os = detail::open_out(model_out, std::ios::binary);
      nn::write_weights(os, net);
      detail::close_checked(os, model_out);
      const std::string hist = history_out.empty() ? model_out + ".history.csv" : history_out;
      auto hs = detail::open_out(hist);
      nn::write_history_csv(hs, res.history);
      detail::close_checked(hs, hist);
      char buf[96];
      std::snprintf(buf, sizeof buf, "test_accuracy=%.4f", res.final_test_acc);
      out << "samples=" << data.size() << " train=" << res.split.train.size() << " test=" << res.split.test.size()
          << " epochs=" << tcfg.epochs << "\n"
          << buf << "\n";
    } else if (*fb) {
      const World world = build_world();
      const FrameLog log = detail::load_log(bend_log);
      const Eigen::VectorXd ref = detail::reference_from_log(log, world, bend_ref_frames);
      const BendSamples bs = bend_samples(log, ref);
      const BendModel model = fit_bend_model(bs.dV, bs.angles, k, seed);
      auto os = detail::open_out(bend_out);
      write_bend_model(os, model);
      detail::close_checked(os, bend_out);
      out << "selected=";
      for (std::size_t i = 0; i < model.selection.selected.size(); ++i)
        out << (i ? "," : "") << model.selection.selected[i];
      char buf[64];
      std::snprintf(buf, sizeof buf, " training_mae=%.4f", model.training_mae);
      out << buf << " samples=" << bs.angles.size() << "\n";
    } else if (*rp) {
      const World world = build_world();
      const auto run = detail::run_pipeline_job(pargs, world);
      auto os = detail::open_out(results_out);
      for (const auto& r : run.results) os << format_frame_result(r) << '\n';
      detail::close_checked(os, results_out);
      if (!images_dir.empty()) {
        std::filesystem::create_directories(images_dir);
        for (const auto& r : run.results) {
          char stem[64];
          std::snprintf(stem, sizeof stem, "frame_%06lld_", static_cast<long long>(r.frame_id));
          const std::pair<const char*, const ReconstructionImage*> views[] = {
              {"pre", &r.pre_image}, {"touch", &r.touch_image}, {"bend", &r.bend_image}};
          for (const auto& [kind, img] : views) {
            const std::string path = (std::filesystem::path(images_dir) / (std::string(stem) + kind + ".pgm")).string();
            auto is = detail::open_out(path, std::ios::binary);
            write_pgm16(is, img->raster);
            detail::close_checked(is, path);
          }
        }
      }
      if (!report_out.empty()) {
        auto rs = detail::open_out(report_out);
        write_report(rs, run.report);
        detail::close_checked(rs, report_out);
      }
      char buf[128];
      std::snprintf(buf, sizeof buf, "median_frame_ms=%.3f total_ms=%.1f", run.median_frame_ms, run.total_ms);
      out << "frames=" << run.results.size() << " " << buf << "\n";
    } else if (*rep) {
      const World world = build_world();
      const auto run = detail::run_pipeline_job(rargs, world);
      if (rep_out.empty()) {
        write_report(out, run.report);
      } else {
        auto rs = detail::open_out(rep_out);
        write_report(rs, run.report);
        detail::close_checked(rs, rep_out);
      }
    } else if (*md) {
      const World world = build_world(mesh_cfg);
      if (mesh_out.empty()) {
        write_mesh_text(out, *world.mesh, &world.layout);
      } else {
        auto os = detail::open_out(mesh_out);
        write_mesh_text(os, *world.mesh, &world.layout);
        detail::close_checked(os, mesh_out);
      }
    }
  } catch (const ScenarioError& e) {
    std::string msg = e.what();
    if (e.line() > 0) msg += " (line " + std::to_string(e.line()) + ", column " + std::to_string(e.column()) + ")";
    diagnostic(err, kScenarioOrFile, msg);
    return kScenarioOrFile;
  } catch (const DivergenceError& e) {
    diagnostic(err, kDivergence, std::string(e.what()) + " at epoch " + std::to_string(e.epoch()));
    return kDivergence;
  } catch (const Error& e) {
    const int code = exit_code_for(e.kind());
    diagnostic(err, code, e.what());
    return code;
  } catch (const std::filesystem::filesystem_error& e) {
    diagnostic(err, kScenarioOrFile, e.what());
    return kScenarioOrFile;
  } catch (const std::exception& e) {
    diagnostic(err, kUsage, e.what());
    return kUsage;
  }
  return kOk;
}

}  // namespace eitskin::cli
