// hact: command-line front end for the experiment pipeline.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hact/checkpoint.hpp"
#include "hact/config.hpp"
#include "hact/error.hpp"
#include "hact/experiment.hpp"
#include "hact/io.hpp"

namespace fs = std::filesystem;
using namespace hact;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "experiment config file (key = value lines)");
  cmd->add_option("--seed", c.seed, "overrides the config seed");
  cmd->add_option("--set", c.overrides, "key=value override, repeatable");
}

void apply_overrides(ExperimentConfig& cfg, const Common& c) {
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) set_config_value(cfg, "seed", std::to_string(*c.seed));
}

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
  apply_overrides(cfg, c);
  return cfg;
}

// A checkpoint carries its own config; an explicit --config replaces it.
ExperimentConfig checkpoint_config(const Checkpoint& ck, const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ck.config : load_config(c.config_path);
  apply_overrides(cfg, c);
  return cfg;
}

StoredDataset load_preprocessed(const std::string& dir, const ExperimentConfig& cfg) {
  StoredDataset data = read_dataset(dir);
  if (!data.info.preprocessed) data = preprocess_dataset(data, cfg);
  return data;
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

template <typename F>
void write_with(const std::string& path, F&& fill) {
  std::ostringstream os;
  fill(os);
  write_text_file(path, os.str());
}

std::string fixed(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_hierarchy_matches(const Hierarchy& h, const Model& m) {
  const auto widths = h.widths();
  for (std::size_t l = 0; l < kNumStacks; ++l) {
    if (widths[l] != m.config().head_classes[l]) throw ConfigError("checkpoint hierarchy does not match its heads");
  }
}

int cmd_config(bool keys) {
  const ExperimentConfig cfg;
  if (keys) {
    for (const auto& k : config_keys()) std::cout << k.key << "  " << k.doc << "\n";
  } else {
    std::cout << config_to_text(cfg);
  }
  return 0;
}

int cmd_gen_data(const Common& c, const std::string& out, const std::string& format) {
  const ExperimentConfig cfg = resolve_config(c);
  const StoredDataset data = synthetic_dataset(cfg);
  write_dataset(out, data, format == "pgm" ? FrameStorage::kPnm : FrameStorage::kHfrm);
  std::printf("wrote %zu clips of %zu classes to %s\n", data.clips.size(), data.info.classes, out.c_str());
  return 0;
}

int cmd_preprocess(const Common& c, const std::string& in, const std::string& out) {
  const ExperimentConfig cfg = resolve_config(c);
  const StoredDataset raw = read_dataset(in);
  std::vector<CropRect> rects;
  const StoredDataset pre = preprocess_dataset(raw, cfg, &rects);
  write_dataset(out, pre);
  write_with(path_in(out, "crops.csv"), [&](std::ostream& os) {
    os << "clip_id,x0,y0,x1,y1\n";
    for (std::size_t i = 0; i < rects.size(); ++i) {
      os << pre.clips[i].id << "," << rects[i].x0 << "," << rects[i].y0 << "," << rects[i].x1 << "," << rects[i].y1
         << "\n";
    }
  });
  std::printf("preprocessed %zu clips to %zux%zu (%s) in %s\n", pre.clips.size(), cfg.preprocess.size,
              cfg.preprocess.size, cfg.preprocess.crop ? "cropped" : "full frame", out.c_str());
  return 0;
}

int cmd_fit_projection(const Common& c, const std::string& in, const std::string& out) {
  const ExperimentConfig cfg = resolve_config(c);
  const StoredDataset data = read_dataset(in);
  const ProjectionParams camera = dataset_camera(data.info, cfg);
  std::vector<ProjectionSample> samples;
  for (const RawClip& clip : data.clips) {
    const auto& s3 = clip.skeleton3d;
    const auto& s2 = clip.skeleton2d;
    if (s3.empty() || s2.empty()) continue;
    if (s3.frames() != s2.frames() || s3.joints() != s2.joints()) {
      throw DataError("clip " + clip.id + ": 2D and 3D skeletons disagree in size");
    }
    for (std::size_t f = 0; f < s3.frames(); ++f) {
      for (std::size_t j = 0; j < s3.joints(); ++j) {
        samples.push_back({s3.at(f, j, 0), s3.at(f, j, 1), s3.at(f, j, 2), s2.at(f, j, 0), s2.at(f, j, 1)});
      }
    }
  }
  if (samples.empty()) throw DataError(in + ": no clips with both 2D and 3D skeletons");
  const ProjectionParams fit = fit_projection(samples, camera.b_x, camera.b_y);
  double sq = 0.0;
  for (const auto& s : samples) {
    const double ex = fit.c_x * s.x / s.z + fit.b_x - s.px, ey = fit.c_y * s.y / s.z + fit.b_y - s.py;
    sq += ex * ex + ey * ey;
  }
  std::ostringstream os;
  os << "c_x = " << fixed(fit.c_x) << "\nc_y = " << fixed(fit.c_y) << "\nb_x = " << fixed(fit.b_x)
     << "\nb_y = " << fixed(fit.b_y) << "\nsamples = " << samples.size()
     << "\nrms_residual_px = " << fixed(std::sqrt(sq / static_cast<double>(samples.size()))) << "\n";
  if (out.empty()) {
    std::cout << os.str();
  } else {
    write_text_file(out, os.str());
  }
  return 0;
}

int cmd_partition(const Common& c, const std::string& confusion, const std::vector<std::size_t>& ks,
                  std::optional<std::size_t> restarts, const std::string& out) {
  const ExperimentConfig cfg = resolve_config(c);
  std::istringstream in(read_text_file(confusion));
  const ConfusionMatrix cm = read_confusion_csv(in, confusion);
  const EdgeCosts e = edge_costs(cm);
  const std::size_t r = restarts.value_or(cfg.hierarchy.restarts);
  std::ostringstream os;
  if (ks.size() == 1) {
    const PartitionResult p = greedy_partition(e, ks[0], r, cfg.hierarchy_seed());
    os << "cost = " << fixed(p.cost) << "\nassignment = ";
    for (std::size_t i = 0; i < p.assignment.size(); ++i) os << (i ? "," : "") << p.assignment[i];
    os << "\n";
    for (std::size_t g = 0; g < ks[0]; ++g) {
      os << g << ":";
      for (std::size_t i = 0; i < p.assignment.size(); ++i) {
        if (p.assignment[i] == g) os << " " << i;
      }
      os << "\n";
    }
  } else {
    const Hierarchy h = build_hierarchy(e, ks, r, cfg.hierarchy_seed());
    write_hierarchy(os, h);
    for (std::size_t l = 0; l < h.depth(); ++l) {
      os << "# level " << l + 1 << " cost = " << fixed(partition_cost(h.levels[l].assignment, e)) << "\n";
    }
  }
  if (out.empty()) {
    std::cout << os.str();
  } else {
    write_text_file(out, os.str());
  }
  return 0;
}

int cmd_train(const Common& c, const std::string& data_dir, const std::string& out) {
  const ExperimentConfig cfg = resolve_config(c);
  const ExperimentSplits splits = experiment_splits(load_preprocessed(data_dir, cfg), cfg);
  write_text_file(path_in(out, "config.txt"), config_to_text(cfg));
  TwoPassResult r = run_two_pass(splits, cfg);
  write_with(path_in(out, "first_pass_metrics.csv"), [&](std::ostream& os) { write_metrics_csv(os, r.first.metrics); });
  write_with(path_in(out, "second_pass_metrics.csv"),
             [&](std::ostream& os) { write_metrics_csv(os, r.second.metrics); });
  write_with(path_in(out, "confusion.csv"), [&](std::ostream& os) { write_confusion_csv(os, r.derived.counts); });
  write_with(path_in(out, "soft_confusion.csv"), [&](std::ostream& os) { write_confusion_csv(os, r.derived.soft); });
  write_with(path_in(out, "hierarchy.txt"), [&](std::ostream& os) { write_hierarchy(os, r.derived.hierarchy); });
  write_with(path_in(out, "summary.csv"), [&](std::ostream& os) {
    os << "metric,value\n"
       << "first_pass_val_accuracy," << fixed(r.first.metrics.final_val_accuracy) << "\n"
       << "first_pass_test_accuracy," << fixed(r.first_test.accuracy) << "\n"
       << "second_pass_val_accuracy," << fixed(r.second.metrics.final_val_accuracy) << "\n"
       << "second_pass_test_accuracy," << fixed(r.second_test.accuracy) << "\n";
  });
  save_checkpoint(path_in(out, "first_pass.ckpt"), r.first.model, cfg, nullptr);
  save_checkpoint(path_in(out, "model.ckpt"), r.second.model, cfg, &r.derived.hierarchy);
  std::printf("first pass: val %.4f test %.4f\nsecond pass: val %.4f test %.4f\n",
              r.first.metrics.final_val_accuracy, r.first_test.accuracy, r.second.metrics.final_val_accuracy,
              r.second_test.accuracy);
  return 0;
}

int cmd_prune(const Common& c, const std::string& data_dir, const std::string& ckpt, const std::string& out) {
  Checkpoint ck = load_checkpoint(ckpt);
  const ExperimentConfig cfg = checkpoint_config(ck, c);
  if (ck.hierarchy) check_hierarchy_matches(*ck.hierarchy, ck.model);
  const ExperimentSplits splits = experiment_splits(load_preprocessed(data_dir, cfg), cfg);
  PruneResult r = run_pruning(ck.model, splits, ck.hierarchy ? &*ck.hierarchy : nullptr, cfg);
  write_with(path_in(out, "prune.csv"), [&](std::ostream& os) { write_prune_csv(os, r.passes); });
  save_checkpoint(path_in(out, "pruned.ckpt"), r.best, cfg, ck.hierarchy ? &*ck.hierarchy : nullptr);
  std::printf("initial val %.4f, best pass %zu val %.4f after %zu passes\n", r.initial_score, r.best_pass,
              r.best_score, r.passes.size());
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& data_dir, const std::string& ckpt, const std::string& out) {
  Checkpoint ck = load_checkpoint(ckpt);
  const ExperimentConfig cfg = checkpoint_config(ck, c);
  const ExperimentSplits splits = experiment_splits(load_preprocessed(data_dir, cfg), cfg);
  const EvalResult val = evaluate(ck.model, splits.validation, cfg.train);
  const EvalResult test = evaluate(ck.model, splits.test, cfg.train);
  std::printf("validation_accuracy = %s\ntest_accuracy = %s\n", fixed(val.accuracy).c_str(),
              fixed(test.accuracy).c_str());
  if (!out.empty()) write_with(out, [&](std::ostream& os) { write_confusion_csv(os, test.confusion); });
  return 0;
}

int cmd_attribution(const Common& c, const std::string& data_dir, const std::string& ckpt, std::size_t head,
                    std::size_t clips, const std::string& out) {
  Checkpoint ck = load_checkpoint(ckpt);
  const ExperimentConfig cfg = checkpoint_config(ck, c);
  const ExperimentSplits splits = experiment_splits(load_preprocessed(data_dir, cfg), cfg);
  const Hierarchy h = ck.hierarchy ? *ck.hierarchy : placeholder_hierarchy(ck.model.config());
  Dataset subset(splits.test.begin(), splits.test.begin() + static_cast<std::ptrdiff_t>(std::min(clips, splits.test.size())));
  const Tensor map = attribution_map(ck.model, subset, h, head, cfg.train);
  write_with(out + ".csv", [&](std::ostream& os) {
    write_matrix_csv(os, std::vector<double>(map.data().begin(), map.data().end()), map.dim(1));
  });
  save_pnm(out + ".pgm", Tensor({1, map.dim(0), map.dim(1)}, std::vector<double>(map.data().begin(), map.data().end())));
  std::printf("attribution of head %zu over %zu clips written to %s.csv and %s.pgm\n", head, subset.size(),
              out.c_str(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hact: hierarchical action classification experiments"};
  app.require_subcommand(1);

  Common common;
  std::string data, out, ckpt, format = "hfrm", confusion;
  std::vector<std::size_t> ks;
  std::optional<std::size_t> restarts;
  std::size_t head = 1, clips = 8;
  bool keys = false;

  auto* config = app.add_subcommand("config", "print the default config (or the key list)");
  config->add_flag("--keys", keys, "list keys with descriptions");

  auto* gen = app.add_subcommand("gen-data", "render a synthetic dataset");
  add_common(gen, common);
  gen->add_option("--out", out, "output dataset directory")->required();
  gen->add_option("--format", format, "frame storage")->check(CLI::IsMember({"hfrm", "pgm"}));

  auto* pre = app.add_subcommand("preprocess", "crop and resize a raw dataset");
  add_common(pre, common);
  pre->add_option("--data", data, "raw dataset directory")->required();
  pre->add_option("--out", out, "output dataset directory")->required();

  auto* fit = app.add_subcommand("fit-projection", "least-squares focal coefficients from paired skeletons");
  add_common(fit, common);
  fit->add_option("--data", data, "dataset directory with 2D and 3D skeletons")->required();
  fit->add_option("--out", out, "output file (default stdout)");

  auto* part = app.add_subcommand("partition", "balanced superclasses from a confusion matrix CSV");
  add_common(part, common);
  part->add_option("--confusion", confusion, "N x N confusion matrix CSV")->required();
  part->add_option("--k", ks, "superclass count(s); several values build a hierarchy")->required()->delimiter(',');
  part->add_option("--restarts", restarts, "random restarts (default hierarchy.restarts)");
  part->add_option("--out", out, "output file (default stdout)");

  auto* train = app.add_subcommand("train", "first pass, hierarchy derivation, hierarchical pass");
  add_common(train, common);
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--out", out, "run directory")->required();

  auto* prune = app.add_subcommand("prune", "iterative filter pruning with retraining");
  add_common(prune, common);
  prune->add_option("--data", data, "dataset directory")->required();
  prune->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  prune->add_option("--out", out, "run directory")->required();

  auto* eval = app.add_subcommand("evaluate", "accuracy of a checkpoint on the validation and test clips");
  add_common(eval, common);
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--checkpoint", ckpt, "checkpoint")->required();
  eval->add_option("--out", out, "test confusion matrix CSV");

  auto* attr = app.add_subcommand("attribution", "gradient attribution at the last conv of stack 1");
  add_common(attr, common);
  attr->add_option("--data", data, "dataset directory")->required();
  attr->add_option("--checkpoint", ckpt, "checkpoint")->required();
  attr->add_option("--head", head, "head index 1..4");
  attr->add_option("--clips", clips, "number of test clips averaged");
  attr->add_option("--out", out, "output prefix for .csv and .pgm")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*config) return cmd_config(keys);
    if (*gen) return cmd_gen_data(common, out, format);
    if (*pre) return cmd_preprocess(common, data, out);
    if (*fit) return cmd_fit_projection(common, data, out);
    if (*part) return cmd_partition(common, confusion, ks, restarts, out);
    if (*train) return cmd_train(common, data, out);
    if (*prune) return cmd_prune(common, data, ckpt, out);
    if (*eval) return cmd_evaluate(common, data, ckpt, out);
    if (*attr) return cmd_attribution(common, data, ckpt, head, clips, out);
  } catch (const Error& e) {
    std::fprintf(stderr, "hact: %s\n", e.what());
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "hact: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "hact: %s\n", e.what());
    return 2;
  }
  return 1;
}
