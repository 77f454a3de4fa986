#include "hact/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "hact/error.hpp"

namespace hact {

StoredDataset synthetic_dataset(const ExperimentConfig& cfg) {
  SyntheticDataset gen = generate_synthetic(cfg.synthetic);
  StoredDataset out;
  out.info.classes = cfg.synthetic.classes;
  out.info.superfamilies = cfg.synthetic.superfamilies;
  out.info.width = cfg.synthetic.width;
  out.info.height = cfg.synthetic.height;
  out.info.has_projection = true;
  out.info.projection = gen.projection;
  const TrainTestSplit s = split_train_test(gen.clips, cfg.synthetic.classes, cfg.split_seed());
  out.split.assign(gen.clips.size(), Split::kTest);
  for (auto i : s.train) out.split[i] = Split::kTrain;
  out.clips = std::move(gen.clips);
  return out;
}

ProjectionParams dataset_camera(const DatasetInfo& info, const ExperimentConfig& cfg) {
  return info.has_projection ? info.projection : cfg.projection;
}

PreprocessedClip preprocess_clip(const RawClip& clip, const ProjectionParams& camera, const PreprocessConfig& cfg) {
  if (clip.frames.ndim() != 4) throw ShapeError("clip " + clip.id + ": frames must be [T,C,H,W]");
  const int H = static_cast<int>(clip.frames.dim(2)), W = static_cast<int>(clip.frames.dim(3));
  PreprocessedClip out;
  if (cfg.crop) {
    if (cfg.skeleton == "3d") {
      if (clip.skeleton3d.empty()) throw DataError("clip " + clip.id + " has no 3D skeleton to crop with");
      out.rect = crop_rect(project(clip.skeleton3d, camera), W, H, cfg.margin);
    } else {
      if (clip.skeleton2d.empty()) throw DataError("clip " + clip.id + " has no 2D skeleton to crop with");
      out.rect = crop_rect(clip.skeleton2d, W, H, cfg.margin);
    }
  } else {
    out.rect = CropRect{0, 0, W, H};
  }
  Tensor resized = crop_resize(clip.frames, out.rect, cfg.size, cfg.size);
  std::vector<double> v(resized.data().begin(), resized.data().end());
  for (double& x : v) x = std::round(std::clamp(x, 0.0, 1.0) * 255.0) / 255.0;
  out.frames = Tensor(resized.shape(), std::move(v));
  return out;
}

StoredDataset preprocess_dataset(const StoredDataset& raw, const ExperimentConfig& cfg, std::vector<CropRect>* rects) {
  if (raw.info.preprocessed) throw DataError("dataset is already preprocessed");
  const ProjectionParams camera = dataset_camera(raw.info, cfg);
  StoredDataset out;
  out.info = raw.info;
  out.info.preprocessed = true;
  out.info.width = cfg.preprocess.size;
  out.info.height = cfg.preprocess.size;
  out.split = raw.split;
  if (rects != nullptr) rects->clear();
  for (const RawClip& c : raw.clips) {
    PreprocessedClip p = preprocess_clip(c, camera, cfg.preprocess);
    RawClip q;
    q.id = c.id;
    q.label = c.label;
    q.superfamily = c.superfamily;
    q.frames = std::move(p.frames);
    out.clips.push_back(std::move(q));
    if (rects != nullptr) rects->push_back(p.rect);
  }
  return out;
}

ExperimentSplits experiment_splits(const StoredDataset& data, const ExperimentConfig& cfg) {
  if (!data.info.preprocessed) throw DataError("training needs a preprocessed dataset (run preprocess first)");
  if (data.info.classes != cfg.synthetic.classes) {
    throw DataError("dataset has " + std::to_string(data.info.classes) + " classes but the config expects " +
                    std::to_string(cfg.synthetic.classes));
  }
  ExperimentSplits s;
  Dataset test;
  for (std::size_t i = 0; i < data.clips.size(); ++i) {
    Clip c{data.clips[i].frames, data.clips[i].label};
    (data.split[i] == Split::kTrain ? s.train : test).push_back(std::move(c));
  }
  if (s.train.empty() || test.size() < 2) throw DataError("dataset needs train clips and at least two test clips");
  auto [val, rest] = cfg.stratified_validation
                         ? split_validation_stratified(test, cfg.validation_fraction, cfg.validation_seed())
                         : split_validation(test, cfg.validation_fraction, cfg.validation_seed());
  s.validation = std::move(val);
  s.test = std::move(rest);
  return s;
}

DerivedHierarchy derive_hierarchy(Model& model, const Dataset& validation, const ExperimentConfig& cfg) {
  const std::size_t classes = model.config().head_classes.back();
  std::vector<std::size_t> truth;
  for (const auto& c : validation) truth.push_back(c.label);
  const EvalResult hard = evaluate(model_classifier(model), validation, classes, cfg.train);
  const EvalResult tempered =
      evaluate(model_classifier(model, cfg.hierarchy.temperature), validation, classes, cfg.train);
  DerivedHierarchy d;
  d.counts = hard.confusion;
  d.soft = soft_confusion(truth, tempered.probabilities, classes);
  const ConfusionMatrix& used = cfg.hierarchy.soft ? d.soft : d.counts;
  d.hierarchy = build_hierarchy(edge_costs(used), cfg.hierarchy.k, cfg.hierarchy.restarts, cfg.hierarchy_seed());
  return d;
}

TwoPassResult run_two_pass(const ExperimentSplits& splits, const ExperimentConfig& cfg) {
  TrainResult first =
      train_first_pass(Model::build(cfg.model, cfg.model_seed()), splits.train, splits.validation, cfg.train);
  EvalResult first_test = evaluate(first.model, splits.test, cfg.train);
  DerivedHierarchy derived = derive_hierarchy(first.model, splits.validation, cfg);
  Model start = cfg.train.warm_start ? first.model.clone() : Model::build(cfg.model, cfg.model_seed());
  TrainResult second =
      train_hierarchical(std::move(start), splits.train, splits.validation, derived.hierarchy, cfg.train);
  EvalResult second_test = evaluate(second.model, splits.test, cfg.train);
  return TwoPassResult{std::move(first), std::move(derived), std::move(second), std::move(first_test),
                       std::move(second_test)};
}

PruneTrainer make_prune_trainer(const ExperimentSplits& splits, const Hierarchy* hierarchy,
                                const ExperimentConfig& cfg) {
  TrainConfig retrain_cfg = cfg.train;
  if (cfg.prune.retrain_epochs > 0) retrain_cfg.epochs = cfg.prune.retrain_epochs;
  const Hierarchy h = hierarchy != nullptr ? *hierarchy : placeholder_hierarchy(cfg.model);
  std::array<double, kNumStacks> weights = cfg.train.loss_weights;
  if (hierarchy == nullptr) weights = {0.0, 0.0, 0.0, cfg.train.loss_weights.back()};
  PruneTrainer t;
  t.score = [&splits, eval_cfg = cfg.train](Model& m) { return evaluate(m, splits.validation, eval_cfg).accuracy; };
  t.retrain = [&splits, h, weights, retrain_cfg](Model& m) {
    m = train_model(std::move(m), splits.train, splits.validation, h, weights, retrain_cfg).model;
  };
  return t;
}

PruneResult run_pruning(const Model& model, const ExperimentSplits& splits, const Hierarchy* hierarchy,
                        const ExperimentConfig& cfg) {
  return pruning_loop(model, make_prune_trainer(splits, hierarchy, cfg), cfg.prune.p, cfg.prune.variant,
                      cfg.prune.max_passes);
}

std::size_t recovered_superfamilies(const Hierarchy& hierarchy, std::size_t level,
                                    std::span<const std::size_t> superfamily_of_class) {
  if (level < 1 || level > hierarchy.depth()) throw UsageError("hierarchy level out of range");
  const Assignment& a = hierarchy.levels[level - 1].assignment;
  if (a.size() != superfamily_of_class.size()) throw ShapeError("superfamily list does not match the hierarchy");
  std::set<std::size_t> families(superfamily_of_class.begin(), superfamily_of_class.end());
  std::size_t recovered = 0;
  for (std::size_t f : families) {
    std::set<std::size_t> groups, members_of_group;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (superfamily_of_class[i] == f) groups.insert(a[i]);
    }
    if (groups.size() != 1) continue;
    bool exact = true;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] == *groups.begin() && superfamily_of_class[i] != f) exact = false;
    }
    if (exact) ++recovered;
  }
  return recovered;
}

Tensor attribution_map(Model& model, const Dataset& clips, const Hierarchy& hierarchy, std::size_t head_index,
                       const TrainConfig& cfg) {
  if (clips.empty()) throw DataError("attribution needs at least one clip");
  std::mt19937_64 rng(cfg.seed);
  std::vector<Tensor> views;
  std::vector<std::size_t> labels;
  for (const Clip& c : clips) {
    const auto idx = sample_frames(c.frames.dim(0), cfg.frames_per_clip, Mode::kEval, rng);
    views.push_back(augment(gather_frames(c.frames, idx), Mode::kEval, cfg.crop_size, rng));
    labels.push_back(c.label);
  }
  if (head_index < 1 || head_index > hierarchy.depth()) {
    throw UsageError("head index must be in 1.." + std::to_string(hierarchy.depth()));
  }
  const auto targets = map_labels(hierarchy, head_index, labels);
  const Tensor map = gradient_attribution(model, to_model_input(views), targets, head_index);
  const std::size_t C = map.dim(0), T = map.dim(1), H = map.dim(2), W = map.dim(3);
  std::vector<double> out(H * W, 0.0);
  const auto v = map.data();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < H * W; ++k) out[k] += v[(c * T + t) * H * W + k];
    }
  }
  const double mx = *std::max_element(out.begin(), out.end());
  if (mx > 0.0) {
    for (double& x : out) x /= mx;
  }
  return Tensor({H, W}, std::move(out));
}

}  // namespace hact
