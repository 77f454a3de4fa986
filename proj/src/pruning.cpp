#include "hact/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <tuple>

#include "hact/error.hpp"

namespace hact {

std::size_t FilterNormTable::total_filters() const {
  std::size_t n = 0;
  for (const auto& l : norms) n += l.size();
  return n;
}

FilterNormTable filter_norms(const Model& model) {
  FilterNormTable table;
  for (const ConvBn* layer : model.prunable_layers()) {
    const std::size_t cout = layer->out_channels();
    const std::size_t per = layer->weight.numel() / cout;
    const auto w = layer->weight.data();
    std::vector<double> norms(cout);
    for (std::size_t c = 0; c < cout; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < per; ++i) s += w[c * per + i] * w[c * per + i];
      norms[c] = std::sqrt(s);
    }
    table.layers.push_back(layer->name);
    table.norms.push_back(std::move(norms));
  }
  return table;
}

std::size_t PruneMask::count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < pruned.size(); ++l) n += count(l);
  return n;
}

std::size_t PruneMask::count(std::size_t layer) const {
  return static_cast<std::size_t>(std::count(pruned[layer].begin(), pruned[layer].end(), true));
}

void PruneMask::merge(const PruneMask& other) {
  if (other.layers != layers) throw ShapeError("prune masks cover different layers");
  for (std::size_t l = 0; l < pruned.size(); ++l) {
    if (other.pruned[l].size() != pruned[l].size()) {
      throw ShapeError("prune mask for " + layers[l] + " has " + std::to_string(other.pruned[l].size()) +
                       " channels, expected " + std::to_string(pruned[l].size()));
    }
    for (std::size_t c = 0; c < pruned[l].size(); ++c) {
      if (other.pruned[l][c]) pruned[l][c] = true;
    }
  }
}

PruneMask PruneMask::empty_like() const {
  PruneMask m;
  m.layers = layers;
  for (const auto& l : pruned) m.pruned.emplace_back(l.size(), false);
  return m;
}

PruneMask current_mask(const Model& model) {
  PruneMask m;
  for (const ConvBn* layer : model.prunable_layers()) {
    m.layers.push_back(layer->name);
    std::vector<bool> p = layer->pruned;
    p.resize(layer->out_channels(), false);
    m.pruned.push_back(std::move(p));
  }
  return m;
}

const char* variant_name(PruneVariant v) { return v == PruneVariant::kGlobal ? "global" : "per_layer"; }

PruneVariant parse_variant(const std::string& name) {
  if (name == "global") return PruneVariant::kGlobal;
  if (name == "per_layer" || name == "per-layer") return PruneVariant::kPerLayer;
  throw ConfigError("unknown pruning variant '" + name + "' (expected global or per_layer)");
}

std::size_t prune_count(double p, std::size_t remaining) {
  return static_cast<std::size_t>(std::floor(p * static_cast<double>(remaining) + 1e-9));
}

namespace {

void check_fraction(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("prune fraction must lie in (0,1), got " + std::to_string(p));
}

void check_layout(const FilterNormTable& table, const PruneMask& mask) {
  if (mask.layers != table.layers) throw ShapeError("prune mask layers do not match the norm table");
  for (std::size_t l = 0; l < table.norms.size(); ++l) {
    if (mask.pruned[l].size() != table.norms[l].size()) {
      throw ShapeError("prune mask for " + table.layers[l] + " has " + std::to_string(mask.pruned[l].size()) +
                       " channels, norm table has " + std::to_string(table.norms[l].size()));
    }
  }
}

using Candidate = std::tuple<double, std::size_t, std::size_t>;  // norm, layer, filter

}  // namespace

PruneMask select_global(const FilterNormTable& table, double p, const PruneMask& already_pruned) {
  check_fraction(p);
  check_layout(table, already_pruned);
  std::vector<Candidate> candidates;
  for (std::size_t l = 0; l < table.norms.size(); ++l) {
    for (std::size_t c = 0; c < table.norms[l].size(); ++c) {
      if (!already_pruned.pruned[l][c]) candidates.emplace_back(table.norms[l][c], l, c);
    }
  }
  const std::size_t k = prune_count(p, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end());
  PruneMask delta = already_pruned.empty_like();
  for (std::size_t i = 0; i < k; ++i) delta.pruned[std::get<1>(candidates[i])][std::get<2>(candidates[i])] = true;
  return delta;
}

PruneMask select_per_layer(const FilterNormTable& table, double p, const PruneMask& already_pruned) {
  check_fraction(p);
  check_layout(table, already_pruned);
  PruneMask delta = already_pruned.empty_like();
  for (std::size_t l = 0; l < table.norms.size(); ++l) {
    std::vector<Candidate> candidates;
    for (std::size_t c = 0; c < table.norms[l].size(); ++c) {
      if (!already_pruned.pruned[l][c]) candidates.emplace_back(table.norms[l][c], l, c);
    }
    const std::size_t k = prune_count(p, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end());
    for (std::size_t i = 0; i < k; ++i) delta.pruned[l][std::get<2>(candidates[i])] = true;
  }
  return delta;
}

PruneMask select_filters(const FilterNormTable& table, double p, const PruneMask& already_pruned,
                         PruneVariant variant) {
  return variant == PruneVariant::kGlobal ? select_global(table, p, already_pruned)
                                          : select_per_layer(table, p, already_pruned);
}

void apply_mask(Model& model, const PruneMask& mask) {
  auto layers = model.prunable_layers();
  if (mask.layers.size() != layers.size()) {
    throw ShapeError("prune mask has " + std::to_string(mask.layers.size()) + " layers, model has " +
                     std::to_string(layers.size()));
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (mask.layers[l] != layers[l]->name || mask.pruned[l].size() != layers[l]->out_channels()) {
      throw ShapeError("prune mask entry " + mask.layers[l] + " does not match layer " + layers[l]->name);
    }
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& p = layers[l]->pruned;
    p.resize(layers[l]->out_channels(), false);
    for (std::size_t c = 0; c < p.size(); ++c) {
      if (mask.pruned[l][c]) p[c] = true;
    }
  }
  model.enforce_pruning();
}

bool PruneStopRule::record(double score) {
  ++passes_;
  if (score > best_) {
    best_ = score;
    best_pass_ = passes_;
    below_ = 0;
  } else if (score < best_) {
    ++below_;
  } else {
    below_ = 0;
  }
  return below_ >= 2;
}

PruneResult pruning_loop(const Model& model, const PruneTrainer& trainer, double p, PruneVariant variant,
                         std::size_t max_passes) {
  if (model.trained_epochs == 0) throw UsageError("pruning needs a trained model");
  if (!trainer.score || !trainer.retrain) throw UsageError("pruning needs score and retrain callbacks");
  check_fraction(p);
  Model current = model.clone();
  PruneResult result{model.clone(), 0, 0.0, 0.0, {}};
  result.initial_score = trainer.score(current);
  PruneStopRule rule(result.initial_score);
  for (std::size_t pass = 1; pass <= max_passes; ++pass) {
    const PruneMask already = current_mask(current);
    apply_mask(current, select_filters(filter_norms(current), p, already, variant));
    trainer.retrain(current);
    const double score = trainer.score(current);
    result.passes.push_back({pass, variant, current_mask(current).count(), score});
    const bool stop = rule.record(score);
    if (rule.best_pass() == pass) result.best = current.clone();
    if (stop) break;
  }
  result.best_pass = rule.best_pass();
  result.best_score = rule.best_score();
  return result;
}

void write_prune_csv(std::ostream& os, const std::vector<PassMetrics>& passes) {
  os << "pass,variant,pruned_total,val_accuracy\n";
  char buf[64];
  for (const auto& m : passes) {
    std::snprintf(buf, sizeof buf, "%.17g", m.val_accuracy);
    os << m.pass << ',' << variant_name(m.variant) << ',' << m.pruned_total << ',' << buf << '\n';
  }
}

}  // namespace hact
