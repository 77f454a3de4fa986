#include "hact/hierarchy.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "hact/error.hpp"
#include "hact/ops.hpp"

namespace hact {

ConfusionMatrix::ConfusionMatrix(std::size_t classes, std::vector<double> values) : n_(classes), v_(std::move(values)) {
  if (v_.size() != n_ * n_) throw DataError("confusion matrix must be square");
  for (double v : v_) {
    if (!(v >= 0.0)) throw DataError("confusion matrix entries must be nonnegative");
  }
}

double ConfusionMatrix::row_sum(std::size_t truth) const {
  return std::accumulate(v_.begin() + static_cast<std::ptrdiff_t>(truth * n_),
                         v_.begin() + static_cast<std::ptrdiff_t>((truth + 1) * n_), 0.0);
}

ConfusionMatrix confusion_from_predictions(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                           std::size_t classes) {
  if (truth.size() != predicted.size()) throw DataError("truth and prediction counts differ");
  ConfusionMatrix c(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes) {
      throw IndexError("label out of range [0," + std::to_string(classes) + ") at sample " + std::to_string(i));
    }
    c.at(truth[i], predicted[i]) += 1.0;
  }
  return c;
}

ConfusionMatrix soft_confusion(std::span<const std::size_t> truth, std::span<const double> probabilities,
                               std::size_t classes) {
  if (probabilities.size() != truth.size() * classes) throw DataError("probability rows do not match samples");
  ConfusionMatrix c(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes) throw IndexError("label out of range at sample " + std::to_string(i));
    for (std::size_t j = 0; j < classes; ++j) c.at(truth[i], j) += probabilities[i * classes + j];
  }
  return c;
}

void EdgeCosts::set(std::size_t i, std::size_t j, double cost) {
  if (i == j) throw DataError("edge costs have a zero diagonal");
  v_[i * n_ + j] = cost;
  v_[j * n_ + i] = cost;
}

double EdgeCosts::total() const {
  double t = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = i + 1; j < n_; ++j) t += at(i, j);
  }
  return t;
}

EdgeCosts edge_costs(const ConfusionMatrix& confusion) {
  const std::size_t n = confusion.classes();
  EdgeCosts e(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) e.set(i, j, confusion.at(i, j) + confusion.at(j, i));
  }
  return e;
}

std::size_t validate_balanced(const Assignment& assignment) {
  if (assignment.empty()) throw DataError("empty assignment");
  const std::size_t k = *std::max_element(assignment.begin(), assignment.end()) + 1;
  if (assignment.size() % k != 0) {
    throw DataError("unbalanced assignment: " + std::to_string(k) + " superclasses do not divide " +
                    std::to_string(assignment.size()) + " classes");
  }
  std::vector<std::size_t> sizes(k, 0);
  for (auto s : assignment) ++sizes[s];
  const std::size_t want = assignment.size() / k;
  for (std::size_t g = 0; g < k; ++g) {
    if (sizes[g] != want) {
      throw DataError("unbalanced assignment: superclass " + std::to_string(g) + " has " + std::to_string(sizes[g]) +
                      " classes, expected " + std::to_string(want));
    }
  }
  return k;
}

namespace {

void require_matching(const Assignment& assignment, const EdgeCosts& costs) {
  if (assignment.size() != costs.classes()) {
    throw DataError("assignment covers " + std::to_string(assignment.size()) + " classes, costs cover " +
                    std::to_string(costs.classes()));
  }
}

}  // namespace

double partition_cost(const Assignment& assignment, const EdgeCosts& costs) {
  require_matching(assignment, costs);
  validate_balanced(assignment);
  double cross = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    for (std::size_t j = i + 1; j < assignment.size(); ++j) {
      if (assignment[i] != assignment[j]) cross += costs.at(i, j);
    }
  }
  return cross;
}

double within_cost(const Assignment& assignment, const EdgeCosts& costs) {
  require_matching(assignment, costs);
  validate_balanced(assignment);
  double within = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    for (std::size_t j = i + 1; j < assignment.size(); ++j) {
      if (assignment[i] == assignment[j]) within += costs.at(i, j);
    }
  }
  return within;
}

Assignment greedy_descent(const EdgeCosts& costs, Assignment s) {
  require_matching(s, costs);
  const std::size_t k = validate_balanced(s);
  const std::size_t n = s.size();
  // link[i*k + g]: total cost between class i and the members of superclass g.
  std::vector<double> link(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) link[i * k + s[j]] += costs.at(i, j);
  }
  // Swaps must lower the cost by more than round-off relative to the total.
  const double tol = 1e-12 * costs.total();
  while (true) {
    double best = -tol;
    std::size_t bi = n, bj = n;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const std::size_t a = s[i], b = s[j];
        if (a == b) continue;
        const double e = costs.at(i, j);
        const double within_gain = (link[i * k + b] - e - link[i * k + a]) + (link[j * k + a] - e - link[j * k + b]);
        const double delta = -within_gain;
        if (delta < best) {
          best = delta;
          bi = i;
          bj = j;
        }
      }
    }
    if (bi == n) break;
    const std::size_t a = s[bi], b = s[bj];
    for (std::size_t m = 0; m < n; ++m) {
      const double to_i = costs.at(m, bi), to_j = costs.at(m, bj);
      link[m * k + a] += to_j - to_i;
      link[m * k + b] += to_i - to_j;
    }
    std::swap(s[bi], s[bj]);
  }
  return s;
}

PartitionResult greedy_partition(const EdgeCosts& costs, std::size_t superclasses, std::size_t restarts,
                                 std::uint64_t seed) {
  const std::size_t n = costs.classes();
  if (superclasses == 0 || n == 0 || n % superclasses != 0) {
    throw ConfigError(std::to_string(superclasses) + " superclasses do not divide " + std::to_string(n) + " classes");
  }
  if (restarts == 0) throw ConfigError("greedy_partition needs at least one restart");
  const std::size_t size = n / superclasses;
  PartitionResult best;
  for (std::size_t r = 0; r < restarts; ++r) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(r)};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    Assignment start(n);
    for (std::size_t p = 0; p < n; ++p) start[order[p]] = p / size;
    Assignment local = greedy_descent(costs, std::move(start));
    const double cost = partition_cost(local, costs);
    if (r == 0 || cost < best.cost) best = {std::move(local), cost, r};
  }
  // Superclasses are numbered in order of their lowest member.
  std::vector<std::size_t> relabel(superclasses, superclasses);
  std::size_t next = 0;
  for (auto& g : best.assignment) {
    if (relabel[g] == superclasses) relabel[g] = next++;
    g = relabel[g];
  }
  return best;
}

std::vector<std::size_t> Hierarchy::widths() const {
  std::vector<std::size_t> w;
  for (const auto& l : levels) w.push_back(l.superclasses);
  return w;
}

void Hierarchy::validate() const {
  if (levels.empty()) throw ConfigError("hierarchy has no levels");
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const auto& level = levels[l];
    if (level.assignment.size() != classes) throw ConfigError("hierarchy level size does not match class count");
    if (validate_balanced(level.assignment) != level.superclasses) {
      throw ConfigError("hierarchy level " + std::to_string(l + 1) + " superclass count mismatch");
    }
    if (l > 0 && level.superclasses < levels[l - 1].superclasses) {
      throw ConfigError("hierarchy superclass counts must not decrease");
    }
  }
  if (levels.back().superclasses != classes) throw ConfigError("last hierarchy level must be the identity");
}

Hierarchy Hierarchy::identity(std::size_t classes, std::size_t depth) {
  Hierarchy h;
  h.classes = classes;
  Assignment id(classes);
  std::iota(id.begin(), id.end(), 0);
  h.levels.assign(depth, HierarchyLevel{classes, id});
  return h;
}

Hierarchy build_hierarchy(const EdgeCosts& costs, std::span<const std::size_t> superclass_counts,
                          std::size_t restarts, std::uint64_t seed) {
  const std::size_t n = costs.classes();
  for (std::size_t l = 0; l < superclass_counts.size(); ++l) {
    const std::size_t k = superclass_counts[l];
    if (k == 0 || n % k != 0) {
      throw ConfigError("level " + std::to_string(l + 1) + ": " + std::to_string(k) + " superclasses do not divide " +
                        std::to_string(n) + " classes");
    }
    if (l > 0 && k < superclass_counts[l - 1]) throw ConfigError("superclass counts must not decrease");
  }
  Hierarchy h;
  h.classes = n;
  for (std::size_t l = 0; l < superclass_counts.size(); ++l) {
    const std::size_t k = superclass_counts[l];
    if (k == n) {
      // Every class alone: the identity is the only balanced assignment up to relabeling.
      h.levels.push_back(Hierarchy::identity(n, 1).levels[0]);
      continue;
    }
    auto result = greedy_partition(costs, k, restarts, seed + l);
    h.levels.push_back({k, std::move(result.assignment)});
  }
  h.levels.push_back(Hierarchy::identity(n, 1).levels[0]);
  return h;
}

std::vector<std::size_t> map_labels(const Hierarchy& hierarchy, std::size_t level,
                                    std::span<const std::size_t> labels) {
  if (level < 1 || level > hierarchy.depth()) {
    throw UsageError("hierarchy level " + std::to_string(level) + " outside 1.." + std::to_string(hierarchy.depth()));
  }
  const auto& assignment = hierarchy.levels[level - 1].assignment;
  std::vector<std::size_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= assignment.size()) {
      throw IndexError("label " + std::to_string(labels[i]) + " outside [0," + std::to_string(assignment.size()) +
                       ")");
    }
    out[i] = assignment[labels[i]];
  }
  return out;
}

void write_hierarchy(std::ostream& os, const Hierarchy& h) {
  os << "hierarchy classes=" << h.classes << " levels=" << h.depth() << '\n';
  for (std::size_t l = 0; l < h.depth(); ++l) {
    const auto& level = h.levels[l];
    os << "level " << (l + 1) << " superclasses=" << level.superclasses << '\n';
    for (std::size_t g = 0; g < level.superclasses; ++g) {
      os << g << ':';
      for (std::size_t i = 0; i < h.classes; ++i) {
        if (level.assignment[i] == g) os << ' ' << i;
      }
      os << '\n';
    }
  }
}

namespace {

std::size_t parse_key(const std::string& token, const std::string& key, std::size_t line_no) {
  const std::string prefix = key + "=";
  if (token.rfind(prefix, 0) != 0) {
    throw DataError("hierarchy line " + std::to_string(line_no) + ": expected " + prefix);
  }
  try {
    return std::stoul(token.substr(prefix.size()));
  } catch (const std::exception&) {
    throw DataError("hierarchy line " + std::to_string(line_no) + ": bad number in " + token);
  }
}

}  // namespace

Hierarchy read_hierarchy(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> std::istringstream {
    do {
      if (!std::getline(is, line)) throw DataError("hierarchy: unexpected end of input after line " + std::to_string(line_no));
      ++line_no;
    } while (line.empty() || line[0] == '#');
    return std::istringstream(line);
  };
  Hierarchy h;
  std::string word, a, b;
  auto header = next();
  header >> word >> a >> b;
  if (word != "hierarchy") throw DataError("hierarchy line 1: expected 'hierarchy'");
  h.classes = parse_key(a, "classes", line_no);
  const std::size_t depth = parse_key(b, "levels", line_no);
  for (std::size_t l = 0; l < depth; ++l) {
    auto lv = next();
    std::size_t index = 0;
    lv >> word >> index >> a;
    if (word != "level" || index != l + 1) {
      throw DataError("hierarchy line " + std::to_string(line_no) + ": expected 'level " + std::to_string(l + 1) + "'");
    }
    HierarchyLevel level;
    level.superclasses = parse_key(a, "superclasses", line_no);
    level.assignment.assign(h.classes, h.classes);
    for (std::size_t g = 0; g < level.superclasses; ++g) {
      auto members = next();
      std::string tag;
      members >> tag;
      if (tag != std::to_string(g) + ":") {
        throw DataError("hierarchy line " + std::to_string(line_no) + ": expected superclass " + std::to_string(g));
      }
      std::size_t cls;
      while (members >> cls) {
        if (cls >= h.classes || level.assignment[cls] != h.classes) {
          throw DataError("hierarchy line " + std::to_string(line_no) + ": bad or repeated class " +
                          std::to_string(cls));
        }
        level.assignment[cls] = g;
      }
    }
    if (std::find(level.assignment.begin(), level.assignment.end(), h.classes) != level.assignment.end()) {
      throw DataError("hierarchy level " + std::to_string(l + 1) + " leaves classes unassigned");
    }
    h.levels.push_back(std::move(level));
  }
  h.validate();
  return h;
}

HierarchicalLoss hierarchical_loss(const std::array<Tensor, kNumStacks>& logits, std::span<const std::size_t> labels,
                                   const Hierarchy& hierarchy, const std::array<double, kNumStacks>& weights) {
  if (hierarchy.depth() != kNumStacks) {
    throw ShapeError("hierarchy has " + std::to_string(hierarchy.depth()) + " levels for " +
                     std::to_string(kNumStacks) + " heads");
  }
  HierarchicalLoss out;
  Tensor total;
  for (std::size_t l = 0; l < kNumStacks; ++l) {
    if (weights[l] < 0.0) throw ConfigError("loss weights must be nonnegative");
    if (logits[l].ndim() != 2 || logits[l].dim(1) != hierarchy.levels[l].superclasses) {
      throw ShapeError("head " + std::to_string(l + 1) + " logits " + shape_str(logits[l].shape()) + " vs " +
                       std::to_string(hierarchy.levels[l].superclasses) + " superclasses");
    }
    const auto targets = map_labels(hierarchy, l + 1, labels);
    if (weights[l] == 0.0) {
      NoGradGuard no_grad;
      out.head_losses[l] = softmax_cross_entropy(logits[l], targets).item();
      continue;
    }
    const Tensor ce = softmax_cross_entropy(logits[l], targets);
    out.head_losses[l] = ce.item();
    const Tensor term = weights[l] == 1.0 ? ce : scale(ce, weights[l]);
    total = total.defined() ? add(total, term) : term;
  }
  if (!total.defined()) throw ConfigError("at least one loss weight must be positive");
  out.total = total;
  return out;
}

}  // namespace hact
