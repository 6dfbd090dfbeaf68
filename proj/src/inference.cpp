#include "pohar/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <fmt/format.h>

namespace pohar::inference {

namespace {

constexpr char kMagic[8] = {'P', 'O', 'H', 'A', 'R', 'M', 'D', 'L'};

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct TreeBuilder {
  const Dataset& data;
  const TrainSpec& spec;
  std::size_t n_classes;
  std::size_t features_per_split;
  std::mt19937_64& rng;
  Tree tree;

  std::vector<std::uint32_t> histogram(std::span<const std::size_t> rows) const {
    std::vector<std::uint32_t> h(n_classes, 0);
    for (std::size_t r : rows) ++h[data.labels[r]];
    return h;
  }

  static double gini_mass(const std::vector<std::uint32_t>& h, double n) {
    if (n == 0) return 0.0;
    double sq = 0.0;
    for (auto c : h) sq += static_cast<double>(c) * static_cast<double>(c);
    return n - sq / n;  // n * gini
  }

  std::vector<std::size_t> candidate_features() {
    const std::size_t d = data.dim();
    std::vector<std::size_t> all(d);
    std::iota(all.begin(), all.end(), 0);
    if (features_per_split >= d) return all;
    for (std::size_t i = 0; i < features_per_split; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, d - 1);
      std::swap(all[i], all[pick(rng)]);
    }
    all.resize(features_per_split);
    std::sort(all.begin(), all.end());
    return all;
  }

  std::uint32_t grow(std::vector<std::size_t> rows, std::size_t depth) {
    auto index = static_cast<std::uint32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    auto h = histogram(rows);
    const double n = static_cast<double>(rows.size());
    const double parent = gini_mass(h, n);
    bool pure = std::count_if(h.begin(), h.end(), [](auto c) { return c > 0; }) <= 1;
    if (pure || depth >= spec.max_depth || rows.size() < 2 * spec.min_leaf) {
      tree.nodes[index].histogram = std::move(h);
      return index;
    }

    double best_score = parent - 1e-12;
    std::optional<std::pair<std::size_t, double>> best;
    std::vector<std::size_t> order = rows;
    for (std::size_t f : candidate_features()) {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return data.features[a][f] < data.features[b][f];
      });
      std::vector<std::uint32_t> left(n_classes, 0);
      std::vector<std::uint32_t> right = h;
      for (std::size_t i = 1; i < order.size(); ++i) {
        std::size_t moved = order[i - 1];
        ++left[data.labels[moved]];
        --right[data.labels[moved]];
        double lo = data.features[order[i - 1]][f];
        double hi = data.features[order[i]][f];
        if (!(lo < hi) || i < spec.min_leaf || order.size() - i < spec.min_leaf) continue;
        double score = gini_mass(left, static_cast<double>(i)) +
                       gini_mass(right, static_cast<double>(order.size() - i));
        if (score < best_score) {
          double threshold = lo + (hi - lo) / 2.0;
          if (!(threshold < hi)) threshold = lo;
          best_score = score;
          best = std::make_pair(f, threshold);
        }
      }
    }
    if (!best) {
      tree.nodes[index].histogram = std::move(h);
      return index;
    }

    auto [f, threshold] = *best;
    std::vector<std::size_t> left_rows, right_rows;
    for (std::size_t r : rows) {
      (data.features[r][f] <= threshold ? left_rows : right_rows).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    std::uint32_t l = grow(std::move(left_rows), depth + 1);
    std::uint32_t r = grow(std::move(right_rows), depth + 1);
    TreeNode& node = tree.nodes[index];
    node.feature = static_cast<std::uint16_t>(f);
    node.threshold = threshold;
    node.left = l;
    node.right = r;
    return index;
  }
};

void check_dim(const ModelBundle& model, std::size_t got) {
  if (got != model.feature_dim) {
    throw InferenceError(
        fmt::format("feature has dimension {}, model expects {}", got, model.feature_dim));
  }
}

const TreeNode& leaf_for(const Tree& tree, std::span<const double> x) {
  std::uint32_t i = 0;
  while (!tree.nodes[i].is_leaf()) {
    const TreeNode& n = tree.nodes[i];
    i = x[n.feature] <= n.threshold ? n.left : n.right;
  }
  return tree.nodes[i];
}

std::size_t argmax(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

void write_tree(ByteWriter& out, const Tree& tree) {
  out.u32(static_cast<std::uint32_t>(tree.nodes.size()));
  for (const TreeNode& n : tree.nodes) {
    if (n.is_leaf()) {
      out.u8(1);
      for (auto c : n.histogram) out.u32(c);
    } else {
      out.u8(0);
      out.u16(n.feature);
      out.f64(n.threshold);
      out.u32(n.left);
      out.u32(n.right);
    }
  }
}

Tree read_tree(ByteReader& in, std::size_t n_labels, std::size_t dim) {
  Tree t;
  auto count = in.u32();
  if (count == 0) throw DecodeError("tree without nodes");
  // Each node takes at least one byte; reject absurd counts before allocating.
  if (count > in.remaining()) throw DecodeError("tree node count exceeds input size");
  t.nodes.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TreeNode& n = t.nodes[i];
    auto tag = in.u8();
    if (tag == 1) {
      n.histogram.resize(n_labels);
      std::uint64_t total = 0;
      for (auto& c : n.histogram) total += (c = in.u32());
      if (total == 0) throw DecodeError("leaf with empty histogram");
    } else if (tag == 0) {
      n.feature = in.u16();
      n.threshold = in.f64();
      n.left = in.u32();
      n.right = in.u32();
      if (n.feature >= dim || n.feature == TreeNode::kLeaf) {
        throw DecodeError(fmt::format("split feature {} out of range", n.feature));
      }
      if (n.left <= i || n.right <= i || n.left >= count || n.right >= count) {
        throw DecodeError("tree child index out of order");
      }
    } else {
      throw DecodeError(fmt::format("unknown tree node tag {}", tag));
    }
  }
  return t;
}

}  // namespace

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::DecisionTree: return "tree";
    case ModelKind::RandomForest: return "forest";
    case ModelKind::GaussianNB: return "nb";
  }
  return "?";
}

ModelKind model_kind_from_string(std::string_view name) {
  if (name == "tree") return ModelKind::DecisionTree;
  if (name == "forest") return ModelKind::RandomForest;
  if (name == "nb") return ModelKind::GaussianNB;
  throw InferenceError(fmt::format("unknown model kind '{}' (tree, forest, nb)", name));
}

std::size_t Tree::depth() const {
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    deepest = std::max(deepest, d[i]);
    if (!nodes[i].is_leaf()) {
      d[nodes[i].left] = d[i] + 1;
      d[nodes[i].right] = d[i] + 1;
    }
  }
  return deepest;
}

void Dataset::add(std::vector<double> x, const std::string& label) {
  auto it = std::find(label_names.begin(), label_names.end(), label);
  if (it == label_names.end()) {
    label_names.push_back(label);
    it = std::prev(label_names.end());
  }
  features.push_back(std::move(x));
  labels.push_back(static_cast<std::size_t>(it - label_names.begin()));
}

void Dataset::validate() const {
  if (features.size() != labels.size()) throw InferenceError("feature/label count mismatch");
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != dim()) {
      throw InferenceError(fmt::format("row {} has dimension {}, expected {}", i,
                                       features[i].size(), dim()));
    }
    if (labels[i] >= label_names.size()) throw InferenceError("label index out of range");
  }
}

void write_csv(const Dataset& data, std::ostream& out) {
  for (std::size_t k = 0; k < data.dim(); ++k) out << 'f' << k << ',';
  out << "label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double x : data.features[i]) out << fmt::format("{:.17g},", x);
    out << data.label_names[data.labels[i]] << '\n';
  }
}

Dataset read_csv(std::istream& in) {
  Dataset data;
  std::string line;
  if (!std::getline(in, line)) throw DecodeError("dataset is empty");
  std::size_t columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 2 || line.substr(line.rfind(',') + 1) != "label") {
    throw DecodeError("dataset header must end with a 'label' column");
  }
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != columns) {
      throw DecodeError(fmt::format("row {} has {} columns, expected {}", row, cells.size(), columns));
    }
    std::vector<double> x;
    for (std::size_t k = 0; k + 1 < columns; ++k) {
      char* end = nullptr;
      double v = std::strtod(cells[k].c_str(), &end);
      if (cells[k].empty() || *end != '\0' || !std::isfinite(v)) {
        throw DecodeError(fmt::format("row {} column {}: '{}' is not a finite number", row, k, cells[k]));
      }
      x.push_back(v);
    }
    if (cells.back().empty()) throw DecodeError(fmt::format("row {} has an empty label", row));
    data.add(std::move(x), cells.back());
  }
  if (data.size() == 0) throw DecodeError("dataset has no rows");
  return data;
}

ModelBundle train(const Dataset& data, const TrainSpec& spec, std::uint64_t seed) {
  data.validate();
  if (data.size() == 0) throw InferenceError("cannot train on an empty dataset");
  std::vector<std::size_t> present(data.label_names.size(), 0);
  for (std::size_t l : data.labels) ++present[l];
  if (std::count_if(present.begin(), present.end(), [](auto c) { return c > 0; }) < 2) {
    throw InferenceError("training data must contain at least two classes");
  }
  if (data.dim() == 0 || data.dim() >= TreeNode::kLeaf) {
    throw InferenceError(fmt::format("unsupported feature dimension {}", data.dim()));
  }
  if (spec.min_leaf == 0) throw InferenceError("min_leaf must be at least 1");

  ModelBundle model;
  model.kind = spec.kind;
  model.labels = data.label_names;
  model.feature_dim = data.dim();
  const std::size_t n_classes = data.label_names.size();
  const std::size_t d = data.dim();

  switch (spec.kind) {
    case ModelKind::DecisionTree: {
      std::mt19937_64 rng(seed);
      TreeBuilder b{data, spec, n_classes, d, rng, {}};
      std::vector<std::size_t> rows(data.size());
      std::iota(rows.begin(), rows.end(), 0);
      b.grow(std::move(rows), 0);
      model.trees.push_back(std::move(b.tree));
      break;
    }
    case ModelKind::RandomForest: {
      if (spec.n_trees == 0) throw InferenceError("forest needs at least one tree");
      const bool single = spec.n_trees == 1;
      std::size_t per_split = single ? d
                                     : spec.max_features.value_or(std::max<std::size_t>(
                                           1, static_cast<std::size_t>(std::lround(std::sqrt(d)))));
      for (std::size_t t = 0; t < spec.n_trees; ++t) {
        std::mt19937_64 rng(mix(seed ^ mix(t + 1)));
        std::vector<std::size_t> rows(data.size());
        if (spec.bootstrap && !single) {
          std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
          for (auto& r : rows) r = pick(rng);
          std::sort(rows.begin(), rows.end());
        } else {
          std::iota(rows.begin(), rows.end(), 0);
        }
        TreeBuilder b{data, spec, n_classes, std::min(per_split, d), rng, {}};
        b.grow(std::move(rows), 0);
        model.trees.push_back(std::move(b.tree));
      }
      break;
    }
    case ModelKind::GaussianNB: {
      model.classes.assign(n_classes, GaussianClass{0.0, std::vector<double>(d, 0.0),
                                                    std::vector<double>(d, 0.0)});
      for (std::size_t i = 0; i < data.size(); ++i) {
        auto& c = model.classes[data.labels[i]];
        for (std::size_t k = 0; k < d; ++k) c.mean[k] += data.features[i][k];
      }
      for (std::size_t c = 0; c < n_classes; ++c) {
        if (present[c] == 0) continue;
        for (double& m : model.classes[c].mean) m /= static_cast<double>(present[c]);
      }
      for (std::size_t i = 0; i < data.size(); ++i) {
        auto& c = model.classes[data.labels[i]];
        for (std::size_t k = 0; k < d; ++k) {
          double dev = data.features[i][k] - c.mean[k];
          c.variance[k] += dev * dev;
        }
      }
      for (std::size_t c = 0; c < n_classes; ++c) {
        auto& gc = model.classes[c];
        gc.prior = static_cast<double>(present[c]) / static_cast<double>(data.size());
        for (double& v : gc.variance) {
          v = present[c] ? v / static_cast<double>(present[c]) : 0.0;
          v = std::max(v, spec.variance_floor);
        }
      }
      break;
    }
  }
  return model;
}

Prediction predict(const ModelBundle& model, std::span<const double> feature) {
  check_dim(model, feature.size());
  Prediction p;
  const std::size_t n_classes = model.labels.size();
  if (model.kind == ModelKind::GaussianNB) {
    p.scores.assign(n_classes, -std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < n_classes; ++c) {
      const auto& gc = model.classes[c];
      if (gc.prior <= 0) continue;
      double s = std::log(gc.prior);
      for (std::size_t k = 0; k < feature.size(); ++k) {
        double dev = feature[k] - gc.mean[k];
        s -= 0.5 * std::log(2.0 * std::numbers::pi * gc.variance[k]) +
             dev * dev / (2.0 * gc.variance[k]);
      }
      p.scores[c] = s;
    }
  } else {
    std::vector<std::uint64_t> votes(n_classes, 0);
    for (const Tree& t : model.trees) {
      const TreeNode& leaf = leaf_for(t, feature);
      for (std::size_t c = 0; c < n_classes; ++c) votes[c] += leaf.histogram[c];
    }
    // Integer argmax; scores are reported as doubles only for the caller.
    std::size_t best = 0;
    for (std::size_t c = 1; c < n_classes; ++c) {
      if (votes[c] > votes[best]) best = c;
    }
    p.label = best;
    p.scores.assign(votes.begin(), votes.end());
    return p;
  }
  p.label = argmax(p.scores);
  return p;
}

const std::string& predicted_label(const ModelBundle& model, std::span<const double> feature) {
  return model.labels.at(predict(model, feature).label);
}

std::vector<double> aggregate(std::span<const std::vector<double>> members) {
  if (members.empty()) throw InferenceError("cannot aggregate an empty group");
  const std::size_t d = members.front().size();
  std::vector<double> mean(d, 0.0);
  for (const auto& m : members) {
    if (m.size() != d) throw InferenceError("group members have different embedding dimensions");
    for (std::size_t k = 0; k < d; ++k) mean[k] += m[k];
  }
  for (double& x : mean) x /= static_cast<double>(members.size());
  return mean;
}

double accuracy(const ModelBundle& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string& truth = data.label_names[data.labels[i]];
    if (model.labels[predict(model, data.features[i]).label] == truth) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::pair<Dataset, Dataset> split_holdout(const Dataset& data, double holdout_fraction,
                                          std::uint64_t seed) {
  if (!(holdout_fraction >= 0 && holdout_fraction < 1)) {
    throw InferenceError("holdout fraction must lie in [0,1)");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  auto n_hold = static_cast<std::size_t>(std::floor(holdout_fraction * static_cast<double>(data.size())));
  Dataset train_part, hold_part;
  train_part.label_names = hold_part.label_names = data.label_names;
  for (std::size_t i = 0; i < order.size(); ++i) {
    Dataset& dst = i + n_hold < order.size() ? train_part : hold_part;
    dst.features.push_back(data.features[order[i]]);
    dst.labels.push_back(data.labels[order[i]]);
  }
  return {std::move(train_part), std::move(hold_part)};
}

Bytes serialize(const ModelBundle& model) {
  ByteWriter out;
  out.raw(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), sizeof kMagic));
  out.u16(kModelVersion);
  out.u8(static_cast<std::uint8_t>(model.kind));
  out.u16(static_cast<std::uint16_t>(model.feature_dim));
  out.u16(static_cast<std::uint16_t>(model.labels.size()));
  for (const auto& l : model.labels) out.str16(l);
  if (model.kind == ModelKind::GaussianNB) {
    for (const auto& c : model.classes) {
      out.f64(c.prior);
      for (double m : c.mean) out.f64(m);
      for (double v : c.variance) out.f64(v);
    }
  } else {
    out.u16(static_cast<std::uint16_t>(model.trees.size()));
    for (const Tree& t : model.trees) write_tree(out, t);
  }
  return std::move(out).bytes();
}

ModelBundle deserialize(std::span<const std::uint8_t> data) {
  ByteReader in(data);
  auto magic = in.raw(sizeof kMagic);
  if (!std::equal(magic.begin(), magic.end(), reinterpret_cast<const std::uint8_t*>(kMagic))) {
    throw DecodeError("not a model file (bad magic)");
  }
  auto version = in.u16();
  if (version != kModelVersion) throw DecodeError(fmt::format("unsupported model version {}", version));
  auto kind = in.u8();
  if (kind > static_cast<std::uint8_t>(ModelKind::GaussianNB)) {
    throw DecodeError(fmt::format("unknown model kind {}", kind));
  }
  ModelBundle m;
  m.kind = static_cast<ModelKind>(kind);
  m.feature_dim = in.u16();
  if (m.feature_dim == 0) throw DecodeError("model with zero feature dimension");
  auto n_labels = in.u16();
  if (n_labels < 2) throw DecodeError("model needs at least two labels");
  for (std::uint16_t i = 0; i < n_labels; ++i) m.labels.push_back(in.str16());
  if (m.kind == ModelKind::GaussianNB) {
    m.classes.resize(n_labels);
    for (auto& c : m.classes) {
      c.prior = in.f64();
      c.mean.resize(m.feature_dim);
      c.variance.resize(m.feature_dim);
      for (double& x : c.mean) x = in.f64();
      for (double& v : c.variance) {
        v = in.f64();
        if (!(v > 0)) throw DecodeError("non-positive variance in model");
      }
    }
  } else {
    auto n_trees = in.u16();
    if (n_trees == 0) throw DecodeError("tree model without trees");
    if (m.kind == ModelKind::DecisionTree && n_trees != 1) {
      throw DecodeError("decision tree model must hold exactly one tree");
    }
    for (std::uint16_t t = 0; t < n_trees; ++t) m.trees.push_back(read_tree(in, n_labels, m.feature_dim));
  }
  in.expect_done("model file");
  return m;
}

void save_model(const ModelBundle& model, const std::filesystem::path& path) {
  Bytes bytes = serialize(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write model file {}", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ModelBundle load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open model file {}", path.string()));
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace pohar::inference
