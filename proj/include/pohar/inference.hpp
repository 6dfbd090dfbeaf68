#pragma once

// Tree ensembles and Gaussian naive Bayes for group activity classification.
// Tree inference needs only threshold comparisons and integer sums.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pohar/bytes.hpp"

namespace pohar::inference {

class InferenceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ModelKind : std::uint8_t { DecisionTree = 0, RandomForest = 1, GaussianNB = 2 };

const char* to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view name);  // "tree", "forest", "nb"

struct TreeNode {
  static constexpr std::uint16_t kLeaf = 0xFFFF;

  std::uint16_t feature = kLeaf;
  double threshold = 0;  // x[feature] <= threshold goes left
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::vector<std::uint32_t> histogram;  // leaves only, one count per label

  bool is_leaf() const { return feature == kLeaf; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Flat tree, root at index 0, children always after their parent.
struct Tree {
  std::vector<TreeNode> nodes;

  std::size_t depth() const;
  friend bool operator==(const Tree&, const Tree&) = default;
};

struct GaussianClass {
  double prior = 0;
  std::vector<double> mean;
  std::vector<double> variance;

  friend bool operator==(const GaussianClass&, const GaussianClass&) = default;
};

struct ModelBundle {
  ModelKind kind = ModelKind::DecisionTree;
  std::vector<Tree> trees;
  std::vector<GaussianClass> classes;  // GaussianNB only
  std::vector<std::string> labels;
  std::size_t feature_dim = 0;

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

struct Dataset {
  std::vector<std::vector<double>> features;
  std::vector<std::size_t> labels;  // indices into label_names
  std::vector<std::string> label_names;

  std::size_t size() const { return features.size(); }
  std::size_t dim() const { return features.empty() ? 0 : features.front().size(); }
  void add(std::vector<double> x, const std::string& label);
  void validate() const;
};

/// CSV: d feature columns then a `label` column, with a header row.
void write_csv(const Dataset& data, std::ostream& out);
/// Labels are indexed in order of first appearance. Throws DecodeError.
Dataset read_csv(std::istream& in);

struct TrainSpec {
  ModelKind kind = ModelKind::DecisionTree;
  std::size_t max_depth = 12;
  std::size_t min_leaf = 2;
  std::size_t n_trees = 30;
  std::optional<std::size_t> max_features;  // forest default: round(sqrt(d))
  bool bootstrap = true;
  double variance_floor = 1e-9;
};

/// Deterministic under `seed`. A forest of one tree is trained without
/// bagging or feature subsampling, so it matches a decision tree.
ModelBundle train(const Dataset& data, const TrainSpec& spec, std::uint64_t seed);

struct Prediction {
  std::size_t label = 0;
  std::vector<double> scores;  // histogram sums for trees, log-joint for NB
};

Prediction predict(const ModelBundle& model, std::span<const double> feature);
const std::string& predicted_label(const ModelBundle& model, std::span<const double> feature);

/// Element-wise mean of group member embeddings.
std::vector<double> aggregate(std::span<const std::vector<double>> members);

double accuracy(const ModelBundle& model, const Dataset& data);

/// Seeded shuffle, then the last `holdout_fraction` of rows go to the holdout.
std::pair<Dataset, Dataset> split_holdout(const Dataset& data, double holdout_fraction,
                                          std::uint64_t seed);

// "POHARMDL", u16 version, u8 kind, then the kind-specific payload; big-endian.
inline constexpr std::uint16_t kModelVersion = 1;
Bytes serialize(const ModelBundle& model);
ModelBundle deserialize(std::span<const std::uint8_t> data);

void save_model(const ModelBundle& model, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);

}  // namespace pohar::inference
