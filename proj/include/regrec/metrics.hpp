#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace regrec {

/// Text -> unit-norm vector. Implementations must be deterministic.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual Eigen::VectorXd embed(const std::string& text) const = 0;
};

/// Lowercase, collapse whitespace runs to one space, trim.
std::string normalize_text(const std::string& text);

/// Character trigrams over " " + normalize_text(s) + " ", each hashed with
/// 64-bit FNV-1a over its bytes into bucket hash % dim (+1), then L2-normalized.
class HashEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HashEmbeddingProvider(int dim = 256);
  std::string name() const override { return "hash-trigram"; }
  int dim() const override { return dim_; }
  Eigen::VectorXd embed(const std::string& text) const override;

 private:
  int dim_;
};

std::uint64_t fnv1a64(std::string_view bytes);

/// Lookup table keyed by normalized text. File format: one JSON header line
/// {"dim": D, "entries": [...]} followed by an "EMB0" blob (entries x D).
/// Rows are L2-normalized on construction.
class TableEmbeddingProvider final : public EmbeddingProvider {
 public:
  TableEmbeddingProvider(std::vector<std::string> entries, const Eigen::MatrixXd& vectors);
  static TableEmbeddingProvider load(const std::string& path);
  void save(const std::string& path) const;

  std::string name() const override { return "table"; }
  int dim() const override { return static_cast<int>(vectors_.cols()); }
  Eigen::VectorXd embed(const std::string& text) const override;

 private:
  std::vector<std::string> entries_;
  std::unordered_map<std::string, int> index_;
  Eigen::MatrixXd vectors_;
};

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// 100 * max(0, cos).
double semantic_similarity(const std::string& pred, const std::string& gold, const EmbeddingProvider& provider);

/// Lowercased word set, split on whitespace, '-' and '_'.
std::vector<std::string> label_words(const std::string& label);
double semantic_iou(const std::string& pred, const std::string& gold);

struct Classification {
  std::string category;
  int index = 0;
  double similarity = 0.0;  // 0..100
};
/// Highest cosine wins; ties go to the lowest vocabulary index.
Classification open_vocab_classify(const std::string& pred, const std::vector<std::string>& vocabulary,
                                   const EmbeddingProvider& provider);

struct EvalItem {
  std::string pred;
  std::string gold;
  std::optional<std::vector<std::string>> vocabulary;
};

struct EvalReport {
  double semantic_similarity = 0.0;
  double semantic_iou = 0.0;
  std::optional<double> mask_acc;  // only over items carrying a vocabulary
  int n = 0;

  std::string to_json() const;
};

EvalReport evaluate(const std::vector<EvalItem>& items, const EmbeddingProvider& provider);

struct Prediction {
  std::string image_id;
  int mask_index = 0;
  std::string pred;
  std::string gold;
};

/// JSON-lines {"image_id","mask_index","pred","gold"}.
std::vector<Prediction> parse_predictions(const std::string& text);
std::vector<Prediction> read_predictions(const std::string& path);
/// Newline-delimited categories; blank lines skipped.
std::vector<std::string> read_category_list(const std::string& path);

}  // namespace regrec
