#include "regrec/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "regrec/blob.hpp"
#include "regrec/error.hpp"

namespace regrec {

using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string normalize_text(const std::string& text) {
  std::string out;
  bool gap = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      gap = !out.empty();
      continue;
    }
    if (gap) out += ' ';
    gap = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

HashEmbeddingProvider::HashEmbeddingProvider(int dim) : dim_(dim) {
  if (dim < 1) throw ConfigError("embedding dim must be >= 1");
}

Eigen::VectorXd HashEmbeddingProvider::embed(const std::string& text) const {
  const std::string norm = normalize_text(text);
  if (norm.empty()) throw InputError("cannot embed an empty label");
  const std::string padded = " " + norm + " ";
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    v(static_cast<Eigen::Index>(fnv1a64(std::string_view(padded).substr(i, 3)) % static_cast<std::uint64_t>(dim_))) += 1.0;
  }
  return v / v.norm();
}

TableEmbeddingProvider::TableEmbeddingProvider(std::vector<std::string> entries, const Eigen::MatrixXd& vectors)
    : entries_(std::move(entries)), vectors_(vectors) {
  if (static_cast<Eigen::Index>(entries_.size()) != vectors_.rows()) throw ShapeError("one vector per table entry required");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const double n = vectors_.row(static_cast<Eigen::Index>(i)).norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("table entry '" + entries_[i] + "' has no direction");
    vectors_.row(static_cast<Eigen::Index>(i)) /= n;
    index_[normalize_text(entries_[i])] = static_cast<int>(i);
  }
}

TableEmbeddingProvider TableEmbeddingProvider::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open: " + path);
  std::string header_line;
  std::getline(in, header_line);
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("embedding table header: ") + e.what());
  }
  const auto entries = header.at("entries").get<std::vector<std::string>>();
  const int dim = header.at("dim").get<int>();
  const Blob blob = read_blob(in, "EMB0");
  if (blob.values.rows() != static_cast<Eigen::Index>(entries.size()) || blob.values.cols() != dim) {
    throw ShapeError("embedding table blob does not match its header");
  }
  return TableEmbeddingProvider(entries, blob.values.cast<double>());
}

void TableEmbeddingProvider::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open for writing: " + path);
  out << json{{"dim", dim()}, {"entries", entries_}}.dump() << "\n";
  write_blob(out, "EMB0", vectors_.cast<float>());
}

Eigen::VectorXd TableEmbeddingProvider::embed(const std::string& text) const {
  const auto it = index_.find(normalize_text(text));
  if (it == index_.end()) throw KeyError("no embedding for '" + text + "'");
  return vectors_.row(it->second).transpose();
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double denom = a.norm() * b.norm();
  if (!(denom > 0.0)) throw NumericError("cosine of a zero vector");
  return a.dot(b) / denom;
}

double semantic_similarity(const std::string& pred, const std::string& gold, const EmbeddingProvider& provider) {
  if (normalize_text(pred).empty() || normalize_text(gold).empty()) throw InputError("empty label");
  const double c = cosine(provider.embed(pred), provider.embed(gold));
  return 100.0 * std::clamp(c, 0.0, 1.0);
}

std::vector<std::string> label_words(const std::string& label) {
  std::set<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) words.insert(cur);
    cur.clear();
  };
  for (unsigned char c : label) {
    if (std::isspace(c) || c == '-' || c == '_') {
      flush();
    } else {
      cur += static_cast<char>(std::tolower(c));
    }
  }
  flush();
  return {words.begin(), words.end()};
}

double semantic_iou(const std::string& pred, const std::string& gold) {
  const auto p = label_words(pred);
  const auto g = label_words(gold);
  if (p.empty() || g.empty()) throw InputError("label is empty after normalization");
  std::vector<std::string> both;
  std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(both));
  const auto inter = static_cast<double>(both.size());
  return 100.0 * inter / (static_cast<double>(p.size() + g.size()) - inter);
}

Classification open_vocab_classify(const std::string& pred, const std::vector<std::string>& vocabulary,
                                   const EmbeddingProvider& provider) {
  if (vocabulary.empty()) throw InputError("empty category vocabulary");
  const Eigen::VectorXd p = provider.embed(pred);
  Classification best{vocabulary.front(), 0, 0.0};
  double best_cos = 0.0;
  for (std::size_t i = 0; i < vocabulary.size(); ++i) {
    const double c = cosine(p, provider.embed(vocabulary[i]));
    if (i == 0 || c > best_cos) {
      best_cos = c;
      best = {vocabulary[i], static_cast<int>(i), 0.0};
    }
  }
  best.similarity = 100.0 * std::clamp(best_cos, 0.0, 1.0);
  return best;
}

EvalReport evaluate(const std::vector<EvalItem>& items, const EmbeddingProvider& provider) {
  if (items.empty()) throw InputError("evaluate needs at least one prediction");
  EvalReport report;
  report.n = static_cast<int>(items.size());
  double sim = 0.0, iou = 0.0;
  int with_vocab = 0, correct = 0;
  for (const auto& item : items) {
    sim += semantic_similarity(item.pred, item.gold, provider);
    iou += semantic_iou(item.pred, item.gold);
    if (item.vocabulary) {
      ++with_vocab;
      if (normalize_text(open_vocab_classify(item.pred, *item.vocabulary, provider).category) == normalize_text(item.gold)) {
        ++correct;
      }
    }
  }
  report.semantic_similarity = sim / report.n;
  report.semantic_iou = iou / report.n;
  if (with_vocab > 0) report.mask_acc = static_cast<double>(correct) / with_vocab;
  return report;
}

std::string EvalReport::to_json() const {
  json j{{"semantic_similarity", semantic_similarity}, {"semantic_iou", semantic_iou}, {"n", n}};
  if (mask_acc) j["mask_acc"] = *mask_acc;
  return j.dump();
}

std::vector<Prediction> parse_predictions(const std::string& text) {
  std::vector<Prediction> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (normalize_text(line).empty()) continue;
    try {
      const json j = json::parse(line);
      Prediction p;
      p.image_id = j.value("image_id", std::string());
      p.mask_index = j.value("mask_index", 0);
      p.pred = j.at("pred").get<std::string>();
      p.gold = j.at("gold").get<std::string>();
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ParseError("prediction line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Prediction> read_predictions(const std::string& path) { return parse_predictions(slurp(path)); }

std::vector<std::string> read_category_list(const std::string& path) {
  std::istringstream in(slurp(path));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    out.push_back(line.substr(first, line.find_last_not_of(" \t\r") - first + 1));
  }
  return out;
}

}  // namespace regrec
