#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "regrec/attnmask.hpp"
#include "regrec/blob.hpp"
#include "regrec/prompt.hpp"

namespace regrec {

/// Token string <-> id table. Must contain <start>, <sep>, <end> and <pad>.
class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> tokens);
  static Vocabulary from_json(const std::string& json_text);
  static Vocabulary load(const std::string& path);
  std::string to_json() const;

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(int id) const;

  int start_id() const { return start_; }
  int sep_id() const { return sep_; }
  int end_id() const { return end_; }
  int pad_id() const { return pad_; }

  /// Whitespace-split label -> ids; unknown words raise VocabError.
  std::vector<int> tokenize(const std::string& label) const;
  /// Space-joined tokens, stopping at <end>.
  std::string detokenize(std::span<const int> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int start_ = -1, sep_ = -1, end_ = -1, pad_ = -1;
};

enum class PositionalMode : std::uint8_t { absolute, none };

struct DecoderShape {
  int dim = 32;
  int heads = 2;
  int layers = 2;
  int ffn = 0;  // 0 -> 4 * dim
  PositionalMode positional_mode = PositionalMode::absolute;
  int max_positions = 4096;
  int enc_dim = 32;
};

/// Weight matrices are stored output x input, so a projection is `W * x`.
struct DecoderLayer {
  Eigen::VectorXf ln1_gain, ln1_bias;
  Eigen::MatrixXf wq, wk, wv, wo;
  Eigen::VectorXf ln2_gain, ln2_bias;
  Eigen::MatrixXf w1;
  Eigen::VectorXf b1;
  Eigen::MatrixXf w2;
  Eigen::VectorXf b2;
};

/// Pre-norm transformer decoder with a linear adapter for injected features.
///
/// Seeded initialization draws from Xoshiro256(seed) in this order, each
/// matrix row-major (output x input): token embedding (a = 1), position
/// embedding (absolute mode only, a = 1), adapter (a = 1/sqrt(enc_dim)), then
/// per layer wq, wk, wv, wo, w1 (a = 1/sqrt(dim)) and w2 (a = 1/sqrt(ffn)),
/// finally the output head (a = 1/sqrt(dim)). Biases start at 0, norm gains at 1.
struct DecoderParams {
  Vocabulary vocab;
  DecoderShape shape;
  std::uint64_t seed = 0;

  Eigen::MatrixXf token_embedding;     // vocab x dim
  Eigen::MatrixXf position_embedding;  // max_positions x dim, empty when positional_mode == none
  Eigen::MatrixXf adapter;             // dim x enc_dim
  std::vector<DecoderLayer> layers;
  Eigen::VectorXf final_gain, final_bias;
  Eigen::MatrixXf head;  // vocab x dim
  Eigen::VectorXf head_bias;

  int dim() const { return shape.dim; }
  int head_dim() const { return shape.dim / shape.heads; }

  static DecoderParams random(Vocabulary vocab, DecoderShape shape, std::uint64_t seed);
  /// All-zero weights (unit norm gains), for hand-built fixtures.
  static DecoderParams zeros(Vocabulary vocab, DecoderShape shape);

  void validate() const;

  /// "DEC0" header blob [dim, heads, layers, ffn, positional, max_positions,
  /// enc_dim, vocab] followed by one "TEN0" blob per tensor in declaration order.
  void save(const std::string& params_path, const std::string& vocab_path) const;
  static DecoderParams load(const std::string& params_path, const std::string& vocab_path);
};

/// One position: a vocabulary id or an injected feature vector (enc_dim).
using TokenEntry = std::variant<int, Eigen::VectorXf>;

struct TokenSequence {
  std::vector<TokenEntry> entries;

  int size() const { return static_cast<int>(entries.size()); }
};

/// Non-output tokens: rank among non-output tokens. Token k of output(i):
/// (non-output tokens preceding chunk i's first token) + k.
std::vector<int> position_ids(const SequenceLayout& layout);

/// Softmax restricted to `visible`; hidden entries get exactly 0 and never
/// enter the denominator. All-hidden rows yield all zeros.
template <typename Derived, typename MaskDerived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> masked_softmax(const Eigen::MatrixBase<Derived>& scores,
                                                                         const Eigen::DenseBase<MaskDerived>& visible) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = scores.size();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> weights = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(n);
  bool any = false;
  Scalar max_score = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!visible(i)) continue;
    max_score = any ? std::max(max_score, scores(i)) : scores(i);
    any = true;
  }
  if (!any) return weights;
  Scalar total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!visible(i)) continue;
    weights(i) = std::exp(scores(i) - max_score);
    total += weights(i);
  }
  for (Eigen::Index i = 0; i < n; ++i) weights(i) /= total;
  return weights;
}

/// Per-position logits (n x vocab). Hidden keys are skipped entirely, so their
/// contents cannot reach any visible row; rows with no visible key get a zero
/// attention output.
RowMatrixXf forward(const TokenSequence& seq, const AttentionMaskMatrix& mask, const DecoderParams& params,
                    std::span<const int> positions);
RowMatrixXf forward(const TokenSequence& seq, const AttentionMaskMatrix& mask, const DecoderParams& params,
                    const SequenceLayout& layout);

/// Decoder-side view of a prompt: image tokens, text ids, per-mask tokens.
struct DecodeInput {
  RowMatrixXf image_tokens;
  std::vector<int> text;
  std::vector<RowMatrixXf> mask_tokens;

  static DecodeInput from_batch(const PromptBatch& batch, std::vector<int> text);
};

/// Canonical prefix (image, text, [mask(i), sep]...) plus optional gold
/// output chunks (each label followed by <end>).
struct AssembledSequence {
  TokenSequence seq;
  SequenceLayout layout;
};
AssembledSequence assemble_sequence(const DecodeInput& input, const Vocabulary& vocab,
                                    const std::vector<std::vector<int>>& outputs = {});

/// Position predicting the next token of output(owner): the last token already
/// in the chunk, else the last token of mask(owner).
int predictor_position(const SequenceLayout& layout, int owner);

enum class DecodeSchedule : std::uint8_t { round_robin, sequential };

struct DecodeOptions {
  CascadeConfig config = CascadeConfig::full();
  int max_label_len = kDefaultOutputSlots;
  DecodeSchedule schedule = DecodeSchedule::round_robin;
  /// Decode only this object, with every other object's tokens padded and
  /// hidden (positions preserved).
  std::optional<int> only_object;
};

struct DecodeResult {
  std::vector<std::string> labels;
  std::vector<std::vector<int>> token_ids;
  std::vector<std::vector<double>> stepwise_logprobs;
  std::vector<double> per_object_logprob;
  double total_logprob_joint = 0.0;
  int sequence_length = 0;
  int forward_passes = 0;

  std::string to_json() const;
};

/// Greedy decoding of every output chunk from one shared sequence, one token
/// per object per round (round_robin) or object by object (sequential).
DecodeResult decode_objects(const DecodeInput& input, const DecoderParams& params, const DecodeOptions& options = {});
DecodeResult decode_objects(const PromptBatch& batch, const std::vector<int>& text, const DecoderParams& params,
                            const CascadeConfig& config = CascadeConfig::full(),
                            int max_label_len = kDefaultOutputSlots);

struct IsolatedSequence {
  TokenSequence seq;
  AttentionMaskMatrix mask;
};

/// Pads every mask(j) / output(j) token with j != keep and hides those rows
/// and columns. Layout and positions are untouched.
IsolatedSequence isolate_single_mask(const TokenSequence& seq, const SequenceLayout& layout, int keep, int pad_id,
                                     const CascadeConfig& config = CascadeConfig::full());

/// Mean cross-entropy over output-chunk tokens; every chunk must end in <end>.
double teacher_forced_loss(const TokenSequence& seq, const SequenceLayout& layout, const AttentionMaskMatrix& mask,
                           const DecoderParams& params);

/// Sum of per-object log-probabilities (the factorized joint).
double joint_logprob(const DecodeResult& result);

}  // namespace regrec
