#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace regrec {

enum class SegmentKind : std::uint8_t { image, text, mask, separator, output };

struct Segment {
  SegmentKind kind = SegmentKind::image;
  int length = 0;
  int owner = -1;  // object index for mask/output, -1 otherwise

  bool operator==(const Segment&) const = default;
};

/// Kind and owner of a single position.
struct TokenRole {
  SegmentKind kind = SegmentKind::image;
  int owner = -1;

  bool operator==(const TokenRole&) const = default;
};

/// Typed segmentation of a token sequence.
///
/// Exactly one image segment, at most one text segment, mask(0..K-1) once each
/// in order and before any output. Output chunks may be split into several
/// fragments (tokens appended during interleaved decoding); all fragments with
/// owner i together form chunk i.
class SequenceLayout {
 public:
  SequenceLayout() = default;
  explicit SequenceLayout(std::vector<Segment> segments);

  /// Parses "image:2 text:1 mask0:2 sep:1 mask1:2 out0:1 sep:1 out1:1".
  static SequenceLayout parse(const std::string& spec);

  /// image, text (omitted when 0), mask(i) followed by a separator for every
  /// object, then one output chunk per object when output_lengths is non-empty.
  static SequenceLayout canonical(int image_len, int text_len, const std::vector<int>& mask_lengths,
                                  const std::vector<int>& output_lengths = {});

  const std::vector<Segment>& segments() const { return segments_; }
  int size() const { return n_; }
  int num_objects() const { return num_objects_; }
  std::vector<TokenRole> roles() const;
  std::vector<int> segment_starts() const;
  std::string to_string() const;

  /// Positions (ascending) of every token of the given kind/owner.
  std::vector<int> positions(SegmentKind kind, int owner = -1) const;

  /// One more token for output(owner), merged into a trailing fragment of the
  /// same owner or opened as a new fragment.
  SequenceLayout with_output_token(int owner) const;

  bool operator==(const SequenceLayout& other) const { return segments_ == other.segments_; }

 private:
  std::vector<Segment> segments_;
  int n_ = 0;
  int num_objects_ = 0;
};

struct CascadeConfig {
  bool region_decouple = true;
  bool output_decouple = true;
  bool output_sees_mask = true;

  bool is_full() const { return region_decouple && output_decouple; }

  static CascadeConfig full() { return {true, true, true}; }
  static CascadeConfig region_only() { return {true, false, true}; }
  static CascadeConfig output_only() { return {false, true, true}; }
  static CascadeConfig causal() { return {false, false, true}; }
  static CascadeConfig by_name(const std::string& variant);

  bool operator==(const CascadeConfig&) const = default;
};

/// bits(q, k) = query q may attend key k.
class AttentionMaskMatrix {
 public:
  using Bits = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  AttentionMaskMatrix() = default;
  explicit AttentionMaskMatrix(Bits bits);

  int size() const { return static_cast<int>(bits_.rows()); }
  bool operator()(int q, int k) const { return bits_(q, k); }
  const Bits& bits() const { return bits_; }
  Bits& bits() { return bits_; }
  long long count() const { return bits_.count(); }

  /// Visible keys of row q in ascending order.
  std::vector<int> visible_keys(int q) const;

  /// Layout header line followed by one row of '0'/'1' per query.
  std::string dump(const SequenceLayout& layout) const;
  static std::pair<SequenceLayout, AttentionMaskMatrix> parse_dump(const std::string& text);

  bool operator==(const AttentionMaskMatrix& other) const {
    return bits_.rows() == other.bits_.rows() && bits_.cols() == other.bits_.cols() &&
           (bits_ == other.bits_).all();
  }

 private:
  Bits bits_;
};

/// Cascade mask construction, block by block from a causal start:
///  - region_decouple: every mask segment loses sight of all other mask segments;
///  - output_decouple: every output chunk loses sight of all other output chunks;
///  - !output_sees_mask: outputs lose all mask segments; otherwise under the full
///    configuration each output keeps only its own mask segment;
///  - separator rows and columns are cleared.
AttentionMaskMatrix build_cascade_mask(const SequenceLayout& layout, const CascadeConfig& config);

/// Additive form: visible -> 0, hidden -> -inf.
Eigen::MatrixXf to_additive(const AttentionMaskMatrix& mask);

/// Appends one output(owner) token. The new row follows the same visibility
/// rules as a full rebuild; existing rows gain a hidden column.
std::pair<AttentionMaskMatrix, SequenceLayout> extend_for_decode(const AttentionMaskMatrix& mask,
                                                                 const SequenceLayout& layout, int new_token_owner,
                                                                 const CascadeConfig& config = CascadeConfig::full());

/// Segment-pair view of a cascade mask, used by the cost model.
class BlockMask {
 public:
  enum class Visibility : std::uint8_t { none, full, lower };  // lower: diagonal block, causal

  BlockMask(const SequenceLayout& layout, const CascadeConfig& config);

  Visibility at(std::size_t query_segment, std::size_t key_segment) const {
    return blocks_[query_segment * layout_.segments().size() + key_segment];
  }
  long long visible_pairs() const;
  AttentionMaskMatrix to_dense() const;

 private:
  SequenceLayout layout_;
  std::vector<Visibility> blocks_;
};

std::string kind_name(SegmentKind kind);

}  // namespace regrec
