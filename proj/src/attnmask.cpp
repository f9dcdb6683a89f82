#include "regrec/attnmask.hpp"

#include <limits>
#include <sstream>

#include "regrec/error.hpp"

namespace regrec {

std::string kind_name(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::image: return "image";
    case SegmentKind::text: return "text";
    case SegmentKind::mask: return "mask";
    case SegmentKind::separator: return "sep";
    case SegmentKind::output: return "out";
  }
  return "?";
}

SequenceLayout::SequenceLayout(std::vector<Segment> segments) : segments_(std::move(segments)) {
  int images = 0, texts = 0, next_mask = 0;
  bool seen_output = false;
  for (const auto& s : segments_) {
    if (s.length < 1) throw ValueError("layout segment lengths must be >= 1");
    switch (s.kind) {
      case SegmentKind::image:
        ++images;
        break;
      case SegmentKind::text:
        ++texts;
        break;
      case SegmentKind::mask:
        if (seen_output) throw ValueError("layout: mask segments must precede all outputs");
        if (s.owner != next_mask) throw ValueError("layout: mask segments must appear as mask0, mask1, ... in order");
        ++next_mask;
        break;
      case SegmentKind::separator:
        break;
      case SegmentKind::output:
        seen_output = true;
        break;
    }
    n_ += s.length;
  }
  if (images != 1) throw ValueError("layout must contain exactly one image segment");
  if (texts > 1) throw ValueError("layout may contain at most one text segment");
  num_objects_ = next_mask;
  for (const auto& s : segments_) {
    if (s.kind == SegmentKind::output && (s.owner < 0 || s.owner >= num_objects_)) {
      throw ValueError("layout: output owner " + std::to_string(s.owner) + " has no mask segment");
    }
  }
}

SequenceLayout SequenceLayout::parse(const std::string& spec) {
  std::istringstream in(spec);
  std::string item;
  std::vector<Segment> segments;
  while (in >> item) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ParseError("layout item '" + item + "' lacks ':length'");
    const std::string name = item.substr(0, colon);
    int length = 0;
    try {
      std::size_t used = 0;
      length = std::stoi(item.substr(colon + 1), &used);
      if (used != item.size() - colon - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError("layout item '" + item + "' has an invalid length");
    }
    auto owner_of = [&](std::size_t prefix) {
      const std::string digits = name.substr(prefix);
      if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) {
        throw ParseError("layout item '" + item + "' needs an object index");
      }
      return std::stoi(digits);
    };
    if (name == "image") {
      segments.push_back({SegmentKind::image, length, -1});
    } else if (name == "text") {
      segments.push_back({SegmentKind::text, length, -1});
    } else if (name == "sep") {
      segments.push_back({SegmentKind::separator, length, -1});
    } else if (name.rfind("mask", 0) == 0) {
      segments.push_back({SegmentKind::mask, length, owner_of(4)});
    } else if (name.rfind("output", 0) == 0) {
      segments.push_back({SegmentKind::output, length, owner_of(6)});
    } else if (name.rfind("out", 0) == 0) {
      segments.push_back({SegmentKind::output, length, owner_of(3)});
    } else {
      throw ParseError("unknown layout segment '" + name + "'");
    }
  }
  try {
    return SequenceLayout(std::move(segments));
  } catch (const ValueError& e) {
    throw ParseError(e.what());
  }
}

SequenceLayout SequenceLayout::canonical(int image_len, int text_len, const std::vector<int>& mask_lengths,
                                         const std::vector<int>& output_lengths) {
  if (!output_lengths.empty() && output_lengths.size() != mask_lengths.size()) {
    throw ValueError("one output length per mask is required");
  }
  std::vector<Segment> segments{{SegmentKind::image, image_len, -1}};
  if (text_len > 0) segments.push_back({SegmentKind::text, text_len, -1});
  for (std::size_t i = 0; i < mask_lengths.size(); ++i) {
    segments.push_back({SegmentKind::mask, mask_lengths[i], static_cast<int>(i)});
    segments.push_back({SegmentKind::separator, 1, -1});
  }
  for (std::size_t i = 0; i < output_lengths.size(); ++i) {
    if (output_lengths[i] > 0) segments.push_back({SegmentKind::output, output_lengths[i], static_cast<int>(i)});
  }
  return SequenceLayout(std::move(segments));
}

std::vector<TokenRole> SequenceLayout::roles() const {
  std::vector<TokenRole> roles;
  roles.reserve(static_cast<std::size_t>(n_));
  for (const auto& s : segments_) roles.insert(roles.end(), static_cast<std::size_t>(s.length), {s.kind, s.owner});
  return roles;
}

std::vector<int> SequenceLayout::segment_starts() const {
  std::vector<int> starts;
  int pos = 0;
  for (const auto& s : segments_) {
    starts.push_back(pos);
    pos += s.length;
  }
  return starts;
}

std::string SequenceLayout::to_string() const {
  std::string out;
  for (const auto& s : segments_) {
    if (!out.empty()) out += ' ';
    out += kind_name(s.kind);
    if (s.kind == SegmentKind::mask || s.kind == SegmentKind::output) out += std::to_string(s.owner);
    out += ':' + std::to_string(s.length);
  }
  return out;
}

std::vector<int> SequenceLayout::positions(SegmentKind kind, int owner) const {
  std::vector<int> out;
  int pos = 0;
  for (const auto& s : segments_) {
    if (s.kind == kind && (owner < 0 || s.owner == owner)) {
      for (int i = 0; i < s.length; ++i) out.push_back(pos + i);
    }
    pos += s.length;
  }
  return out;
}

SequenceLayout SequenceLayout::with_output_token(int owner) const {
  if (owner < 0 || owner >= num_objects_) {
    throw IndexError("output owner " + std::to_string(owner) + " out of range for " + std::to_string(num_objects_) +
                     " objects");
  }
  auto segments = segments_;
  if (!segments.empty() && segments.back().kind == SegmentKind::output && segments.back().owner == owner) {
    ++segments.back().length;
  } else {
    segments.push_back({SegmentKind::output, 1, owner});
  }
  return SequenceLayout(std::move(segments));
}

CascadeConfig CascadeConfig::by_name(const std::string& variant) {
  if (variant == "full" || variant == "cascade") return full();
  if (variant == "region") return region_only();
  if (variant == "output") return output_only();
  if (variant == "causal") return causal();
  throw ConfigError("unknown cascade variant '" + variant + "' (full|region|output|causal)");
}

AttentionMaskMatrix::AttentionMaskMatrix(Bits bits) : bits_(std::move(bits)) {
  if (bits_.rows() != bits_.cols()) throw ShapeError("attention mask must be square");
}

std::vector<int> AttentionMaskMatrix::visible_keys(int q) const {
  std::vector<int> keys;
  for (int k = 0; k < size(); ++k) {
    if (bits_(q, k)) keys.push_back(k);
  }
  return keys;
}

std::string AttentionMaskMatrix::dump(const SequenceLayout& layout) const {
  if (layout.size() != size()) throw ShapeError("layout length does not match mask size");
  std::string out = layout.to_string() + "\n";
  out.reserve(out.size() + static_cast<std::size_t>(size()) * (size() + 1));
  for (int q = 0; q < size(); ++q) {
    for (int k = 0; k < size(); ++k) out += bits_(q, k) ? '1' : '0';
    out += '\n';
  }
  return out;
}

std::pair<SequenceLayout, AttentionMaskMatrix> AttentionMaskMatrix::parse_dump(const std::string& text) {
  std::istringstream in(text);
  std::string header;
  if (!std::getline(in, header)) throw ParseError("mask dump: missing layout header");
  SequenceLayout layout = SequenceLayout::parse(header);
  const int n = layout.size();
  Bits bits(n, n);
  std::string row;
  for (int q = 0; q < n; ++q) {
    if (!std::getline(in, row) || static_cast<int>(row.size()) != n) {
      throw LengthError("mask dump: row " + std::to_string(q) + " missing or wrong length");
    }
    for (int k = 0; k < n; ++k) {
      if (row[static_cast<std::size_t>(k)] != '0' && row[static_cast<std::size_t>(k)] != '1') {
        throw ParseError("mask dump: rows must contain only 0/1");
      }
      bits(q, k) = row[static_cast<std::size_t>(k)] == '1';
    }
  }
  return {std::move(layout), AttentionMaskMatrix(std::move(bits))};
}

namespace {

struct Span {
  int start;
  int length;
  int owner;
};

// Visibility of key role k from query role q, causality aside.
bool role_visible(const TokenRole& q, const TokenRole& k, const CascadeConfig& config) {
  if (q.kind == SegmentKind::separator || k.kind == SegmentKind::separator) return false;
  switch (q.kind) {
    case SegmentKind::image:
    case SegmentKind::text:
      return true;
    case SegmentKind::mask:
      if (k.kind == SegmentKind::mask && k.owner != q.owner) return !config.region_decouple;
      return true;
    case SegmentKind::output:
      if (k.kind == SegmentKind::output && k.owner != q.owner) return !config.output_decouple;
      if (k.kind == SegmentKind::mask) {
        if (!config.output_sees_mask) return false;
        return !(config.is_full() && k.owner != q.owner);
      }
      return true;
    case SegmentKind::separator:
      return false;
  }
  return false;
}

}  // namespace

AttentionMaskMatrix build_cascade_mask(const SequenceLayout& layout, const CascadeConfig& config) {
  const int n = layout.size();
  AttentionMaskMatrix::Bits bits = AttentionMaskMatrix::Bits::Constant(n, n, false);
  for (int q = 0; q < n; ++q) bits.row(q).head(q + 1).setConstant(true);

  std::vector<Span> masks, outputs, separators;
  int pos = 0;
  for (const auto& s : layout.segments()) {
    const Span span{pos, s.length, s.owner};
    if (s.kind == SegmentKind::mask) masks.push_back(span);
    if (s.kind == SegmentKind::output) outputs.push_back(span);
    if (s.kind == SegmentKind::separator) separators.push_back(span);
    pos += s.length;
  }
  auto clear = [&](const Span& q, const Span& k) { bits.block(q.start, k.start, q.length, k.length).setConstant(false); };

  if (config.region_decouple) {
    for (const auto& s : masks) {
      for (const auto& t : masks) {
        if (t.owner != s.owner) clear(s, t);
      }
    }
  }
  for (const auto& c : outputs) {
    if (config.output_decouple) {
      for (const auto& d : outputs) {
        if (d.owner != c.owner) clear(c, d);
      }
    }
    for (const auto& m : masks) {
      if (!config.output_sees_mask || (config.is_full() && m.owner != c.owner)) clear(c, m);
    }
  }
  for (const auto& s : separators) {
    bits.middleRows(s.start, s.length).setConstant(false);
    bits.middleCols(s.start, s.length).setConstant(false);
  }
  return AttentionMaskMatrix(std::move(bits));
}

Eigen::MatrixXf to_additive(const AttentionMaskMatrix& mask) {
  const float neg_inf = -std::numeric_limits<float>::infinity();
  return mask.bits().cast<float>().unaryExpr([neg_inf](float v) { return v != 0.0f ? 0.0f : neg_inf; }).matrix();
}

std::pair<AttentionMaskMatrix, SequenceLayout> extend_for_decode(const AttentionMaskMatrix& mask,
                                                                 const SequenceLayout& layout, int new_token_owner,
                                                                 const CascadeConfig& config) {
  if (mask.size() != layout.size()) throw ShapeError("mask and layout sizes differ");
  SequenceLayout grown = layout.with_output_token(new_token_owner);
  const int n = mask.size();
  AttentionMaskMatrix::Bits bits = AttentionMaskMatrix::Bits::Constant(n + 1, n + 1, false);
  bits.topLeftCorner(n, n) = mask.bits();
  const TokenRole query{SegmentKind::output, new_token_owner};
  const auto roles = layout.roles();
  for (int k = 0; k < n; ++k) bits(n, k) = role_visible(query, roles[static_cast<std::size_t>(k)], config);
  bits(n, n) = true;
  return {AttentionMaskMatrix(std::move(bits)), std::move(grown)};
}

BlockMask::BlockMask(const SequenceLayout& layout, const CascadeConfig& config) : layout_(layout) {
  const auto& segments = layout_.segments();
  const std::size_t s = segments.size();
  blocks_.assign(s * s, Visibility::none);
  for (std::size_t a = 0; a < s; ++a) {
    const TokenRole qa{segments[a].kind, segments[a].owner};
    for (std::size_t b = 0; b <= a; ++b) {
      const TokenRole kb{segments[b].kind, segments[b].owner};
      if (!role_visible(qa, kb, config)) continue;
      blocks_[a * s + b] = (a == b) ? Visibility::lower : Visibility::full;
    }
  }
}

long long BlockMask::visible_pairs() const {
  const auto& segments = layout_.segments();
  const std::size_t s = segments.size();
  long long total = 0;
  for (std::size_t a = 0; a < s; ++a) {
    for (std::size_t b = 0; b < s; ++b) {
      const long long la = segments[a].length, lb = segments[b].length;
      switch (blocks_[a * s + b]) {
        case Visibility::none: break;
        case Visibility::full: total += la * lb; break;
        case Visibility::lower: total += la * (la + 1) / 2; break;
      }
    }
  }
  return total;
}

AttentionMaskMatrix BlockMask::to_dense() const {
  const int n = layout_.size();
  const auto starts = layout_.segment_starts();
  const auto& segments = layout_.segments();
  const std::size_t s = segments.size();
  AttentionMaskMatrix::Bits bits = AttentionMaskMatrix::Bits::Constant(n, n, false);
  for (std::size_t a = 0; a < s; ++a) {
    for (std::size_t b = 0; b < s; ++b) {
      const int qa = starts[a], la = segments[a].length, kb = starts[b], lb = segments[b].length;
      switch (blocks_[a * s + b]) {
        case Visibility::none: break;
        case Visibility::full: bits.block(qa, kb, la, lb).setConstant(true); break;
        case Visibility::lower:
          for (int i = 0; i < la; ++i) bits.row(qa + i).segment(kb, i + 1).setConstant(true);
          break;
      }
    }
  }
  return AttentionMaskMatrix(std::move(bits));
}

}  // namespace regrec
