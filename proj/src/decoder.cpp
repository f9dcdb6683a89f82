#include "regrec/decoder.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "regrec/error.hpp"
#include "regrec/rng.hpp"

namespace regrec {

using nlohmann::json;

// ---------------------------------------------------------------- vocabulary

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw ConfigError("duplicate vocabulary entry '" + tokens_[i] + "'");
    }
  }
  auto special = [&](const char* name) {
    const auto it = ids_.find(name);
    if (it == ids_.end()) throw ConfigError(std::string("vocabulary lacks required token ") + name);
    return it->second;
  };
  start_ = special("<start>");
  sep_ = special("<sep>");
  end_ = special("<end>");
  pad_ = special("<pad>");
}

Vocabulary Vocabulary::from_json(const std::string& json_text) {
  try {
    return Vocabulary(json::parse(json_text).get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw ParseError(std::string("vocabulary JSON: ") + e.what());
  }
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string Vocabulary::to_json() const { return json(tokens_).dump(); }

int Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  if (it == ids_.end()) throw VocabError("token '" + token + "' is not in the vocabulary");
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw VocabError("token id " + std::to_string(id) + " outside the vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::tokenize(const std::string& label) const {
  std::istringstream in(label);
  std::vector<int> ids;
  std::string word;
  while (in >> word) ids.push_back(id(word));
  return ids;
}

std::string Vocabulary::detokenize(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == end_) break;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

// ---------------------------------------------------------------- parameters

namespace {

Eigen::MatrixXf seeded(Xoshiro256& rng, Eigen::Index rows, Eigen::Index cols, double a) {
  Eigen::MatrixXf m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.symmetric(a);
  }
  return m;
}

DecoderShape normalized(DecoderShape shape) {
  if (shape.ffn == 0) shape.ffn = 4 * shape.dim;
  if (shape.positional_mode == PositionalMode::none) shape.max_positions = 0;
  return shape;
}

}  // namespace

DecoderParams DecoderParams::zeros(Vocabulary vocab, DecoderShape shape) {
  shape = normalized(shape);
  DecoderParams p{std::move(vocab), shape, 0, {}, {}, {}, {}, {}, {}, {}, {}};
  const int d = shape.dim, v = p.vocab.size();
  p.token_embedding = Eigen::MatrixXf::Zero(v, d);
  p.position_embedding = Eigen::MatrixXf::Zero(shape.max_positions, d);
  p.adapter = Eigen::MatrixXf::Zero(d, shape.enc_dim);
  p.layers.resize(static_cast<std::size_t>(shape.layers));
  for (auto& l : p.layers) {
    l.ln1_gain = Eigen::VectorXf::Ones(d);
    l.ln1_bias = Eigen::VectorXf::Zero(d);
    l.wq = l.wk = l.wv = l.wo = Eigen::MatrixXf::Zero(d, d);
    l.ln2_gain = Eigen::VectorXf::Ones(d);
    l.ln2_bias = Eigen::VectorXf::Zero(d);
    l.w1 = Eigen::MatrixXf::Zero(shape.ffn, d);
    l.b1 = Eigen::VectorXf::Zero(shape.ffn);
    l.w2 = Eigen::MatrixXf::Zero(d, shape.ffn);
    l.b2 = Eigen::VectorXf::Zero(d);
  }
  p.final_gain = Eigen::VectorXf::Ones(d);
  p.final_bias = Eigen::VectorXf::Zero(d);
  p.head = Eigen::MatrixXf::Zero(v, d);
  p.head_bias = Eigen::VectorXf::Zero(v);
  p.validate();
  return p;
}

DecoderParams DecoderParams::random(Vocabulary vocab, DecoderShape shape, std::uint64_t seed) {
  DecoderParams p = zeros(std::move(vocab), shape);
  p.seed = seed;
  const int d = p.shape.dim, ffn = p.shape.ffn;
  Xoshiro256 rng(seed);
  p.token_embedding = seeded(rng, p.vocab.size(), d, 1.0);
  if (p.shape.positional_mode == PositionalMode::absolute) {
    p.position_embedding = seeded(rng, p.shape.max_positions, d, 1.0);
  }
  p.adapter = seeded(rng, d, p.shape.enc_dim, 1.0 / std::sqrt(static_cast<double>(p.shape.enc_dim)));
  const double a = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& l : p.layers) {
    l.wq = seeded(rng, d, d, a);
    l.wk = seeded(rng, d, d, a);
    l.wv = seeded(rng, d, d, a);
    l.wo = seeded(rng, d, d, a);
    l.w1 = seeded(rng, ffn, d, a);
    l.w2 = seeded(rng, d, ffn, 1.0 / std::sqrt(static_cast<double>(ffn)));
  }
  p.head = seeded(rng, p.vocab.size(), d, a);
  return p;
}

void DecoderParams::validate() const {
  const int d = shape.dim;
  if (d < 1 || shape.heads < 1 || d % shape.heads != 0) throw ConfigError("dim must be a positive multiple of heads");
  if (shape.layers < 0 || shape.ffn < 1 || shape.enc_dim < 1) throw ConfigError("invalid decoder shape");
  auto check = [](const auto& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
    if (m.rows() != rows || m.cols() != cols) throw ShapeError(std::string("decoder tensor ") + name + " has wrong shape");
  };
  const int v = vocab.size();
  check(token_embedding, v, d, "token_embedding");
  check(position_embedding, shape.max_positions, d, "position_embedding");
  check(adapter, d, shape.enc_dim, "adapter");
  if (static_cast<int>(layers.size()) != shape.layers) throw ShapeError("layer count mismatch");
  for (const auto& l : layers) {
    check(l.wq, d, d, "wq");
    check(l.wk, d, d, "wk");
    check(l.wv, d, d, "wv");
    check(l.wo, d, d, "wo");
    check(l.w1, shape.ffn, d, "w1");
    check(l.w2, d, shape.ffn, "w2");
    check(l.ln1_gain, d, 1, "ln1_gain");
    check(l.ln1_bias, d, 1, "ln1_bias");
    check(l.ln2_gain, d, 1, "ln2_gain");
    check(l.ln2_bias, d, 1, "ln2_bias");
    check(l.b1, shape.ffn, 1, "b1");
    check(l.b2, d, 1, "b2");
  }
  check(final_gain, d, 1, "final_gain");
  check(final_bias, d, 1, "final_bias");
  check(head, v, d, "head");
  check(head_bias, v, 1, "head_bias");
}

namespace {

void put(std::ostream& out, const Eigen::MatrixXf& m) { write_blob(out, "TEN0", RowMatrixXf(m)); }
void put(std::ostream& out, const Eigen::VectorXf& v) { write_blob(out, "TEN0", RowMatrixXf(v.transpose())); }

void take(std::istream& in, Eigen::MatrixXf& m) {
  const Blob b = read_blob(in, "TEN0");
  if (b.values.rows() != m.rows() || b.values.cols() != m.cols()) throw ShapeError("DEC0 tensor shape mismatch");
  m = b.values;
}
void take(std::istream& in, Eigen::VectorXf& v) {
  const Blob b = read_blob(in, "TEN0");
  if (b.values.rows() != 1 || b.values.cols() != v.size()) throw ShapeError("DEC0 vector shape mismatch");
  v = b.values.row(0).transpose();
}

template <typename Params, typename Visit>
void for_each_tensor(Params& p, Visit visit) {
  visit(p.token_embedding);
  visit(p.position_embedding);
  visit(p.adapter);
  for (auto& l : p.layers) {
    visit(l.ln1_gain);
    visit(l.ln1_bias);
    visit(l.wq);
    visit(l.wk);
    visit(l.wv);
    visit(l.wo);
    visit(l.ln2_gain);
    visit(l.ln2_bias);
    visit(l.w1);
    visit(l.b1);
    visit(l.w2);
    visit(l.b2);
  }
  visit(p.final_gain);
  visit(p.final_bias);
  visit(p.head);
  visit(p.head_bias);
}

}  // namespace

void DecoderParams::save(const std::string& params_path, const std::string& vocab_path) const {
  validate();
  std::ofstream out(params_path, std::ios::binary);
  if (!out) throw InputError("cannot open for writing: " + params_path);
  RowMatrixXf header(1, 8);
  header << static_cast<float>(shape.dim), static_cast<float>(shape.heads), static_cast<float>(shape.layers),
      static_cast<float>(shape.ffn), shape.positional_mode == PositionalMode::absolute ? 1.0f : 0.0f,
      static_cast<float>(shape.max_positions), static_cast<float>(shape.enc_dim), static_cast<float>(vocab.size());
  write_blob(out, "DEC0", header);
  for_each_tensor(*this, [&](const auto& t) { put(out, t); });
  std::ofstream vocab_out(vocab_path);
  if (!vocab_out) throw InputError("cannot open for writing: " + vocab_path);
  vocab_out << vocab.to_json() << "\n";
}

DecoderParams DecoderParams::load(const std::string& params_path, const std::string& vocab_path) {
  Vocabulary vocab = Vocabulary::load(vocab_path);
  std::ifstream in(params_path, std::ios::binary);
  if (!in) throw InputError("cannot open: " + params_path);
  const Blob header = read_blob(in, "DEC0");
  if (header.values.size() != 8) throw ShapeError("DEC0 header must hold 8 values");
  const auto h = [&](int i) { return static_cast<int>(header.values(0, i)); };
  if (h(7) != vocab.size()) throw ShapeError("DEC0 vocabulary size does not match the vocabulary file");
  DecoderShape shape{h(0), h(1), h(2), h(3), h(4) == 1 ? PositionalMode::absolute : PositionalMode::none, h(5), h(6)};
  DecoderParams p = zeros(std::move(vocab), shape);
  for_each_tensor(p, [&](auto& t) { take(in, t); });
  p.validate();
  return p;
}

// ---------------------------------------------------------------- forward

std::vector<int> position_ids(const SequenceLayout& layout) {
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(layout.size()));
  std::vector<int> chunk_base(static_cast<std::size_t>(layout.num_objects()), -1);
  std::vector<int> chunk_count(static_cast<std::size_t>(layout.num_objects()), 0);
  int non_output = 0;
  for (const auto& s : layout.segments()) {
    for (int i = 0; i < s.length; ++i) {
      if (s.kind == SegmentKind::output) {
        auto o = static_cast<std::size_t>(s.owner);
        if (chunk_base[o] < 0) chunk_base[o] = non_output;
        ids.push_back(chunk_base[o] + chunk_count[o]++);
      } else {
        ids.push_back(non_output++);
      }
    }
  }
  return ids;
}

namespace {

Eigen::VectorXf layer_norm(const Eigen::VectorXf& x, const Eigen::VectorXf& gain, const Eigen::VectorXf& bias) {
  constexpr double kEps = 1e-5;
  const Eigen::Index n = x.size();
  double mean = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) mean += x(i);
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) var += (x(i) - mean) * (x(i) - mean);
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + kEps);
  Eigen::VectorXf out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = static_cast<float>((x(i) - mean) * inv) * gain(i) + bias(i);
  return out;
}

Eigen::VectorXf embed(const TokenEntry& entry, const DecoderParams& params) {
  if (const int* id = std::get_if<int>(&entry)) {
    if (*id < 0 || *id >= params.vocab.size()) throw VocabError("token id " + std::to_string(*id) + " outside the vocabulary");
    return params.token_embedding.row(*id).transpose();
  }
  const auto& v = std::get<Eigen::VectorXf>(entry);
  if (v.size() != params.shape.enc_dim) {
    throw ShapeError("injected vector has dim " + std::to_string(v.size()) + ", adapter expects " +
                     std::to_string(params.shape.enc_dim));
  }
  if (!v.allFinite()) throw NumericError("injected vector contains NaN or Inf");
  return params.adapter * v;
}

}  // namespace

RowMatrixXf forward(const TokenSequence& seq, const AttentionMaskMatrix& mask, const DecoderParams& params,
                    std::span<const int> positions) {
  const int n = seq.size();
  if (mask.size() != n) {
    throw ShapeError("sequence length " + std::to_string(n) + " != mask size " + std::to_string(mask.size()));
  }
  if (static_cast<int>(positions.size()) != n) throw ShapeError("position ids do not match the sequence length");
  const int d = params.dim();
  const int heads = params.shape.heads;
  const int hd = params.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<Eigen::VectorXf> hidden(static_cast<std::size_t>(n));
  for (int p = 0; p < n; ++p) {
    Eigen::VectorXf x = embed(seq.entries[static_cast<std::size_t>(p)], params);
    if (params.shape.positional_mode == PositionalMode::absolute) {
      const int pos = positions[static_cast<std::size_t>(p)];
      if (pos < 0 || pos >= params.shape.max_positions) throw ShapeError("position id exceeds max_positions");
      x += params.position_embedding.row(pos).transpose();
    }
    hidden[static_cast<std::size_t>(p)] = std::move(x);
  }

  std::vector<std::vector<int>> keys(static_cast<std::size_t>(n));
  for (int q = 0; q < n; ++q) keys[static_cast<std::size_t>(q)] = mask.visible_keys(q);

  std::vector<Eigen::VectorXf> qs(static_cast<std::size_t>(n)), ks(qs.size()), vs(qs.size());
  for (const auto& layer : params.layers) {
    for (std::size_t p = 0; p < hidden.size(); ++p) {
      const Eigen::VectorXf a = layer_norm(hidden[p], layer.ln1_gain, layer.ln1_bias);
      qs[p] = layer.wq * a;
      ks[p] = layer.wk * a;
      vs[p] = layer.wv * a;
    }
    std::vector<Eigen::VectorXf> attended(hidden.size(), Eigen::VectorXf::Zero(d));
    for (std::size_t q = 0; q < hidden.size(); ++q) {
      const auto& visible = keys[q];
      if (visible.empty()) continue;
      Eigen::VectorXd scores(static_cast<Eigen::Index>(visible.size()));
      for (int h = 0; h < heads; ++h) {
        const int off = h * hd;
        for (std::size_t j = 0; j < visible.size(); ++j) {
          const auto& key = ks[static_cast<std::size_t>(visible[j])];
          double dot = 0.0;
          for (int t = 0; t < hd; ++t) dot += static_cast<double>(qs[q](off + t)) * key(off + t);
          scores(static_cast<Eigen::Index>(j)) = dot * scale;
        }
        const Eigen::VectorXd w = masked_softmax(scores, Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(scores.size(), true));
        for (int t = 0; t < hd; ++t) {
          double acc = 0.0;
          for (std::size_t j = 0; j < visible.size(); ++j) {
            acc += w(static_cast<Eigen::Index>(j)) * vs[static_cast<std::size_t>(visible[j])](off + t);
          }
          attended[q](off + t) = static_cast<float>(acc);
        }
      }
    }
    for (std::size_t p = 0; p < hidden.size(); ++p) {
      hidden[p] += layer.wo * attended[p];
      const Eigen::VectorXf a = layer_norm(hidden[p], layer.ln2_gain, layer.ln2_bias);
      const Eigen::VectorXf u = (layer.w1 * a + layer.b1).cwiseMax(0.0f);
      hidden[p] += layer.w2 * u + layer.b2;
    }
  }

  RowMatrixXf logits(n, params.vocab.size());
  for (int p = 0; p < n; ++p) {
    const Eigen::VectorXf f = layer_norm(hidden[static_cast<std::size_t>(p)], params.final_gain, params.final_bias);
    const Eigen::VectorXf row = params.head * f + params.head_bias;
    logits.row(p) = row.transpose();
  }
  if (!logits.allFinite()) throw NumericError("forward produced non-finite logits");
  return logits;
}

RowMatrixXf forward(const TokenSequence& seq, const AttentionMaskMatrix& mask, const DecoderParams& params,
                    const SequenceLayout& layout) {
  if (layout.size() != seq.size()) throw ShapeError("layout length does not match the sequence");
  const auto ids = position_ids(layout);
  return forward(seq, mask, params, ids);
}

// ---------------------------------------------------------------- decoding

DecodeInput DecodeInput::from_batch(const PromptBatch& batch, std::vector<int> text) {
  DecodeInput input;
  input.image_tokens = batch.image_tokens.values;
  input.text = std::move(text);
  for (const auto& set : batch.mask_token_sets) input.mask_tokens.push_back(set.tokens);
  return input;
}

AssembledSequence assemble_sequence(const DecodeInput& input, const Vocabulary& vocab,
                                    const std::vector<std::vector<int>>& outputs) {
  if (input.mask_tokens.empty()) throw InputError("at least one mask is required");
  if (!outputs.empty() && outputs.size() != input.mask_tokens.size()) {
    throw InputError("one gold output chunk per mask is required");
  }
  AssembledSequence out;
  auto push_rows = [&](const RowMatrixXf& rows) {
    for (Eigen::Index r = 0; r < rows.rows(); ++r) out.seq.entries.emplace_back(Eigen::VectorXf(rows.row(r).transpose()));
  };
  std::vector<int> mask_lengths, output_lengths;
  push_rows(input.image_tokens);
  for (int id : input.text) out.seq.entries.emplace_back(id);
  for (const auto& m : input.mask_tokens) {
    if (m.rows() < 1) throw InputError("mask token set is empty");
    push_rows(m);
    out.seq.entries.emplace_back(vocab.sep_id());
    mask_lengths.push_back(static_cast<int>(m.rows()));
  }
  for (const auto& chunk : outputs) {
    for (int id : chunk) out.seq.entries.emplace_back(id);
    output_lengths.push_back(static_cast<int>(chunk.size()));
  }
  if (input.image_tokens.rows() < 1) throw InputError("image tokens are required");
  out.layout = SequenceLayout::canonical(static_cast<int>(input.image_tokens.rows()), static_cast<int>(input.text.size()),
                                         mask_lengths, output_lengths);
  return out;
}

int predictor_position(const SequenceLayout& layout, int owner) {
  const auto out = layout.positions(SegmentKind::output, owner);
  if (!out.empty()) return out.back();
  const auto mask = layout.positions(SegmentKind::mask, owner);
  if (mask.empty()) throw IndexError("object " + std::to_string(owner) + " has no mask segment");
  return mask.back();
}

namespace {

double log_softmax_at(const Eigen::Ref<const Eigen::RowVectorXf>& logits, int index) {
  double max_logit = logits(0);
  for (Eigen::Index i = 1; i < logits.size(); ++i) max_logit = std::max<double>(max_logit, logits(i));
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) total += std::exp(logits(i) - max_logit);
  return (logits(index) - max_logit) - std::log(total);
}

int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXf>& logits) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i) {
    if (logits(i) > logits(best)) best = i;
  }
  return static_cast<int>(best);
}

void hide(AttentionMaskMatrix::Bits& bits, const std::vector<int>& positions) {
  for (int p : positions) {
    if (p < bits.rows()) bits.row(p).setConstant(false);
    if (p < bits.cols()) bits.col(p).setConstant(false);
  }
}

}  // namespace

DecodeResult decode_objects(const DecodeInput& input, const DecoderParams& params, const DecodeOptions& options) {
  if (options.max_label_len < 1) throw ValueError("max_label_len must be >= 1");
  const int k = static_cast<int>(input.mask_tokens.size());
  if (k < 1) throw InputError("decode needs K >= 1 masks");
  const auto& vocab = params.vocab;

  AssembledSequence state = assemble_sequence(input, vocab);
  AttentionMaskMatrix mask = build_cascade_mask(state.layout, options.config);

  std::vector<int> active;
  std::vector<int> hidden_positions;
  if (options.only_object) {
    const int keep = *options.only_object;
    if (keep < 0 || keep >= k) throw IndexError("only_object out of range");
    active.push_back(keep);
    for (int j = 0; j < k; ++j) {
      if (j == keep) continue;
      for (int p : state.layout.positions(SegmentKind::mask, j)) {
        state.seq.entries[static_cast<std::size_t>(p)] = vocab.pad_id();
        hidden_positions.push_back(p);
      }
    }
    hide(mask.bits(), hidden_positions);
  } else {
    for (int i = 0; i < k; ++i) active.push_back(i);
  }

  DecodeResult result;
  result.labels.resize(static_cast<std::size_t>(k));
  result.token_ids.resize(static_cast<std::size_t>(k));
  result.stepwise_logprobs.resize(static_cast<std::size_t>(k));
  result.per_object_logprob.assign(static_cast<std::size_t>(k), 0.0);
  std::vector<bool> finished(static_cast<std::size_t>(k), false);

  auto step = [&](int owner) {
    const auto o = static_cast<std::size_t>(owner);
    const RowMatrixXf logits = forward(state.seq, mask, params, state.layout);
    ++result.forward_passes;
    const auto row = logits.row(predictor_position(state.layout, owner));
    const int token = argmax_lowest(row);
    result.stepwise_logprobs[o].push_back(log_softmax_at(row, token));
    result.token_ids[o].push_back(token);
    if (token == vocab.end_id() || static_cast<int>(result.token_ids[o].size()) >= options.max_label_len) {
      finished[o] = true;
      return;
    }
    const int n = state.layout.size();
    state.seq.entries.emplace_back(token);
    auto [grown_mask, grown_layout] = extend_for_decode(mask, state.layout, owner, options.config);
    for (int p : hidden_positions) grown_mask.bits()(n, p) = false;
    mask = std::move(grown_mask);
    state.layout = std::move(grown_layout);
  };

  if (options.schedule == DecodeSchedule::round_robin) {
    bool pending = true;
    while (pending) {
      pending = false;
      for (int i : active) {
        if (finished[static_cast<std::size_t>(i)]) continue;
        step(i);
        pending = pending || !finished[static_cast<std::size_t>(i)];
      }
    }
  } else {
    for (int i : active) {
      while (!finished[static_cast<std::size_t>(i)]) step(i);
    }
  }

  for (int i : active) {
    const auto o = static_cast<std::size_t>(i);
    result.labels[o] = vocab.detokenize(result.token_ids[o]);
    double sum = 0.0;
    for (double lp : result.stepwise_logprobs[o]) sum += lp;
    result.per_object_logprob[o] = sum;
  }
  result.total_logprob_joint = joint_logprob(result);
  result.sequence_length = state.layout.size();
  return result;
}

DecodeResult decode_objects(const PromptBatch& batch, const std::vector<int>& text, const DecoderParams& params,
                            const CascadeConfig& config, int max_label_len) {
  DecodeOptions options;
  options.config = config;
  options.max_label_len = max_label_len;
  return decode_objects(DecodeInput::from_batch(batch, text), params, options);
}

std::string DecodeResult::to_json() const {
  json j{{"labels", labels},
         {"token_ids", token_ids},
         {"stepwise_logprobs", stepwise_logprobs},
         {"per_object_logprob", per_object_logprob},
         {"total_logprob_joint", total_logprob_joint},
         {"sequence_length", sequence_length},
         {"forward_passes", forward_passes}};
  return j.dump();
}

IsolatedSequence isolate_single_mask(const TokenSequence& seq, const SequenceLayout& layout, int keep, int pad_id,
                                     const CascadeConfig& config) {
  if (seq.size() != layout.size()) throw ShapeError("sequence and layout lengths differ");
  if (keep < 0 || keep >= layout.num_objects()) {
    throw IndexError("keep index " + std::to_string(keep) + " out of range for " +
                     std::to_string(layout.num_objects()) + " objects");
  }
  IsolatedSequence out{seq, build_cascade_mask(layout, config)};
  std::vector<int> padded;
  for (int j = 0; j < layout.num_objects(); ++j) {
    if (j == keep) continue;
    for (auto kind : {SegmentKind::mask, SegmentKind::output}) {
      for (int p : layout.positions(kind, j)) {
        out.seq.entries[static_cast<std::size_t>(p)] = pad_id;
        padded.push_back(p);
      }
    }
  }
  hide(out.mask.bits(), padded);
  return out;
}

double teacher_forced_loss(const TokenSequence& seq, const SequenceLayout& layout, const AttentionMaskMatrix& mask,
                           const DecoderParams& params) {
  struct Target {
    int predictor;
    int token;
  };
  std::vector<Target> targets;
  for (int i = 0; i < layout.num_objects(); ++i) {
    const auto chunk = layout.positions(SegmentKind::output, i);
    if (chunk.empty()) continue;
    int predictor = layout.positions(SegmentKind::mask, i).back();
    for (int p : chunk) {
      const int* id = std::get_if<int>(&seq.entries[static_cast<std::size_t>(p)]);
      if (id == nullptr) throw VocabError("output position " + std::to_string(p) + " holds a feature vector");
      if (*id < 0 || *id >= params.vocab.size()) throw VocabError("gold token " + std::to_string(*id) + " outside the vocabulary");
      targets.push_back({predictor, *id});
      predictor = p;
    }
    if (targets.back().token != params.vocab.end_id()) {
      throw InputError("output chunk " + std::to_string(i) + " does not end with <end>");
    }
  }
  if (targets.empty()) throw InputError("no output positions to score");
  const RowMatrixXf logits = forward(seq, mask, params, layout);
  double total = 0.0;
  for (const auto& t : targets) total -= log_softmax_at(logits.row(t.predictor), t.token);
  const double loss = total / static_cast<double>(targets.size());
  if (!std::isfinite(loss)) throw NumericError("loss is not finite");
  return loss;
}

double joint_logprob(const DecodeResult& result) {
  double total = 0.0;
  for (double lp : result.per_object_logprob) total += lp;
  return total;
}

}  // namespace regrec
