#include "regrec/harness.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "regrec/encoder.hpp"
#include "regrec/error.hpp"
#include "regrec/prompt.hpp"
#include "regrec/rng.hpp"

namespace regrec {

using nlohmann::json;

BenchProfile BenchProfile::toy() {
  BenchProfile p;
  p.name = "toy";
  return p;
}

BenchProfile BenchProfile::decoder_dominated() {
  BenchProfile p;
  p.name = "decoder-dominated";
  p.enc_dim = 16;
  p.dim = 256;
  p.heads = 4;
  p.layers = 4;
  p.ffn = 1024;
  p.vocab = 128;
  p.text_len = 256;
  p.output_len = 4;
  return p;
}

BenchProfile BenchProfile::by_name(const std::string& name) {
  if (name == "toy") return toy();
  if (name == "decoder-dominated") return decoder_dominated();
  throw ConfigError("unknown bench profile '" + name + "' (toy, decoder-dominated)");
}

double encoder_flops_per_crop(const BenchProfile& p) {
  const double cells = static_cast<double>(p.grid_side) * p.grid_side;
  const double fan_in = static_cast<double>(p.patch_side) * p.patch_side * p.channels;
  return cells * 2.0 * fan_in * p.enc_dim;
}

double crop_resize_flops(const BenchProfile& p) {
  const double side = p.input_side();
  return 8.0 * side * side * p.channels;
}

CostBreakdown estimate_cost(const SequenceLayout& layout, long long visible_pairs, int k, const BenchProfile& p) {
  if (k < 1) throw ValueError("K must be >= 1");
  const double n = layout.size();
  const double d = p.dim;
  double injected = 0;
  for (const auto& s : layout.segments()) {
    if (s.kind == SegmentKind::image || s.kind == SegmentKind::mask) injected += s.length;
  }
  CostBreakdown c;
  c.encoder = (k + 1) * encoder_flops_per_crop(p);
  c.crop_resize = (k + 1) * crop_resize_flops(p);
  c.adapter = 2.0 * injected * p.enc_dim * d;
  c.projection = p.layers * 4.0 * 2.0 * n * d * d;
  c.ffn = p.layers * 2.0 * 2.0 * n * d * p.ffn;
  c.attention = p.layers * 2.0 * static_cast<double>(visible_pairs) * d;
  c.head = 2.0 * n * d * p.vocab;
  return c;
}

CostBreakdown estimate_cost(const SequenceLayout& layout, const AttentionMaskMatrix& mask, int k,
                            const BenchProfile& profile) {
  if (mask.size() != layout.size()) throw ShapeError("mask does not match the layout");
  return estimate_cost(layout, mask.count(), k, profile);
}

std::vector<BinaryMask> synthesize_masks(int count, int width, int height, int tokens, int grid_side,
                                         std::uint64_t seed) {
  // A square bbox of half the grid in cells, 4 px per cell: with context scale 2
  // the window cells line up with 4x4 pixel blocks inside the bbox.
  constexpr int kCellPx = 4;
  if (grid_side < 4 || grid_side % 2 != 0) throw ValueError("grid side must be even and >= 4");
  const int block = grid_side / 2;
  const int side = block * kCellPx;
  if (tokens < 2 || tokens > block * block) {
    throw ValueError("synthesized masks hold 2.." + std::to_string(block * block) + " tokens");
  }
  if (width < side || height < side) throw ValueError("canvas smaller than one synthesized mask");
  Xoshiro256 rng(seed);
  std::vector<BinaryMask> masks;
  masks.reserve(static_cast<std::size_t>(count));
  for (int m = 0; m < count; ++m) {
    // Corner cells pin the bounding box; the rest are a random subset.
    std::vector<int> interior;
    for (int c = 1; c < block * block - 1; ++c) interior.push_back(c);
    std::shuffle(interior.begin(), interior.end(), rng);
    std::vector<int> cells{0, block * block - 1};
    cells.insert(cells.end(), interior.begin(), interior.begin() + (tokens - 2));

    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(width - side + 1)));
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(height - side + 1)));
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(width) * height, 0);
    for (int c : cells) {
      const int cx = x0 + (c % block) * kCellPx;
      const int cy = y0 + (c / block) * kCellPx;
      for (int y = cy; y < cy + kCellPx; ++y) {
        for (int x = cx; x < cx + kCellPx; ++x) bits[static_cast<std::size_t>(y) * width + x] = 1;
      }
    }
    masks.emplace_back(width, height, std::move(bits));
  }
  return masks;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

RasterImage random_image(int w, int h, int channels, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  RasterImage image(w, h, channels);
  for (auto& v : image.data()) v = static_cast<float>(rng.below(256));
  return image;
}

}  // namespace

ScalingReport run_scaling_bench(const std::vector<int>& k_values, const std::vector<BinaryMask>& masks,
                                const BenchProfile& profile, const BenchOptions& options) {
  if (k_values.empty()) throw InputError("no K values given");
  if (options.repetitions < 1) throw ValueError("repetitions must be >= 1");
  for (int k : k_values) {
    if (k < 1) throw InputError("K must be >= 1");
    if (static_cast<std::size_t>(k) > masks.size()) {
      throw InputError("K = " + std::to_string(k) + " needs more masks than the " + std::to_string(masks.size()) +
                       " supplied");
    }
  }
  const int width = masks.front().width();
  const int height = masks.front().height();
  const RasterImage image = random_image(width, height, profile.channels, options.seed);
  const EncoderParams encoder =
      EncoderParams::random(profile.patch_side, profile.grid_side, profile.channels, profile.enc_dim, options.seed);

  ScalingReport report;
  report.profile = profile.name;
  double baseline = 0.0;
  for (int k : k_values) {
    const std::vector<BinaryMask> subset(masks.begin(), masks.begin() + k);
    std::vector<double> times;
    SequenceLayout layout;
    AttentionMaskMatrix mask;
    int mask_tokens = 0;
    const int reps = options.timed ? options.repetitions : 1;
    for (int rep = 0; rep < reps; ++rep) {
      const auto start = std::chrono::steady_clock::now();
      // The bench is a cost study, so the training-time mask cap does not apply.
      const PromptBatch batch =
          build_prompt_batch(image, subset, encoder, kDefaultContextScale, k, options.parallel);
      const SequenceBudget budget = token_budget(batch, profile.text_len, profile.output_len);
      layout = SequenceLayout::canonical(budget.image, budget.text, budget.mask, budget.output);
      mask = build_cascade_mask(layout, CascadeConfig::full());
      times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
      mask_tokens = std::accumulate(budget.mask.begin(), budget.mask.end(), 0);
    }
    const CostBreakdown cost = estimate_cost(layout, mask, k, profile);
    ScalingRow row;
    row.k = k;
    row.sequence_length = layout.size();
    row.mask_tokens = mask_tokens;
    row.visible_pairs = mask.count();
    row.total_flops = cost.total();
    row.encoder_share = cost.encoder_total() / cost.total();
    row.decoder_share = cost.decoder_total() / cost.total();
    row.wall_time_ms = options.timed ? median(times) : 0.0;
    report.rows.push_back(row);
    if (k == 1) baseline = cost.total();
  }
  if (baseline == 0.0) {
    // No K = 1 row requested: cost one instance on its own for the comparator.
    const PromptBatch one = build_prompt_batch(image, {masks.front()}, encoder, kDefaultContextScale, 1);
    const SequenceBudget budget = token_budget(one, profile.text_len, profile.output_len);
    const auto layout = SequenceLayout::canonical(budget.image, budget.text, budget.mask, budget.output);
    baseline = estimate_cost(layout, build_cascade_mask(layout, CascadeConfig::full()), 1, profile).total();
  }
  for (auto& row : report.rows) row.comparator_flops = row.k * baseline;
  const auto lo = std::min_element(report.rows.begin(), report.rows.end(), [](auto& a, auto& b) { return a.k < b.k; });
  const auto hi = std::max_element(report.rows.begin(), report.rows.end(), [](auto& a, auto& b) { return a.k < b.k; });
  report.growth_factor = hi->total_flops / lo->total_flops;
  report.comparator_growth_factor = hi->comparator_flops / lo->comparator_flops;
  return report;
}

std::string ScalingReport::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"K", r.k},
                         {"sequence_length", r.sequence_length},
                         {"mask_tokens", r.mask_tokens},
                         {"visible_pairs", r.visible_pairs},
                         {"total_flops", r.total_flops},
                         {"encoder_share", r.encoder_share},
                         {"decoder_share", r.decoder_share},
                         {"comparator_flops", r.comparator_flops},
                         {"wall_time_ms", r.wall_time_ms}});
  }
  return json{{"profile", profile},
              {"rows", rows_json},
              {"growth_factor", growth_factor},
              {"comparator_growth_factor", comparator_growth_factor}}
      .dump();
}

std::string ScalingReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "K,flops,time_ms,comparator_flops,sequence_length,encoder_share,decoder_share\n";
  for (const auto& r : rows) {
    out << r.k << ',' << r.total_flops << ',' << r.wall_time_ms << ',' << r.comparator_flops << ','
        << r.sequence_length << ',' << r.encoder_share << ',' << r.decoder_share << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------- filter pipeline

std::string hallucination_question(const std::string& class_name) {
  return "Is the area outlined by the red contour and covered by the red mask in the image " + class_name +
         "? Please answer yes or no.";
}

ScriptedOracle::ScriptedOracle(std::string default_answer, std::map<std::size_t, std::string> answers)
    : default_answer_(std::move(default_answer)), answers_(std::move(answers)) {}

ScriptedOracle ScriptedOracle::from_json(const std::string& json_text) {
  try {
    const json j = json::parse(json_text);
    std::map<std::size_t, std::string> answers;
    if (j.contains("answers")) {
      for (const auto& [key, value] : j.at("answers").items()) answers[std::stoul(key)] = value.get<std::string>();
    }
    return ScriptedOracle(j.value("default", std::string("yes")), std::move(answers));
  } catch (const json::exception& e) {
    throw ParseError(std::string("oracle script: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ParseError("oracle script: answer keys must be record indices");
  }
}

std::string ScriptedOracle::ask(const MaskRecord&, std::size_t record_index, const std::string& question) {
  questions_.push_back(question);
  const auto it = answers_.find(record_index);
  const std::string& answer = it == answers_.end() ? default_answer_ : it->second;
  if (answer == "error") throw std::runtime_error("scripted failure for record " + std::to_string(record_index));
  return answer;
}

namespace {

enum class Verdict { yes, no, unclear };

Verdict parse_answer(const std::string& answer) {
  std::string word;
  for (char c : answer) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!word.empty()) {
      break;
    }
  }
  if (word == "yes") return Verdict::yes;
  if (word == "no") return Verdict::no;
  return Verdict::unclear;
}

}  // namespace

PipelineReport run_filter_pipeline(const std::vector<MaskRecord>& records,
                                   const std::map<std::string, double>& image_area_by_id, HallucinationOracle& oracle,
                                   double min_ratio, int head_threshold) {
  if (head_threshold < 0) throw ValueError("head_threshold must be >= 0");
  PipelineReport report;
  report.input = records.size();

  // Stage 1 keeps input order; recover each survivor's input index.
  const FilterResult stage1 = area_ratio_filter(records, image_area_by_id, min_ratio);
  std::vector<std::size_t> kept_index;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (area_ratio_filter({records[i]}, image_area_by_id, min_ratio).kept.size() == 1) kept_index.push_back(i);
  }
  if (kept_index.size() != stage1.kept.size()) throw InvariantViolation("stage 1 partition is inconsistent");
  report.stage1_kept = stage1.kept.size();
  report.stage1_dropped = stage1.dropped.size();

  std::map<std::string, int> per_category;
  for (const auto& r : stage1.kept) {
    if (r.label) ++per_category[*r.label];
  }
  for (const auto& [label, count] : per_category) {
    if (count >= head_threshold) report.head_categories.push_back(label);
  }
  auto is_head = [&](const MaskRecord& r) {
    return r.label && std::binary_search(report.head_categories.begin(), report.head_categories.end(), *r.label);
  };

  for (std::size_t j = 0; j < stage1.kept.size(); ++j) {
    PipelineEntry entry{kept_index[j], stage1.kept[j], false, false, {}};
    if (is_head(entry.record)) {
      entry.queried = true;
      ++report.queried;
      try {
        const std::string answer = oracle.ask(entry.record, entry.index, hallucination_question(*entry.record.label));
        const Verdict v = parse_answer(answer);
        if (v == Verdict::no) {
          ++report.stage2_dropped;
          report.stage2_dropped_indices.push_back(entry.index);
          continue;
        }
        if (v == Verdict::unclear) {
          entry.flagged = true;
          entry.error = "unrecognized oracle answer: " + answer;
        }
      } catch (const std::exception& e) {
        entry.flagged = true;
        entry.error = e.what();
      }
    }
    if (entry.flagged) ++report.flagged;
    report.kept.push_back(std::move(entry));
  }
  return report;
}

PipelineReport run_filter_pipeline(const std::string& records_path,
                                   const std::map<std::string, double>& image_area_by_id, HallucinationOracle& oracle,
                                   double min_ratio, int head_threshold) {
  return run_filter_pipeline(read_mask_records(records_path), image_area_by_id, oracle, min_ratio, head_threshold);
}

std::string PipelineReport::to_json() const {
  json entries = json::array();
  for (const auto& e : kept) {
    json j{{"index", e.index}, {"image_id", e.record.image_id}, {"queried", e.queried}, {"flagged", e.flagged}};
    if (e.record.label) j["label"] = *e.record.label;
    if (!e.error.empty()) j["error"] = e.error;
    entries.push_back(std::move(j));
  }
  return json{{"input", input},
              {"stage1_kept", stage1_kept},
              {"stage1_dropped", stage1_dropped},
              {"head_categories", head_categories},
              {"queried", queried},
              {"stage2_dropped", stage2_dropped},
              {"stage2_dropped_indices", stage2_dropped_indices},
              {"flagged", flagged},
              {"kept", entries}}
      .dump();
}

}  // namespace regrec
