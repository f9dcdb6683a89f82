#include "regrec/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>

#include "regrec/decoder.hpp"
#include "regrec/encoder.hpp"
#include "regrec/error.hpp"
#include "regrec/harness.hpp"
#include "regrec/maskio.hpp"
#include "regrec/metrics.hpp"
#include "regrec/prompt.hpp"

namespace regrec {

using nlohmann::json;

std::string maskviz_preset(const std::string& name) {
  if (name == "fig4") return "image:2 text:1 mask0:2 sep:1 mask1:2 out0:1 sep:1 out1:1";
  if (name == "k1") return "image:2 text:1 mask0:2 sep:1 out0:2";
  throw ConfigError("unknown preset '" + name + "' (fig4, k1)");
}

namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool pretty = false;
  double scale = kDefaultContextScale;
  int grid = EncoderParams::kDefaultGridSide;
  int input_side = EncoderParams::kDefaultPatchSide * EncoderParams::kDefaultGridSide;
  int max_masks = kDefaultMaxMasks;
  std::string out_path;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(what + ": " + e.what());
  }
}

std::string render(const json& j, const Globals& g) { return g.pretty ? j.dump(2) : j.dump(); }

void emit(const std::string& text, const Globals& g, std::ostream& out) {
  if (g.out_path.empty()) {
    out << text;
    return;
  }
  std::ofstream file(g.out_path, std::ios::binary);
  if (!file) throw InputError("cannot open for writing: " + g.out_path);
  file << text;
}

EncoderParams make_encoder(const std::string& path, int channels, int enc_dim, const Globals& g) {
  if (g.grid < 1 || g.input_side < g.grid || g.input_side % g.grid != 0) {
    throw ConfigError("input-side must be a positive multiple of grid");
  }
  if (!path.empty()) {
    EncoderParams p = EncoderParams::load(path, g.grid);
    if (p.input_side() != g.input_side) throw ConfigError("encoder file does not match --input-side/--grid");
    return p;
  }
  return EncoderParams::random(g.input_side / g.grid, g.grid, channels, enc_dim, g.seed);
}

std::vector<BinaryMask> gather_masks(const std::string& records_path, const std::vector<std::string>& mask_pgms) {
  std::vector<BinaryMask> masks;
  if (!records_path.empty()) {
    for (auto& r : read_mask_records(records_path)) masks.push_back(std::move(r.mask));
  }
  for (const auto& p : mask_pgms) masks.push_back(read_mask_pgm(p));
  if (masks.empty()) throw InputError("no masks given (--masks or --mask)");
  return masks;
}

RowMatrixXf rows_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw InputError(what + " must be a nonempty array of vectors");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  RowMatrixXf m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != cols) throw ShapeError(what + " rows differ in length");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<float>();
  }
  return m;
}

// ---------------------------------------------------------------- tokenize

struct TokenizeArgs {
  std::string image, masks, encoder, out_dir;
  std::vector<std::string> mask_pgms;
  int enc_dim = EncoderParams::kDefaultDim;
  bool parallel = false;
};

void cmd_tokenize(const TokenizeArgs& a, const Globals& g, std::ostream& out) {
  const RasterImage image = read_pgm(a.image);
  const auto masks = gather_masks(a.masks, a.mask_pgms);
  const EncoderParams params = make_encoder(a.encoder, image.channels(), a.enc_dim, g);
  const PromptBatch batch = build_prompt_batch(image, masks, params, g.scale, g.max_masks, a.parallel);

  json counts = json::array();
  int total = 0;
  for (const auto& set : batch.mask_token_sets) {
    counts.push_back(set.count());
    total += set.count();
    if (!a.out_dir.empty()) {
      std::filesystem::create_directories(a.out_dir);
      const std::string stem = a.out_dir + "/mask_" + std::to_string(set.mask_index);
      save_mask_token_set(set, stem + ".json", stem + ".tok");
    }
  }
  const json summary{{"seed", g.seed},
                     {"scale", g.scale},
                     {"grid", g.grid},
                     {"input_side", g.input_side},
                     {"dim", params.dim()},
                     {"image_tokens", batch.image_tokens.rows * batch.image_tokens.cols},
                     {"masks", batch.mask_token_sets.size()},
                     {"counts", counts},
                     {"total_mask_tokens", total}};
  emit(render(summary, g) + "\n", g, out);
}

// ---------------------------------------------------------------- maskviz

struct MaskvizArgs {
  std::string preset, layout, variant = "full";
};

void cmd_maskviz(const MaskvizArgs& a, const Globals& g, std::ostream& out) {
  if (!a.preset.empty() && !a.layout.empty()) throw ConfigError("give either --preset or --layout, not both");
  const std::string spec = a.layout.empty() ? maskviz_preset(a.preset.empty() ? "fig4" : a.preset) : a.layout;
  const SequenceLayout layout = SequenceLayout::parse(spec);
  const AttentionMaskMatrix mask = build_cascade_mask(layout, CascadeConfig::by_name(a.variant));
  if (!g.pretty) {
    emit(mask.dump(layout), g, out);
    return;
  }
  // Row labels plus '#'/'.' cells.
  std::vector<std::string> labels;
  for (const auto& s : layout.segments()) {
    std::string name = kind_name(s.kind);
    if (s.owner >= 0) name += std::to_string(s.owner);
    for (int i = 0; i < s.length; ++i) labels.push_back(name);
  }
  std::size_t width = 0;
  for (const auto& l : labels) width = std::max(width, l.size());
  std::ostringstream text;
  text << layout.to_string() << "  [" << a.variant << "]\n";
  for (int q = 0; q < mask.size(); ++q) {
    const auto& l = labels[static_cast<std::size_t>(q)];
    text << l << std::string(width - l.size() + 1, ' ');
    for (int k = 0; k < mask.size(); ++k) text << (mask(q, k) ? " #" : " .");
    text << '\n';
  }
  emit(text.str(), g, out);
}

// ---------------------------------------------------------------- decode

struct DecodeArgs {
  std::string params, vocab, instance, image, masks, encoder;
  std::vector<std::string> mask_pgms;
  std::optional<std::string> text;
  std::string variant = "full", schedule = "round-robin";
  int max_len = kDefaultOutputSlots;
  int enc_dim = EncoderParams::kDefaultDim;
};

void cmd_decode(const DecodeArgs& a, const Globals& g, std::ostream& out) {
  if (a.vocab.empty()) throw ConfigError("--vocab is required");
  if (a.instance.empty() == a.image.empty()) throw ConfigError("give exactly one of --instance or --image");
  Vocabulary vocab = Vocabulary::load(a.vocab);

  DecodeInput input;
  std::string text = a.text.value_or("<start>");
  int enc_dim = a.enc_dim;
  if (!a.instance.empty()) {
    const json inst = parse_json(slurp(a.instance), "instance " + a.instance);
    try {
      input.image_tokens = rows_from_json(inst.at("image_tokens"), "image_tokens");
      for (const auto& m : inst.at("masks")) input.mask_tokens.push_back(rows_from_json(m, "mask tokens"));
      if (!a.text && inst.contains("text")) text = inst.at("text").get<std::string>();
    } catch (const json::exception& e) {
      throw ParseError("instance " + a.instance + ": " + e.what());
    }
    enc_dim = static_cast<int>(input.image_tokens.cols());
  } else {
    const RasterImage image = read_pgm(a.image);
    const auto masks = gather_masks(a.masks, a.mask_pgms);
    const EncoderParams enc = make_encoder(a.encoder, image.channels(), a.enc_dim, g);
    input = DecodeInput::from_batch(build_prompt_batch(image, masks, enc, g.scale, g.max_masks), {});
    enc_dim = enc.dim();
  }
  input.text = vocab.tokenize(text);

  DecoderParams params = a.params.empty()
                             ? DecoderParams::random(std::move(vocab), DecoderShape{.enc_dim = enc_dim}, g.seed)
                             : DecoderParams::load(a.params, a.vocab);
  DecodeOptions options;
  options.config = CascadeConfig::by_name(a.variant);
  options.max_label_len = a.max_len;
  if (a.schedule == "round-robin") {
    options.schedule = DecodeSchedule::round_robin;
  } else if (a.schedule == "sequential") {
    options.schedule = DecodeSchedule::sequential;
  } else {
    throw ConfigError("unknown schedule '" + a.schedule + "' (round-robin, sequential)");
  }
  const DecodeResult result = decode_objects(input, params, options);
  json j = json::parse(result.to_json());
  j["variant"] = a.variant;
  j["seed"] = g.seed;
  emit(render(j, g) + "\n", g, out);
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string predictions, categories, provider = "hash";
  int dim = 256;
};

void cmd_eval(const EvalArgs& a, const Globals& g, std::ostream& out) {
  if (a.predictions.empty()) throw ConfigError("--predictions is required");
  std::unique_ptr<EmbeddingProvider> provider;
  if (a.provider == "hash") {
    provider = std::make_unique<HashEmbeddingProvider>(a.dim);
  } else if (a.provider.rfind("table:", 0) == 0) {
    provider = std::make_unique<TableEmbeddingProvider>(TableEmbeddingProvider::load(a.provider.substr(6)));
  } else {
    throw ConfigError("unknown provider '" + a.provider + "' (hash, table:PATH)");
  }
  std::optional<std::vector<std::string>> categories;
  if (!a.categories.empty()) categories = read_category_list(a.categories);
  std::vector<EvalItem> items;
  for (const auto& p : read_predictions(a.predictions)) items.push_back({p.pred, p.gold, categories});
  const EvalReport report = evaluate(items, *provider);
  json j = json::parse(report.to_json());
  j["provider"] = provider->name();
  emit(render(j, g) + "\n", g, out);
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  std::string k_list = "1,2,4,8,16,32", profile = "decoder-dominated", csv;
  int tokens = 27, reps = 5, canvas = 256;
  bool parallel = false, no_timing = false;
};

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ParseError("bad integer '" + item + "' in list");
    }
  }
  if (out.empty()) throw ParseError("empty K list");
  return out;
}

void cmd_bench(const BenchArgs& a, const Globals& g, std::ostream& out) {
  const auto ks = parse_int_list(a.k_list);
  BenchProfile profile = BenchProfile::by_name(a.profile);
  profile.grid_side = g.grid;
  if (g.input_side % g.grid != 0) throw ConfigError("input-side must be a multiple of grid");
  profile.patch_side = g.input_side / g.grid;
  const int needed = *std::max_element(ks.begin(), ks.end());
  const auto masks = synthesize_masks(needed, a.canvas, a.canvas, a.tokens, profile.grid_side, g.seed);
  BenchOptions options;
  options.repetitions = a.reps;
  options.parallel = a.parallel;
  options.timed = !a.no_timing;
  options.seed = g.seed;
  const ScalingReport report = run_scaling_bench(ks, masks, profile, options);
  if (!a.csv.empty()) {
    std::ofstream csv(a.csv);
    if (!csv) throw InputError("cannot open for writing: " + a.csv);
    csv << report.to_csv();
  }
  json j = json::parse(report.to_json());
  j["flops"] = {{"growth_factor", report.growth_factor},
                {"comparator_growth_factor", report.comparator_growth_factor}};
  j["seed"] = g.seed;
  emit(render(j, g) + "\n", g, out);
}

// ---------------------------------------------------------------- pipeline

struct PipelineArgs {
  std::string records, areas, oracle = "yes";
  double image_area = 0;
  double min_ratio = kDefaultMinAreaRatio;
  int head_threshold = kDefaultHeadThreshold;
};

void cmd_pipeline(const PipelineArgs& a, const Globals& g, std::ostream& out) {
  if (a.records.empty()) throw ConfigError("--records is required");
  const auto records = read_mask_records(a.records);
  std::map<std::string, double> areas;
  if (!a.areas.empty()) {
    const json j = parse_json(slurp(a.areas), "areas " + a.areas);
    try {
      areas = j.get<std::map<std::string, double>>();
    } catch (const json::exception& e) {
      throw ParseError("areas " + a.areas + ": " + e.what());
    }
  } else {
    // Default area: each record's own mask canvas.
    for (const auto& r : records) {
      areas.emplace(r.image_id, a.image_area > 0 ? a.image_area
                                                 : static_cast<double>(r.mask.width()) * r.mask.height());
    }
  }
  std::unique_ptr<ScriptedOracle> oracle;
  if (a.oracle == "yes" || a.oracle == "no") {
    oracle = std::make_unique<ScriptedOracle>(a.oracle);
  } else if (a.oracle.rfind("script:", 0) == 0) {
    oracle = std::make_unique<ScriptedOracle>(ScriptedOracle::from_json(slurp(a.oracle.substr(7))));
  } else {
    throw ConfigError("unknown oracle '" + a.oracle + "' (yes, no, script:PATH)");
  }
  const PipelineReport report = run_filter_pipeline(records, areas, *oracle, a.min_ratio, a.head_threshold);
  emit(render(json::parse(report.to_json()), g) + "\n", g, out);
}

std::uint64_t env_seed() {
  const char* v = std::getenv("WOW_SEED");
  if (v == nullptr || *v == '\0') return 0;
  try {
    std::size_t used = 0;
    const auto s = std::stoull(v, &used);
    if (v[used] != '\0') throw std::invalid_argument(v);
    return s;
  } catch (const std::exception&) {
    throw ConfigError(std::string("WOW_SEED is not an unsigned integer: ") + v);
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Globals g;
  TokenizeArgs tok;
  MaskvizArgs viz;
  DecodeArgs dec;
  EvalArgs ev;
  BenchArgs bench;
  PipelineArgs pipe;

  CLI::App app{"Region recognition toolkit: mask tokenization, cascade attention masks, decoding, metrics."};
  app.name("regrec");
  app.option_defaults()->always_capture_default();
  app.fallthrough();
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file; command-line flags win");
  try {
    g.seed = env_seed();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  app.add_option("--seed", g.seed, "PRNG seed for all random weights and inputs (env WOW_SEED)");
  app.add_flag("--pretty", g.pretty, "Human-readable output instead of compact JSON");
  app.add_option("--scale", g.scale, "Context scale of the mask crop window");
  app.add_option("--grid", g.grid, "Token grid side");
  app.add_option("--input-side", g.input_side, "Encoder input side in pixels");
  app.add_option("--max-masks", g.max_masks, "Maximum masks per sample");
  app.add_option("-o,--out", g.out_path, "Write the report here instead of stdout");

  auto* t = app.add_subcommand("tokenize", "Mask2Token over an image and its masks; prints per-mask token counts");
  t->add_option("--image", tok.image, "PGM/PPM image")->required();
  t->add_option("--masks", tok.masks, "Mask records (JSON lines with RLE)");
  t->add_option("--mask", tok.mask_pgms, "Mask PGM file (repeatable)");
  t->add_option("--encoder", tok.encoder, "ENC0 encoder weights (default: seeded random)");
  t->add_option("--enc-dim", tok.enc_dim, "Feature dim of a seeded random encoder");
  t->add_option("--out-dir", tok.out_dir, "Directory for per-mask JSON + TOK0 dumps");
  t->add_flag("--parallel", tok.parallel, "Tokenize masks on worker threads");

  auto* v = app.add_subcommand("maskviz", "Print an attention mask as a 0/1 grid");
  v->add_option("--preset", viz.preset, "Layout preset: fig4 or k1 (default fig4)");
  v->add_option("--layout", viz.layout, "Layout spec, e.g. \"image:2 text:1 mask0:2 sep:1 out0:1\"");
  v->add_option("--variant", viz.variant, "full, region, output or causal");

  auto* d = app.add_subcommand("decode", "Greedy multi-object decoding");
  d->add_option("--vocab", dec.vocab, "Vocabulary JSON (array of tokens)");
  d->add_option("--params", dec.params, "DEC0 decoder weights (default: seeded random)");
  d->add_option("--instance", dec.instance, "JSON instance with image_tokens, masks and text");
  d->add_option("--image", dec.image, "PGM/PPM image");
  d->add_option("--masks", dec.masks, "Mask records (JSON lines with RLE)");
  d->add_option("--mask", dec.mask_pgms, "Mask PGM file (repeatable)");
  d->add_option("--encoder", dec.encoder, "ENC0 encoder weights (default: seeded random)");
  d->add_option("--enc-dim", dec.enc_dim, "Feature dim of a seeded random encoder");
  d->add_option("--text", dec.text, "Text prompt tokens (default <start>)");
  d->add_option("--variant", dec.variant, "full, region, output or causal");
  d->add_option("--schedule", dec.schedule, "round-robin or sequential");
  d->add_option("--max-len", dec.max_len, "Maximum tokens per label");

  auto* e = app.add_subcommand("eval", "Semantic similarity / IoU / maskAcc over a prediction file");
  e->add_option("--predictions", ev.predictions, "JSON lines {image_id, mask_index, pred, gold}");
  e->add_option("--categories", ev.categories, "Category list, one per line (enables mask_acc)");
  e->add_option("--provider", ev.provider, "hash or table:PATH");
  e->add_option("--dim", ev.dim, "Hash embedding dim");

  auto* b = app.add_subcommand("bench", "Instance-scaling FLOP model and timings");
  b->add_option("--k", bench.k_list, "Comma-separated instance counts");
  b->add_option("--profile", bench.profile, "decoder-dominated or toy");
  b->add_option("--tokens", bench.tokens, "Tokens per synthesized mask");
  b->add_option("--reps", bench.reps, "Timing repetitions (median reported)");
  b->add_option("--canvas", bench.canvas, "Side of the synthetic image");
  b->add_option("--csv", bench.csv, "Also write K,flops,time CSV here");
  b->add_flag("--parallel", bench.parallel, "Parallel per-crop encoding");
  b->add_flag("--no-timing", bench.no_timing, "Skip timing; wall_time_ms = 0 (byte-stable output)");

  auto* p = app.add_subcommand("pipeline", "Area-ratio filter plus hallucination re-query");
  p->add_option("--records", pipe.records, "Mask records (JSON lines with RLE and label)");
  p->add_option("--areas", pipe.areas, "JSON map image_id -> image area");
  p->add_option("--image-area", pipe.image_area, "Area used for every image when --areas is absent (0: mask canvas)");
  p->add_option("--oracle", pipe.oracle, "yes, no or script:PATH");
  p->add_option("--min-ratio", pipe.min_ratio, "Stage-1 minimum mask/image area ratio");
  p->add_option("--head-threshold", pipe.head_threshold, "Samples needed for a head category");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*t) cmd_tokenize(tok, g, out);
    else if (*v) cmd_maskviz(viz, g, out);
    else if (*d) cmd_decode(dec, g, out);
    else if (*e) cmd_eval(ev, g, out);
    else if (*b) cmd_bench(bench, g, out);
    else if (*p) cmd_pipeline(pipe, g, out);
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return 2;
  } catch (const InvariantViolation& ex) {
    err << "internal error: " << ex.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& ex) {
    err << "error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace regrec
