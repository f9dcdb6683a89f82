// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "oracles.hpp"
#include "regrec/cli.hpp"
#include "regrec/decoder.hpp"
#include "regrec/error.hpp"
#include "regrec/harness.hpp"
#include "regrec/metrics.hpp"
#include "regrec/prompt.hpp"

using namespace regrec;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

Outcome fail(std::string why) { return {false, std::move(why)}; }

Vocabulary toy_vocab() {
  return Vocabulary({"<pad>", "<start>", "<sep>", "<end>", "red", "green", "blue", "circle", "square", "star", "big",
                     "small"});
}

DecoderShape toy_shape() {
  DecoderShape s;
  s.dim = 16;
  s.heads = 2;
  s.layers = 2;
  s.max_positions = 256;
  s.enc_dim = 8;
  return s;
}

RowMatrixXf random_rows(Xoshiro256& rng, int rows, int cols, double a = 2.0) {
  RowMatrixXf m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.symmetric(a);
  return m;
}

DecodeInput random_input(Xoshiro256& rng, int k) {
  DecodeInput in;
  in.image_tokens = random_rows(rng, 2 + static_cast<int>(rng.below(4)), 8);
  in.text = {1};
  for (int i = 0; i < k; ++i) in.mask_tokens.push_back(random_rows(rng, 1 + static_cast<int>(rng.below(5)), 8));
  return in;
}

bool rows_equal(const RowMatrixXf& a, const RowMatrixXf& b, int row) {
  return std::memcmp(a.row(row).data(), b.row(row).data(), sizeof(float) * static_cast<std::size_t>(a.cols())) == 0;
}

bool same_object(const DecodeResult& a, const DecodeResult& b, std::size_t i) {
  return a.labels[i] == b.labels[i] && a.token_ids[i] == b.token_ids[i] &&
         a.stepwise_logprobs[i] == b.stepwise_logprobs[i] && a.per_object_logprob[i] == b.per_object_logprob[i];
}

std::vector<std::vector<int>> random_gold(Xoshiro256& rng, int k, int vocab) {
  std::vector<std::vector<int>> gold;
  for (int i = 0; i < k; ++i) {
    std::vector<int> chunk;
    const int n = 1 + static_cast<int>(rng.below(3));
    for (int t = 0; t < n; ++t) chunk.push_back(4 + static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab - 4))));
    chunk.push_back(3);
    gold.push_back(chunk);
  }
  return gold;
}

// ---------------------------------------------------------------- 1

Outcome cascade_oracle() {
  Xoshiro256 rng(1001);
  for (int i = 0; i < 1000; ++i) {
    const auto layout = oracle::random_layout(rng, 1, 8, 6);
    for (const auto& config : oracle::all_configs()) {
      if (!(build_cascade_mask(layout, config).bits() == oracle::cascade(layout, config)).all()) {
        return fail("mismatch on " + layout.to_string());
      }
    }
  }
  return {true, "1000 layouts x 4 configs"};
}

// ---------------------------------------------------------------- 2

Outcome isolation_bit_identity() {
  Xoshiro256 rng(1002);
  for (int inst = 0; inst < 200; ++inst) {
    const int k = 2 + static_cast<int>(rng.below(4));
    const auto params = DecoderParams::random(toy_vocab(), toy_shape(), 5000 + static_cast<std::uint64_t>(inst));
    const auto input = random_input(rng, k);
    const auto gold = random_gold(rng, k, params.vocab.size());
    const auto a = assemble_sequence(input, params.vocab, gold);
    const auto full = forward(a.seq, build_cascade_mask(a.layout, CascadeConfig::full()), params, a.layout);
    const auto roles = a.layout.roles();
    for (int i = 0; i < k; ++i) {
      const auto iso = isolate_single_mask(a.seq, a.layout, i, params.vocab.pad_id());
      const auto got = forward(iso.seq, iso.mask, params, a.layout);
      for (int t = 0; t < a.layout.size(); ++t) {
        const auto& r = roles[static_cast<std::size_t>(t)];
        if (r.kind == SegmentKind::separator || (r.owner >= 0 && r.owner != i)) continue;
        if (!rows_equal(full, got, t)) return fail("isolated logits differ, instance " + std::to_string(inst));
      }
    }

    // Perturb everything owned by j, then check object i.
    const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    const int j = (i + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(k - 1)))) % k;
    auto pert_input = input;
    pert_input.mask_tokens[static_cast<std::size_t>(j)] =
        random_rows(rng, static_cast<int>(input.mask_tokens[static_cast<std::size_t>(j)].rows()), 8, 40.0);
    auto pert_gold = gold;
    for (std::size_t t = 0; t + 1 < pert_gold[static_cast<std::size_t>(j)].size(); ++t) {
      pert_gold[static_cast<std::size_t>(j)][t] = 4 + static_cast<int>(rng.below(8));
    }
    const auto b = assemble_sequence(pert_input, params.vocab, pert_gold);
    const auto pert = forward(b.seq, build_cascade_mask(b.layout, CascadeConfig::full()), params, b.layout);
    for (int t = 0; t < a.layout.size(); ++t) {
      const auto& r = roles[static_cast<std::size_t>(t)];
      if (r.kind == SegmentKind::separator || (r.owner >= 0 && r.owner != i)) continue;
      if (!rows_equal(full, pert, t)) return fail("perturbed logits differ, instance " + std::to_string(inst));
    }
    const auto da = decode_objects(input, params), db = decode_objects(pert_input, params);
    if (!same_object(da, db, static_cast<std::size_t>(i))) return fail("decode changed, instance " + std::to_string(inst));
  }
  return {true, "200 instances, K in [2,5]"};
}

// ---------------------------------------------------------------- 3

Outcome factorization() {
  Xoshiro256 rng(1003);
  for (int inst = 0; inst < 50; ++inst) {
    const int k = 2 + static_cast<int>(rng.below(4));
    const auto params = DecoderParams::random(toy_vocab(), toy_shape(), 7000 + static_cast<std::uint64_t>(inst));
    const auto input = random_input(rng, k);
    const auto joint = decode_objects(input, params);
    double sum = 0;
    for (int i = 0; i < k; ++i) {
      DecodeOptions only;
      only.only_object = i;
      sum += decode_objects(input, params, only).per_object_logprob[static_cast<std::size_t>(i)];
    }
    if (joint_logprob(joint) != sum) return fail("joint != sum of isolated, instance " + std::to_string(inst));
  }
  // Plain causal: object 0's output sees mask(1), so perturbing mask(1) must show.
  const auto params = DecoderParams::random(toy_vocab(), toy_shape(), 77);
  const auto input = random_input(rng, 2);
  auto pert = input;
  pert.mask_tokens[1] = random_rows(rng, static_cast<int>(input.mask_tokens[1].rows()), 8, 40.0);
  DecodeOptions causal;
  causal.config = CascadeConfig::causal();
  if (same_object(decode_objects(input, params, causal), decode_objects(pert, params, causal), 0)) {
    return fail("causal counterexample did not break invariance");
  }
  return {true, "50 instances exact; causal counterexample breaks invariance"};
}

// ---------------------------------------------------------------- 4

Outcome incremental_equivalence() {
  Xoshiro256 rng(1004);
  for (int s = 0; s < 500; ++s) {
    auto layout = oracle::random_layout(rng, 1, 8, 6);
    const auto& config = oracle::all_configs()[rng.below(4)];
    auto mask = build_cascade_mask(layout, config);
    const int steps = 1 + static_cast<int>(rng.below(16));
    for (int t = 0; t < steps; ++t) {
      const int owner = static_cast<int>(rng.below(static_cast<std::uint64_t>(layout.num_objects())));
      std::tie(mask, layout) = extend_for_decode(mask, layout, owner, config);
    }
    if (!(mask == build_cascade_mask(layout, config))) return fail("chain differs: " + layout.to_string());
  }
  return {true, "500 schedules"};
}

// ---------------------------------------------------------------- 5

Outcome mask2token_counts() {
  Xoshiro256 rng(1005);
  const auto enc = EncoderParams::random(28, 16, 1, 4, 1);
  for (int i = 0; i < 500; ++i) {
    const int w = 8 + static_cast<int>(rng.below(120)), h = 8 + static_cast<int>(rng.below(120));
    const RasterImage img(w, h, 1);
    const BinaryMask m = oracle::random_mask(rng, w, h);
    const auto window = context_crop_window(tight_bbox(m), kDefaultContextScale, w, h);
    const auto want = oracle::active_cells(m, window, 16, 16).size();
    if (static_cast<std::size_t>(mask2token(img, m, enc).count()) != want) return fail("count mismatch, mask " + std::to_string(i));
  }
  const RasterImage sq(64, 64, 1);
  if (mask2token(sq, BinaryMask(64, 64, std::vector<std::uint8_t>(64 * 64, 1)), enc, 1.0).count() != 256) {
    return fail("full mask != 256");
  }
  std::vector<std::uint8_t> point(64 * 64, 0);
  point[37 * 64 + 11] = 1;
  if (mask2token(sq, BinaryMask(64, 64, point), enc).count() != 1) return fail("point mask != 1");
  return {true, "500 masks; full = 256; point = 1"};
}

// ---------------------------------------------------------------- 6

Outcome scaling() {
  const auto masks = synthesize_masks(32, 256, 256, 27, 16, 1006);
  BenchOptions o;
  o.repetitions = 5;
  const auto r = run_scaling_bench({1, 2, 4, 8, 16, 32}, masks, BenchProfile::decoder_dominated(), o);
  std::ostringstream d;
  d << "growth " << r.growth_factor << ", comparator " << r.comparator_growth_factor;
  if (r.rows.back().mask_tokens != 32 * 27) return fail("masks are not 27 tokens each");
  if (!(r.growth_factor < 4.0)) return fail(d.str());
  if (r.comparator_growth_factor != 32.0) return fail(d.str());
  return {true, d.str()};
}

// ---------------------------------------------------------------- 7

Outcome metrics() {
  if (semantic_iou("fire truck", "truck") != 50.0) return fail("fire truck / truck != 50");
  Xoshiro256 rng(1007);
  auto label = [&rng] {
    std::string s = oracle::random_word(rng, 5);
    const int extra = static_cast<int>(rng.below(3));
    for (int i = 0; i < extra; ++i) s += std::string(rng.below(2) ? " " : "-") + oracle::random_word(rng, 5);
    return s;
  };
  for (int i = 0; i < 1000; ++i) {
    const std::string a = label(), b = label();
    if (semantic_iou(a, b) != semantic_iou(b, a)) return fail("asymmetric: " + a + " | " + b);
    if (semantic_iou(a, a) != 100.0) return fail("identity: " + a);
  }
  const HashEmbeddingProvider provider;
  for (int v = 0; v < 100; ++v) {
    std::vector<std::string> vocab;
    const int n = 1 + static_cast<int>(rng.below(10));
    for (int i = 0; i < n; ++i) vocab.push_back(label());
    const std::string pred = label();
    const Eigen::VectorXd p = oracle::hash_embed(normalize_text(pred));
    int best = 0;
    double best_cos = -2;
    for (int i = 0; i < n; ++i) {
      const double c = p.dot(oracle::hash_embed(normalize_text(vocab[static_cast<std::size_t>(i)])));
      if (c > best_cos) best_cos = c, best = i;
    }
    if (open_vocab_classify(pred, vocab, provider).index != best) return fail("argmax mismatch for " + pred);
  }
  return {true, "1000 pairs, 100 vocabularies"};
}

// ---------------------------------------------------------------- 8

Outcome geometry() {
  Xoshiro256 rng(1008);
  for (int i = 0; i < 200; ++i) {
    const BinaryMask m = oracle::random_mask(rng, 40, 40);
    const BBox b = tight_bbox(m);
    if (rotated_bbox_mask(m).count() > static_cast<std::size_t>(b.width() * b.height())) {
      return fail("rotated bbox larger than axis-aligned, mask " + std::to_string(i));
    }
  }
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    std::vector<Eigen::Vector2d> pts;
    const int n = 3 + static_cast<int>(rng.below(40));
    for (int j = 0; j < n; ++j) pts.emplace_back(60.0 * rng.uniform01(), 60.0 * rng.uniform01());
    auto hull = convex_hull(pts);
    if (hull.size() > 20) hull.resize(20);
    hull = convex_hull(hull);
    worst = std::max(worst, std::abs(min_area_rect(hull).area() - oracle::min_rect_area_sweep(hull, 20000)));
  }
  if (worst > 1.0) return fail("calipers vs sweep off by " + std::to_string(worst));
  for (int i = 0; i < 500; ++i) {
    const int w = 4 + static_cast<int>(rng.below(60)), h = 4 + static_cast<int>(rng.below(60));
    const BinaryMask m = oracle::random_mask(rng, w, h);
    const auto window = context_crop_window(tight_bbox(m), kDefaultContextScale, w, h);
    const GridMask g = downsample_to_grid(m, window, 16, 16);
    const auto want = oracle::active_cells(m, window, 16, 16);
    std::set<std::pair<int, int>> got;
    for (int r = 0; r < 16; ++r) {
      for (int c = 0; c < 16; ++c) {
        if (g.at(r, c)) got.insert({r, c});
      }
    }
    if (got != want) return fail("grid mismatch, mask " + std::to_string(i));
  }
  std::ostringstream d;
  d << "200 rotated, 100 hulls (max err " << worst << "), 500 grids";
  return {true, d.str()};
}

// ---------------------------------------------------------------- 9

Outcome fig4_fixture() {
  const auto params = DecoderParams::load(REGREC_TEST_DATA "/fig4_decoder.dec", REGREC_TEST_DATA "/fig4_vocab.json");
  std::ifstream f(REGREC_TEST_DATA "/fig4_instance.json");
  const auto inst = nlohmann::json::parse(f);
  auto rows = [](const nlohmann::json& j) {
    RowMatrixXf m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
    for (std::size_t r = 0; r < j.size(); ++r) {
      for (std::size_t c = 0; c < j[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<float>();
    }
    return m;
  };
  DecodeInput in;
  in.image_tokens = rows(inst["image_tokens"]);
  in.text = params.vocab.tokenize(inst["text"].get<std::string>());
  for (const auto& m : inst["masks"]) in.mask_tokens.push_back(rows(m));
  const auto result = decode_objects(in, params);
  const auto gold = inst["gold"].get<std::vector<std::string>>();
  if (result.labels != gold || result.forward_passes == 0) return fail("decoded " + nlohmann::json(result.labels).dump());
  return {true, nlohmann::json(result.labels).dump() + " in one multi-mask pass"};
}

// ---------------------------------------------------------------- 10

std::string run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) throw std::runtime_error("cli exit " + std::to_string(code) + ": " + err.str());
  return out.str();
}

Outcome round_trips() {
  Xoshiro256 rng(1010);
  for (int i = 0; i < 1000; ++i) {
    const BinaryMask m = oracle::random_mask(rng, 1 + static_cast<int>(rng.below(50)), 1 + static_cast<int>(rng.below(50)));
    const std::string rle = mask_to_rle(m);
    const BinaryMask back = mask_from_rle(rle);
    if (!(back == m) || mask_to_rle(back) != rle) return fail("RLE round trip, case " + std::to_string(i));
  }
  for (int i = 0; i < 1000; ++i) {
    const int ch = rng.below(2) ? 3 : 1;
    RasterImage img(1 + static_cast<int>(rng.below(40)), 1 + static_cast<int>(rng.below(40)), ch);
    for (auto& v : img.data()) v = static_cast<float>(rng.below(256));
    const std::string bytes = encode_pnm(img);
    const RasterImage back = parse_pnm(bytes);
    if (back.width() != img.width() || back.height() != img.height() || back.data() != img.data() ||
        encode_pnm(back) != bytes) {
      return fail("PNM round trip, case " + std::to_string(i));
    }
  }

  const auto dir = std::filesystem::temp_directory_path() / "regrec_acceptance";
  std::filesystem::create_directories(dir);
  RasterImage img(48, 40, 1);
  for (auto& v : img.data()) v = static_cast<float>(rng.below(256));
  write_pgm((dir / "img.pgm").string(), img);
  std::ofstream((dir / "masks.jsonl").string())
      << format_mask_record({oracle::random_mask(rng, 48, 40), "img", "a"}) << "\n"
      << format_mask_record({oracle::random_mask(rng, 48, 40), "img", "b"}) << "\n";
  const std::string image = (dir / "img.pgm").string(), masks = (dir / "masks.jsonl").string();
  const std::vector<std::vector<std::string>> invocations{
      {"--seed", "4", "tokenize", "--image", image, "--masks", masks},
      {"--seed", "4", "decode", "--vocab", REGREC_TEST_DATA "/fig4_vocab.json", "--image", image, "--masks", masks},
      {"--seed", "4", "bench", "--no-timing", "--k", "1,2,4"},
      {"maskviz", "--preset", "fig4"},
      {"--seed", "4", "pipeline", "--records", masks, "--head-threshold", "1"}};
  for (const auto& args : invocations) {
    if (run(args) != run(args)) return fail("CLI output differs across reruns: " + args[2]);
  }
  std::filesystem::remove_all(dir);
  return {true, "1000 RLE, 1000 PNM, 5 CLI reruns"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    std::string name;
    std::function<Outcome()> check;
    double limit_s;  // 0: no limit
  };
  const std::vector<Criterion> criteria{
      {1, "cascade mask equals pairwise oracle", cascade_oracle, 10},
      {2, "isolation and perturbation bit-identity", isolation_bit_identity, 30},
      {3, "joint log-prob factorizes; causal leaks", factorization, 0},
      {4, "incremental extension equals rebuild", incremental_equivalence, 0},
      {5, "mask token counts equal cell oracle", mask2token_counts, 0},
      {6, "instance scaling growth < 4, comparator 32", scaling, 60},
      {7, "metrics fuzz", metrics, 0},
      {8, "geometry oracles", geometry, 0},
      {9, "fig4 fixture decodes both labels", fig4_fixture, 0},
      {10, "I/O round trips and CLI determinism", round_trips, 0},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.pass && c.limit_s > 0 && secs >= c.limit_s) o = fail("took " + std::to_string(secs) + " s");
    if (!o.pass) ++failures;
    std::printf("%s %2d %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str(), secs);
  }
  return failures == 0 ? 0 : 1;
}
