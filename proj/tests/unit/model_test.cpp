#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "mqir/model/matcher.hpp"
#include "mqir/numerics/gradcheck.hpp"
#include "mqir/numerics/ops.hpp"
#include "model_fixtures.hpp"

using namespace mqir;
using namespace mqir::model;
using mqir::testing::ImageData;
using mqir::testing::QueryData;
using mqir::testing::random_images;
using mqir::testing::random_queries;
using mqir::testing::tiny_config;
namespace fs = std::filesystem;

namespace {

std::vector<float> run_image(const Matcher<float>& m, const ImageData& d) {
  return image_embeddings(m, d.view());
}

std::vector<float> run_query(const Matcher<float>& m, const QueryData& q) {
  return query_embeddings(m, q.view());
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  EXPECT_EQ(a.size(), b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

void zero(Matcher<float>& m, const std::string& name) {
  auto& a = m.at(name);
  std::fill(a.values.begin(), a.values.end(), 0.0f);
}

double loss_of(const std::vector<double>& s, std::size_t b) {
  num::Graph<double> g;
  auto t = g.constant({b, b}, s);
  return contrastive_loss(t).values()[0];
}

/// Straight loops over the definition.
double naive_loss(const std::vector<double>& s, std::size_t b) {
  double row = 0.0;
  double col = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double zr = 0.0;
    double zc = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      zr += std::exp(s[i * b + j]);
      zc += std::exp(s[j * b + i]);
    }
    row -= s[i * b + i] - std::log(zr);
    col -= s[i * b + i] - std::log(zc);
  }
  return 0.5 * (row / static_cast<double>(b) + col / static_cast<double>(b));
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration and parameters

TEST(ModelConfig, ValidationNamesTheField) {
  ModelConfig c = tiny_config();
  c.heads = 3;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("heads"), std::string::npos);
  }
  c = tiny_config();
  c.image_layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.query_mode = QueryMode::trace_only;
  EXPECT_NO_THROW(c.validate());
}

TEST(ModelConfig, MapRoundTrip) {
  ModelConfig c = tiny_config();
  c.dropout = 0.3;
  c.query_mode = QueryMode::text_only;
  c.text_position = false;
  c.init = InitScheme::fixed;
  EXPECT_EQ(ModelConfig::from_map(c.to_map()), c);
  auto m = c.to_map();
  m["colour"] = "red";
  EXPECT_THROW(ModelConfig::from_map(m), ConfigError);
  m = c.to_map();
  m.erase("heads");
  EXPECT_THROW(ModelConfig::from_map(m), ConfigError);
  EXPECT_THROW(parse_query_mode("audio"), ConfigError);
}

TEST(Matcher, LayoutFollowsQueryModeAndAblations) {
  auto has_prefix = [](const std::map<std::string, num::Shape>& l, const std::string& p) {
    return std::any_of(l.begin(), l.end(), [&](const auto& kv) { return kv.first.rfind(p, 0) == 0; });
  };
  ModelConfig c = tiny_config();
  auto full = Matcher<float>::layout(c);
  EXPECT_TRUE(has_prefix(full, "tte."));
  EXPECT_TRUE(has_prefix(full, "tbe."));
  EXPECT_TRUE(full.contains("ire.loc.w"));
  EXPECT_EQ(full.at("ire.global.w1"), (num::Shape{6 + 32, 32}));

  c.query_mode = QueryMode::text_only;
  EXPECT_FALSE(has_prefix(Matcher<float>::layout(c), "tbe."));
  c.query_mode = QueryMode::trace_only;
  EXPECT_FALSE(has_prefix(Matcher<float>::layout(c), "tte."));
  c = tiny_config();
  c.text_position = false;
  EXPECT_FALSE(Matcher<float>::layout(c).contains("tte.pos"));
  EXPECT_TRUE(Matcher<float>::layout(c).contains("tbe.pos"));
  c = tiny_config();
  c.image_location = false;
  auto no_loc = Matcher<float>::layout(c);
  EXPECT_FALSE(no_loc.contains("ire.loc.w"));
  EXPECT_EQ(no_loc.at("ire.region.w1"), (num::Shape{6, 32}));
}

TEST(Matcher, InitialisationIsSeededPerTensor) {
  const Matcher<float> a(tiny_config(), 1);
  const Matcher<float> b(tiny_config(), 1);
  const Matcher<float> c(tiny_config(), 2);
  EXPECT_EQ(a.at("tte.table").values, b.at("tte.table").values);
  EXPECT_NE(a.at("tte.table").values, c.at("tte.table").values);
  // A tensor's value does not depend on which other tensors exist.
  ModelConfig text = tiny_config();
  text.query_mode = QueryMode::text_only;
  const Matcher<float> t(text, 1);
  EXPECT_EQ(t.at("query.layer0.attn.q.w").values, a.at("query.layer0.attn.q.w").values);
  for (float v : a.at("ire.b2").values) EXPECT_EQ(v, 0.0f);
  for (float v : a.at("image.layer0.ln1.gain").values) EXPECT_EQ(v, 1.0f);
}

TEST(Matcher, InitialisationSpread) {
  auto rms = [](const std::vector<float>& w) {
    double sq = 0.0;
    for (float v : w) sq += static_cast<double>(v) * v;
    return std::sqrt(sq / static_cast<double>(w.size()));
  };
  ModelConfig c = tiny_config();
  const Matcher<float> scaled(c, 1);
  // Weights by fan-in, tables by width.
  EXPECT_NEAR(rms(scaled.at("image.layer0.ffn.w1").values), 1.0 / std::sqrt(32.0), 0.01);
  EXPECT_NEAR(rms(scaled.at("ire.global.w1").values), 1.0 / std::sqrt(38.0), 0.01);
  EXPECT_NEAR(rms(scaled.at("tte.pos").values), 1.0 / std::sqrt(32.0), 0.02);
  c.init = InitScheme::fixed;
  const Matcher<float> fixed(c, 1);
  EXPECT_NEAR(rms(fixed.at("image.layer0.ffn.w1").values), kInitStddev, 0.002);
  EXPECT_NEAR(rms(fixed.at("tte.table").values), kInitStddev, 0.004);
}

// ---------------------------------------------------------------------------
// Embedders

TEST(ImageRegionEmbedder, ZeroWeightsGiveZeroOutputs) {
  Matcher<float> m(tiny_config(), 3);
  for (const char* n : {"ire.global.w1", "ire.global.b1", "ire.region.w1", "ire.region.b1", "ire.w2", "ire.b2"}) {
    zero(m, n);
  }
  Rng rng(1);
  const ImageData d = random_images(rng, m.config(), 2, 4, 3);
  num::Graph<float> g;
  auto out = embed_image_regions(g, m, d.view());
  EXPECT_EQ(out.shape(), (num::Shape{2, 5, 32}));
  for (float v : out.values()) EXPECT_EQ(v, 0.0f);
}

TEST(ImageRegionEmbedder, GlobalEntryUsesWholeImageGeometry) {
  const Matcher<float> m(tiny_config(), 4);
  Rng rng(2);
  const ImageData d = random_images(rng, m.config(), 2, 4, 4);
  num::Graph<float> g;
  auto out = embed_image_regions(g, m, d.view());
  const std::size_t dm = 32;
  const std::size_t h = 32;
  const std::size_t dg = 6;
  const float whole[5] = {0, 0, 1, 1, 1};
  const auto& lw = m.at("ire.loc.w").values;
  const auto& lb = m.at("ire.loc.b").values;
  const auto& w1 = m.at("ire.global.w1").values;
  const auto& b1 = m.at("ire.global.b1").values;
  const auto& w2 = m.at("ire.w2").values;
  const auto& b2 = m.at("ire.b2").values;
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<double> u(d.global.begin() + b * dg, d.global.begin() + (b + 1) * dg);
    for (std::size_t j = 0; j < dm; ++j) {
      double s = lb[j];
      for (std::size_t k = 0; k < 5; ++k) s += whole[k] * lw[k * dm + j];
      u.push_back(s);
    }
    std::vector<double> hid(h);
    for (std::size_t j = 0; j < h; ++j) {
      double s = b1[j];
      for (std::size_t k = 0; k < u.size(); ++k) s += u[k] * w1[k * h + j];
      hid[j] = std::max(0.0, s);
    }
    for (std::size_t j = 0; j < dm; ++j) {
      double s = b2[j];
      for (std::size_t k = 0; k < h; ++k) s += hid[k] * w2[k * dm + j];
      EXPECT_NEAR(out.values()[(b * 5) * dm + j], s, 1e-6);
    }
  }
}

TEST(ImageRegionEmbedder, GeometryChangesTheEmbedding) {
  const Matcher<float> m(tiny_config(), 5);
  Rng rng(3);
  ImageData d = random_images(rng, m.config(), 1, 2, 2);
  std::copy(d.features.begin(), d.features.begin() + 6, d.features.begin() + 6);
  num::Graph<float> g;
  auto out = embed_image_regions(g, m, d.view());
  double diff = 0.0;
  for (std::size_t j = 0; j < 32; ++j) {
    diff += std::abs(out.values()[32 + j] - out.values()[64 + j]);
  }
  EXPECT_GT(diff, 1e-4);
}

TEST(TextTokenEmbedder, PositionEmbeddingIsAdditive) {
  Matcher<float> m(tiny_config(), 6);
  QueryData q;
  q.batch = 1;
  q.length = 6;
  q.tokens = {7, 3, 3, 3, 3, 7};
  q.token_mask.assign(6, 1);
  num::Graph<float> g;
  auto out = embed_text_tokens(g, m, q.view());
  const auto& pos = m.at("tte.pos").values;
  for (std::size_t j = 0; j < 32; ++j) {
    const double lhs = out.values()[5 * 32 + j] - out.values()[j];
    const double rhs = pos[5 * 32 + j] - pos[j];
    EXPECT_NEAR(lhs, rhs, 1e-6);
  }

  zero(m, "tte.w2");
  zero(m, "tte.b2");
  num::Graph<float> g2;
  auto zeroed = embed_text_tokens(g2, m, q.view());
  for (std::size_t i = 0; i < 6 * 32; ++i) {
    EXPECT_EQ(zeroed.values()[i], pos[i]);
  }
}

TEST(TextTokenEmbedder, OutOfRangeIdsAreRejected) {
  const Matcher<float> m(tiny_config(), 6);
  QueryData q;
  q.batch = 1;
  q.length = 1;
  q.tokens = {20};
  q.token_mask = {1};
  num::Graph<float> g;
  EXPECT_THROW(embed_text_tokens(g, m, q.view()), std::out_of_range);
  q.length = 9;
  q.tokens.assign(9, 2);
  q.token_mask.assign(9, 1);
  EXPECT_THROW(embed_text_tokens(g, m, q.view()), std::invalid_argument);
}

TEST(TraceBoxEmbedder, PositionAdditivityAndBoxSensitivity) {
  Matcher<float> m(tiny_config(), 7);
  QueryData q;
  q.batch = 1;
  q.length = 4;
  q.tokens.assign(4, 2);
  q.token_mask.assign(4, 1);
  q.box_mask.assign(4, 1);
  q.boxes = {0, 0, 1, 1, 1, 0.1f, 0.1f, 0.3f, 0.4f, 0.06f, 0.5f, 0.5f, 0.9f, 0.7f, 0.08f, 0, 0, 1, 1, 1};
  num::Graph<float> g;
  auto out = embed_trace_boxes(g, m, q.view());
  const auto& pos = m.at("tbe.pos").values;
  double box_diff = 0.0;
  for (std::size_t j = 0; j < 32; ++j) {
    EXPECT_NEAR(out.values()[3 * 32 + j] - out.values()[j], pos[3 * 32 + j] - pos[j], 1e-6);
    box_diff += std::abs((out.values()[32 + j] - pos[32 + j]) - (out.values()[64 + j] - pos[64 + j]));
  }
  EXPECT_GT(box_diff, 1e-4);

  for (const char* n : {"tbe.proj.w", "tbe.proj.b", "tbe.w1", "tbe.b1", "tbe.w2", "tbe.b2"}) zero(m, n);
  num::Graph<float> g2;
  auto zeroed = embed_trace_boxes(g2, m, q.view());
  for (std::size_t i = 0; i < 4 * 32; ++i) EXPECT_EQ(zeroed.values()[i], pos[i]);
}

// ---------------------------------------------------------------------------
// Towers

TEST(ImageTower, InvariantToJointRegionPermutation) {
  const Matcher<float> m(tiny_config(), 8);
  Rng rng(4);
  const ImageData d = random_images(rng, m.config(), 3, 4, 3);
  const auto base = run_image(m, d);
  for (int trial = 0; trial < 10; ++trial) {
    ImageData p = d;
    std::vector<std::size_t> perm = {0, 1, 2, 3};
    rng.shuffle(perm);
    for (std::size_t b = 0; b < 3; ++b) {
      for (std::size_t r = 0; r < 4; ++r) {
        const std::size_t s = perm[r];
        std::copy_n(d.features.begin() + (b * 4 + s) * 6, 6, p.features.begin() + (b * 4 + r) * 6);
        std::copy_n(d.geometry.begin() + (b * 4 + s) * 5, 5, p.geometry.begin() + (b * 4 + r) * 5);
        p.mask[b * 4 + r] = d.mask[b * 4 + s];
      }
    }
    EXPECT_LE(max_abs_diff(run_image(m, p), base), 1e-5);
  }
}

TEST(ImageTower, MaskedRegionsDoNotChangeTheOutput) {
  const Matcher<float> m(tiny_config(), 9);
  Rng rng(5);
  // One valid region; the global entry and that region are all that count.
  const ImageData one = random_images(rng, m.config(), 2, 1, 1);
  ImageData padded = random_images(rng, m.config(), 2, 4, 1);
  for (std::size_t b = 0; b < 2; ++b) {
    std::copy_n(one.features.begin() + b * 6, 6, padded.features.begin() + b * 4 * 6);
    std::copy_n(one.geometry.begin() + b * 5, 5, padded.geometry.begin() + b * 4 * 5);
  }
  padded.global = one.global;
  EXPECT_LE(max_abs_diff(run_image(m, padded), run_image(m, one)), 1e-6);
}

TEST(QueryTower, PaddingIsInvisible) {
  const Matcher<float> m(tiny_config(), 10);
  Rng rng(6);
  const QueryData short_q = random_queries(rng, m.config(), 2, 5, 3);
  QueryData long_q = random_queries(rng, m.config(), 2, 8, 3);
  for (std::size_t b = 0; b < 2; ++b) {
    std::copy_n(short_q.tokens.begin() + b * 5, 3, long_q.tokens.begin() + b * 8);
    std::copy_n(short_q.boxes.begin() + b * 25, 15, long_q.boxes.begin() + b * 40);
  }
  EXPECT_LE(max_abs_diff(run_query(m, short_q), run_query(m, long_q)), 1e-6);
}

TEST(QueryTower, TokenOrderMatters) {
  const Matcher<float> m(tiny_config(), 11);
  Rng rng(7);
  QueryData q = random_queries(rng, m.config(), 1, 8, 5);
  q.tokens[0] = 3;
  q.tokens[1] = 9;
  QueryData swapped = q;
  std::swap(swapped.tokens[0], swapped.tokens[1]);
  EXPECT_GT(max_abs_diff(run_query(m, q), run_query(m, swapped)), 1e-3);
}

TEST(QueryTower, TextOnlyIgnoresBoxesAndTraceOnlyIgnoresTokens) {
  ModelConfig c = tiny_config();
  c.query_mode = QueryMode::text_only;
  const Matcher<float> text(c, 12);
  Rng rng(8);
  QueryData q = random_queries(rng, c, 2, 8, 6);
  QueryData other = q;
  for (float& v : other.boxes) v = 0.5f;
  EXPECT_EQ(run_query(text, q), run_query(text, other));
  QueryData no_boxes = q;
  no_boxes.boxes.clear();
  no_boxes.box_mask.clear();
  EXPECT_EQ(run_query(text, no_boxes), run_query(text, q));

  c.query_mode = QueryMode::trace_only;
  const Matcher<float> trace(c, 12);
  other = q;
  for (auto& t : other.tokens) t = 2;
  EXPECT_EQ(run_query(trace, q), run_query(trace, other));

  const Matcher<float> both(tiny_config(), 12);
  EXPECT_THROW(run_query(both, no_boxes), std::invalid_argument);
}

TEST(QueryTower, WholeCanvasBoxesGiveAValidQuery) {
  const Matcher<float> m(tiny_config(), 13);
  Rng rng(9);
  QueryData q = random_queries(rng, m.config(), 1, 8, 4);
  for (std::size_t i = 0; i < 8; ++i) {
    const float whole[5] = {0, 0, 1, 1, 1};
    std::copy_n(whole, 5, q.boxes.begin() + i * 5);
  }
  const auto e = run_query(m, q);
  ASSERT_EQ(e.size(), 16u);
  for (float v : e) EXPECT_TRUE(std::isfinite(v));
}

TEST(Towers, DropoutOnlyActsInTraining) {
  ModelConfig c = tiny_config();
  c.dropout = 0.5;
  const Matcher<float> m(c, 14);
  Rng rng(10);
  const ImageData d = random_images(rng, c, 2, 4, 4);
  EXPECT_EQ(run_image(m, d), run_image(m, d));
  num::Graph<float> train(num::Mode::training, 1);
  auto t = encode_image(train, m, d.view());
  const std::vector<float> trained(t.values().begin(), t.values().end());
  EXPECT_GT(max_abs_diff(trained, run_image(m, d)), 1e-4);
}

// ---------------------------------------------------------------------------
// Fuser and loss

TEST(Similarity, DotProductExamples) {
  EXPECT_DOUBLE_EQ(similarity(std::vector<float>{1, 2, 3}, std::vector<float>{4, 5, 6}), 32.0);
  EXPECT_DOUBLE_EQ(similarity(std::vector<float>{0.5f, 0.5f, 0.5f, 0.5f},
                              std::vector<float>{0.5f, 0.5f, 0.5f, 0.5f}),
                   1.0);
  EXPECT_DOUBLE_EQ(similarity(std::vector<float>{1, 0}, std::vector<float>{0, 1}), 0.0);
  EXPECT_THROW(similarity(std::vector<float>{1}, std::vector<float>{1, 2}), std::invalid_argument);
}

TEST(ContrastiveLoss, HandValues) {
  EXPECT_EQ(loss_of({3.7}, 1), 0.0);
  EXPECT_NEAR(loss_of(std::vector<double>(16, 0.25), 4), std::log(4.0), 1e-9);
  EXPECT_NEAR(loss_of({2, 0, 0, 2}, 2), std::log(1.0 + std::exp(-2.0)), 1e-9);
  num::Graph<double> g;
  EXPECT_THROW(contrastive_loss(g.constant({2, 3}, std::vector<double>(6, 0.0))), num::ShapeError);
}

TEST(ContrastiveLoss, MatchesNaiveLoopsAndIsSymmetric) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + rng.below(6);
    std::vector<double> s(b * b);
    for (double& v : s) v = rng.uniform(-4.0, 4.0);
    std::vector<double> t(b * b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) t[j * b + i] = s[i * b + j];
    const double l = loss_of(s, b);
    EXPECT_NEAR(l, naive_loss(s, b), 1e-12);
    EXPECT_NEAR(l, loss_of(t, b), 1e-12);
    EXPECT_GE(l, 0.0);
  }
}

TEST(ContrastiveLoss, DiagonalDominanceDrivesLossToZero) {
  double previous = std::log(3.0);
  for (double margin : {1.0, 4.0, 16.0}) {
    std::vector<double> s(9, 0.0);
    for (std::size_t i = 0; i < 3; ++i) s[i * 3 + i] = margin;
    const double l = loss_of(s, 3);
    EXPECT_LT(l, previous);
    previous = l;
  }
  EXPECT_LT(previous, 1e-6);
}

TEST(ContrastiveLoss, GradientMatchesFiniteDifferences) {
  num::Array<double> s({3, 3}, {0.1, -0.3, 0.7, 1.2, 0.0, -0.5, 0.3, 0.9, -1.1}, true);
  auto report = num::finite_difference_check(
      [&](num::Graph<double>& g) { return contrastive_loss(g.parameter(s)); }, {{"scores", &s}}, 1e-5, 1e-7);
  EXPECT_TRUE(report.passed) << report.max_relative_error;
}

TEST(ScoreMatrix, RowsAreQueriesColumnsAreImages) {
  num::Graph<double> g;
  auto q = g.constant({2, 2}, {1, 0, 0, 2});
  auto x = g.constant({3, 2}, {1, 1, 2, 0, 0, 3});
  auto s = score_matrix(q, x);
  EXPECT_EQ(s.shape(), (num::Shape{2, 3}));
  EXPECT_EQ(std::vector<double>(s.values().begin(), s.values().end()),
            (std::vector<double>{1, 2, 0, 2, 0, 6}));
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RoundTripAndIdentity) {
  const fs::path dir = fs::temp_directory_path() / "mqir-model-ckpt";
  fs::create_directories(dir);
  ModelConfig c = tiny_config();
  c.dropout = 0.3;
  const Matcher<float> m(c, 15);
  save_checkpoint(dir / "a.mqck", m);
  const Matcher<float> back = load_checkpoint(dir / "a.mqck");
  EXPECT_EQ(back.config(), m.config());
  for (const auto& [name, a] : m.parameters()) {
    EXPECT_EQ(back.at(name).values, a.values) << name;
  }
  save_checkpoint(dir / "b.mqck", back);
  EXPECT_EQ(checkpoint_id(dir / "a.mqck"), checkpoint_id(dir / "b.mqck"));
  const Matcher<float> other(c, 16);
  save_checkpoint(dir / "c.mqck", other);
  EXPECT_NE(checkpoint_id(dir / "a.mqck"), checkpoint_id(dir / "c.mqck"));
  fs::remove_all(dir);
}

TEST(Checkpoint, ShapeMismatchNamesTheTensor) {
  std::map<std::string, num::Array<float>> params = Matcher<float>(tiny_config(), 1).parameters();
  params["tte.table"] = num::Array<float>::zeros({21, 32});
  try {
    Matcher<float>::from_parameters(tiny_config(), params);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("tte.table"), std::string::npos);
  }
  const fs::path p = fs::temp_directory_path() / "mqir-model-bad.mqck";
  {
    std::ofstream out(p, std::ios::binary);
    out << "MQIR";
  }
  EXPECT_THROW(load_checkpoint(p), CheckpointError);
  fs::remove(p);
}

TEST(Checkpoint, PrecisionConversionPreservesOutputs) {
  const Matcher<float> m(tiny_config(), 17);
  const Matcher<double> d = convert<double>(m);
  Rng rng(12);
  const ImageData img = random_images(rng, m.config(), 2, 4, 2);
  num::Graph<double> g;
  auto e = encode_image(g, d, img.view());
  const auto f = run_image(m, img);
  for (std::size_t i = 0; i < f.size(); ++i) {
    EXPECT_NEAR(e.values()[i], f[i], 1e-5);
  }
}
