#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "deltar/nn/checkpoint.hpp"
#include "deltar/nn/model.hpp"
#include "fd_check.hpp"

using namespace deltar;
using namespace deltar::nn;
using testutil::check_grads;
using testutil::project;
using testutil::rand_tensor;

namespace {

FusionConfig small_cfg() {
  FusionConfig cfg;
  cfg.strides = {2, 4};
  cfg.dims = {8, 12};
  cfg.heads = 2;
  cfg.n_bins = 6;
  cfg.n_samples = 4;
  cfg.patch_size_coarse = 1;
  cfg.zone_rows = 2;
  cfg.zone_cols = 2;
  return cfg;
}

ZoneGrid small_grid() {
  ZoneGrid g(2, 2);
  const double means[] = {0.8, 1.6, 2.4, 3.2};
  for (int i = 0; i < 4; ++i) {
    g.readings[static_cast<std::size_t>(i)].mean = means[i];
    g.readings[static_cast<std::size_t>(i)].variance = 0.01 * (i + 1);
    g.readings[static_cast<std::size_t>(i)].valid = true;
  }
  return g;
}

std::vector<Rect> quadrant_footprints(int w, int h) {
  const double mx = w / 2.0, my = h / 2.0;
  return {Rect(0, 0, mx, my), Rect(mx, 0, w, my), Rect(0, my, mx, h), Rect(mx, my, w, h)};
}

Tensor test_image(std::mt19937& rng, int h, int w, bool requires_grad = false) {
  return rand_tensor(rng, {3, h, w}, 0.0, 1.0, requires_grad);
}

Tensor named_param(DeltarModel& m, const std::string& name) {
  for (auto& [n, t] : m.params().items())
    if (n == name) return t;
  throw std::runtime_error("missing param " + name);
}

}  // namespace

TEST_CASE("bin centers and mixing") {
  SUBCASE("published width example") {
    Tensor w = Tensor::from_vector({3}, {0.2, 0.3, 0.5});
    Tensor c = bin_centers(w, 1.0, 3.0);
    CHECK(c.data()[0] == doctest::Approx(1.2).epsilon(1e-12));
    CHECK(c.data()[1] == doctest::Approx(1.7).epsilon(1e-12));
    CHECK(c.data()[2] == doctest::Approx(2.5).epsilon(1e-12));

    BinPrediction bp;
    bp.widths = w;
    bp.coefficients = Tensor::from_vector({3, 1, 1}, {0.1, 0.2, 0.7});
    Tensor d = bins_to_depth(bp, 1.0, 3.0);
    CHECK(d.shape() == std::vector<int>{1, 1, 1});
    CHECK(d.item() == doctest::Approx(2.21).epsilon(1e-12));
  }
  SUBCASE("uniform widths and coefficients land mid-range") {
    Tensor w = Tensor::full({4}, 0.25);
    BinPrediction bp;
    bp.widths = w;
    bp.coefficients = Tensor::full({4, 2, 2}, 0.25);
    Tensor d = bins_to_depth(bp, 0.02, 4.0);
    for (Eigen::Index i = 0; i < 4; ++i)
      CHECK(d.data()[i] == doctest::Approx(0.5 * (0.02 + 4.0)).epsilon(1e-12));
  }
  SUBCASE("one-hot coefficients pick a single center") {
    Tensor w = Tensor::from_vector({3}, {0.5, 0.25, 0.25});
    Tensor c = bin_centers(w, 0.0, 1.0);
    BinPrediction bp;
    bp.widths = w;
    bp.coefficients = Tensor::from_vector({3, 1, 1}, {0.0, 0.0, 1.0});
    CHECK(bins_to_depth(bp, 0.0, 1.0).item() == doctest::Approx(c.data()[2]).epsilon(1e-12));
  }
  SUBCASE("random normalized inputs stay ordered and in range") {
    std::mt19937 rng(31);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> wv(8);
      double s = 0;
      for (auto& x : wv) {
        x = u(rng);
        s += x;
      }
      for (auto& x : wv) x /= s;
      Tensor w = Tensor::from_vector({8}, wv);
      Tensor c = bin_centers(w, 0.02, 4.0);
      for (int i = 0; i < 8; ++i) {
        CHECK(c.data()[i] > 0.02);
        CHECK(c.data()[i] < 4.0);
        if (i) CHECK(c.data()[i] > c.data()[i - 1]);
      }
    }
  }
  SUBCASE("gradients flow through the head math") {
    std::mt19937 rng(32);
    Tensor w = rand_tensor(rng, {4}, 0.1, 0.5);
    Tensor cf = rand_tensor(rng, {4, 2, 3}, 0.0, 1.0);
    Tensor dir = rand_tensor(rng, {1, 2, 3}, -1, 1, false);
    check_grads(
        [&] {
          BinPrediction bp{w, cf};
          return project(bins_to_depth(bp, 0.5, 2.5), dir);
        },
        {w, cf});
  }
}

TEST_CASE("token and correspondence construction") {
  FusionConfig cfg = small_cfg();
  ZoneGrid g = small_grid();
  g.readings[2].valid = false;

  auto tokens = make_tokens(g, cfg);
  REQUIRE(tokens.size() == 3);
  CHECK(tokens[0].row == 0);
  CHECK(tokens[0].col == 0);
  CHECK(tokens[2].row == 1);
  CHECK(tokens[2].col == 1);
  for (const auto& t : tokens) {
    REQUIRE(static_cast<int>(t.samples.size()) == cfg.n_samples);
    CHECK(std::is_sorted(t.samples.begin(), t.samples.end()));
    for (double s : t.samples) {
      CHECK(s >= cfg.d_min);
      CHECK(s <= cfg.d_max);
    }
  }
  CHECK(tokens[1].mean == doctest::Approx(1.6).epsilon(1e-15));
  CHECK(tokens[1].variance == doctest::Approx(0.02).epsilon(1e-15));

  SUBCASE("sampling toggle switches between quantiles and even spacing") {
    FusionConfig uni = cfg;
    uni.toggles.prob_sampling = false;
    auto tu = make_tokens(g, uni);
    CHECK(tu[0].samples != tokens[0].samples);
    const double step0 = tu[0].samples[1] - tu[0].samples[0];
    for (std::size_t i = 0; i + 1 < tu[0].samples.size(); ++i)
      CHECK(tu[0].samples[i + 1] - tu[0].samples[i] == doctest::Approx(step0).epsilon(1e-9));
  }
  SUBCASE("correspondences divide the footprints by each level stride") {
    std::vector<Rect> fp = {Rect(0, 0, 8, 8), Rect(8, 0, 16, 8), Rect(8, 8, 16, 16)};
    auto corrs = make_correspondences(tokens, fp, cfg);
    REQUIRE(corrs.size() == 3);
    CHECK(corrs[1].row == 0);
    CHECK(corrs[1].col == 1);
    REQUIRE(corrs[1].rect_at_level.size() == 2);
    CHECK(corrs[1].rect_at_level[0].x_min == doctest::Approx(4.0));
    CHECK(corrs[1].rect_at_level[0].x_max == doctest::Approx(8.0));
    CHECK(corrs[1].rect_at_level[1].x_min == doctest::Approx(2.0));
    CHECK(corrs[1].rect_at_level[1].y_max == doctest::Approx(2.0));
    CHECK_THROWS_AS(make_correspondences(tokens, {Rect(0, 0, 1, 1)}, cfg), InvalidArgument);
  }
}

TEST_CASE("zone statistic planes") {
  FusionConfig cfg = small_cfg();
  std::vector<DistributionToken> tokens(2);
  tokens[0].row = 0;
  tokens[0].col = 0;
  tokens[0].mean = 1.5;
  tokens[0].variance = 0.09;
  tokens[1].row = 0;
  tokens[1].col = 1;
  tokens[1].mean = 2.5;
  tokens[1].variance = 0.01;
  std::vector<Rect> fp = {Rect(0, 0, 8, 8), Rect(4, 0, 12, 8)};
  auto corrs = make_correspondences(tokens, fp, cfg);

  Tensor planes = paint_zone_planes(tokens, corrs, cfg, 16, 16);
  REQUIRE(planes.shape() == std::vector<int>{2, 16, 16});
  auto mean_at = [&](int y, int x) { return planes.data()[y * 16 + x]; };
  auto var_at = [&](int y, int x) { return planes.data()[256 + y * 16 + x]; };
  CHECK(mean_at(0, 2) == doctest::Approx(1.5).epsilon(1e-12));   // first zone only
  CHECK(mean_at(0, 5) == doctest::Approx(2.0).epsilon(1e-12));   // overlap averages
  CHECK(mean_at(0, 10) == doctest::Approx(2.5).epsilon(1e-12));  // second zone only
  CHECK(mean_at(0, 14) == 0.0);                                  // uncovered
  CHECK(mean_at(12, 3) == 0.0);                                  // below both zones
  CHECK(var_at(0, 2) == doctest::Approx(0.09).epsilon(1e-12));
  CHECK(var_at(0, 5) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(var_at(0, 14) == 0.0);
}

TEST_CASE("config validation and serialization") {
  SUBCASE("round trip preserves every field") {
    FusionConfig cfg = small_cfg();
    cfg.fusion_mode = FusionMode::feature_concat;
    cfg.token_input = TokenInput::mean_var;
    cfg.input_channels = 5;
    cfg.toggles.img_self_attn = false;
    cfg.toggles.prob_sampling = false;
    FusionConfig back = fusion_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
  }
  SUBCASE("invalid configurations are rejected") {
    FusionConfig cfg = small_cfg();
    cfg.strides = {3, 6};
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = small_cfg();
    cfg.strides = {4, 2};
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = small_cfg();
    cfg.dims = {8};
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = small_cfg();
    cfg.dims = {6, 12};
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = small_cfg();
    cfg.heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = small_cfg();
    cfg.input_channels = 4;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = small_cfg();
    cfg.d_min = 2.0;
    cfg.d_max = 2.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  }
  SUBCASE("malformed json reports a data error") {
    json j = to_json(small_cfg());
    j["fusion_mode"] = "pyramid";
    CHECK_THROWS_AS(fusion_config_from_json(j), DataError);
    j = to_json(small_cfg());
    j["token_input"] = "raw";
    CHECK_THROWS_AS(fusion_config_from_json(j), DataError);
    j = to_json(small_cfg());
    j["strides"] = "coarse";
    CHECK_THROWS_AS(fusion_config_from_json(j), DataError);
  }
}

TEST_CASE("forward pass shapes and output invariants") {
  std::mt19937 rng(33);
  FusionConfig cfg = small_cfg();
  DeltarModel model(cfg, 7);
  Tensor img = test_image(rng, 16, 16);
  auto tokens = make_tokens(small_grid(), cfg);
  auto corrs = make_correspondences(tokens, quadrant_footprints(16, 16), cfg);

  ModelOutput out = model.forward(img, tokens, corrs);
  REQUIRE(out.depth.shape() == std::vector<int>{1, 16, 16});
  REQUIRE(out.bins.widths.shape() == std::vector<int>{6});
  REQUIRE(out.bins.coefficients.shape() == std::vector<int>{6, 8, 8});
  CHECK(out.pre_self_attn.empty());

  CHECK(out.bins.widths.data().sum() == doctest::Approx(1.0).epsilon(1e-12));
  for (Eigen::Index i = 0; i < 6; ++i) CHECK(out.bins.widths.data()[i] > 0.0);
  for (int cell = 0; cell < 64; ++cell) {
    double s = 0;
    for (int b = 0; b < 6; ++b) s += out.bins.coefficients.data()[b * 64 + cell];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (Eigen::Index i = 0; i < out.depth.numel(); ++i) {
    CHECK(out.depth.data()[i] > cfg.d_min);
    CHECK(out.depth.data()[i] < cfg.d_max);
  }

  SUBCASE("repeat evaluation is bit-identical") {
    ModelOutput again = model.forward(img, tokens, corrs);
    CHECK((again.depth.data() - out.depth.data()).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((again.bins.widths.data() - out.bins.widths.data()).lpNorm<Eigen::Infinity>() == 0.0);
  }
  SUBCASE("same seed builds identical models, different seeds do not") {
    DeltarModel twin(cfg, 7), other(cfg, 8);
    auto &a = model.params().items(), &b = twin.params().items(), &c = other.params().items();
    REQUIRE(a.size() == b.size());
    bool all_eq = true, any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      all_eq = all_eq && (a[i].second.data() - b[i].second.data()).lpNorm<Eigen::Infinity>() == 0;
      any_diff = any_diff ||
                 (a[i].second.data() - c[i].second.data()).lpNorm<Eigen::Infinity>() > 0;
    }
    CHECK(all_eq);
    CHECK(any_diff);
  }
  SUBCASE("debug capture records one map per level and alternation") {
    ModelOutput dbg = model.forward(img, tokens, corrs, true);
    REQUIRE(dbg.pre_self_attn.size() == 4);  // 2 levels x 2 alternations
    CHECK(dbg.pre_self_attn[0].level == 1);  // coarse-to-fine order
    CHECK(dbg.pre_self_attn[0].alternation == 0);
    CHECK(dbg.pre_self_attn[1].alternation == 1);
    CHECK(dbg.pre_self_attn[2].level == 0);
    CHECK(dbg.pre_self_attn[2].channels == 8);
    CHECK(dbg.pre_self_attn[2].h == 8);
    CHECK(dbg.pre_self_attn[0].h == 4);
    // the fused map and the decoded depth really depend on the tokens
    auto tweaked = tokens;
    for (auto& s : tweaked[3].samples) s = 0.5;
    ModelOutput other = model.forward(img, tweaked, corrs, true);
    CHECK((other.depth.data() - out.depth.data()).lpNorm<Eigen::Infinity>() > 0.0);
  }
  SUBCASE("invalid inputs are rejected") {
    CHECK_THROWS_AS(model.forward(Tensor::zeros({1, 16, 16}), tokens, corrs), InvalidArgument);
    CHECK_THROWS_AS(model.forward(Tensor::zeros({3, 16, 18}), tokens, corrs), InvalidArgument);
    auto short_corrs = corrs;
    short_corrs.pop_back();
    CHECK_THROWS_AS(model.forward(img, tokens, short_corrs), InvalidArgument);
    auto bad_corrs = corrs;
    bad_corrs[0].row = 1;
    CHECK_THROWS_AS(model.forward(img, tokens, bad_corrs), InvalidArgument);
    bad_corrs = corrs;
    bad_corrs[0].rect_at_level.pop_back();
    CHECK_THROWS_AS(model.forward(img, tokens, bad_corrs), InvalidArgument);
    auto bad_tokens = tokens;
    bad_tokens[1].row = 5;
    auto bad_corrs2 = corrs;
    bad_corrs2[1].row = 5;
    CHECK_THROWS_AS(model.forward(img, bad_tokens, bad_corrs2), InvalidArgument);
    bad_tokens = tokens;
    bad_tokens[0].samples.resize(3);
    CHECK_THROWS_AS(model.forward(img, bad_tokens, corrs), InvalidArgument);
  }
}

TEST_CASE("disabling every fusion path removes all token influence") {
  std::mt19937 rng(34);
  FusionConfig cfg = small_cfg();
  cfg.toggles.patch_dist_corr = false;
  cfg.toggles.img_self_attn = false;
  cfg.toggles.img_dist_attn = false;
  cfg.toggles.dist_img_attn = false;
  cfg.toggles.refine = false;
  DeltarModel model(cfg, 9);
  Tensor img = test_image(rng, 16, 16);
  auto tokens = make_tokens(small_grid(), cfg);
  auto corrs = make_correspondences(tokens, quadrant_footprints(16, 16), cfg);

  ModelOutput with_tokens = model.forward(img, tokens, corrs);
  ModelOutput no_tokens = model.forward(img, {}, {});
  CHECK((with_tokens.depth.data() - no_tokens.depth.data()).lpNorm<Eigen::Infinity>() == 0.0);

  auto tweaked = tokens;
  for (auto& s : tweaked[0].samples) s = 3.9;
  ModelOutput other = model.forward(img, tweaked, corrs);
  CHECK((other.depth.data() - with_tokens.depth.data()).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("cross-attention updates stay inside each zone's patch") {
  std::mt19937 rng(35);
  FusionConfig cfg = small_cfg();
  cfg.strides = {2};
  cfg.dims = {8};
  cfg.patch_size_coarse = 2;
  cfg.toggles.img_self_attn = false;
  DeltarModel model(cfg, 11);

  ZoneGrid g = small_grid();
  g.readings[2].valid = false;
  g.readings[3].valid = false;
  auto tokens = make_tokens(g, cfg);  // zones (0,0) and (0,1)
  std::vector<Rect> fp = {Rect(0, 0, 8, 8), Rect(8, 0, 16, 8)};
  auto corrs = make_correspondences(tokens, fp, cfg);
  Tensor img = test_image(rng, 16, 16);

  ModelOutput a = model.forward(img, tokens, corrs, true);
  auto tweaked = tokens;
  tweaked[1].samples = {0.5, 0.6, 0.7, 0.8};
  ModelOutput b = model.forward(img, tweaked, corrs, true);
  REQUIRE(a.pre_self_attn.size() == 2);
  REQUIRE(b.pre_self_attn.size() == 2);

  const int h = 8, w = 8;
  auto mask0 = patch_support_mask(corrs[0].rect_at_level[0], cfg.patch_size_at(0), h, w);
  auto mask1 = patch_support_mask(corrs[1].rect_at_level[0], cfg.patch_size_at(0), h, w);

  SUBCASE("altering one token only moves that zone's cells, at every alternation") {
    for (int e = 0; e < 2; ++e) {
      const auto& ma = a.pre_self_attn[static_cast<std::size_t>(e)];
      const auto& mb = b.pre_self_attn[static_cast<std::size_t>(e)];
      double inside = 0;
      for (int c = 0; c < 8; ++c) {
        for (int cell = 0; cell < h * w; ++cell) {
          const double diff = std::abs(ma.data[c * h * w + cell] - mb.data[c * h * w + cell]);
          if (mask1[static_cast<std::size_t>(cell)])
            inside = std::max(inside, diff);
          else
            CHECK(diff == 0.0);
        }
      }
      CHECK(inside > 0.0);
    }
  }
  SUBCASE("without self-attention nothing outside the patches ever changes") {
    const auto& m0 = a.pre_self_attn[0];
    const auto& m1 = a.pre_self_attn[1];
    for (int c = 0; c < 8; ++c)
      for (int cell = 0; cell < h * w; ++cell)
        if (!mask0[static_cast<std::size_t>(cell)] && !mask1[static_cast<std::size_t>(cell)])
          CHECK(m0.data[c * h * w + cell] == m1.data[c * h * w + cell]);
  }
  SUBCASE("self-attention spreads information beyond the patches") {
    FusionConfig cfg_on = cfg;
    cfg_on.toggles.img_self_attn = true;
    DeltarModel model_on(cfg_on, 11);  // same seed -> identical parameters
    ModelOutput c = model_on.forward(img, tokens, corrs, true);
    REQUIRE(c.pre_self_attn.size() == 2);
    // before any self-attention has run the two models agree exactly
    CHECK((c.pre_self_attn[0].data - a.pre_self_attn[0].data).lpNorm<Eigen::Infinity>() == 0.0);
    // afterwards the second capture differs outside every patch support
    double outside = 0;
    for (int ch = 0; ch < 8; ++ch)
      for (int cell = 0; cell < h * w; ++cell)
        if (!mask0[static_cast<std::size_t>(cell)] && !mask1[static_cast<std::size_t>(cell)])
          outside = std::max(outside, std::abs(c.pre_self_attn[1].data[ch * h * w + cell] -
                                               a.pre_self_attn[1].data[ch * h * w + cell]));
    CHECK(outside > 0.0);
  }
}

TEST_CASE("alternate fusion modes") {
  std::mt19937 rng(36);
  Tensor img = test_image(rng, 16, 16);

  SUBCASE("feature concatenation") {
    FusionConfig cfg = small_cfg();
    cfg.fusion_mode = FusionMode::feature_concat;
    DeltarModel model(cfg, 13);
    auto tokens = make_tokens(small_grid(), cfg);
    auto corrs = make_correspondences(tokens, quadrant_footprints(16, 16), cfg);
    ModelOutput out = model.forward(img, tokens, corrs);
    REQUIRE(out.depth.shape() == std::vector<int>{1, 16, 16});
    for (Eigen::Index i = 0; i < out.depth.numel(); ++i) {
      CHECK(out.depth.data()[i] > cfg.d_min);
      CHECK(out.depth.data()[i] < cfg.d_max);
    }
    ModelOutput bare = model.forward(img, {}, {});
    CHECK((out.depth.data() - bare.depth.data()).lpNorm<Eigen::Infinity>() > 0.0);
  }
  SUBCASE("mean-variance tokens ignore the sample list") {
    FusionConfig cfg = small_cfg();
    cfg.token_input = TokenInput::mean_var;
    DeltarModel model(cfg, 13);
    auto tokens = make_tokens(small_grid(), cfg);
    auto corrs = make_correspondences(tokens, quadrant_footprints(16, 16), cfg);
    ModelOutput out = model.forward(img, tokens, corrs);
    auto tweaked = tokens;
    for (auto& s : tweaked[0].samples) s = 0.5;
    ModelOutput same = model.forward(img, tweaked, corrs);
    CHECK((same.depth.data() - out.depth.data()).lpNorm<Eigen::Infinity>() == 0.0);
    tweaked = tokens;
    tweaked[0].mean = 0.5;
    ModelOutput moved = model.forward(img, tweaked, corrs);
    CHECK((moved.depth.data() - out.depth.data()).lpNorm<Eigen::Infinity>() > 0.0);
  }
  SUBCASE("painted statistic planes carry tokens even with fusion disabled") {
    FusionConfig cfg = small_cfg();
    cfg.input_channels = 5;
    cfg.toggles.patch_dist_corr = false;
    cfg.toggles.img_self_attn = false;
    cfg.toggles.img_dist_attn = false;
    cfg.toggles.dist_img_attn = false;
    DeltarModel model(cfg, 13);
    auto tokens = make_tokens(small_grid(), cfg);
    auto corrs = make_correspondences(tokens, quadrant_footprints(16, 16), cfg);
    ModelOutput out = model.forward(img, tokens, corrs);
    auto tweaked = tokens;
    tweaked[0].mean = 0.5;
    ModelOutput moved = model.forward(img, tweaked, corrs);
    CHECK((moved.depth.data() - out.depth.data()).lpNorm<Eigen::Infinity>() > 0.0);
  }
}

TEST_CASE("checkpoint round trip") {
  namespace fs = std::filesystem;
  std::mt19937 rng(37);
  const fs::path dir = fs::temp_directory_path();
  const fs::path p1 = dir / "deltar_test_ckpt_a.dltr";
  const fs::path p2 = dir / "deltar_test_ckpt_b.dltr";

  FusionConfig cfg = small_cfg();
  DeltarModel model(cfg, 17);
  Tensor img = test_image(rng, 16, 16);
  auto tokens = make_tokens(small_grid(), cfg);
  auto corrs = make_correspondences(tokens, quadrant_footprints(16, 16), cfg);
  ModelOutput before = model.forward(img, tokens, corrs);

  save_checkpoint(p1, model);
  DeltarModel loaded = load_checkpoint(p1);
  CHECK(to_json(loaded.config()) == to_json(model.config()));

  auto &pa = model.params().items(), &pb = loaded.params().items();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    const auto &a = pa[i].second.data(), &b = pb[i].second.data();
    REQUIRE(a.size() == b.size());
    // storage is 32-bit floating point
    CHECK((a - b).lpNorm<Eigen::Infinity>() <=
          1e-6 + 1.2e-7 * a.lpNorm<Eigen::Infinity>());
  }

  ModelOutput after = loaded.forward(img, tokens, corrs);
  CHECK((after.depth.data() - before.depth.data()).lpNorm<Eigen::Infinity>() < 1e-3);

  SUBCASE("reserializing a loaded model is byte-identical") {
    save_checkpoint(p2, loaded);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1.size() > 0);
    CHECK(s1 == s2);
    fs::remove(p2);
  }
  SUBCASE("corrupt files are rejected") {
    std::ifstream in(p1, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    const fs::path bad = dir / "deltar_test_ckpt_bad.dltr";
    {
      std::ofstream out(bad, std::ios::binary);
      out << "XXXX" << bytes.substr(4);
    }
    CHECK_THROWS_AS(load_checkpoint(bad), DataError);
    {
      std::ofstream out(bad, std::ios::binary);
      out << bytes.substr(0, bytes.size() / 2);
    }
    CHECK_THROWS_AS(load_checkpoint(bad), DataError);
    {
      std::ofstream out(bad, std::ios::binary);
    }
    CHECK_THROWS_AS(load_checkpoint(bad), DataError);
    CHECK_THROWS_AS(load_checkpoint(dir / "deltar_test_ckpt_missing.dltr"), DataError);
    fs::remove(bad);
  }
  fs::remove(p1);
}

TEST_CASE("end-to-end gradients match finite differences") {
  std::mt19937 rng(38);
  FusionConfig cfg = small_cfg();
  cfg.n_bins = 4;
  DeltarModel model(cfg, 19);
  Tensor img = test_image(rng, 8, 8, true);
  auto tokens = make_tokens(small_grid(), cfg);
  auto corrs = make_correspondences(tokens, quadrant_footprints(8, 8), cfg);
  Tensor dir = rand_tensor(rng, {1, 8, 8}, -1, 1, false);

  auto build = [&] { return project(model.forward(img, tokens, corrs).depth, dir); };
  std::vector<Tensor> inputs = {img,
                                named_param(model, "fuse.l1.zone"),
                                named_param(model, "fuse.l0.lns.gamma"),
                                named_param(model, "tok.proj0.w"),
                                named_param(model, "dist.l0.a.w"),
                                named_param(model, "dec.l0.a.b"),
                                named_param(model, "head.widths.b"),
                                named_param(model, "head.coeff.b")};
  check_grads(build, inputs, 1e-5, 1e-6, 2e-5);
}
