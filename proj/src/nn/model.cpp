#include "deltar/nn/model.hpp"

#include <cmath>

namespace deltar::nn {

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

// [Z, C] -> [Z, S, C] by repeating each row; gradient sums the copies.
Tensor tile_rows(const Tensor& rows, int s) {
  if (rows.ndim() != 2) throw InvalidArgument("tile_rows: expects [Z, C]");
  const int z = rows.dim(0), c = rows.dim(1);
  auto n = alloc_node({z, s, c}, {rows});
  for (int zi = 0; zi < z; ++zi)
    for (int si = 0; si < s; ++si)
      n->data.segment((static_cast<Eigen::Index>(zi) * s + si) * c, c) =
          rows.data().segment(static_cast<Eigen::Index>(zi) * c, c);
  NodePtr pr = rows.node();
  n->backprop = [pr, z, s, c](Node& self) {
    auto& g = pr->ensure_grad();
    for (int zi = 0; zi < z; ++zi)
      for (int si = 0; si < s; ++si)
        g.segment(static_cast<Eigen::Index>(zi) * c, c) +=
            self.grad.segment((static_cast<Eigen::Index>(zi) * s + si) * c, c);
  };
  return Tensor(n);
}

Tensor flatten_chw(const Tensor& x) {
  return reshape(permute(x, {1, 2, 0}), {x.dim(1) * x.dim(2), x.dim(0)});
}

Tensor unflatten_chw(const Tensor& t, int c, int h, int w) {
  return permute(reshape(t, {h, w, c}), {2, 0, 1});
}

// Constant [C, H, W] rearrangement of a [H*W, C] position code.
Tensor posenc_chw(const Tensor& flat, int c, int h, int w) {
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  std::vector<double> v(static_cast<std::size_t>(c) * plane);
  for (Eigen::Index cell = 0; cell < plane; ++cell)
    for (int ci = 0; ci < c; ++ci)
      v[static_cast<std::size_t>(ci) * plane + cell] = flat.data()[cell * c + ci];
  return Tensor::from_vector({c, h, w}, v, false);
}

}  // namespace

int FusionConfig::patch_size_at(int level) const {
  return patch_size_coarse << (levels() - 1 - level);
}

void FusionConfig::validate() const {
  if (n_alternations < 1) throw InvalidArgument("config: n_alternations must be >= 1");
  if (n_bins < 2) throw InvalidArgument("config: n_bins must be >= 2");
  if (!(d_min < d_max)) throw InvalidArgument("config: d_min must be < d_max");
  if (n_samples < 1) throw InvalidArgument("config: n_samples must be >= 1");
  if (heads < 1) throw InvalidArgument("config: heads must be >= 1");
  if (patch_size_coarse < 1) throw InvalidArgument("config: patch_size_coarse must be >= 1");
  if (zone_rows < 1 || zone_cols < 1) throw InvalidArgument("config: bad zone grid size");
  if (input_channels != 3 && input_channels != 5)
    throw InvalidArgument("config: input_channels must be 3 or 5");
  if (strides.empty() || strides.size() != dims.size())
    throw InvalidArgument("config: strides and dims must be parallel and non-empty");
  int prev = 1;
  for (std::size_t i = 0; i < strides.size(); ++i) {
    if (strides[i] < prev || strides[i] % prev != 0 || !is_pow2(strides[i] / prev))
      throw InvalidArgument("config: strides must ascend by power-of-two ratios");
    if (i > 0 && strides[i] == prev) throw InvalidArgument("config: strides must be distinct");
    prev = strides[i];
    if (dims[i] < 4 || dims[i] % 4 != 0 || dims[i] % heads != 0)
      throw InvalidArgument("config: dims must be positive multiples of 4 and of heads");
  }
}

json to_json(const FusionConfig& cfg) {
  return json{{"n_alternations", cfg.n_alternations},
              {"strides", cfg.strides},
              {"dims", cfg.dims},
              {"heads", cfg.heads},
              {"n_bins", cfg.n_bins},
              {"d_min", cfg.d_min},
              {"d_max", cfg.d_max},
              {"n_samples", cfg.n_samples},
              {"patch_size_coarse", cfg.patch_size_coarse},
              {"zone_rows", cfg.zone_rows},
              {"zone_cols", cfg.zone_cols},
              {"input_channels", cfg.input_channels},
              {"fusion_mode",
               cfg.fusion_mode == FusionMode::attention ? "attention" : "feature_concat"},
              {"token_input", cfg.token_input == TokenInput::samples ? "samples" : "mean_var"},
              {"toggles",
               json{{"patch_dist_corr", cfg.toggles.patch_dist_corr},
                    {"img_self_attn", cfg.toggles.img_self_attn},
                    {"img_dist_attn", cfg.toggles.img_dist_attn},
                    {"dist_img_attn", cfg.toggles.dist_img_attn},
                    {"refine", cfg.toggles.refine},
                    {"prob_sampling", cfg.toggles.prob_sampling}}}};
}

FusionConfig fusion_config_from_json(const json& j) {
  try {
    FusionConfig cfg;
    cfg.n_alternations = j.value("n_alternations", cfg.n_alternations);
    if (j.contains("strides")) cfg.strides = j.at("strides").get<std::vector<int>>();
    if (j.contains("dims")) cfg.dims = j.at("dims").get<std::vector<int>>();
    cfg.heads = j.value("heads", cfg.heads);
    cfg.n_bins = j.value("n_bins", cfg.n_bins);
    cfg.d_min = j.value("d_min", cfg.d_min);
    cfg.d_max = j.value("d_max", cfg.d_max);
    cfg.n_samples = j.value("n_samples", cfg.n_samples);
    cfg.patch_size_coarse = j.value("patch_size_coarse", cfg.patch_size_coarse);
    cfg.zone_rows = j.value("zone_rows", cfg.zone_rows);
    cfg.zone_cols = j.value("zone_cols", cfg.zone_cols);
    cfg.input_channels = j.value("input_channels", cfg.input_channels);
    if (j.contains("fusion_mode")) {
      const std::string m = j.at("fusion_mode").get<std::string>();
      if (m == "attention")
        cfg.fusion_mode = FusionMode::attention;
      else if (m == "feature_concat")
        cfg.fusion_mode = FusionMode::feature_concat;
      else
        throw DataError("config: unknown fusion_mode " + m);
    }
    if (j.contains("token_input")) {
      const std::string m = j.at("token_input").get<std::string>();
      if (m == "samples")
        cfg.token_input = TokenInput::samples;
      else if (m == "mean_var")
        cfg.token_input = TokenInput::mean_var;
      else
        throw DataError("config: unknown token_input " + m);
    }
    if (j.contains("toggles")) {
      const json& t = j.at("toggles");
      cfg.toggles.patch_dist_corr = t.value("patch_dist_corr", true);
      cfg.toggles.img_self_attn = t.value("img_self_attn", true);
      cfg.toggles.img_dist_attn = t.value("img_dist_attn", true);
      cfg.toggles.dist_img_attn = t.value("dist_img_attn", true);
      cfg.toggles.refine = t.value("refine", true);
      cfg.toggles.prob_sampling = t.value("prob_sampling", true);
    }
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw DataError(std::string("config: ") + e.what());
  }
}

Tensor bin_centers(const Tensor& widths, double d_min, double d_max) {
  if (widths.ndim() != 1) throw InvalidArgument("bin_centers: widths must be 1-D");
  const int n = widths.dim(0);
  std::vector<double> lv(static_cast<std::size_t>(n) * n, 0.0);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < r; ++c) lv[static_cast<std::size_t>(r) * n + c] = 1.0;
    lv[static_cast<std::size_t>(r) * n + r] = 0.5;
  }
  Tensor tri = Tensor::from_vector({n, n}, lv, false);
  Tensor cum = matmul(tri, reshape(widths, {n, 1}));
  return reshape(add_scalar(mul_scalar(cum, d_max - d_min), d_min), {n});
}

Tensor bins_to_depth(const BinPrediction& bp, double d_min, double d_max) {
  if (bp.coefficients.ndim() != 3 || bp.widths.ndim() != 1 ||
      bp.coefficients.dim(0) != bp.widths.dim(0))
    throw InvalidArgument("bins_to_depth: coefficient channels must match the bin count");
  const int n = bp.widths.dim(0), h = bp.coefficients.dim(1), w = bp.coefficients.dim(2);
  Tensor c = bin_centers(bp.widths, d_min, d_max);
  Tensor l = permute(reshape(bp.coefficients, {n, h * w}), {1, 0});  // [hw, n]
  Tensor depth = matmul(l, reshape(c, {n, 1}));
  return reshape(depth, {1, h, w});
}

std::vector<DistributionToken> make_tokens(const ZoneGrid& grid, const FusionConfig& cfg) {
  std::vector<DistributionToken> tokens;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const ZoneReading& z = grid.at(r, c);
      if (!z.valid) continue;
      DistributionToken t;
      t.row = r;
      t.col = c;
      t.mean = z.mean;
      t.variance = z.variance;
      t.samples = sample_inverse_cdf(z.mean, z.variance, cfg.n_samples,
                                     !cfg.toggles.prob_sampling, cfg.d_min, cfg.d_max);
      tokens.push_back(std::move(t));
    }
  }
  return tokens;
}

std::vector<PatchCorrespondence> make_correspondences(
    const std::vector<DistributionToken>& tokens, const std::vector<Rect>& footprints,
    const FusionConfig& cfg) {
  if (tokens.size() != footprints.size())
    throw InvalidArgument("make_correspondences: one footprint required per token");
  std::vector<PatchCorrespondence> corrs;
  corrs.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    PatchCorrespondence pc;
    pc.row = tokens[i].row;
    pc.col = tokens[i].col;
    for (int s : cfg.strides) {
      const Rect& f = footprints[i];
      pc.rect_at_level.emplace_back(f.x_min / s, f.y_min / s, f.x_max / s, f.y_max / s);
    }
    corrs.push_back(std::move(pc));
  }
  return corrs;
}

Tensor paint_zone_planes(const std::vector<DistributionToken>& tokens,
                         const std::vector<PatchCorrespondence>& corrs, const FusionConfig& cfg,
                         int h, int w) {
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  std::vector<double> mean(static_cast<std::size_t>(plane), 0.0);
  std::vector<double> var(static_cast<std::size_t>(plane), 0.0);
  std::vector<double> cnt(static_cast<std::size_t>(plane), 0.0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Rect& r0 = corrs[i].rect_at_level.front();
    const double s = cfg.strides.front();
    const Rect full(r0.x_min * s, r0.y_min * s, r0.x_max * s, r0.y_max * s);
    const int y_lo = std::max(0, static_cast<int>(std::floor(full.y_min)));
    const int y_hi = std::min(h - 1, static_cast<int>(std::ceil(full.y_max)));
    const int x_lo = std::max(0, static_cast<int>(std::floor(full.x_min)));
    const int x_hi = std::min(w - 1, static_cast<int>(std::ceil(full.x_max)));
    for (int y = y_lo; y <= y_hi; ++y) {
      for (int x = x_lo; x <= x_hi; ++x) {
        if (!full.contains(x + 0.5, y + 0.5)) continue;
        const std::size_t at = static_cast<std::size_t>(y) * w + x;
        mean[at] += tokens[i].mean;
        var[at] += tokens[i].variance;
        cnt[at] += 1.0;
      }
    }
  }
  std::vector<double> v(static_cast<std::size_t>(2 * plane));
  for (Eigen::Index p = 0; p < plane; ++p) {
    const double c = cnt[static_cast<std::size_t>(p)];
    v[static_cast<std::size_t>(p)] = c > 0 ? mean[static_cast<std::size_t>(p)] / c : 0.0;
    v[static_cast<std::size_t>(plane + p)] = c > 0 ? var[static_cast<std::size_t>(p)] / c : 0.0;
  }
  return Tensor::from_vector({2, h, w}, v, false);
}

DeltarModel::DeltarModel(const FusionConfig& cfg, std::uint32_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937 rng(seed);
  const int levels = cfg_.levels();

  int in_ch = cfg_.input_channels;
  int prev_stride = 1;
  for (int l = 0; l < levels; ++l) {
    Stage st;
    const std::string p = "enc.s" + std::to_string(l);
    int ratio = cfg_.strides[static_cast<std::size_t>(l)] / prev_stride;
    int cur_in = in_ch, idx = 0;
    while (ratio > 1) {
      st.downs.emplace_back(reg_, p + ".d" + std::to_string(idx++), cur_in,
                            cfg_.dims[static_cast<std::size_t>(l)], 3, 2, 1, rng);
      cur_in = cfg_.dims[static_cast<std::size_t>(l)];
      ratio /= 2;
    }
    if (st.downs.empty())
      st.downs.emplace_back(reg_, p + ".d0", cur_in, cfg_.dims[static_cast<std::size_t>(l)], 3,
                            1, 1, rng);
    st.refine = Conv(reg_, p + ".r", cfg_.dims[static_cast<std::size_t>(l)],
                     cfg_.dims[static_cast<std::size_t>(l)], 3, 1, 1, rng);
    stages_.push_back(std::move(st));
    in_ch = cfg_.dims[static_cast<std::size_t>(l)];
    prev_stride = cfg_.strides[static_cast<std::size_t>(l)];
  }

  dist_enc_ = DistributionEncoder(reg_, cfg_.dims,
                                  cfg_.token_input == TokenInput::samples ? 1 : 2, rng);
  for (int l = 0; l + 1 < levels; ++l)
    token_proj_.emplace_back(reg_, "tok.proj" + std::to_string(l),
                             cfg_.dims[static_cast<std::size_t>(l) + 1],
                             cfg_.dims[static_cast<std::size_t>(l)], rng);

  for (int l = 0; l < levels; ++l) {
    const std::string p = "fuse.l" + std::to_string(l);
    const int d = cfg_.dims[static_cast<std::size_t>(l)];
    Block b;
    b.ln_patch = LayerNorm(reg_, p + ".lnp", d);
    b.ln_tok_kv = LayerNorm(reg_, p + ".lntkv", d);
    b.ln_tok_q = LayerNorm(reg_, p + ".lntq", d);
    b.ln_patch_kv = LayerNorm(reg_, p + ".lnpkv", d);
    b.ln_self = LayerNorm(reg_, p + ".lns", d);
    b.ln_ffn = LayerNorm(reg_, p + ".lnf", d);
    b.cross_di = Mha(reg_, p + ".di", d, cfg_.heads, rng);
    b.cross_id = Mha(reg_, p + ".id", d, cfg_.heads, rng);
    b.self_attn = Mha(reg_, p + ".self", d, cfg_.heads, rng);
    b.ffn = Mlp(reg_, p + ".ffn", d, 2 * d, rng);
    b.zone_emb = reg_.create(p + ".zone", {cfg_.zone_rows * cfg_.zone_cols, d}, 0.1, rng);
    blocks_.push_back(std::move(b));
  }

  for (int l = 0; l < levels; ++l) {
    const std::string p = "dec.l" + std::to_string(l);
    const int d = cfg_.dims[static_cast<std::size_t>(l)];
    const int out = l == 0 ? d : cfg_.dims[static_cast<std::size_t>(l) - 1];
    Decode de;
    de.a = Conv(reg_, p + ".a", 3 * d, d, 3, 1, 1, rng);
    de.b = Conv(reg_, p + ".b", d, out, 3, 1, 1, rng);
    decodes_.push_back(de);
  }
  head_widths_ = Conv(reg_, "head.widths", cfg_.dims.front(), cfg_.n_bins, 3, 1, 1, rng);
  head_coeff_ = Conv(reg_, "head.coeff", cfg_.dims.front(), cfg_.n_bins, 3, 1, 1, rng);
}

Tensor DeltarModel::encode_stage(int level, const Tensor& x) const {
  Tensor h = x;
  for (const auto& c : stages_[static_cast<std::size_t>(level)].downs) h = gelu(c.forward(h));
  return gelu(stages_[static_cast<std::size_t>(level)].refine.forward(h));
}

Tensor DeltarModel::run_block(int level, Tensor x, Tensor& tok_feats,
                              const std::vector<Rect>& rects, const std::vector<int>& zone_ids,
                              bool capture, std::vector<ModelOutput::DebugMap>& debug) {
  Block& b = blocks_[static_cast<std::size_t>(level)];
  const int c = cfg_.dims[static_cast<std::size_t>(level)];
  const int h = x.dim(1), w = x.dim(2);
  const int p = cfg_.patch_size_at(level);
  const int z = static_cast<int>(rects.size());
  const int s = z > 0 ? tok_feats.dim(1) : 0;
  const bool per_patch = cfg_.toggles.patch_dist_corr;

  Tensor pos_flat = sinusoidal_posenc_2d(h, w, c);
  Tensor pos_chw, pos_patch, zcode_s;
  if (z > 0) {
    if (per_patch) {
      pos_chw = posenc_chw(pos_flat, c, h, w);
      pos_patch = gather_patches(pos_chw, rects, p);
    }
    zcode_s = tile_rows(gather_rows(b.zone_emb, zone_ids), s);
  }

  for (int alt = 0; alt < cfg_.n_alternations; ++alt) {
    if (z > 0 && cfg_.toggles.dist_img_attn) {
      Tensor tn = b.ln_tok_kv.forward(tok_feats);
      Tensor keys = add(tn, zcode_s);
      if (per_patch) {
        Tensor pq = gather_patches(x, rects, p);
        Tensor q_in = add(b.ln_patch.forward(pq), pos_patch);
        Tensor delta = b.cross_di.forward(q_in, keys, tn);
        x = scatter_patches(add(pq, delta), rects, p, x);
      } else {
        Tensor xf = flatten_chw(x);
        Tensor q_in = add(b.ln_patch.forward(xf), pos_flat);
        Tensor delta =
            b.cross_di.forward(q_in, reshape(keys, {z * s, c}), reshape(tn, {z * s, c}));
        x = add(x, unflatten_chw(delta, c, h, w));
      }
    }
    if (z > 0 && cfg_.toggles.img_dist_attn) {
      Tensor tq = add(b.ln_tok_q.forward(tok_feats), zcode_s);
      if (per_patch) {
        Tensor pk = gather_patches(x, rects, p);
        Tensor pn = b.ln_patch_kv.forward(pk);
        Tensor keys = add(pn, pos_patch);
        tok_feats = add(tok_feats, b.cross_id.forward(tq, keys, pn));
      } else {
        Tensor xf = flatten_chw(x);
        Tensor pn = b.ln_patch_kv.forward(xf);
        Tensor keys = add(pn, pos_flat);
        Tensor delta = b.cross_id.forward(reshape(tq, {z * s, c}), keys, pn);
        tok_feats = add(tok_feats, reshape(delta, {z, s, c}));
      }
    }
    if (capture) {
      ModelOutput::DebugMap m;
      m.level = level;
      m.alternation = alt;
      m.channels = c;
      m.h = h;
      m.w = w;
      m.data = x.data();
      debug.push_back(std::move(m));
    }
    if (cfg_.toggles.img_self_attn) {
      Tensor xs = b.ln_self.forward(flatten_chw(x));
      Tensor q_in = add(xs, pos_flat);
      x = add(x, unflatten_chw(b.self_attn.forward(q_in, q_in, xs), c, h, w));
      Tensor xn = b.ln_ffn.forward(flatten_chw(x));
      x = add(x, unflatten_chw(b.ffn.forward(xn), c, h, w));
    }
  }
  return x;
}

ModelOutput DeltarModel::forward(const Tensor& image,
                                 const std::vector<DistributionToken>& tokens,
                                 const std::vector<PatchCorrespondence>& corrs,
                                 bool capture_debug) {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw InvalidArgument("forward: image must be [3, H, W]");
  const int img_h = image.dim(1), img_w = image.dim(2);
  const int levels = cfg_.levels();
  const int coarsest = cfg_.strides.back();
  if (img_h % coarsest != 0 || img_w % coarsest != 0)
    throw InvalidArgument("forward: image size must be divisible by the coarsest stride");
  if (tokens.size() != corrs.size())
    throw InvalidArgument("forward: correspondence missing for a valid zone");
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (corrs[i].row != tokens[i].row || corrs[i].col != tokens[i].col ||
        static_cast<int>(corrs[i].rect_at_level.size()) != levels)
      throw InvalidArgument("forward: correspondence missing for a valid zone");

  Tensor input = image;
  if (cfg_.input_channels == 5)
    input = concat({image, paint_zone_planes(tokens, corrs, cfg_, img_h, img_w)}, 0);

  std::vector<Tensor> enc(static_cast<std::size_t>(levels));
  {
    Tensor x = input;
    for (int l = 0; l < levels; ++l) {
      x = encode_stage(l, x);
      enc[static_cast<std::size_t>(l)] = x;
    }
  }

  const int z = static_cast<int>(tokens.size());
  std::vector<Tensor> tok_levels(static_cast<std::size_t>(levels));
  std::vector<int> zone_ids(static_cast<std::size_t>(z));
  if (z > 0) {
    Tensor values;
    if (cfg_.token_input == TokenInput::samples) {
      std::vector<double> v;
      v.reserve(static_cast<std::size_t>(z) * cfg_.n_samples);
      for (const auto& t : tokens) {
        if (static_cast<int>(t.samples.size()) != cfg_.n_samples)
          throw InvalidArgument("forward: token sample count does not match the config");
        v.insert(v.end(), t.samples.begin(), t.samples.end());
      }
      values = Tensor::from_vector({z, cfg_.n_samples, 1}, v);
    } else {
      std::vector<double> v;
      v.reserve(static_cast<std::size_t>(z) * 2);
      for (const auto& t : tokens) {
        v.push_back(t.mean);
        v.push_back(t.variance);
      }
      values = Tensor::from_vector({z, 1, 2}, v);
    }
    tok_levels = dist_enc_.forward(values).per_sample;
    for (int i = 0; i < z; ++i) {
      if (tokens[static_cast<std::size_t>(i)].row < 0 ||
          tokens[static_cast<std::size_t>(i)].row >= cfg_.zone_rows ||
          tokens[static_cast<std::size_t>(i)].col < 0 ||
          tokens[static_cast<std::size_t>(i)].col >= cfg_.zone_cols)
        throw InvalidArgument("forward: zone index outside the grid");
      zone_ids[static_cast<std::size_t>(i)] =
          tokens[static_cast<std::size_t>(i)].row * cfg_.zone_cols +
          tokens[static_cast<std::size_t>(i)].col;
    }
  }

  ModelOutput out;
  Tensor d, tok;
  for (int li = levels - 1; li >= 0; --li) {
    Tensor x_in = li == levels - 1 ? enc[static_cast<std::size_t>(li)] : d;
    if (z > 0 && li == levels - 1) tok = tok_levels[static_cast<std::size_t>(li)];

    std::vector<Rect> rects;
    rects.reserve(static_cast<std::size_t>(z));
    for (const auto& cr : corrs) rects.push_back(cr.rect_at_level[static_cast<std::size_t>(li)]);

    Tensor y;
    if (cfg_.fusion_mode == FusionMode::attention) {
      y = run_block(li, x_in, tok, rects, zone_ids, capture_debug, out.pre_self_attn);
    } else {
      // concatenation fusion: paint pooled zone features into the map
      if (z > 0) {
        const int p = cfg_.patch_size_at(li);
        Tensor tiles = tile_rows(max_axis1(tok), p * p);
        y = scatter_patches(tiles, rects, p,
                            Tensor::zeros({x_in.dim(0), x_in.dim(1), x_in.dim(2)}));
      } else {
        y = Tensor::zeros({x_in.dim(0), x_in.dim(1), x_in.dim(2)});
      }
    }

    Tensor cat = concat({y, x_in, enc[static_cast<std::size_t>(li)]}, 0);
    const auto& de = decodes_[static_cast<std::size_t>(li)];
    Tensor dec = gelu(de.b.forward(gelu(de.a.forward(cat))));
    if (li > 0) {
      d = upsample_bilinear(dec, img_h / cfg_.strides[static_cast<std::size_t>(li) - 1],
                            img_w / cfg_.strides[static_cast<std::size_t>(li) - 1]);
      if (z > 0)
        tok = add(tok_levels[static_cast<std::size_t>(li) - 1],
                  token_proj_[static_cast<std::size_t>(li) - 1].forward(tok));
    } else {
      d = dec;
    }
  }

  const int h0 = img_h / cfg_.strides.front(), w0 = img_w / cfg_.strides.front();
  Tensor wl = head_widths_.forward(d);
  out.bins.widths = softmax_last(mean_last(reshape(wl, {cfg_.n_bins, h0 * w0})));
  Tensor cl = head_coeff_.forward(d);
  Tensor cf = softmax_last(permute(reshape(cl, {cfg_.n_bins, h0 * w0}), {1, 0}));
  out.bins.coefficients = reshape(permute(cf, {1, 0}), {cfg_.n_bins, h0, w0});

  Tensor depth = bins_to_depth(out.bins, cfg_.d_min, cfg_.d_max);
  out.depth = (h0 == img_h && w0 == img_w) ? depth : upsample_bilinear(depth, img_h, img_w);
  return out;
}

}  // namespace deltar::nn
