#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "deltar/nn/distribution.hpp"
#include "deltar/nn/layers.hpp"
#include "deltar/nn/patch.hpp"
#include "deltar/sensor_sim.hpp"

namespace deltar::nn {

using nlohmann::json;

struct FusionToggles {
  bool patch_dist_corr = true;  // restrict cross-attention to each zone's patch
  bool img_self_attn = true;    // global self-attention (+ feed-forward) per alternation
  bool img_dist_attn = true;    // image -> distribution token updates
  bool dist_img_attn = true;    // distribution -> image patch updates
  bool refine = true;           // reserved; both settings share the two-conv head
  bool prob_sampling = true;    // false: evenly spaced samples instead of quantiles
};

enum class FusionMode { attention, feature_concat };
enum class TokenInput { samples, mean_var };

struct FusionConfig {
  int n_alternations = 2;
  std::vector<int> strides = {4, 8, 16};  // fine -> coarse, power-of-two ratios
  std::vector<int> dims = {24, 32, 48};   // channel width per level, fine -> coarse
  int heads = 2;
  int n_bins = 32;
  double d_min = 0.02;
  double d_max = 4.0;
  int n_samples = 16;
  int patch_size_coarse = 8;  // P at the coarsest level, doubled per finer level
  int zone_rows = 8, zone_cols = 8;
  int input_channels = 3;  // 3 = rgb; 5 = rgb + painted zone mean/variance planes
  FusionMode fusion_mode = FusionMode::attention;
  TokenInput token_input = TokenInput::samples;
  FusionToggles toggles;

  int levels() const { return static_cast<int>(strides.size()); }
  int patch_size_at(int level) const;
  void validate() const;
};

json to_json(const FusionConfig& cfg);
FusionConfig fusion_config_from_json(const json& j);

/// Per-image bin widths plus per-pixel mixing coefficients.
struct BinPrediction {
  Tensor widths;        // [n_bins], positive, sums to 1
  Tensor coefficients;  // [n_bins, h, w], per-pixel non-negative, sums to 1
};

/// Bin centers c_n = d_min + (d_max - d_min) * (w_n / 2 + sum_{j<n} w_j).
Tensor bin_centers(const Tensor& widths, double d_min, double d_max);

/// Per-pixel convex combination of the bin centers, shape [1, h, w]; output
/// always lies inside [d_min, d_max].
Tensor bins_to_depth(const BinPrediction& bp, double d_min, double d_max);

/// Tokens for every valid zone of a grid; samples drawn per the config's
/// sampling toggle and clamped to [d_min, d_max].
std::vector<DistributionToken> make_tokens(const ZoneGrid& grid, const FusionConfig& cfg);

/// Feature-space rects per level from full-resolution footprint rects
/// (pixel coordinates), one per token in order.
std::vector<PatchCorrespondence> make_correspondences(
    const std::vector<DistributionToken>& tokens, const std::vector<Rect>& footprints,
    const FusionConfig& cfg);

/// Constant [2, h, w] map holding each pixel's zone mean depth and variance
/// (averaged where footprints overlap, zero where uncovered).
Tensor paint_zone_planes(const std::vector<DistributionToken>& tokens,
                         const std::vector<PatchCorrespondence>& corrs, const FusionConfig& cfg,
                         int h, int w);

struct ModelOutput {
  Tensor depth;  // [1, H, W] at input resolution
  BinPrediction bins;
  /// Image feature maps captured just before each self-attention step
  /// (one entry per level x alternation when capture is requested).
  struct DebugMap {
    int level = 0, alternation = 0;
    int channels = 0, h = 0, w = 0;
    Eigen::VectorXd data;
  };
  std::vector<DebugMap> pre_self_attn;
};

/// Depth completion network: conv pyramid over the image, per-zone
/// distribution encoder, alternating patch cross-attention / token update /
/// global self-attention per level, and a bin-based depth head.
class DeltarModel {
 public:
  DeltarModel(const FusionConfig& cfg, std::uint32_t seed);

  /// image: [3, H, W] with H, W divisible by the coarsest stride.
  ModelOutput forward(const Tensor& image, const std::vector<DistributionToken>& tokens,
                      const std::vector<PatchCorrespondence>& corrs,
                      bool capture_debug = false);

  ParamRegistry& params() { return reg_; }
  const ParamRegistry& params() const { return reg_; }
  const FusionConfig& config() const { return cfg_; }

 private:
  struct Stage {
    std::vector<Conv> downs;
    Conv refine;
  };
  struct Block {
    LayerNorm ln_patch, ln_tok_kv, ln_tok_q, ln_patch_kv, ln_self, ln_ffn;
    Mha cross_di, cross_id, self_attn;
    Mlp ffn;
    Tensor zone_emb;  // [zone_rows*zone_cols, dim]
  };
  struct Decode {
    Conv a, b;
  };

  Tensor encode_stage(int level, const Tensor& x) const;
  Tensor run_block(int level, Tensor x, Tensor& tok_feats, const std::vector<Rect>& rects,
                   const std::vector<int>& zone_ids, bool capture,
                   std::vector<ModelOutput::DebugMap>& debug);

  FusionConfig cfg_;
  ParamRegistry reg_;
  std::vector<Stage> stages_;
  DistributionEncoder dist_enc_;
  std::vector<Linear> token_proj_;  // carry updated tokens to the next finer level
  std::vector<Block> blocks_;
  std::vector<Decode> decodes_;
  Conv head_widths_, head_coeff_;
};

}  // namespace deltar::nn
