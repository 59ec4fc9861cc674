#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sfmk/depth_range.hpp"
#include "sfmk/random.hpp"
#include "sfmk/tensor.hpp"
#include "sfmk/tensor_ops.hpp"

namespace sfmk {

// ---- parameter registry ----

// Named tensor registry backing the optimizer and checkpoints. Parameters
// are trainable; buffers (running statistics) are saved but not optimized.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool is_param;
  };

  Tensor param(const std::string& name, Tensor init) {
    init.set_requires_grad(true);
    push(name, init, true);
    return init;
  }

  Tensor buffer(const std::string& name, Tensor init) {
    push(name, init, false);
    return init;
  }

  std::vector<Tensor> trainable() const {
    std::vector<Tensor> out;
    for (const auto& e : entries_)
      if (e.is_param) out.push_back(e.tensor);
    return out;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

 private:
  void push(const std::string& name, const Tensor& t, bool is_param) {
    require(find(name) == nullptr, "ParamStore: duplicate name " + name);
    entries_.push_back({name, t, is_param});
  }

  std::vector<Entry> entries_;
};

// ---- basic layers ----

namespace detail {

inline Tensor he_normal(Shape s, int64_t fan_in, Rng& rng) {
  return Tensor::normal(std::move(s), rng, 0,
                        std::sqrt(real(2) / static_cast<real>(fan_in)));
}

}  // namespace detail

struct Conv2d {
  Tensor w, b;
  int64_t stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& name, int64_t ci, int64_t co,
         int64_t k, int64_t stride_, int64_t pad_, Rng& rng,
         bool zero_init = false) {
    stride = stride_;
    pad = pad_;
    Tensor wi = zero_init ? Tensor::zeros({co, ci, k, k})
                          : detail::he_normal({co, ci, k, k}, ci * k * k, rng);
    w = ps.param(name + ".w", wi);
    b = ps.param(name + ".b", Tensor::zeros({co}));
  }

  Tensor forward(const Tensor& x) const {
    return conv2d(x, w, b, stride, pad);
  }
};

struct Deconv2d {
  Tensor w, b;
  int64_t stride = 1;

  Deconv2d() = default;
  Deconv2d(ParamStore& ps, const std::string& name, int64_t ci, int64_t co,
           int64_t k, int64_t stride_, Rng& rng) {
    stride = stride_;
    w = ps.param(name + ".w", detail::he_normal({ci, co, k, k}, ci * k * k,
                                                rng));
    b = ps.param(name + ".b", Tensor::zeros({co}));
  }

  Tensor forward(const Tensor& x) const {
    return transpose_conv2d(x, w, b, stride, 0);
  }
};

struct Linear {
  Tensor w, b;  // (out, in), (out)

  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out,
         Rng& rng, bool zero_init = false, real bias_init = 0) {
    Tensor wi = zero_init ? Tensor::zeros({out, in})
                          : detail::he_normal({out, in}, in, rng);
    w = ps.param(name + ".w", wi);
    b = ps.param(name + ".b", Tensor::full({out}, bias_init));
  }

  // x: (N, in) rows of samples.
  Tensor forward(const Tensor& x) const {
    return add_colvec(matmul(x, transpose(w)), b);
  }
};

struct LayerNorm {
  Tensor gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, int64_t d) {
    gamma = ps.param(name + ".gamma", Tensor::full({d}, 1));
    beta = ps.param(name + ".beta", Tensor::zeros({d}));
  }

  Tensor forward(const Tensor& x) const {
    return layer_norm(x, gamma, beta);
  }
};

struct BatchNorm2d {
  Tensor gamma, beta, run_mean, run_var;
  real momentum = real(0.1), eps = real(1e-5);

  BatchNorm2d() = default;
  BatchNorm2d(ParamStore& ps, const std::string& name, int64_t c) {
    gamma = ps.param(name + ".gamma", Tensor::full({c}, 1));
    beta = ps.param(name + ".beta", Tensor::zeros({c}));
    run_mean = ps.buffer(name + ".run_mean", Tensor::zeros({c}));
    run_var = ps.buffer(name + ".run_var", Tensor::full({c}, 1));
  }

  Tensor forward(const Tensor& x, bool training) {
    if (!training)
      return batch_norm_eval(x, gamma, beta, run_mean.data(), run_var.data(),
                             eps);
    std::vector<real> bm, bv;
    Tensor y = batch_norm_train(x, gamma, beta, eps, &bm, &bv);
    auto& rm = run_mean.data();
    auto& rv = run_var.data();
    for (size_t i = 0; i < rm.size(); ++i) {
      rm[i] = (1 - momentum) * rm[i] + momentum * bm[i];
      rv[i] = (1 - momentum) * rv[i] + momentum * bv[i];
    }
    return y;
  }
};

// ---- transformer encoder ----

struct MultiHeadAttention {
  Linear qkv, proj;
  int64_t dim = 0, heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& ps, const std::string& name, int64_t d,
                     int64_t heads_, Rng& rng)
      : qkv(ps, name + ".qkv", d, 3 * d, rng),
        proj(ps, name + ".proj", d, d, rng),
        dim(d),
        heads(heads_) {}

  Tensor forward(const Tensor& x) const {
    const int64_t dh = dim / heads;
    Tensor packed = qkv.forward(x);  // (N, 3d)
    Tensor q = slice(packed, 1, 0, dim);
    Tensor k = slice(packed, 1, dim, dim);
    Tensor v = slice(packed, 1, 2 * dim, dim);
    const real scale = 1 / std::sqrt(static_cast<real>(dh));
    std::vector<Tensor> outs;
    for (int64_t h = 0; h < heads; ++h) {
      Tensor qh = slice(q, 1, h * dh, dh);
      Tensor kh = slice(k, 1, h * dh, dh);
      Tensor vh = slice(v, 1, h * dh, dh);
      Tensor attn = softmax(mul(matmul(qh, transpose(kh)), scale));
      outs.push_back(matmul(attn, vh));
    }
    return proj.forward(concat(outs, 1));
  }
};

struct TransformerLayer {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Linear fc1, fc2;

  TransformerLayer() = default;
  TransformerLayer(ParamStore& ps, const std::string& name, int64_t d,
                   int64_t heads, Rng& rng)
      : ln1(ps, name + ".ln1", d),
        ln2(ps, name + ".ln2", d),
        attn(ps, name + ".attn", d, heads, rng),
        fc1(ps, name + ".fc1", d, 4 * d, rng),
        fc2(ps, name + ".fc2", 4 * d, d, rng) {}

  Tensor forward(const Tensor& x) const {
    Tensor y = add(x, attn.forward(ln1.forward(x)));
    return add(y, fc2.forward(gelu(fc1.forward(ln2.forward(y)))));
  }
};

// Non-overlapping patch projection plus a readout token and learned position
// embeddings; position embeddings are bilinearly resized when the input grid
// differs from the one they were created for.
struct PatchEmbed {
  Conv2d proj;
  Tensor readout, pos;
  int64_t dim = 0, patch = 1, base_gh = 0, base_gw = 0;

  PatchEmbed() = default;
  PatchEmbed(ParamStore& ps, const std::string& name, int64_t in_ch,
             int64_t d, int64_t patch_, int64_t base_h, int64_t base_w,
             Rng& rng)
      : proj(ps, name + ".proj", in_ch, d, patch_, patch_, 0, rng),
        dim(d),
        patch(patch_),
        base_gh(base_h / patch_),
        base_gw(base_w / patch_) {
    readout = ps.param(name + ".readout",
                       Tensor::normal({1, d}, rng, 0, real(0.02)));
    pos = ps.param(name + ".pos",
                   Tensor::normal({1 + base_gh * base_gw, d}, rng, 0,
                                  real(0.02)));
  }

  Tensor positional(int64_t gh, int64_t gw) const {
    if (gh == base_gh && gw == base_gw) return pos;
    Tensor cls = slice(pos, 0, 0, 1);
    Tensor grid = slice(pos, 0, 1, base_gh * base_gw);
    Tensor spat = reshape(transpose(grid), {dim, base_gh, base_gw});
    spat = bilinear_resize(spat, gh, gw);
    return concat({cls, transpose(reshape(spat, {dim, gh * gw}))}, 0);
  }

  // (C,H,W) -> (1+Np, d) token matrix with the readout token first.
  Tensor forward(const Tensor& x) const {
    require(x.dim(1) % patch == 0 && x.dim(2) % patch == 0,
            "PatchEmbed: input " + shape_str(x.shape()) +
            " not divisible by patch " + std::to_string(patch));
    const int64_t gh = x.dim(1) / patch, gw = x.dim(2) / patch;
    Tensor fmap = proj.forward(x);  // (d, gh, gw)
    Tensor tokens = transpose(reshape(fmap, {dim, gh * gw}));
    return add(concat({readout, tokens}, 0), positional(gh, gw));
  }
};

struct VitEncoder {
  PatchEmbed embed;
  std::vector<TransformerLayer> layers;
  int64_t patch = 1;

  VitEncoder() = default;
  VitEncoder(ParamStore& ps, const std::string& name, int64_t in_ch,
             int64_t d, int64_t depth, int64_t heads, int64_t patch_,
             int64_t base_h, int64_t base_w, Rng& rng)
      : embed(ps, name + ".embed", in_ch, d, patch_, base_h, base_w, rng),
        patch(patch_) {
    for (int64_t i = 0; i < depth; ++i)
      layers.emplace_back(ps, name + ".layer" + std::to_string(i + 1), d,
                          heads, rng);
  }

  // Returns the token matrices after each layer listed in `taps`
  // (1-indexed, ascending).
  std::vector<Tensor> forward(const Tensor& x,
                              const std::vector<int64_t>& taps) const {
    std::vector<Tensor> out;
    Tensor t = embed.forward(x);
    size_t next = 0;
    for (size_t i = 0; i < layers.size(); ++i) {
      t = layers[i].forward(t);
      if (next < taps.size() &&
          taps[next] == static_cast<int64_t>(i) + 1) {
        out.push_back(t);
        ++next;
      }
    }
    require(next == taps.size(), "VitEncoder: tap beyond final layer");
    return out;
  }
};

// ---- token-to-image decoding ----

// Turns a token matrix back into an image-like map at one of four relative
// scales: x4 and x2 via transposed convs, x1 as-is, /2 via strided conv.
struct Reassemble {
  enum class Resample { kQuad, kDouble, kNone, kHalf };

  Conv2d pointwise, down;
  Deconv2d up;
  Resample mode = Resample::kNone;
  int64_t dim = 0;

  Reassemble() = default;
  Reassemble(ParamStore& ps, const std::string& name, int64_t d,
             int64_t out_ch, Resample mode_, Rng& rng)
      : pointwise(ps, name + ".pointwise", d, out_ch, 1, 1, 0, rng),
        mode(mode_),
        dim(d) {
    if (mode == Resample::kQuad)
      up = Deconv2d(ps, name + ".up", out_ch, out_ch, 4, 4, rng);
    else if (mode == Resample::kDouble)
      up = Deconv2d(ps, name + ".up", out_ch, out_ch, 2, 2, rng);
    else if (mode == Resample::kHalf)
      down = Conv2d(ps, name + ".down", out_ch, out_ch, 3, 2, 1, rng);
  }

  Tensor forward(const Tensor& tokens, int64_t gh, int64_t gw) const {
    require(tokens.rank() == 2 && tokens.dim(0) == 1 + gh * gw,
            "Reassemble: token count " + shape_str(tokens.shape()) +
            " does not match grid " + std::to_string(gh) + "x" +
            std::to_string(gw));
    Tensor spatial = slice(tokens, 0, 1, gh * gw);  // drop readout token
    Tensor fmap = pointwise.forward(
        reshape(transpose(spatial), {dim, gh, gw}));
    switch (mode) {
      case Resample::kQuad:
      case Resample::kDouble:
        return up.forward(fmap);
      case Resample::kHalf:
        return down.forward(fmap);
      case Resample::kNone:
        return fmap;
    }
    return fmap;
  }
};

struct ResidualConvUnit {
  Conv2d c1, c2;
  BatchNorm2d bn1, bn2;

  ResidualConvUnit() = default;
  ResidualConvUnit(ParamStore& ps, const std::string& name, int64_t c,
                   Rng& rng)
      : c1(ps, name + ".c1", c, c, 3, 1, 1, rng),
        c2(ps, name + ".c2", c, c, 3, 1, 1, rng),
        bn1(ps, name + ".bn1", c),
        bn2(ps, name + ".bn2", c) {}

  Tensor forward(const Tensor& x, bool training) {
    Tensor y = relu(x);
    y = bn1.forward(c1.forward(y), training);
    y = relu(y);
    y = bn2.forward(c2.forward(y), training);
    return add(x, y);
  }
};

// Refinement stage: project the skip path to the fusion width, add the
// deeper path when present, refine, upsample x2.
struct FusionBlock {
  Conv2d proj;
  ResidualConvUnit rcu1, rcu2;

  FusionBlock() = default;
  FusionBlock(ParamStore& ps, const std::string& name, int64_t skip_ch,
              int64_t fusion_ch, Rng& rng)
      : proj(ps, name + ".proj", skip_ch, fusion_ch, 3, 1, 1, rng),
        rcu1(ps, name + ".rcu1", fusion_ch, rng),
        rcu2(ps, name + ".rcu2", fusion_ch, rng) {}

  Tensor forward(const Tensor& skip, const Tensor* deep, bool training) {
    Tensor s = rcu1.forward(proj.forward(skip), training);
    Tensor x = deep ? add(*deep, s) : s;
    x = rcu2.forward(x, training);
    return bilinear_upsample(x, 2);
  }
};

// Disparity head: refine, resize to the pyramid scale target, squash to
// (0,1).
struct DispHead {
  Conv2d c1, c2;

  DispHead() = default;
  DispHead(ParamStore& ps, const std::string& name, int64_t in_ch,
           int64_t hidden, Rng& rng)
      : c1(ps, name + ".c1", in_ch, hidden, 3, 1, 1, rng),
        c2(ps, name + ".c2", hidden, 1, 1, 1, 0, rng) {}

  // Returns (th, tw).
  Tensor forward(const Tensor& x, int64_t th, int64_t tw) const {
    Tensor y = relu(c1.forward(x));
    y = bilinear_resize(y, th, tw);
    y = sigmoid(c2.forward(y));
    return reshape(y, {th, tw});
  }
};

// ---- configuration ----

struct NetConfig {
  int64_t height = 192, width = 640;
  int64_t patch = 16;
  int64_t dim = 768;
  int64_t layers = 12;
  int64_t heads = 12;
  std::vector<int64_t> taps{3, 6, 9, 12};
  std::array<int64_t, 4> reassemble_ch{96, 768, 1536, 3072};
  int64_t ego_ch = 2048;
  int64_t fusion_ch = 96;
  int64_t head_ch = 32;
  int64_t pose_ch = 256;
  int64_t conv_base = 64;

  static NetConfig paper(int64_t h = 192, int64_t w = 640) {
    NetConfig c;
    c.height = h;
    c.width = w;
    return c;
  }

  static NetConfig desk(int64_t h = 64, int64_t w = 64) {
    NetConfig c;
    c.height = h;
    c.width = w;
    c.patch = 8;
    c.dim = 32;
    c.layers = 4;
    c.heads = 4;
    c.taps = {1, 2, 3, 4};
    c.reassemble_ch = {4, 32, 64, 128};
    c.ego_ch = 85;
    c.fusion_ch = 4;
    c.head_ch = 32;
    c.pose_ch = 64;
    c.conv_base = 16;
    return c;
  }

  int64_t grid_h() const { return height / patch; }
  int64_t grid_w() const { return width / patch; }
  int64_t tokens() const { return grid_h() * grid_w(); }

  void validate() const {
    require(height > 0 && width > 0, "NetConfig: empty image");
    require(patch > 0 && height % (2 * patch) == 0 &&
            width % (2 * patch) == 0,
            "NetConfig: height and width must be multiples of 2*patch");
    require(dim % heads == 0, "NetConfig: dim must divide into heads");
    require(taps.size() == 4, "NetConfig: need exactly 4 encoder taps");
    for (size_t i = 0; i < taps.size(); ++i) {
      require(taps[i] >= 1 && taps[i] <= layers,
              "NetConfig: tap outside encoder depth");
      require(i == 0 || taps[i] > taps[i - 1],
              "NetConfig: taps must ascend");
    }
    require(conv_base > 0, "NetConfig: conv_base must be positive");
  }
};

// ---- depth networks ----

// Transformer depth network: four encoder taps reassembled to a feature
// pyramid, fused coarse-to-fine, with a disparity head per scale. Disparity
// index s has shape (H/2^s, W/2^s), finest first.
struct DptDepthNet {
  NetConfig cfg;
  VitEncoder enc;
  std::vector<Reassemble> stages;    // shallow tap -> deep tap
  std::vector<FusionBlock> fusions;  // deepest first
  std::vector<DispHead> heads;       // scale 0..3

  DptDepthNet() = default;
  DptDepthNet(ParamStore& ps, const std::string& name, const NetConfig& c,
              Rng& rng)
      : cfg(c),
        enc(ps, name + ".enc", 3, c.dim, c.layers, c.heads, c.patch,
            c.height, c.width, rng) {
    using R = Reassemble::Resample;
    const std::array<R, 4> modes{R::kQuad, R::kDouble, R::kNone, R::kHalf};
    for (int i = 0; i < 4; ++i)
      stages.emplace_back(ps, name + ".stage" + std::to_string(i), c.dim,
                          c.reassemble_ch[i], modes[i], rng);
    // Fusion i consumes the reassembled tap 3-i (deepest first); skip widths
    // run 3072 -> 96 at full size.
    for (int i = 0; i < 4; ++i)
      fusions.emplace_back(ps, name + ".fusion" + std::to_string(i),
                           c.reassemble_ch[3 - i], c.fusion_ch, rng);
    for (int s = 0; s < 4; ++s)
      heads.emplace_back(ps, name + ".head" + std::to_string(s), c.fusion_ch,
                         c.head_ch, rng);
  }

  std::vector<Tensor> forward(const Tensor& image, bool training) {
    const int64_t h = image.dim(1), w = image.dim(2);
    const int64_t gh = h / cfg.patch, gw = w / cfg.patch;
    std::vector<Tensor> taps = enc.forward(image, cfg.taps);
    std::vector<Tensor> maps;
    for (int i = 0; i < 4; ++i)
      maps.push_back(stages[i].forward(taps[i], gh, gw));
    std::vector<Tensor> disps(4);
    const Tensor* deep = nullptr;
    Tensor fused;
    for (int i = 0; i < 4; ++i) {
      fused = fusions[i].forward(maps[3 - i], deep, training);
      deep = &fused;
      const int s = 3 - i;  // deepest fusion feeds the coarsest scale
      disps[s] = heads[s].forward(fused, h >> s, w >> s);
    }
    return disps;
  }
};

// Convolutional baseline: four stride-2 residual stages and a skip decoder
// with a disparity head per scale.
struct ResidualDownBlock {
  Conv2d c1, c2, sc;
  BatchNorm2d bn1, bn2, bnsc;

  ResidualDownBlock() = default;
  ResidualDownBlock(ParamStore& ps, const std::string& name, int64_t ci,
                    int64_t co, Rng& rng)
      : c1(ps, name + ".c1", ci, co, 3, 2, 1, rng),
        c2(ps, name + ".c2", co, co, 3, 1, 1, rng),
        sc(ps, name + ".sc", ci, co, 1, 2, 0, rng),
        bn1(ps, name + ".bn1", co),
        bn2(ps, name + ".bn2", co),
        bnsc(ps, name + ".bnsc", co) {}

  Tensor forward(const Tensor& x, bool training) {
    Tensor y = relu(bn1.forward(c1.forward(x), training));
    y = bn2.forward(c2.forward(y), training);
    Tensor s = bnsc.forward(sc.forward(x), training);
    return relu(add(y, s));
  }
};

struct ConvEncoder {
  std::vector<ResidualDownBlock> stage;
  std::array<int64_t, 4> ch{};

  ConvEncoder() = default;
  ConvEncoder(ParamStore& ps, const std::string& name, int64_t in_ch,
              int64_t base, Rng& rng) {
    ch = {base, 2 * base, 4 * base, 8 * base};
    int64_t ci = in_ch;
    for (int i = 0; i < 4; ++i) {
      stage.emplace_back(ps, name + ".stage" + std::to_string(i), ci, ch[i],
                         rng);
      ci = ch[i];
    }
  }

  // Features at H/2, H/4, H/8, H/16.
  std::vector<Tensor> forward(const Tensor& x, bool training) {
    std::vector<Tensor> out;
    Tensor t = x;
    for (auto& s : stage) {
      t = s.forward(t, training);
      out.push_back(t);
    }
    return out;
  }
};

struct ConvDepthNet {
  NetConfig cfg;
  ConvEncoder enc;
  std::vector<Conv2d> dec;        // decoder convs, deepest first
  std::vector<Conv2d> disp_conv;  // scale 0..3

  ConvDepthNet() = default;
  ConvDepthNet(ParamStore& ps, const std::string& name, const NetConfig& c,
               Rng& rng)
      : cfg(c), enc(ps, name + ".enc", 3, c.conv_base, rng) {
    const auto& ch = enc.ch;
    const std::array<int64_t, 4> dch{ch[2], ch[1], ch[0], ch[0]};
    const std::array<int64_t, 4> din{ch[3] + ch[2], dch[0] + ch[1],
                                     dch[1] + ch[0], dch[2]};
    for (int i = 0; i < 4; ++i)
      dec.emplace_back(ps, name + ".dec" + std::to_string(i), din[i], dch[i],
                       3, 1, 1, rng);
    for (int s = 0; s < 4; ++s)
      disp_conv.emplace_back(ps, name + ".disp" + std::to_string(s),
                             dch[3 - s], 1, 3, 1, 1, rng);
  }

  std::vector<Tensor> forward(const Tensor& image, bool training) {
    std::vector<Tensor> e = enc.forward(image, training);
    std::vector<Tensor> disps(4);
    Tensor x = e[3];
    for (int i = 0; i < 4; ++i) {
      x = bilinear_upsample(x, 2);
      if (i < 3) x = concat({x, e[2 - i]}, 0);
      x = relu(dec[i].forward(x));
      const int s = 3 - i;
      Tensor d = sigmoid(disp_conv[s].forward(x));
      disps[s] = reshape(d, {d.dim(1), d.dim(2)});
    }
    return disps;
  }
};

// ---- ego-motion networks ----

struct PoseResult {
  Tensor pose;                      // (6): axis-angle then translation
  std::optional<Tensor> intrinsics; // (4): fx, fy, cx, cy when learned
};

// Shared regression head: squeeze, two refinement convs, zero-initialized
// projection to 6 channels, spatial mean, 0.01 scaling. The optional
// intrinsics branch global-average-pools the penultimate pre-activation
// features and applies two pointwise branches; focals go through softplus so
// they stay positive.
struct PoseDecoder {
  Conv2d squeeze, c1, c2, final;
  Linear focal, center;
  bool learn_k = false;

  PoseDecoder() = default;
  PoseDecoder(ParamStore& ps, const std::string& name, int64_t in_ch,
              int64_t width, bool learn_k_, Rng& rng)
      : squeeze(ps, name + ".squeeze", in_ch, width, 1, 1, 0, rng),
        c1(ps, name + ".c1", width, width, 3, 1, 1, rng),
        c2(ps, name + ".c2", width, width, 3, 1, 1, rng),
        final(ps, name + ".final", width, 6, 1, 1, 0, rng,
              /*zero_init=*/true),
        learn_k(learn_k_) {
    if (learn_k) {
      // Both branches are zero-initialized and predict 0.01-scaled offsets
      // around a fixed prior (same damping as the pose head): focals start
      // at 0.58*W and 0.58*H, a typical automotive normalized focal length,
      // and centers start at the image midpoint.
      focal = Linear(ps, name + ".focal", width, 2, rng, /*zero_init=*/true,
                     real(0));
      center = Linear(ps, name + ".center", width, 2, rng,
                      /*zero_init=*/true, real(0));
    }
  }

  PoseResult forward(const Tensor& feat, int64_t img_h, int64_t img_w) const {
    Tensor x = relu(squeeze.forward(feat));
    x = relu(c1.forward(x));
    Tensor pre = c2.forward(x);  // penultimate pre-activation tap
    Tensor y = final.forward(relu(pre));  // (6, h', w')
    Tensor pose = mul(
        reduce_mean(reshape(y, {6, y.dim(1) * y.dim(2)}), 1), real(0.01));
    PoseResult r;
    r.pose = pose;
    if (learn_k) {
      Tensor g = reshape(
          reduce_mean(reshape(pre, {pre.dim(0), pre.dim(1) * pre.dim(2)}), 1),
          {1, pre.dim(0)});
      Tensor dims = Tensor::from_data(
          {1, 2}, {static_cast<real>(img_w), static_cast<real>(img_h)});
      const real focal_prior = std::log(std::exp(real(0.58)) - 1);
      Tensor f = mul(
          softplus(add(mul(focal.forward(g), real(0.01)),
                       Tensor::full({1, 2}, focal_prior))),
          dims);
      Tensor ctr = mul(add(mul(center.forward(g), real(0.01)),
                           Tensor::full({1, 2}, real(0.5))),
                       dims);
      r.intrinsics = reshape(concat({f, ctr}, 1), {4});
    }
    return r;
  }
};

struct DptEgoNet {
  NetConfig cfg;
  VitEncoder enc;
  Reassemble stage;
  PoseDecoder dec;

  DptEgoNet() = default;
  DptEgoNet(ParamStore& ps, const std::string& name, const NetConfig& c,
            bool learn_k, Rng& rng)
      : cfg(c),
        enc(ps, name + ".enc", 6, c.dim, c.layers, c.heads, c.patch,
            c.height, c.width, rng),
        stage(ps, name + ".stage", c.dim, c.ego_ch, Reassemble::Resample::kNone,
              rng),
        dec(ps, name + ".dec", c.ego_ch, c.pose_ch, learn_k, rng) {}

  PoseResult forward(const Tensor& pair, bool) {
    const int64_t h = pair.dim(1), w = pair.dim(2);
    std::vector<Tensor> taps = enc.forward(pair, {cfg.layers});
    Tensor feat = stage.forward(taps[0], h / cfg.patch, w / cfg.patch);
    return dec.forward(feat, h, w);
  }
};

struct ConvEgoNet {
  NetConfig cfg;
  ConvEncoder enc;
  PoseDecoder dec;

  ConvEgoNet() = default;
  ConvEgoNet(ParamStore& ps, const std::string& name, const NetConfig& c,
             bool learn_k, Rng& rng)
      : cfg(c),
        enc(ps, name + ".enc", 6, c.conv_base, rng),
        dec(ps, name + ".dec", 8 * c.conv_base, c.pose_ch, learn_k, rng) {}

  PoseResult forward(const Tensor& pair, bool training) {
    std::vector<Tensor> e = enc.forward(pair, training);
    return dec.forward(e[3], pair.dim(1), pair.dim(2));
  }
};

// ---- model bundle ----

enum class Arch { kConv, kTransformer };

inline const char* arch_name(Arch a) {
  return a == Arch::kConv ? "conv" : "transformer";
}

inline Arch arch_from_name(const std::string& s) {
  if (s == "conv") return Arch::kConv;
  if (s == "transformer") return Arch::kTransformer;
  throw ConfigError("unknown architecture '" + s + "'");
}

struct ModelBundle {
  NetConfig cfg;
  Arch depth_arch = Arch::kTransformer;
  Arch ego_arch = Arch::kTransformer;
  bool learn_intrinsics = false;
  ParamStore store;
  std::optional<DptDepthNet> dpt_depth;
  std::optional<ConvDepthNet> conv_depth;
  std::optional<DptEgoNet> dpt_ego;
  std::optional<ConvEgoNet> conv_ego;

  std::vector<Tensor> disparities(const Tensor& image, bool training) {
    return dpt_depth ? dpt_depth->forward(image, training)
                     : conv_depth->forward(image, training);
  }

  // Ego-motion (and optionally intrinsics) for the frame pair
  // target->source, stacked on the channel axis.
  PoseResult pose_between(const Tensor& target, const Tensor& source,
                          bool training) {
    Tensor pair = concat({target, source}, 0);
    return dpt_ego ? dpt_ego->forward(pair, training)
                   : conv_ego->forward(pair, training);
  }

  std::vector<Tensor> trainable() const { return store.trainable(); }
};

inline ModelBundle make_model(const NetConfig& cfg, Arch depth_arch,
                              Arch ego_arch, bool learn_intrinsics,
                              uint64_t seed) {
  cfg.validate();
  ModelBundle m;
  m.cfg = cfg;
  m.depth_arch = depth_arch;
  m.ego_arch = ego_arch;
  m.learn_intrinsics = learn_intrinsics;
  Rng rng(seed);
  Rng depth_rng = rng.fork(1), ego_rng = rng.fork(2);
  if (depth_arch == Arch::kTransformer)
    m.dpt_depth.emplace(m.store, "depth", cfg, depth_rng);
  else
    m.conv_depth.emplace(m.store, "depth", cfg, depth_rng);
  if (ego_arch == Arch::kTransformer)
    m.dpt_ego.emplace(m.store, "ego", cfg, learn_intrinsics, ego_rng);
  else
    m.conv_ego.emplace(m.store, "ego", cfg, learn_intrinsics, ego_rng);
  return m;
}

// ---- checkpoints ----
//
// Binary layout: magic "SFMK1", u32 manifest length + text manifest
// (key=value lines describing the architecture), u32 tensor count, then per
// tensor: u32 name length, name, u32 rank, u32 dims, float32 values.

namespace detail {

inline void require_io(bool ok, const std::string& msg) {
  if (!ok) throw IoError(msg);
}

inline void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  require_io(static_cast<bool>(is), "checkpoint truncated");
  return v;
}

}  // namespace detail

inline std::string checkpoint_manifest(const ModelBundle& m) {
  std::ostringstream os;
  const NetConfig& c = m.cfg;
  os << "depth_arch=" << arch_name(m.depth_arch) << "\n"
     << "ego_arch=" << arch_name(m.ego_arch) << "\n"
     << "learn_intrinsics=" << (m.learn_intrinsics ? 1 : 0) << "\n"
     << "height=" << c.height << "\nwidth=" << c.width << "\n"
     << "patch=" << c.patch << "\ndim=" << c.dim << "\n"
     << "layers=" << c.layers << "\nheads=" << c.heads << "\n";
  os << "taps=";
  for (size_t i = 0; i < c.taps.size(); ++i)
    os << (i ? "," : "") << c.taps[i];
  os << "\nreassemble=";
  for (size_t i = 0; i < c.reassemble_ch.size(); ++i)
    os << (i ? "," : "") << c.reassemble_ch[i];
  os << "\nego_ch=" << c.ego_ch << "\nfusion_ch=" << c.fusion_ch
     << "\nhead_ch=" << c.head_ch << "\npose_ch=" << c.pose_ch
     << "\nconv_base=" << c.conv_base << "\n";
  return os.str();
}

inline void save_checkpoint(const ModelBundle& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  detail::require_io(static_cast<bool>(os),
                     "cannot open checkpoint for writing: " + path);
  os.write("SFMK1", 5);
  const std::string manifest = checkpoint_manifest(m);
  detail::write_u32(os, static_cast<uint32_t>(manifest.size()));
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  const auto& entries = m.store.entries();
  detail::write_u32(os, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    detail::write_u32(os, static_cast<uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    const Shape& s = e.tensor.shape();
    detail::write_u32(os, static_cast<uint32_t>(s.size()));
    for (int64_t d : s) detail::write_u32(os, static_cast<uint32_t>(d));
    for (real v : e.tensor.data()) {
      float f = static_cast<float>(v);
      os.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  detail::require_io(static_cast<bool>(os),
                     "failed writing checkpoint: " + path);
}

inline std::map<std::string, std::string> parse_manifest(
    const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    detail::require_io(eq != std::string::npos,
                       "malformed checkpoint manifest line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  detail::require_io(static_cast<bool>(is), "cannot open checkpoint: " + path);
  char magic[5];
  is.read(magic, 5);
  detail::require_io(static_cast<bool>(is) &&
                         std::string(magic, 5) == "SFMK1",
                     "bad checkpoint magic");
  const uint32_t mlen = detail::read_u32(is);
  std::string manifest(mlen, '\0');
  is.read(manifest.data(), mlen);
  detail::require_io(static_cast<bool>(is), "checkpoint truncated");
  auto kv = parse_manifest(manifest);
  auto need = [&](const std::string& k) {
    auto it = kv.find(k);
    detail::require_io(it != kv.end(), "checkpoint manifest missing " + k);
    return it->second;
  };
  auto parse_list = [](const std::string& s) {
    std::vector<int64_t> out;
    std::istringstream ls(s);
    std::string item;
    while (std::getline(ls, item, ',')) out.push_back(std::stoll(item));
    return out;
  };
  NetConfig cfg;
  cfg.height = std::stoll(need("height"));
  cfg.width = std::stoll(need("width"));
  cfg.patch = std::stoll(need("patch"));
  cfg.dim = std::stoll(need("dim"));
  cfg.layers = std::stoll(need("layers"));
  cfg.heads = std::stoll(need("heads"));
  cfg.taps = parse_list(need("taps"));
  auto rs = parse_list(need("reassemble"));
  detail::require_io(rs.size() == 4, "checkpoint manifest: bad reassemble");
  for (int i = 0; i < 4; ++i) cfg.reassemble_ch[i] = rs[i];
  cfg.ego_ch = std::stoll(need("ego_ch"));
  cfg.fusion_ch = std::stoll(need("fusion_ch"));
  cfg.head_ch = std::stoll(need("head_ch"));
  cfg.pose_ch = std::stoll(need("pose_ch"));
  cfg.conv_base = std::stoll(need("conv_base"));
  ModelBundle m = make_model(cfg, arch_from_name(need("depth_arch")),
                             arch_from_name(need("ego_arch")),
                             need("learn_intrinsics") == "1", /*seed=*/0);
  const auto& entries = m.store.entries();
  const uint32_t count = detail::read_u32(is);
  detail::require_io(count == entries.size(),
                     "checkpoint tensor count does not match architecture");
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t nlen = detail::read_u32(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    detail::require_io(static_cast<bool>(is), "checkpoint truncated");
    const uint32_t nd = detail::read_u32(is);
    Shape s(nd);
    for (uint32_t d = 0; d < nd; ++d) s[d] = detail::read_u32(is);
    const ParamStore::Entry* e = m.store.find(name);
    detail::require_io(e != nullptr, "checkpoint names unknown tensor " + name);
    detail::require_io(e->tensor.shape() == s,
                       "checkpoint shape mismatch for " + name);
    Tensor t = e->tensor;  // shares storage with the registered tensor
    auto& dst = t.data();
    for (real& v : dst) {
      float f = 0;
      is.read(reinterpret_cast<char*>(&f), 4);
      v = static_cast<real>(f);
    }
    detail::require_io(static_cast<bool>(is), "checkpoint truncated");
  }
  return m;
}

}  // namespace sfmk
