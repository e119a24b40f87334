#pragma once

// The noise predictor and its two condition encoders.
//
// Scene encoder: xy patch tokens (z as channels) -> linear embed + position
// encoding, a learned summary token in front, encoder stack, summary token
// projected to the model width.
//
// Action encoder: one token per frame's label vector -> linear embed +
// position encoding, encoder stack, last token through a two-layer MLP.
//
// Denoiser: token 0 = timestep embedding + scene embedding + action
// embedding, tokens 1..L = projected noisy frames; all tokens get position
// encodings; the output drops token 0 and projects back to J*3.

#include "motionforge/core.hpp"
#include "motionforge/nn.hpp"

#include <optional>

namespace motionforge {

struct DenoiserConfig {
  // Desk-scale defaults. The reference production model uses width 512,
  // 6 layers, 16 heads, ffn 1024 for the denoiser and 6-layer, 16-head
  // condition encoders.
  int width = 64;
  int layers = 2;
  int heads = 4;
  int ffn = 128;
  double dropout = 0.1;
  int max_frames = 16;
  int joint_dim = 72;
  int diffusion_steps = 50;

  int scene_token_dim = 8 * 8 * 18;
  int scene_tokens = 16;
  int n_actions = 12;
  int encoder_layers = 1;
  int encoder_heads = 4;
  int encoder_ffn = 128;
  bool positional_encoding = true;
  // Learned linear path from the noisy frames straight to the output, the
  // long skip of a U-shaped stack. Without it a width below joint_dim
  // cannot carry the identity that the noise estimate needs at large t.
  bool input_skip = true;

  void validate() const {
    require(width > 0 && heads > 0 && width % heads == 0, ErrorCode::InvalidInput, "width must be divisible by heads");
    require(encoder_heads > 0 && width % encoder_heads == 0, ErrorCode::InvalidInput,
            "width must be divisible by encoder heads");
    require(dropout >= 0 && dropout < 1, ErrorCode::InvalidInput, "dropout must lie in [0, 1)");
    require(layers >= 0 && encoder_layers >= 0 && ffn > 0 && encoder_ffn > 0, ErrorCode::InvalidInput, "bad depth");
    require(max_frames > 0 && joint_dim > 0 && diffusion_steps > 0, ErrorCode::InvalidInput, "bad shape");
    require(scene_token_dim > 0 && scene_tokens > 0 && n_actions > 0, ErrorCode::InvalidInput, "bad encoder shape");
  }
};

class MotionModel {
 public:
  struct SceneCache {
    MatX tokens;
    MatX stack_in;
    nn::EncoderStack::Cache stack;
    MatX summary;
  };
  struct ActionCache {
    MatX labels;
    nn::EncoderStack::Cache stack;
    MatX last, hidden_pre, hidden;
  };
  struct DenoiseCache {
    bool valid = false;
    MatX frames;
    int t = 0;
    nn::EncoderStack::Cache stack;
    MatX body;  // stack output rows 1..L
  };

  MotionModel() = default;

  explicit MotionModel(const DenoiserConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.width;
    scene_embed_ = nn::Linear::create(ps_, "scene.embed", cfg_.scene_token_dim, d);
    scene_summary_ = ps_.add("scene.summary_token", 1, d);
    scene_stack_ = nn::EncoderStack::create(ps_, "scene.stack", d, cfg_.encoder_heads, cfg_.encoder_ffn, cfg_.encoder_layers);
    scene_out_ = nn::Linear::create(ps_, "scene.out", d, d);

    action_embed_ = nn::Linear::create(ps_, "action.embed", cfg_.n_actions, d);
    action_stack_ =
        nn::EncoderStack::create(ps_, "action.stack", d, cfg_.encoder_heads, cfg_.encoder_ffn, cfg_.encoder_layers);
    action_mlp1_ = nn::Linear::create(ps_, "action.mlp1", d, d);
    action_mlp2_ = nn::Linear::create(ps_, "action.mlp2", d, d);

    time_table_ = ps_.add("denoiser.time_embedding", cfg_.diffusion_steps, d);
    in_proj_ = nn::Linear::create(ps_, "denoiser.in_proj", cfg_.joint_dim, d);
    stack_ = nn::EncoderStack::create(ps_, "denoiser.stack", d, cfg_.heads, cfg_.ffn, cfg_.layers);
    out_proj_ = nn::Linear::create(ps_, "denoiser.out_proj", d, cfg_.joint_dim);
    if (cfg_.input_skip) skip_ = nn::Linear::create(ps_, "denoiser.skip", cfg_.joint_dim, cfg_.joint_dim);
    ps_.allocate();

    const int max_tokens = std::max({cfg_.max_frames + 1, cfg_.scene_tokens + 1, cfg_.max_frames}) + 1;
    pe_ = cfg_.positional_encoding ? nn::sinusoidal_encoding(max_tokens, d) : MatX::Zero(max_tokens, d);
  }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    scene_embed_.init(ps_, rng);
    for (Eigen::Index i = 0; i < ps_.mat(scene_summary_).size(); ++i) ps_.mat(scene_summary_).data()[i] = 0.5 * rng.normal();
    scene_stack_.init(ps_, rng);
    scene_out_.init(ps_, rng);
    action_embed_.init(ps_, rng);
    action_stack_.init(ps_, rng);
    action_mlp1_.init(ps_, rng);
    action_mlp2_.init(ps_, rng);
    auto tt = ps_.mat(time_table_);
    for (Eigen::Index i = 0; i < tt.size(); ++i) tt.data()[i] = 0.5 * rng.normal();
    in_proj_.init(ps_, rng);
    stack_.init(ps_, rng);
    out_proj_.init(ps_, rng, 0.5);
    if (cfg_.input_skip) skip_.init(ps_, rng, 0.0);
  }

  const DenoiserConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

  // ---- scene encoder ----
  VecX encode_scene(const MatX& tokens, SceneCache* cache = nullptr, double dropout = 0.0, Rng* rng = nullptr) const {
    require(tokens.cols() == cfg_.scene_token_dim, ErrorCode::ShapeMismatch,
            "scene token dim " + std::to_string(tokens.cols()) + " != " + std::to_string(cfg_.scene_token_dim));
    require(tokens.rows() >= 1 && tokens.rows() + 1 <= pe_.rows(), ErrorCode::ShapeMismatch, "scene token count");
    const Eigen::Index n = tokens.rows();
    MatX x(n + 1, cfg_.width);
    x.row(0) = ps_.mat(scene_summary_).row(0);
    x.bottomRows(n) = scene_embed_.forward(ps_, tokens);
    x += pe_.topRows(n + 1);
    SceneCache local;
    SceneCache& c = cache ? *cache : local;
    MatX h = scene_stack_.forward(ps_, x, cache ? &c.stack : nullptr, dropout, rng);
    MatX summary = h.topRows(1);
    MatX out = scene_out_.forward(ps_, summary);
    if (cache) {
      c.tokens = tokens;
      c.stack_in = x;
      c.summary = summary;
    }
    return out.row(0).transpose();
  }

  void backward_scene(VecX& grad, const SceneCache& c, const VecX& d_emb) const {
    MatX dout = d_emb.transpose();
    MatX dsummary = scene_out_.backward(ps_, grad, c.summary, dout);
    MatX dh = MatX::Zero(c.stack_in.rows(), cfg_.width);
    dh.row(0) = dsummary.row(0);
    MatX dx = scene_stack_.backward(ps_, grad, c.stack, dh);
    ps_.view(grad, scene_summary_).row(0) += dx.row(0);
    MatX dtokens_emb = dx.bottomRows(dx.rows() - 1);
    scene_embed_.backward(ps_, grad, c.tokens, dtokens_emb);
  }

  // ---- action encoder ----
  VecX encode_actions(const MatX& labels, ActionCache* cache = nullptr, double dropout = 0.0, Rng* rng = nullptr) const {
    require(labels.cols() == cfg_.n_actions, ErrorCode::ShapeMismatch, "action label width mismatch");
    require(labels.rows() == cfg_.max_frames, ErrorCode::ShapeMismatch, "action track length must equal episode length");
    const Eigen::Index n = labels.rows();
    MatX x = action_embed_.forward(ps_, labels);
    x += pe_.topRows(n);
    ActionCache local;
    ActionCache& c = cache ? *cache : local;
    MatX h = action_stack_.forward(ps_, x, cache ? &c.stack : nullptr, dropout, rng);
    MatX last = h.bottomRows(1);
    MatX pre = action_mlp1_.forward(ps_, last);
    MatX hid = nn::gelu(pre);
    MatX out = action_mlp2_.forward(ps_, hid);
    if (cache) {
      c.labels = labels;
      c.last = last;
      c.hidden_pre = pre;
      c.hidden = hid;
    }
    return out.row(0).transpose();
  }

  void backward_actions(VecX& grad, const ActionCache& c, const VecX& d_emb) const {
    MatX dout = d_emb.transpose();
    MatX dhid = action_mlp2_.backward(ps_, grad, c.hidden, dout);
    MatX dpre = nn::gelu_backward(c.hidden_pre, dhid);
    MatX dlast = action_mlp1_.backward(ps_, grad, c.last, dpre);
    MatX dh = MatX::Zero(c.labels.rows(), cfg_.width);
    dh.bottomRows(1) = dlast;
    MatX dx = action_stack_.backward(ps_, grad, c.stack, dh);
    action_embed_.backward(ps_, grad, c.labels, dx);
  }

  // ---- denoiser ----
  MatX denoise(const MatX& frames, int t, const VecX& scene_emb, const VecX& action_emb, DenoiseCache* cache = nullptr,
               double dropout = 0.0, Rng* rng = nullptr) const {
    require(frames.cols() == cfg_.joint_dim, ErrorCode::ShapeMismatch, "frame width mismatch");
    require(frames.rows() >= 1 && frames.rows() <= cfg_.max_frames, ErrorCode::ShapeMismatch, "episode length");
    require(t >= 0 && t < cfg_.diffusion_steps, ErrorCode::InvalidInput, "diffusion step out of range");
    require(scene_emb.size() == cfg_.width && action_emb.size() == cfg_.width, ErrorCode::ShapeMismatch,
            "condition embedding width mismatch");
    const Eigen::Index n = frames.rows();
    MatX x(n + 1, cfg_.width);
    x.row(0) = ps_.mat(time_table_).row(t) + scene_emb.transpose() + action_emb.transpose();
    x.bottomRows(n) = in_proj_.forward(ps_, frames);
    x += pe_.topRows(n + 1);
    DenoiseCache local;
    DenoiseCache& c = cache ? *cache : local;
    MatX h = stack_.forward(ps_, x, cache ? &c.stack : nullptr, dropout, rng);
    MatX body = h.bottomRows(n);
    MatX out = out_proj_.forward(ps_, body);
    if (cfg_.input_skip) out += skip_.forward(ps_, frames);
    if (cache) {
      c.valid = true;
      c.frames = frames;
      c.t = t;
      c.body = std::move(body);
    }
    return out;
  }

  struct ConditionGrad {
    VecX scene;
    VecX action;
  };

  // Accumulates parameter gradients into `grad`; returns gradients of the
  // two condition embeddings.
  ConditionGrad backward_denoise(VecX& grad, const DenoiseCache& c, const MatX& d_out) const {
    require(c.valid, ErrorCode::InvalidState, "denoiser backward called without a cached forward pass");
    require(grad.size() == static_cast<Eigen::Index>(ps_.size()), ErrorCode::ShapeMismatch, "gradient size mismatch");
    MatX dbody = out_proj_.backward(ps_, grad, c.body, d_out);
    MatX dh = MatX::Zero(dbody.rows() + 1, cfg_.width);
    dh.bottomRows(dbody.rows()) = dbody;
    MatX dx = stack_.backward(ps_, grad, c.stack, dh);
    ps_.view(grad, time_table_).row(c.t) += dx.row(0);
    MatX dframes_emb = dx.bottomRows(dbody.rows());
    in_proj_.backward(ps_, grad, c.frames, dframes_emb);
    if (cfg_.input_skip) skip_.backward(ps_, grad, c.frames, d_out);
    return {dx.row(0).transpose(), dx.row(0).transpose()};
  }

 private:
  DenoiserConfig cfg_;
  nn::ParamStore ps_;
  MatX pe_;

  nn::Linear scene_embed_;
  int scene_summary_ = -1;
  nn::EncoderStack scene_stack_;
  nn::Linear scene_out_;

  nn::Linear action_embed_;
  nn::EncoderStack action_stack_;
  nn::Linear action_mlp1_, action_mlp2_;

  int time_table_ = -1;
  nn::Linear in_proj_;
  nn::EncoderStack stack_;
  nn::Linear out_proj_;
  nn::Linear skip_;
};

}  // namespace motionforge
