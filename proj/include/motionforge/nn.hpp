#pragma once

// Minimal 64-bit transformer building blocks with hand-written backward
// passes. Parameters live in one flat vector (ParamStore) so optimizers and
// checkpoints can treat the model as a single array; layers hold tensor
// handles into it.

#include "motionforge/core.hpp"

#include <string>
#include <vector>

namespace motionforge::nn {

using MapMat = Eigen::Map<MatX>;
using ConstMapMat = Eigen::Map<const MatX>;

struct TensorInfo {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

class ParamStore {
 public:
  int add(const std::string& name, int rows, int cols) {
    tensors_.push_back({name, rows, cols, total_});
    total_ += static_cast<std::size_t>(rows) * cols;
    return static_cast<int>(tensors_.size()) - 1;
  }

  void allocate() { values_ = VecX::Zero(static_cast<Eigen::Index>(total_)); }

  std::size_t size() const { return total_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  VecX& values() { return values_; }
  const VecX& values() const { return values_; }

  VecX zeros() const { return VecX::Zero(static_cast<Eigen::Index>(total_)); }

  MapMat mat(int id) { return view(values_, id); }
  ConstMapMat mat(int id) const { return view(values_, id); }

  MapMat view(VecX& buf, int id) const {
    const auto& t = tensors_[id];
    return MapMat(buf.data() + t.offset, t.rows, t.cols);
  }
  ConstMapMat view(const VecX& buf, int id) const {
    const auto& t = tensors_[id];
    return ConstMapMat(buf.data() + t.offset, t.rows, t.cols);
  }

 private:
  std::vector<TensorInfo> tensors_;
  std::size_t total_ = 0;
  VecX values_;
};

// Sinusoidal position encoding, positions x width.
inline MatX sinusoidal_encoding(int positions, int width) {
  MatX pe(positions, width);
  for (int p = 0; p < positions; ++p)
    for (int i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -2.0 * (i / 2) / width);
      pe(p, i) = (i % 2 == 0) ? std::sin(p * freq) : std::cos(p * freq);
    }
  return pe;
}

struct Linear {
  int w = -1;
  int b = -1;
  int in = 0;
  int out = 0;

  static Linear create(ParamStore& ps, const std::string& name, int in, int out) {
    return {ps.add(name + ".weight", in, out), ps.add(name + ".bias", 1, out), in, out};
  }

  void init(ParamStore& ps, Rng& rng, double gain = 1.0) const {
    auto W = ps.mat(w);
    const double std = gain / std::sqrt(static_cast<double>(in));
    for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = std * rng.normal();
    ps.mat(b).setZero();
  }

  MatX forward(const ParamStore& ps, const MatX& x) const {
    MatX y = x * ps.mat(w);
    y.rowwise() += ps.mat(b).row(0);
    return y;
  }

  MatX backward(const ParamStore& ps, VecX& grad, const MatX& x, const MatX& dy) const {
    ps.view(grad, w).noalias() += x.transpose() * dy;
    ps.view(grad, b).row(0) += dy.colwise().sum();
    return dy * ps.mat(w).transpose();
  }
};

struct LayerNorm {
  int gamma = -1;
  int beta = -1;
  int width = 0;
  static constexpr double kEps = 1e-5;

  struct Cache {
    MatX xhat;
    VecX inv_std;
  };

  static LayerNorm create(ParamStore& ps, const std::string& name, int width) {
    return {ps.add(name + ".gamma", 1, width), ps.add(name + ".beta", 1, width), width};
  }

  void init(ParamStore& ps) const {
    ps.mat(gamma).setOnes();
    ps.mat(beta).setZero();
  }

  MatX forward(const ParamStore& ps, const MatX& x, Cache* cache) const {
    const Eigen::Index n = x.rows();
    MatX xhat(n, width);
    VecX inv(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const double mu = x.row(r).mean();
      const double var = (x.row(r).array() - mu).square().mean();
      inv(r) = 1.0 / std::sqrt(var + kEps);
      xhat.row(r) = (x.row(r).array() - mu) * inv(r);
    }
    MatX y = xhat.array().rowwise() * ps.mat(gamma).row(0).array();
    y.rowwise() += ps.mat(beta).row(0);
    if (cache) *cache = {xhat, inv};
    return y;
  }

  MatX backward(const ParamStore& ps, VecX& grad, const Cache& c, const MatX& dy) const {
    ps.view(grad, gamma).row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    ps.view(grad, beta).row(0) += dy.colwise().sum();
    const MatX dxhat = dy.array().rowwise() * ps.mat(gamma).row(0).array();
    MatX dx(dy.rows(), width);
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      const double m1 = dxhat.row(r).mean();
      const double m2 = (dxhat.row(r).array() * c.xhat.row(r).array()).mean();
      dx.row(r) = c.inv_std(r) * (dxhat.row(r).array() - m1 - c.xhat.row(r).array() * m2);
    }
    return dx;
  }
};

// tanh-approximated GELU.
inline MatX gelu(const MatX& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v))); });
}

inline MatX gelu_backward(const MatX& x, const MatX& dy) {
  constexpr double c = 0.7978845608028654;
  MatX d = x.unaryExpr([](double v) {
    const double u = c * (v + 0.044715 * v * v * v);
    const double t = std::tanh(u);
    return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * v * v);
  });
  return d.cwiseProduct(dy);
}

struct Attention {
  Linear q, k, v, o;
  int width = 0;
  int heads = 1;

  struct Cache {
    MatX x, Q, K, V, concat;
    std::vector<MatX> probs;
  };

  static Attention create(ParamStore& ps, const std::string& name, int width, int heads) {
    require(heads > 0 && width % heads == 0, ErrorCode::InvalidInput, "width must be divisible by heads");
    return {Linear::create(ps, name + ".q", width, width), Linear::create(ps, name + ".k", width, width),
            Linear::create(ps, name + ".v", width, width), Linear::create(ps, name + ".o", width, width), width, heads};
  }

  void init(ParamStore& ps, Rng& rng) const {
    q.init(ps, rng);
    k.init(ps, rng);
    v.init(ps, rng);
    o.init(ps, rng);
  }

  MatX forward(const ParamStore& ps, const MatX& x, Cache* cache) const {
    const int dh = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    MatX Q = q.forward(ps, x), K = k.forward(ps, x), V = v.forward(ps, x);
    MatX concat(x.rows(), width);
    std::vector<MatX> probs;
    probs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
      MatX s = Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose() * scale;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
      }
      concat.middleCols(h * dh, dh) = s * V.middleCols(h * dh, dh);
      probs.push_back(std::move(s));
    }
    MatX y = o.forward(ps, concat);
    if (cache) *cache = {x, std::move(Q), std::move(K), std::move(V), std::move(concat), std::move(probs)};
    return y;
  }

  MatX backward(const ParamStore& ps, VecX& grad, const Cache& c, const MatX& dy) const {
    const int dh = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const MatX dconcat = o.backward(ps, grad, c.concat, dy);
    MatX dQ(c.Q.rows(), width), dK(c.K.rows(), width), dV(c.V.rows(), width);
    for (int h = 0; h < heads; ++h) {
      const MatX& a = c.probs[h];
      const MatX dO = dconcat.middleCols(h * dh, dh);
      const MatX dA = dO * c.V.middleCols(h * dh, dh).transpose();
      dV.middleCols(h * dh, dh) = a.transpose() * dO;
      MatX dS = a.array() * (dA.colwise() - (dA.array() * a.array()).rowwise().sum().matrix()).array();
      dS *= scale;
      dQ.middleCols(h * dh, dh) = dS * c.K.middleCols(h * dh, dh);
      dK.middleCols(h * dh, dh) = dS.transpose() * c.Q.middleCols(h * dh, dh);
    }
    MatX dx = q.backward(ps, grad, c.x, dQ);
    dx += k.backward(ps, grad, c.x, dK);
    dx += v.backward(ps, grad, c.x, dV);
    return dx;
  }
};

// Pre-norm encoder layer: x + drop(attn(ln1(x))), then + drop(ffn(ln2(.))).
struct EncoderLayer {
  LayerNorm ln1, ln2;
  Attention attn;
  Linear ff1, ff2;

  struct Cache {
    LayerNorm::Cache ln1, ln2;
    Attention::Cache attn;
    MatX h2, pre_act, act;
    MatX drop_attn, drop_ffn;  // scaled keep masks, empty when dropout is off
  };

  static EncoderLayer create(ParamStore& ps, const std::string& name, int width, int heads, int ffn) {
    return {LayerNorm::create(ps, name + ".ln1", width), LayerNorm::create(ps, name + ".ln2", width),
            Attention::create(ps, name + ".attn", width, heads), Linear::create(ps, name + ".ff1", width, ffn),
            Linear::create(ps, name + ".ff2", ffn, width)};
  }

  void init(ParamStore& ps, Rng& rng) const {
    ln1.init(ps);
    ln2.init(ps);
    attn.init(ps, rng);
    ff1.init(ps, rng);
    ff2.init(ps, rng);
  }

  static MatX dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
    MatX m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < p ? 0.0 : 1.0 / (1.0 - p);
    return m;
  }

  MatX forward(const ParamStore& ps, const MatX& x, Cache* cache, double dropout = 0.0, Rng* rng = nullptr) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    const bool drop = dropout > 0 && rng;
    MatX a = attn.forward(ps, ln1.forward(ps, x, &c.ln1), &c.attn);
    if (drop) {
      c.drop_attn = dropout_mask(a.rows(), a.cols(), dropout, *rng);
      a = a.cwiseProduct(c.drop_attn);
    } else {
      c.drop_attn.resize(0, 0);
    }
    MatX x1 = x + a;
    c.h2 = ln2.forward(ps, x1, &c.ln2);
    c.pre_act = ff1.forward(ps, c.h2);
    c.act = gelu(c.pre_act);
    MatX f = ff2.forward(ps, c.act);
    if (drop) {
      c.drop_ffn = dropout_mask(f.rows(), f.cols(), dropout, *rng);
      f = f.cwiseProduct(c.drop_ffn);
    } else {
      c.drop_ffn.resize(0, 0);
    }
    return x1 + f;
  }

  MatX backward(const ParamStore& ps, VecX& grad, const Cache& c, const MatX& dy) const {
    MatX df = c.drop_ffn.size() ? MatX(dy.cwiseProduct(c.drop_ffn)) : dy;
    MatX dact = ff2.backward(ps, grad, c.act, df);
    MatX dpre = gelu_backward(c.pre_act, dact);
    MatX dh2 = ff1.backward(ps, grad, c.h2, dpre);
    MatX dx1 = dy + ln2.backward(ps, grad, c.ln2, dh2);
    MatX da = c.drop_attn.size() ? MatX(dx1.cwiseProduct(c.drop_attn)) : dx1;
    MatX dh1 = attn.backward(ps, grad, c.attn, da);
    return dx1 + ln1.backward(ps, grad, c.ln1, dh1);
  }
};

// Stack of encoder layers followed by a final LayerNorm.
struct EncoderStack {
  std::vector<EncoderLayer> layers;
  LayerNorm final_ln;

  struct Cache {
    std::vector<EncoderLayer::Cache> layers;
    LayerNorm::Cache final_ln;
  };

  static EncoderStack create(ParamStore& ps, const std::string& name, int width, int heads, int ffn, int depth) {
    EncoderStack s;
    for (int i = 0; i < depth; ++i)
      s.layers.push_back(EncoderLayer::create(ps, name + ".layer" + std::to_string(i), width, heads, ffn));
    s.final_ln = LayerNorm::create(ps, name + ".final_ln", width);
    return s;
  }

  void init(ParamStore& ps, Rng& rng) const {
    for (const auto& l : layers) l.init(ps, rng);
    final_ln.init(ps);
  }

  MatX forward(const ParamStore& ps, const MatX& x, Cache* cache, double dropout = 0.0, Rng* rng = nullptr) const {
    if (cache) cache->layers.resize(layers.size());
    MatX h = x;
    for (std::size_t i = 0; i < layers.size(); ++i)
      h = layers[i].forward(ps, h, cache ? &cache->layers[i] : nullptr, dropout, rng);
    return final_ln.forward(ps, h, cache ? &cache->final_ln : nullptr);
  }

  MatX backward(const ParamStore& ps, VecX& grad, const Cache& c, const MatX& dy) const {
    MatX d = final_ln.backward(ps, grad, c.final_ln, dy);
    for (std::size_t i = layers.size(); i-- > 0;) d = layers[i].backward(ps, grad, c.layers[i], d);
    return d;
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction over a flat parameter vector.
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::size_t n, AdamConfig cfg = {})
      : cfg_(cfg), m_(VecX::Zero(static_cast<Eigen::Index>(n))), v_(VecX::Zero(static_cast<Eigen::Index>(n))) {}

  void step(VecX& params, const VecX& grad, double lr) {
    require(params.size() == m_.size() && grad.size() == m_.size(), ErrorCode::ShapeMismatch, "adam size mismatch");
    ++t_;
    m_ = cfg_.beta1 * m_ + (1 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1 - cfg_.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    if (lr == 0.0) return;
    params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
  }

  long steps() const { return t_; }
  const VecX& first_moment() const { return m_; }
  const VecX& second_moment() const { return v_; }

 private:
  AdamConfig cfg_;
  VecX m_, v_;
  long t_ = 0;
};

}  // namespace motionforge::nn
