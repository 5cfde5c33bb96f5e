#include "odin/encoder.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace odin {

Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& bias, LayerNormCache* cache) {
  const auto d = x.cols();
  Vector mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  Vector var = centered.array().square().rowwise().sum() / static_cast<double>(d);
  Vector inv_std = (var.array() + kLayerNormEps).rsqrt();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix y = (xhat.array().rowwise() * gain.transpose().array()).rowwise() + bias.transpose().array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

void layer_norm_backward(const LayerNormCache& cache, const Matrix& dy, const Vector& gain,
                         Matrix& dx, Vector& dgain, Vector& dbias) {
  dgain += (dy.array() * cache.xhat.array()).colwise().sum().transpose().matrix();
  dbias += dy.colwise().sum().transpose();
  Matrix dxhat = dy.array().rowwise() * gain.transpose().array();
  Vector mean_dxhat = dxhat.rowwise().mean();
  Vector mean_dxhat_xhat = (dxhat.array() * cache.xhat.array()).rowwise().mean();
  dx = (dxhat.colwise() - mean_dxhat).array() -
       cache.xhat.array().colwise() * mean_dxhat_xhat.array();
  dx = dx.array().colwise() * cache.inv_std.array();
}

Matrix gelu(const Matrix& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); });
}

Matrix gelu_grad(const Matrix& x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return x.unaryExpr([](double v) {
    const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
  });
}

Matrix embed(std::span<const int> tokens, const ParamSet& params) {
  const auto n = static_cast<Eigen::Index>(tokens.size());
  if (n == 0) throw Error("embed: empty token sequence");
  if (n > params.pos_emb.rows())
    throw Error("embed: sequence length " + std::to_string(n) + " exceeds max_len");
  Matrix out(n, params.dims.d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int id = tokens[static_cast<std::size_t>(i)];
    if (id < 0 || id >= params.token_emb.rows())
      throw Error("embed: token id " + std::to_string(id) + " out of range");
    out.row(i) = params.token_emb.row(id) + params.pos_emb.row(i);
  }
  return out;
}

void embed_backward(std::span<const int> tokens, const Matrix& d_states, ParamSet& grads) {
  for (Eigen::Index i = 0; i < d_states.rows(); ++i) {
    grads.token_emb.row(tokens[static_cast<std::size_t>(i)]) += d_states.row(i);
    grads.pos_emb.row(i) += d_states.row(i);
  }
}

namespace {

void softmax_rows(Matrix& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp();
    s.row(r) /= s.row(r).sum();
  }
}

}  // namespace

Matrix asymmetric_attention(const Matrix& states, const Vector* agg, const LayerParams& lp,
                            int heads, AttentionCache* cache) {
  const auto n = states.rows();
  const auto d = states.cols();
  if (heads < 1 || d % heads != 0)
    throw ConfigError("attention width " + std::to_string(d) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  if (agg && agg->size() != d) throw Error("attention: agg token has wrong width");

  Matrix kv_in;
  if (agg) {
    kv_in.resize(n + 1, d);
    kv_in.row(0) = agg->transpose();
    kv_in.bottomRows(n) = states;
  }
  const Matrix& kv = agg ? kv_in : states;

  Matrix q = (states * lp.wq).rowwise() + lp.bq.transpose();
  Matrix k = (kv * lp.wk).rowwise() + lp.bk.transpose();
  Matrix v = (kv * lp.wv).rowwise() + lp.bv.transpose();
  const auto dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix o(n, d);
  std::vector<Matrix> probs;
  if (cache) probs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Matrix p = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
    softmax_rows(p);
    o.middleCols(h * dh, dh) = p * v.middleCols(h * dh, dh);
    if (cache) probs.push_back(std::move(p));
  }
  Matrix out = (o * lp.wo).rowwise() + lp.bo.transpose();
  if (cache) {
    cache->x = states;
    cache->kv_in = kv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->o = std::move(o);
    cache->probs = std::move(probs);
    cache->has_agg = agg != nullptr;
  }
  return out;
}

void asymmetric_attention_backward(const AttentionCache& c, const Matrix& d_out,
                                   const LayerParams& lp, int heads, LayerParams& g,
                                   Matrix& d_states, Vector* d_agg) {
  const auto d = c.x.cols();
  const auto dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  g.wo.noalias() += c.o.transpose() * d_out;
  g.bo += d_out.colwise().sum().transpose();
  Matrix d_o = d_out * lp.wo.transpose();

  Matrix d_q(c.q.rows(), d), d_k(c.k.rows(), d), d_v(c.v.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const Matrix& p = c.probs[static_cast<std::size_t>(h)];
    auto d_oh = d_o.middleCols(h * dh, dh);
    Matrix d_p = d_oh * c.v.middleCols(h * dh, dh).transpose();
    d_v.middleCols(h * dh, dh) = p.transpose() * d_oh;
    Vector row_dot = (d_p.array() * p.array()).rowwise().sum();
    Matrix d_s = p.array() * (d_p.colwise() - row_dot).array();
    d_q.middleCols(h * dh, dh) = d_s * c.k.middleCols(h * dh, dh) * scale;
    d_k.middleCols(h * dh, dh) = d_s.transpose() * c.q.middleCols(h * dh, dh) * scale;
  }
  g.wq.noalias() += c.x.transpose() * d_q;
  g.bq += d_q.colwise().sum().transpose();
  g.wk.noalias() += c.kv_in.transpose() * d_k;
  g.bk += d_k.colwise().sum().transpose();
  g.wv.noalias() += c.kv_in.transpose() * d_v;
  g.bv += d_v.colwise().sum().transpose();

  Matrix d_kv = d_k * lp.wk.transpose() + d_v * lp.wv.transpose();
  d_states = d_q * lp.wq.transpose();
  if (c.has_agg) {
    d_states += d_kv.bottomRows(c.x.rows());
    if (d_agg) *d_agg = d_kv.row(0).transpose();
  } else {
    d_states += d_kv;
  }
}

Matrix transformer_layer(const Matrix& states, const Vector* agg, const LayerParams& lp, int heads,
                         LayerCache* cache) {
  Matrix attn = asymmetric_attention(states, agg, lp, heads, cache ? &cache->attn : nullptr);
  Matrix h1 = layer_norm(states + attn, lp.ln1_gain, lp.ln1_bias, cache ? &cache->ln1 : nullptr);
  Matrix ff_pre = (h1 * lp.w_ff1).rowwise() + lp.b_ff1.transpose();
  Matrix ff_act = gelu(ff_pre);
  Matrix ff = (ff_act * lp.w_ff2).rowwise() + lp.b_ff2.transpose();
  Matrix out = layer_norm(h1 + ff, lp.ln2_gain, lp.ln2_bias, cache ? &cache->ln2 : nullptr);
  if (cache) {
    cache->h1 = std::move(h1);
    cache->ff_pre = std::move(ff_pre);
    cache->ff_act = std::move(ff_act);
  }
  return out;
}

void transformer_layer_backward(const LayerCache& c, const Matrix& d_out, const LayerParams& lp,
                                int heads, LayerParams& g, Matrix& d_states, Vector* d_agg) {
  Matrix d_sum2;
  layer_norm_backward(c.ln2, d_out, lp.ln2_gain, d_sum2, g.ln2_gain, g.ln2_bias);
  // d_sum2 flows to h1 directly and through the MLP.
  g.w_ff2.noalias() += c.ff_act.transpose() * d_sum2;
  g.b_ff2 += d_sum2.colwise().sum().transpose();
  Matrix d_act = d_sum2 * lp.w_ff2.transpose();
  Matrix d_pre = d_act.array() * gelu_grad(c.ff_pre).array();
  g.w_ff1.noalias() += c.h1.transpose() * d_pre;
  g.b_ff1 += d_pre.colwise().sum().transpose();
  Matrix d_h1 = d_sum2 + d_pre * lp.w_ff1.transpose();

  Matrix d_sum1;
  layer_norm_backward(c.ln1, d_h1, lp.ln1_gain, d_sum1, g.ln1_gain, g.ln1_bias);
  Matrix d_attn_in;
  asymmetric_attention_backward(c.attn, d_sum1, lp, heads, g, d_attn_in, d_agg);
  d_states = d_sum1 + d_attn_in;
}

Vector mlm_logits(const Vector& state, const ParamSet& params) {
  return params.mlm_weights() * state;
}

}  // namespace odin
