#pragma once

#include <span>
#include <vector>

#include "odin/common.hpp"
#include "odin/params.hpp"

namespace odin {

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Matrix xhat;
  Vector inv_std;
};

/// Row-wise layer normalization.
Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& bias,
                  LayerNormCache* cache = nullptr);
/// Accumulates into dgain/dbias; overwrites dx.
void layer_norm_backward(const LayerNormCache& cache, const Matrix& dy, const Vector& gain,
                         Matrix& dx, Vector& dgain, Vector& dbias);

Matrix gelu(const Matrix& x);
Matrix gelu_grad(const Matrix& x);

/// Token + position embedding lookup (the initial token states T^0).
Matrix embed(std::span<const int> tokens, const ParamSet& params);
void embed_backward(std::span<const int> tokens, const Matrix& d_states, ParamSet& grads);

struct AttentionCache {
  Matrix x;      // n x d query-side input
  Matrix kv_in;  // (n or n+1) x d key/value-side input
  Matrix q, k, v, o;
  std::vector<Matrix> probs;  // per head, n x kv rows
  bool has_agg = false;
};

/// Multi-head attention in which the n text rows emit queries and the
/// optional graph-enhanced token joins only the key/value side, so the
/// output has exactly n rows.
Matrix asymmetric_attention(const Matrix& states, const Vector* agg, const LayerParams& lp,
                            int heads, AttentionCache* cache = nullptr);

/// Gradients of the parameters are accumulated into `grads`; d_states is
/// overwritten; d_agg (when the forward had an agg token) is overwritten.
void asymmetric_attention_backward(const AttentionCache& cache, const Matrix& d_out,
                                   const LayerParams& lp, int heads, LayerParams& grads,
                                   Matrix& d_states, Vector* d_agg);

struct LayerCache {
  AttentionCache attn;
  LayerNormCache ln1, ln2;
  Matrix h1;      // output of first sublayer
  Matrix ff_pre;  // h1 * W_ff1 + b
  Matrix ff_act;  // gelu(ff_pre)
};

/// Post-norm block: H = LN(X + MHAasy([agg; X])), out = LN(H + MLP(H)).
Matrix transformer_layer(const Matrix& states, const Vector* agg, const LayerParams& lp, int heads,
                         LayerCache* cache = nullptr);

void transformer_layer_backward(const LayerCache& cache, const Matrix& d_out, const LayerParams& lp,
                                int heads, LayerParams& grads, Matrix& d_states, Vector* d_agg);

/// Score of every vocabulary entry for one hidden state: q_w . state.
Vector mlm_logits(const Vector& state, const ParamSet& params);

}  // namespace odin
