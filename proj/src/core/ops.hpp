#pragma once

#include <vector>

#include "core/graph.hpp"

namespace dfkd {
namespace ops {

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double k);
Var abs_val(const Var& a);
Var exp_val(const Var& a);
Var sqrt_val(const Var& a); // gradient defined as 0 where the value is exactly 0
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var tanh_val(const Var& a);
Var average_list(const std::vector<Var>& xs);

// ---- shape ----
Var reshape(const Var& a, std::vector<int> shape);
Var concat_channels(const Var& a, const Var& b);
// N tensors of (B,D) -> (B,N,D); input n becomes middle index n
Var stack_rows(const std::vector<Var>& xs);
Var select_item(const Var& a, int64_t flat_index);
Var upsample_nearest2(const Var& a);

// ---- dense / convolution ----
// x (B,Din), w (Dout,Din), optional b (Dout)
Var linear(const Var& x, const Var& w, const Var& b);
// x (B,C,H,W), w (OC,C/groups,kh,kw), optional bias (OC).
// groups must be 1 (dense) or C with OC==C (depthwise).
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups);
// x (B,C,H,W), w (C,OC,kh,kw); output (B,OC,(H-1)*stride-2*pad+kh, ...)
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var global_avg_pool(const Var& x); // (B,C,H,W) -> (B,C)

// ---- normalization ----
// Training-mode batch norm over (B,C,H,W) using biased batch statistics.
// gamma/beta may be null (no affine). If save_mean/save_var are given, the
// biased batch statistics are written there so the caller can maintain
// running estimates.
Var batchnorm_train(const Var& x, const Var& gamma, const Var& beta, double eps,
                    Tensor* save_mean, Tensor* save_var);
Var batchnorm_eval(const Var& x, const Var& gamma, const Var& beta,
                   const Tensor& running_mean, const Tensor& running_var, double eps);
// Per-channel batch statistics as graph values (used when matching a frozen
// model's stored statistics against those induced by synthesized batches).
Var channel_mean(const Var& x);                       // (B,C,H,W) -> (C)
Var channel_var_biased(const Var& x, const Var& mean); // (B,C,H,W),(C) -> (C)

// ---- reductions and loss primitives ----
Var sum_rows(const Var& a);  // (B,C) -> (B)
Var mean_all(const Var& a);  // any -> scalar
Var l2_norm(const Var& a);   // any -> scalar, sqrt(sum of squares); grad 0 at 0
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var cross_entropy_vec(const Var& logits, const std::vector<int>& labels); // (B,C) -> (B)
Var dot_const(const Var& v, const Tensor& weights); // scalar, weights held fixed

// ---- attention primitives ----
// feats (B,N,D), q (D) -> (B,N): scores[b,n] = dot(feats[b,n], q) * scale
Var attention_scores(const Var& feats, const Var& q, double scale);
// weights (B,N), logits (B,N,C) -> (B,C)
Var attention_combine(const Var& weights, const Var& logits);

} // namespace ops
} // namespace dfkd
