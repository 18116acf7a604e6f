#pragma once

#include <vector>

#include <Eigen/Dense>

#include "cabingaze/errors.hpp"

// Dense building blocks with hand-derived backward passes. Sequences are
// row-per-token matrices (n x d). Backward functions accumulate parameter
// gradients into caller-provided buffers and return/fill input gradients.
namespace cabingaze::model_ops {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kLogitClamp = 50.0;

// y = x * w^T + b_row;  x: n x in, w: out x in, b: out
Mat linear_forward(const Mat& x, const Mat& w, const Vec& b);
void linear_backward(const Mat& x, const Mat& w, const Mat& dy, Mat& dw, Vec& db,
                     Mat* dx);

struct LayerNormParams {
  Vec gamma, beta;
};
struct LayerNormCache {
  Mat xhat;
  Vec inv_std;  // per row
};
Mat layernorm_forward(const Mat& x, const LayerNormParams& p, LayerNormCache* cache);
void layernorm_backward(const LayerNormCache& cache, const LayerNormParams& p,
                        const Mat& dy, LayerNormParams& grad, Mat& dx);

struct AttentionParams {
  Mat wq, wk, wv, wo;  // d x d
  Vec bq, bk, bv, bo;
};
struct AttentionCache {
  Mat x, q, k, v, z;
  std::vector<Mat> attn;  // one n x n softmax per head
};
Mat attention_forward(const Mat& x, const AttentionParams& p, int heads,
                      AttentionCache* cache);
void attention_backward(const AttentionCache& cache, const AttentionParams& p, int heads,
                        const Mat& dy, AttentionParams& grad, Mat& dx);

struct FfnParams {
  Mat w1, w2;  // ff x d, d x ff
  Vec b1, b2;
};
struct FfnCache {
  Mat x, pre;  // pre-activation of the hidden layer
};
Mat ffn_forward(const Mat& x, const FfnParams& p, FfnCache* cache);
void ffn_backward(const FfnCache& cache, const FfnParams& p, const Mat& dy,
                  FfnParams& grad, Mat& dx);

// Pre-norm encoder layer: x + attn(ln1(x)), then + ffn(ln2(.)).
struct EncoderLayerParams {
  LayerNormParams ln1, ln2;
  AttentionParams attn;
  FfnParams ffn;
};
struct EncoderLayerCache {
  LayerNormCache ln1, ln2;
  Mat h1, a, h2;
  AttentionCache attn;
  FfnCache ffn;
};
Mat encoder_layer_forward(const Mat& x, const EncoderLayerParams& p, int heads,
                          EncoderLayerCache* cache);
void encoder_layer_backward(const EncoderLayerCache& cache, const EncoderLayerParams& p,
                            int heads, const Mat& dy, EncoderLayerParams& grad, Mat& dx);

EncoderLayerParams zeros_like(const EncoderLayerParams& p);

// Cross entropy over clamped logits, computed via log-sum-exp.
struct SoftmaxCeCache {
  Vec prob;
  Vec pass;  // 1 where the clamp is inactive
  int target = 0;
};
double softmax_ce_forward(const Vec& logits, int target, SoftmaxCeCache* cache);
Vec softmax_ce_backward(const SoftmaxCeCache& cache);

Vec softmax(const Vec& logits);

}  // namespace cabingaze::model_ops
