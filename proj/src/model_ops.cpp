#include "cabingaze/model_ops.hpp"

#include <cmath>

namespace cabingaze::model_ops {

Mat linear_forward(const Mat& x, const Mat& w, const Vec& b) {
  if (x.cols() != w.cols() || w.rows() != b.size()) {
    throw ShapeMismatch("linear: x " + std::to_string(x.cols()) + " vs w " +
                        std::to_string(w.cols()));
  }
  return (x * w.transpose()).rowwise() + b.transpose();
}

void linear_backward(const Mat& x, const Mat& w, const Mat& dy, Mat& dw, Vec& db,
                     Mat* dx) {
  dw += dy.transpose() * x;
  db += dy.colwise().sum().transpose();
  if (dx != nullptr) *dx = dy * w;
}

Mat layernorm_forward(const Mat& x, const LayerNormParams& p, LayerNormCache* cache) {
  const auto n = x.rows();
  const auto d = x.cols();
  Mat xhat(n, d);
  Vec inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (x.row(r).array() - mu) * is;
    inv_std(r) = is;
  }
  if (cache != nullptr) {
    cache->xhat = xhat;
    cache->inv_std = inv_std;
  }
  return (xhat.array().rowwise() * p.gamma.transpose().array()).rowwise() +
         p.beta.transpose().array();
}

void layernorm_backward(const LayerNormCache& cache, const LayerNormParams& p,
                        const Mat& dy, LayerNormParams& grad, Mat& dx) {
  const auto n = dy.rows();
  const auto d = dy.cols();
  grad.gamma += (dy.array() * cache.xhat.array()).colwise().sum().transpose().matrix();
  grad.beta += dy.colwise().sum().transpose();
  dx.resize(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::ArrayXd g = dy.row(r).transpose().array() * p.gamma.array();
    const double mg = g.mean();
    const double mgx = (g * cache.xhat.row(r).transpose().array()).mean();
    dx.row(r) = (cache.inv_std(r) *
                 (g - mg - cache.xhat.row(r).transpose().array() * mgx))
                    .matrix()
                    .transpose();
  }
}

Mat attention_forward(const Mat& x, const AttentionParams& p, int heads,
                      AttentionCache* cache) {
  const auto n = x.rows();
  const auto d = x.cols();
  if (d % heads != 0) {
    throw ShapeMismatch("attention width not divisible by head count");
  }
  const auto dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Mat q = linear_forward(x, p.wq, p.bq);
  const Mat k = linear_forward(x, p.wk, p.bk);
  const Mat v = linear_forward(x, p.wv, p.bv);

  Mat z(n, d);
  std::vector<Mat> attn(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const auto qs = q.middleCols(h * dh, dh);
    const auto ks = k.middleCols(h * dh, dh);
    const auto vs = v.middleCols(h * dh, dh);
    Mat s = qs * ks.transpose() * scale;
    for (Eigen::Index r = 0; r < n; ++r) {
      const double m = s.row(r).maxCoeff();
      Eigen::ArrayXd e = (s.row(r).transpose().array() - m).exp();
      s.row(r) = (e / e.sum()).matrix().transpose();
    }
    attn[static_cast<size_t>(h)] = s;
    z.middleCols(h * dh, dh) = s * vs;
  }

  if (cache != nullptr) {
    cache->x = x;
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->z = z;
    cache->attn = attn;
  }
  return linear_forward(z, p.wo, p.bo);
}

void attention_backward(const AttentionCache& cache, const AttentionParams& p, int heads,
                        const Mat& dy, AttentionParams& grad, Mat& dx) {
  const auto n = cache.x.rows();
  const auto d = cache.x.cols();
  const auto dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat dz;
  linear_backward(cache.z, p.wo, dy, grad.wo, grad.bo, &dz);

  Mat dq = Mat::Zero(n, d);
  Mat dk = Mat::Zero(n, d);
  Mat dv = Mat::Zero(n, d);
  for (int h = 0; h < heads; ++h) {
    const Mat& a = cache.attn[static_cast<size_t>(h)];
    const auto qs = cache.q.middleCols(h * dh, dh);
    const auto ks = cache.k.middleCols(h * dh, dh);
    const auto vs = cache.v.middleCols(h * dh, dh);
    const auto dzs = dz.middleCols(h * dh, dh);

    const Mat da = dzs * vs.transpose();
    dv.middleCols(h * dh, dh) = a.transpose() * dzs;

    Mat ds(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const double dot = da.row(r).dot(a.row(r));
      ds.row(r) = a.row(r).array() * (da.row(r).array() - dot);
    }
    dq.middleCols(h * dh, dh) = ds * ks * scale;
    dk.middleCols(h * dh, dh) = ds.transpose() * qs * scale;
  }

  Mat dx_q, dx_k, dx_v;
  linear_backward(cache.x, p.wq, dq, grad.wq, grad.bq, &dx_q);
  linear_backward(cache.x, p.wk, dk, grad.wk, grad.bk, &dx_k);
  linear_backward(cache.x, p.wv, dv, grad.wv, grad.bv, &dx_v);
  dx = dx_q + dx_k + dx_v;
}

Mat ffn_forward(const Mat& x, const FfnParams& p, FfnCache* cache) {
  const Mat pre = linear_forward(x, p.w1, p.b1);
  if (cache != nullptr) {
    cache->x = x;
    cache->pre = pre;
  }
  return linear_forward(pre.cwiseMax(0.0), p.w2, p.b2);
}

void ffn_backward(const FfnCache& cache, const FfnParams& p, const Mat& dy,
                  FfnParams& grad, Mat& dx) {
  const Mat hidden = cache.pre.cwiseMax(0.0);
  Mat dhidden;
  linear_backward(hidden, p.w2, dy, grad.w2, grad.b2, &dhidden);
  const Mat dpre =
      (dhidden.array() * (cache.pre.array() > 0.0).cast<double>()).matrix();
  linear_backward(cache.x, p.w1, dpre, grad.w1, grad.b1, &dx);
}

Mat encoder_layer_forward(const Mat& x, const EncoderLayerParams& p, int heads,
                          EncoderLayerCache* cache) {
  LayerNormCache* c1 = cache != nullptr ? &cache->ln1 : nullptr;
  AttentionCache* ca = cache != nullptr ? &cache->attn : nullptr;
  const Mat h1 = layernorm_forward(x, p.ln1, c1);
  const Mat a = x + attention_forward(h1, p.attn, heads, ca);
  LayerNormCache* c2 = cache != nullptr ? &cache->ln2 : nullptr;
  FfnCache* cf = cache != nullptr ? &cache->ffn : nullptr;
  const Mat h2 = layernorm_forward(a, p.ln2, c2);
  const Mat y = a + ffn_forward(h2, p.ffn, cf);
  if (cache != nullptr) {
    cache->h1 = h1;
    cache->a = a;
    cache->h2 = h2;
  }
  return y;
}

void encoder_layer_backward(const EncoderLayerCache& cache, const EncoderLayerParams& p,
                            int heads, const Mat& dy, EncoderLayerParams& grad, Mat& dx) {
  Mat dh2;
  ffn_backward(cache.ffn, p.ffn, dy, grad.ffn, dh2);
  Mat da;
  layernorm_backward(cache.ln2, p.ln2, dh2, grad.ln2, da);
  da += dy;  // residual

  Mat dh1;
  attention_backward(cache.attn, p.attn, heads, da, grad.attn, dh1);
  layernorm_backward(cache.ln1, p.ln1, dh1, grad.ln1, dx);
  dx += da;  // residual
}

EncoderLayerParams zeros_like(const EncoderLayerParams& p) {
  EncoderLayerParams z;
  z.ln1.gamma = Vec::Zero(p.ln1.gamma.size());
  z.ln1.beta = Vec::Zero(p.ln1.beta.size());
  z.ln2.gamma = Vec::Zero(p.ln2.gamma.size());
  z.ln2.beta = Vec::Zero(p.ln2.beta.size());
  z.attn.wq = Mat::Zero(p.attn.wq.rows(), p.attn.wq.cols());
  z.attn.wk = Mat::Zero(p.attn.wk.rows(), p.attn.wk.cols());
  z.attn.wv = Mat::Zero(p.attn.wv.rows(), p.attn.wv.cols());
  z.attn.wo = Mat::Zero(p.attn.wo.rows(), p.attn.wo.cols());
  z.attn.bq = Vec::Zero(p.attn.bq.size());
  z.attn.bk = Vec::Zero(p.attn.bk.size());
  z.attn.bv = Vec::Zero(p.attn.bv.size());
  z.attn.bo = Vec::Zero(p.attn.bo.size());
  z.ffn.w1 = Mat::Zero(p.ffn.w1.rows(), p.ffn.w1.cols());
  z.ffn.w2 = Mat::Zero(p.ffn.w2.rows(), p.ffn.w2.cols());
  z.ffn.b1 = Vec::Zero(p.ffn.b1.size());
  z.ffn.b2 = Vec::Zero(p.ffn.b2.size());
  return z;
}

double softmax_ce_forward(const Vec& logits, int target, SoftmaxCeCache* cache) {
  if (target < 0 || target >= logits.size()) {
    throw LabelMissing("class index " + std::to_string(target) + " out of range");
  }
  Vec c = logits.cwiseMin(kLogitClamp).cwiseMax(-kLogitClamp);
  const double m = c.maxCoeff();
  const Eigen::ArrayXd shifted = c.array() - m;
  const double lse = m + std::log(shifted.exp().sum());
  const Vec prob = (c.array() - lse).exp().matrix();
  if (cache != nullptr) {
    cache->prob = prob;
    cache->pass = (logits.array().abs() < kLogitClamp).cast<double>().matrix();
    cache->target = target;
  }
  return lse - c(target);
}

Vec softmax_ce_backward(const SoftmaxCeCache& cache) {
  Vec d = cache.prob;
  d(cache.target) -= 1.0;
  return (d.array() * cache.pass.array()).matrix();
}

Vec softmax(const Vec& logits) {
  const Vec c = logits.cwiseMin(kLogitClamp).cwiseMax(-kLogitClamp);
  const double m = c.maxCoeff();
  const Eigen::ArrayXd e = (c.array() - m).exp();
  return (e / e.sum()).matrix();
}

}  // namespace cabingaze::model_ops
