#include "cabingaze/model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "cabingaze/metrics.hpp"
#include "cabingaze/model_ops.hpp"
#include "cabingaze/normalize.hpp"

namespace cabingaze::model {

using model_ops::Mat;
using model_ops::Vec;

namespace {
constexpr std::array<int, 4> kStrides = {4, 8, 16, 32};
}

void ModelConfig::validate() const {
  if (image_size < 32 || image_size % 32 != 0) {
    throw ConfigError("image_size must be a positive multiple of 32");
  }
  if (width < 2 || heads < 1 || width % heads != 0) {
    throw ConfigError("width must be divisible by heads");
  }
  if (stream_layers < 1 || fusion_layers < 1 || positional_layers < 1 ||
      zone_fusion_layers < 1) {
    throw ConfigError("transformer depths must be at least 1");
  }
  if (ff_mult < 1 || head_hidden < 1) {
    throw ConfigError("ff_mult and head_hidden must be positive");
  }
  if (triplane_bands < 1 || pose_bands < 1) {
    throw ConfigError("encoding bands must be at least 1");
  }
  if (!(triplane_scale > 0.0) || !(pose_scale > 0.0)) {
    throw ConfigError("encoding scales must be positive");
  }
}

ModelConfig ModelConfig::tiny() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.image_size = 224;
  c.width = 128;
  c.heads = 8;
  c.stream_layers = 6;
  c.fusion_layers = 6;
  c.positional_layers = 2;
  c.zone_fusion_layers = 6;
  c.ff_mult = 2;
  c.head_hidden = 64;
  return c;
}

int ParamLayout::add(const std::string& name, int rows, int cols, Entry::Init init,
                     int fan_in) {
  if (by_name.count(name) != 0) throw BadLayout("duplicate parameter name " + name);
  Entry e;
  e.name = name;
  e.offset = total;
  e.rows = rows;
  e.cols = cols;
  e.fan_in = fan_in;
  e.init = init;
  const int idx = static_cast<int>(entries.size());
  entries.push_back(e);
  by_name.emplace(name, idx);
  total += rows * cols;
  return idx;
}

int ParamLayout::id(const std::string& name) const {
  const auto it = by_name.find(name);
  if (it == by_name.end()) throw BadLayout("unknown parameter name " + name);
  return it->second;
}

// ---------------------------------------------------------------------------

struct ForwardCache {
  struct Head {
    Vec x, pre;
  };

  std::array<Vec, 4> pooled_n, pooled_o, feat_n, feat_o;
  std::vector<model_ops::EncoderLayerCache> stream_n, stream_o, fusion, positional,
      zone_fusion;
  Vec f_n_final, f_o_final, f_visual;
  Vec pose_pe_n, pose_pe_o;
  Mat fusion_in, fusion_out;
  Vec f_gaze;
  std::array<Head, 4> head_level_n, head_level_o;
  Head head_final_n, head_final_o, head_fused;
  Vec encoding;  // constant for backward: the stop-gradient boundary
  std::array<Vec, 3> plane_in;
  Mat pos_in, pos_out;
  Vec f_pos;
  Mat zone_in, zone_out;
  Vec f_zone;
  Head head_zone_pos, head_zone_visual, head_zone_fused;
};

struct ModelAccess {
  using LayerIds = GazeModel::LayerIds;
  using LinearIds = GazeModel::LinearIds;
  using HeadIds = GazeModel::HeadIds;

  static Mat mat(const GazeModel& m, int id) {
    const auto& e = m.layout_.entry(id);
    return Eigen::Map<const Mat>(m.params_.data() + e.offset, e.rows, e.cols);
  }
  static Vec vec(const GazeModel& m, int id) {
    const auto& e = m.layout_.entry(id);
    return Eigen::Map<const Vec>(m.params_.data() + e.offset, e.rows * e.cols);
  }
  static void add_mat(const GazeModel& m, Vec& buf, int id, const Mat& g) {
    const auto& e = m.layout_.entry(id);
    Eigen::Map<Mat>(buf.data() + e.offset, e.rows, e.cols) += g;
  }
  static void add_vec(const GazeModel& m, Vec& buf, int id, const Vec& g) {
    const auto& e = m.layout_.entry(id);
    Eigen::Map<Vec>(buf.data() + e.offset, e.rows * e.cols) += g;
  }

  static model_ops::EncoderLayerParams load_layer(const GazeModel& m, const LayerIds& l) {
    model_ops::EncoderLayerParams p;
    p.ln1.gamma = vec(m, l.ln1_g);
    p.ln1.beta = vec(m, l.ln1_b);
    p.attn.wq = mat(m, l.q.w);
    p.attn.bq = vec(m, l.q.b);
    p.attn.wk = mat(m, l.k.w);
    p.attn.bk = vec(m, l.k.b);
    p.attn.wv = mat(m, l.v.w);
    p.attn.bv = vec(m, l.v.b);
    p.attn.wo = mat(m, l.o.w);
    p.attn.bo = vec(m, l.o.b);
    p.ln2.gamma = vec(m, l.ln2_g);
    p.ln2.beta = vec(m, l.ln2_b);
    p.ffn.w1 = mat(m, l.ff1.w);
    p.ffn.b1 = vec(m, l.ff1.b);
    p.ffn.w2 = mat(m, l.ff2.w);
    p.ffn.b2 = vec(m, l.ff2.b);
    return p;
  }

  static void store_layer_grad(const GazeModel& m, Vec& buf, const LayerIds& l,
                               const model_ops::EncoderLayerParams& g) {
    add_vec(m, buf, l.ln1_g, g.ln1.gamma);
    add_vec(m, buf, l.ln1_b, g.ln1.beta);
    add_mat(m, buf, l.q.w, g.attn.wq);
    add_vec(m, buf, l.q.b, g.attn.bq);
    add_mat(m, buf, l.k.w, g.attn.wk);
    add_vec(m, buf, l.k.b, g.attn.bk);
    add_mat(m, buf, l.v.w, g.attn.wv);
    add_vec(m, buf, l.v.b, g.attn.bv);
    add_mat(m, buf, l.o.w, g.attn.wo);
    add_vec(m, buf, l.o.b, g.attn.bo);
    add_vec(m, buf, l.ln2_g, g.ln2.gamma);
    add_vec(m, buf, l.ln2_b, g.ln2.beta);
    add_mat(m, buf, l.ff1.w, g.ffn.w1);
    add_vec(m, buf, l.ff1.b, g.ffn.b1);
    add_mat(m, buf, l.ff2.w, g.ffn.w2);
    add_vec(m, buf, l.ff2.b, g.ffn.b2);
  }

  static Mat stack_forward(const GazeModel& m, const std::vector<LayerIds>& ids, Mat x,
                           std::vector<model_ops::EncoderLayerCache>* caches) {
    if (caches != nullptr) caches->resize(ids.size());
    for (size_t l = 0; l < ids.size(); ++l) {
      auto p = load_layer(m, ids[l]);
      auto* c = caches != nullptr ? &(*caches)[l] : nullptr;
      x = model_ops::encoder_layer_forward(x, p, m.cfg_.heads, c);
    }
    return x;
  }

  static Mat stack_backward(const GazeModel& m, const std::vector<LayerIds>& ids,
                            const std::vector<model_ops::EncoderLayerCache>& caches,
                            Mat dy, Vec& grad) {
    for (size_t l = ids.size(); l-- > 0;) {
      auto p = load_layer(m, ids[l]);
      auto g = model_ops::zeros_like(p);
      Mat dx;
      model_ops::encoder_layer_backward(caches[l], p, m.cfg_.heads, dy, g, dx);
      store_layer_grad(m, grad, ids[l], g);
      dy = dx;
    }
    return dy;
  }

  static Vec head_forward(const GazeModel& m, const HeadIds& h, const Vec& x,
                          ForwardCache::Head* cache) {
    const Mat w1 = mat(m, h.l1.w);
    const Vec b1 = vec(m, h.l1.b);
    const Mat w2 = mat(m, h.l2.w);
    const Vec b2 = vec(m, h.l2.b);
    const Vec pre = w1 * x + b1;
    if (cache != nullptr) {
      cache->x = x;
      cache->pre = pre;
    }
    return w2 * pre.cwiseMax(0.0) + b2;
  }

  static Vec head_backward(const GazeModel& m, const HeadIds& h,
                           const ForwardCache::Head& cache, const Vec& dout, Vec& grad) {
    const Mat w1 = mat(m, h.l1.w);
    const Mat w2 = mat(m, h.l2.w);
    const Vec hidden = cache.pre.cwiseMax(0.0);
    add_mat(m, grad, h.l2.w, dout * hidden.transpose());
    add_vec(m, grad, h.l2.b, dout);
    const Vec dpre = ((w2.transpose() * dout).array() *
                      (cache.pre.array() > 0.0).cast<double>())
                         .matrix();
    add_mat(m, grad, h.l1.w, dpre * cache.x.transpose());
    add_vec(m, grad, h.l1.b, dpre);
    return w1.transpose() * dpre;
  }
};

namespace {

Vec avg_pool_flat(const Eigen::VectorXd& img, int size, int window) {
  const int side = size / window;
  Vec out(side * side);
  const double inv = 1.0 / (window * window);
  for (int oy = 0; oy < side; ++oy) {
    for (int ox = 0; ox < side; ++ox) {
      double sum = 0.0;
      for (int y = oy * window; y < (oy + 1) * window; ++y) {
        for (int x = ox * window; x < (ox + 1) * window; ++x) {
          sum += img(y * size + x);
        }
      }
      out(oy * side + ox) = sum * inv;
    }
  }
  return out;
}

Vec encode_direction(const geom::Vec3& v, int bands, double scale) {
  const auto enc = triplane::positional_encoding({v}, bands, scale);
  return Eigen::Map<const Vec>(enc.data(), static_cast<Eigen::Index>(enc.size()));
}

double l1_pair(const Eigen::Vector2d& pred, double yaw, double pitch) {
  return 0.5 * (std::abs(pred(0) - yaw) + std::abs(pred(1) - pitch));
}

Eigen::Vector2d l1_pair_grad(const Eigen::Vector2d& pred, double yaw, double pitch,
                             double scale) {
  auto sgn = [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); };
  return Eigen::Vector2d(0.5 * scale * sgn(pred(0) - yaw),
                         0.5 * scale * sgn(pred(1) - pitch));
}

}  // namespace

GazeModel::GazeModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  register_params();
  init_params();
}

void GazeModel::register_params() {
  using Init = ParamLayout::Entry::Init;
  const int d = cfg_.width;
  const int ff = cfg_.ff_mult * d;
  const int hidden = cfg_.head_hidden;

  auto lin = [&](const std::string& name, int out, int in) {
    LinearIds l;
    l.w = layout_.add(name + ".w", out, in, Init::UniformFanIn, in);
    l.b = layout_.add(name + ".b", out, 1, Init::UniformFanIn, in);
    return l;
  };
  auto encoder = [&](const std::string& prefix, int layers) {
    std::vector<LayerIds> v;
    for (int l = 0; l < layers; ++l) {
      const std::string p = prefix + "." + std::to_string(l);
      LayerIds ids;
      ids.ln1_g = layout_.add(p + ".ln1.g", d, 1, Init::One, d);
      ids.ln1_b = layout_.add(p + ".ln1.b", d, 1, Init::Zero, d);
      ids.q = lin(p + ".attn.q", d, d);
      ids.k = lin(p + ".attn.k", d, d);
      ids.v = lin(p + ".attn.v", d, d);
      ids.o = lin(p + ".attn.o", d, d);
      ids.ln2_g = layout_.add(p + ".ln2.g", d, 1, Init::One, d);
      ids.ln2_b = layout_.add(p + ".ln2.b", d, 1, Init::Zero, d);
      ids.ff1 = lin(p + ".ffn.1", ff, d);
      ids.ff2 = lin(p + ".ffn.2", d, ff);
      v.push_back(ids);
    }
    return v;
  };
  auto head = [&](const std::string& name, int out) {
    HeadIds h;
    h.l1 = lin(name + ".l1", hidden, d);
    h.l2 = lin(name + ".l2", out, hidden);
    return h;
  };

  for (int i = 0; i < 4; ++i) {
    const int side = cfg_.image_size / kStrides[static_cast<size_t>(i)];
    const int m = side * side;
    ids_.proj_n[static_cast<size_t>(i)] = lin("proj.n." + std::to_string(i), d, m);
  }
  for (int i = 0; i < 4; ++i) {
    const int side = cfg_.image_size / kStrides[static_cast<size_t>(i)];
    const int m = side * side;
    ids_.proj_o[static_cast<size_t>(i)] = lin("proj.o." + std::to_string(i), d, m);
  }
  ids_.tok_n = layout_.add("tok.n", 1, d, Init::Token, d);
  ids_.tok_o = layout_.add("tok.o", 2, d, Init::Token, d);
  ids_.stream_n = encoder("stream.n", cfg_.stream_layers);
  ids_.stream_o = encoder("stream.o", cfg_.stream_layers);
  ids_.pose = lin("pose", d, cfg_.pose_dim());
  ids_.fusion = encoder("fusion", cfg_.fusion_layers);
  for (int i = 0; i < 3; ++i) {
    ids_.plane[static_cast<size_t>(i)] =
        lin("plane." + std::to_string(i), d, cfg_.plane_token_dim());
  }
  ids_.positional = encoder("positional", cfg_.positional_layers);
  ids_.zone_fusion = encoder("zonefusion", cfg_.zone_fusion_layers);
  for (int i = 0; i < 4; ++i) {
    ids_.head_level_n[static_cast<size_t>(i)] =
        head("head.gaze.n.level" + std::to_string(i), 2);
  }
  for (int i = 0; i < 4; ++i) {
    ids_.head_level_o[static_cast<size_t>(i)] =
        head("head.gaze.o.level" + std::to_string(i), 2);
  }
  ids_.head_final_n = head("head.gaze.n.final", 2);
  ids_.head_final_o = head("head.gaze.o.final", 2);
  ids_.head_fused = head("head.gaze.fused", 2);
  ids_.head_zone_pos = head("head.zone.pos", annotate::kZoneCount);
  ids_.head_zone_visual = head("head.zone.visual", annotate::kZoneCount);
  ids_.head_zone_fused = head("head.zone.fused", annotate::kZoneCount);
}

void GazeModel::init_params() {
  using Init = ParamLayout::Entry::Init;
  params_ = Eigen::VectorXd::Zero(layout_.total);
  std::mt19937_64 rng(seed_);
  for (const auto& e : layout_.entries) {
    const int count = e.rows * e.cols;
    switch (e.init) {
      case Init::UniformFanIn: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(e.fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (int k = 0; k < count; ++k) params_(e.offset + k) = dist(rng);
        break;
      }
      case Init::Token: {
        std::normal_distribution<double> dist(0.0, 0.02);
        for (int k = 0; k < count; ++k) params_(e.offset + k) = dist(rng);
        break;
      }
      case Init::One:
        params_.segment(e.offset, count).setOnes();
        break;
      case Init::Zero:
        params_.segment(e.offset, count).setZero();
        break;
    }
  }
}

std::vector<int> GazeModel::stopped_entry_ids() const {
  static const std::array<std::string, 6> prefixes = {
      "proj.n.", "tok.n", "stream.n.", "pose.", "fusion.", "head.gaze."};
  std::vector<int> out;
  for (size_t i = 0; i < layout_.entries.size(); ++i) {
    const auto& name = layout_.entries[i].name;
    for (const auto& p : prefixes) {
      if (name.rfind(p, 0) == 0) {
        out.push_back(static_cast<int>(i));
        break;
      }
    }
  }
  return out;
}

std::array<Eigen::VectorXd, 4> GazeModel::pyramid_features(const Eigen::VectorXd& image,
                                                           bool normalized_stream) const {
  const int s = cfg_.image_size;
  if (image.size() != s * s) throw ShapeMismatch("image size does not match model config");
  const auto& proj = normalized_stream ? ids_.proj_n : ids_.proj_o;
  std::array<Eigen::VectorXd, 4> out;
  for (size_t i = 0; i < 4; ++i) {
    const Vec pooled = avg_pool_flat(image, s, kStrides[i]);
    out[i] = ModelAccess::mat(*this, proj[i].w) * pooled +
             ModelAccess::vec(*this, proj[i].b);
  }
  return out;
}

Eigen::MatrixXd GazeModel::stream_aggregate(const std::array<Eigen::VectorXd, 4>& features,
                                            bool normalized_stream) const {
  const int d = cfg_.width;
  for (const auto& f : features) {
    if (f.size() != d) throw ShapeMismatch("level feature width does not match model");
  }
  const Mat tok =
      ModelAccess::mat(*this, normalized_stream ? ids_.tok_n : ids_.tok_o);
  Mat seq(tok.rows() + 4, d);
  seq.topRows(tok.rows()) = tok;
  for (int i = 0; i < 4; ++i) {
    seq.row(tok.rows() + i) = features[static_cast<size_t>(i)].transpose();
  }
  return ModelAccess::stack_forward(
      *this, normalized_stream ? ids_.stream_n : ids_.stream_o, seq, nullptr);
}

Eigen::VectorXd GazeModel::fuse_dual_stream(const Eigen::VectorXd& f_n_final,
                                            const Eigen::VectorXd& f_o_final,
                                            const geom::Vec3& pose_z_n,
                                            const geom::Vec3& pose_z_o) const {
  const int d = cfg_.width;
  if (f_n_final.size() != d || f_o_final.size() != d) {
    throw ShapeMismatch("stream feature width does not match model");
  }
  const Mat pose_w = ModelAccess::mat(*this, ids_.pose.w);
  const Vec pose_b = ModelAccess::vec(*this, ids_.pose.b);
  Mat fusion_in(2, d);
  fusion_in.row(0) =
      (f_n_final + pose_w * encode_direction(pose_z_n, cfg_.pose_bands, cfg_.pose_scale) +
       pose_b)
          .transpose();
  fusion_in.row(1) =
      (f_o_final + pose_w * encode_direction(pose_z_o, cfg_.pose_bands, cfg_.pose_scale) +
       pose_b)
          .transpose();
  const Mat out = ModelAccess::stack_forward(*this, ids_.fusion, fusion_in, nullptr);
  return out.colwise().mean().transpose();
}

ForwardResult GazeModel::forward(const TrainingSample& sample,
                                 const triplane::TriPlaneHit* frozen_hits) const {
  const int s = cfg_.image_size;
  if (sample.image_original.size() != s * s || sample.image_normalized.size() != s * s) {
    throw ShapeMismatch("image size does not match model config (" +
                        std::to_string(s) + "x" + std::to_string(s) + ")");
  }
  const int d = cfg_.width;
  auto cache = std::make_shared<ForwardCache>();
  ForwardResult res;

  for (int i = 0; i < 4; ++i) {
    const size_t ui = static_cast<size_t>(i);
    cache->pooled_n[ui] = avg_pool_flat(sample.image_normalized, s, kStrides[ui]);
    cache->pooled_o[ui] = avg_pool_flat(sample.image_original, s, kStrides[ui]);
    cache->feat_n[ui] = ModelAccess::mat(*this, ids_.proj_n[ui].w) * cache->pooled_n[ui] +
                        ModelAccess::vec(*this, ids_.proj_n[ui].b);
    cache->feat_o[ui] = ModelAccess::mat(*this, ids_.proj_o[ui].w) * cache->pooled_o[ui] +
                        ModelAccess::vec(*this, ids_.proj_o[ui].b);
  }

  const Mat tok_n = ModelAccess::mat(*this, ids_.tok_n);
  const Mat tok_o = ModelAccess::mat(*this, ids_.tok_o);
  Mat seq_n(5, d);
  seq_n.row(0) = tok_n.row(0);
  for (int i = 0; i < 4; ++i) seq_n.row(1 + i) = cache->feat_n[static_cast<size_t>(i)].transpose();
  Mat seq_o(6, d);
  seq_o.row(0) = tok_o.row(0);
  seq_o.row(1) = tok_o.row(1);
  for (int i = 0; i < 4; ++i) seq_o.row(2 + i) = cache->feat_o[static_cast<size_t>(i)].transpose();

  const Mat out_n = ModelAccess::stack_forward(*this, ids_.stream_n, seq_n, &cache->stream_n);
  const Mat out_o = ModelAccess::stack_forward(*this, ids_.stream_o, seq_o, &cache->stream_o);
  cache->f_n_final = out_n.row(0).transpose();
  cache->f_o_final = out_o.row(0).transpose();
  cache->f_visual = out_o.row(1).transpose();

  for (int i = 0; i < 4; ++i) {
    const size_t ui = static_cast<size_t>(i);
    res.pred_n.levels[ui] = ModelAccess::head_forward(
        *this, ids_.head_level_n[ui], cache->feat_n[ui], &cache->head_level_n[ui]);
    res.pred_o.levels[ui] = ModelAccess::head_forward(
        *this, ids_.head_level_o[ui], cache->feat_o[ui], &cache->head_level_o[ui]);
  }
  res.pred_n.final = ModelAccess::head_forward(*this, ids_.head_final_n, cache->f_n_final,
                                               &cache->head_final_n);
  res.pred_o.final = ModelAccess::head_forward(*this, ids_.head_final_o, cache->f_o_final,
                                               &cache->head_final_o);

  // Camera-pose positional encoding: z-axis row of the stream's pose matrix.
  const geom::Vec3 z_o(0.0, 0.0, 1.0);
  const geom::Vec3 z_n = sample.norm_rotation.row(2).transpose();
  cache->pose_pe_o = encode_direction(z_o, cfg_.pose_bands, cfg_.pose_scale);
  cache->pose_pe_n = encode_direction(z_n, cfg_.pose_bands, cfg_.pose_scale);
  const Mat pose_w = ModelAccess::mat(*this, ids_.pose.w);
  const Vec pose_b = ModelAccess::vec(*this, ids_.pose.b);
  const Vec pose_feat_n = pose_w * cache->pose_pe_n + pose_b;
  const Vec pose_feat_o = pose_w * cache->pose_pe_o + pose_b;

  cache->fusion_in.resize(2, d);
  cache->fusion_in.row(0) = (cache->f_n_final + pose_feat_n).transpose();
  cache->fusion_in.row(1) = (cache->f_o_final + pose_feat_o).transpose();
  cache->fusion_out =
      ModelAccess::stack_forward(*this, ids_.fusion, cache->fusion_in, &cache->fusion);
  cache->f_gaze = cache->fusion_out.colwise().mean().transpose();

  res.pred_fused =
      ModelAccess::head_forward(*this, ids_.head_fused, cache->f_gaze, &cache->head_fused);
  res.gaze_n = annotate::vec_from_yawpitch(res.pred_fused(0), res.pred_fused(1));
  res.gaze_o = sample.norm_rotation.transpose() * res.gaze_n;

  res.hits = frozen_hits != nullptr
                 ? *frozen_hits
                 : triplane::intersect_triplane(sample.face_center, res.gaze_o,
                                                cfg_.triplane_forward_only);
  const auto enc =
      triplane::encode_triplane(res.hits, cfg_.triplane_bands, cfg_.triplane_scale);
  cache->encoding = Eigen::Map<const Vec>(enc.data(), static_cast<Eigen::Index>(enc.size()));

  const int per_point = 3 * 2 * cfg_.triplane_bands;
  cache->pos_in.resize(3, d);
  for (int i = 0; i < 3; ++i) {
    const size_t ui = static_cast<size_t>(i);
    Vec in(per_point + 1);
    in.head(per_point) = cache->encoding.segment(i * per_point, per_point);
    in(per_point) = cache->encoding(3 * per_point + i);  // validity flag
    cache->plane_in[ui] = in;
    cache->pos_in.row(i) = (ModelAccess::mat(*this, ids_.plane[ui].w) * in +
                            ModelAccess::vec(*this, ids_.plane[ui].b))
                               .transpose();
  }
  cache->pos_out =
      ModelAccess::stack_forward(*this, ids_.positional, cache->pos_in, &cache->positional);
  cache->f_pos = cache->pos_out.colwise().mean().transpose();

  cache->zone_in.resize(2, d);
  cache->zone_in.row(0) = cache->f_visual.transpose();
  cache->zone_in.row(1) = cache->f_pos.transpose();
  cache->zone_out = ModelAccess::stack_forward(*this, ids_.zone_fusion, cache->zone_in,
                                               &cache->zone_fusion);
  cache->f_zone = cache->zone_out.colwise().mean().transpose();

  res.logits_pos = ModelAccess::head_forward(*this, ids_.head_zone_pos, cache->f_pos,
                                             &cache->head_zone_pos);
  res.logits_visual = ModelAccess::head_forward(*this, ids_.head_zone_visual,
                                                cache->f_visual, &cache->head_zone_visual);
  res.logits_zone = ModelAccess::head_forward(*this, ids_.head_zone_fused, cache->f_zone,
                                              &cache->head_zone_fused);

  res.cache = std::move(cache);
  return res;
}

LossBreakdown GazeModel::loss_breakdown(const ForwardResult& result,
                                        const TrainingSample& sample) const {
  LossBreakdown lb;
  for (int i = 0; i < 4; ++i) {
    const size_t ui = static_cast<size_t>(i);
    lb.level_n[ui] = l1_pair(result.pred_n.levels[ui], sample.yaw_n, sample.pitch_n);
    lb.level_o[ui] = l1_pair(result.pred_o.levels[ui], sample.yaw_o, sample.pitch_o);
  }
  lb.final_n = l1_pair(result.pred_n.final, sample.yaw_n, sample.pitch_n);
  lb.final_o = l1_pair(result.pred_o.final, sample.yaw_o, sample.pitch_o);
  lb.fused = l1_pair(result.pred_fused, sample.yaw_n, sample.pitch_n);

  if (sample.zone < 0 || sample.zone >= annotate::kZoneCount) {
    throw LabelMissing("zone index " + std::to_string(sample.zone) + " out of range");
  }
  lb.ce_pos = model_ops::softmax_ce_forward(result.logits_pos, sample.zone, nullptr);
  lb.ce_visual = model_ops::softmax_ce_forward(result.logits_visual, sample.zone, nullptr);
  lb.ce_zone = model_ops::softmax_ce_forward(result.logits_zone, sample.zone, nullptr);
  return lb;
}

double LossBreakdown::l1_sum() const {
  double s = fused + final_n + final_o;
  for (int i = 0; i < 4; ++i) {
    s += level_n[static_cast<size_t>(i)] + level_o[static_cast<size_t>(i)];
  }
  return s;
}

double LossBreakdown::l2_sum() const { return ce_pos + ce_visual + ce_zone; }

double LossBreakdown::total(const LossMask& mask) const {
  return mask.l1 * l1_sum() + mask.l2 * l2_sum();
}

Eigen::VectorXd GazeModel::backward(const ForwardResult& result,
                                    const TrainingSample& sample,
                                    const LossMask& mask) const {
  if (!result.cache) throw ShapeMismatch("forward result carries no activation cache");
  const ForwardCache& c = *result.cache;
  const int d = cfg_.width;
  Vec grad = Vec::Zero(layout_.total);

  std::array<Vec, 4> d_feat_n, d_feat_o;
  for (auto& v : d_feat_n) v = Vec::Zero(d);
  for (auto& v : d_feat_o) v = Vec::Zero(d);

  // Gaze (L1) heads.
  for (int i = 0; i < 4; ++i) {
    const size_t ui = static_cast<size_t>(i);
    d_feat_n[ui] += ModelAccess::head_backward(
        *this, ids_.head_level_n[ui], c.head_level_n[ui],
        l1_pair_grad(result.pred_n.levels[ui], sample.yaw_n, sample.pitch_n, mask.l1),
        grad);
    d_feat_o[ui] += ModelAccess::head_backward(
        *this, ids_.head_level_o[ui], c.head_level_o[ui],
        l1_pair_grad(result.pred_o.levels[ui], sample.yaw_o, sample.pitch_o, mask.l1),
        grad);
  }
  Vec d_f_n_final = ModelAccess::head_backward(
      *this, ids_.head_final_n, c.head_final_n,
      l1_pair_grad(result.pred_n.final, sample.yaw_n, sample.pitch_n, mask.l1), grad);
  Vec d_f_o_final = ModelAccess::head_backward(
      *this, ids_.head_final_o, c.head_final_o,
      l1_pair_grad(result.pred_o.final, sample.yaw_o, sample.pitch_o, mask.l1), grad);
  const Vec d_f_gaze = ModelAccess::head_backward(
      *this, ids_.head_fused, c.head_fused,
      l1_pair_grad(result.pred_fused, sample.yaw_n, sample.pitch_n, mask.l1), grad);

  // Zone (L2) heads.
  auto ce_grad = [&](const Vec& logits) {
    model_ops::SoftmaxCeCache cc;
    model_ops::softmax_ce_forward(logits, sample.zone, &cc);
    return Vec(mask.l2 * model_ops::softmax_ce_backward(cc));
  };
  Vec d_f_pos = ModelAccess::head_backward(*this, ids_.head_zone_pos, c.head_zone_pos,
                                           ce_grad(result.logits_pos), grad);
  Vec d_f_visual = ModelAccess::head_backward(*this, ids_.head_zone_visual,
                                              c.head_zone_visual,
                                              ce_grad(result.logits_visual), grad);
  const Vec d_f_zone = ModelAccess::head_backward(*this, ids_.head_zone_fused,
                                                  c.head_zone_fused,
                                                  ce_grad(result.logits_zone), grad);

  // Zone fusion (mean pool over 2 outputs).
  Mat d_zone_out(2, d);
  d_zone_out.row(0) = (0.5 * d_f_zone).transpose();
  d_zone_out.row(1) = (0.5 * d_f_zone).transpose();
  const Mat d_zone_in =
      ModelAccess::stack_backward(*this, ids_.zone_fusion, c.zone_fusion, d_zone_out, grad);
  d_f_visual += d_zone_in.row(0).transpose();
  d_f_pos += d_zone_in.row(1).transpose();

  // Positional transformer and plane projections; the encoding is constant
  // (stop-gradient), so nothing propagates past the plane linears.
  Mat d_pos_out(3, d);
  for (int i = 0; i < 3; ++i) d_pos_out.row(i) = (d_f_pos / 3.0).transpose();
  const Mat d_pos_in =
      ModelAccess::stack_backward(*this, ids_.positional, c.positional, d_pos_out, grad);
  for (int i = 0; i < 3; ++i) {
    const size_t ui = static_cast<size_t>(i);
    const Vec dt = d_pos_in.row(i).transpose();
    ModelAccess::add_mat(*this, grad, ids_.plane[ui].w, dt * c.plane_in[ui].transpose());
    ModelAccess::add_vec(*this, grad, ids_.plane[ui].b, dt);
  }

  // Gaze fusion (mean pool over 2 outputs).
  Mat d_fusion_out(2, d);
  d_fusion_out.row(0) = (0.5 * d_f_gaze).transpose();
  d_fusion_out.row(1) = (0.5 * d_f_gaze).transpose();
  const Mat d_fusion_in =
      ModelAccess::stack_backward(*this, ids_.fusion, c.fusion, d_fusion_out, grad);
  const Vec d_u_n = d_fusion_in.row(0).transpose();
  const Vec d_u_o = d_fusion_in.row(1).transpose();
  d_f_n_final += d_u_n;
  d_f_o_final += d_u_o;
  ModelAccess::add_mat(*this, grad, ids_.pose.w,
                       d_u_n * c.pose_pe_n.transpose() + d_u_o * c.pose_pe_o.transpose());
  ModelAccess::add_vec(*this, grad, ids_.pose.b, d_u_n + d_u_o);

  // Stream transformers.
  Mat d_out_n = Mat::Zero(5, d);
  d_out_n.row(0) = d_f_n_final.transpose();
  const Mat d_seq_n =
      ModelAccess::stack_backward(*this, ids_.stream_n, c.stream_n, d_out_n, grad);
  ModelAccess::add_mat(*this, grad, ids_.tok_n, d_seq_n.row(0));
  for (int i = 0; i < 4; ++i) {
    d_feat_n[static_cast<size_t>(i)] += d_seq_n.row(1 + i).transpose();
  }

  Mat d_out_o = Mat::Zero(6, d);
  d_out_o.row(0) = d_f_o_final.transpose();
  d_out_o.row(1) = d_f_visual.transpose();
  const Mat d_seq_o =
      ModelAccess::stack_backward(*this, ids_.stream_o, c.stream_o, d_out_o, grad);
  ModelAccess::add_mat(*this, grad, ids_.tok_o, d_seq_o.topRows(2));
  for (int i = 0; i < 4; ++i) {
    d_feat_o[static_cast<size_t>(i)] += d_seq_o.row(2 + i).transpose();
  }

  // Level projections.
  for (int i = 0; i < 4; ++i) {
    const size_t ui = static_cast<size_t>(i);
    ModelAccess::add_mat(*this, grad, ids_.proj_n[ui].w,
                         d_feat_n[ui] * c.pooled_n[ui].transpose());
    ModelAccess::add_vec(*this, grad, ids_.proj_n[ui].b, d_feat_n[ui]);
    ModelAccess::add_mat(*this, grad, ids_.proj_o[ui].w,
                         d_feat_o[ui] * c.pooled_o[ui].transpose());
    ModelAccess::add_vec(*this, grad, ids_.proj_o[ui].b, d_feat_o[ui]);
  }

  return grad;
}

TrainingSample make_training_sample(const annotate::SampleRecord& rec,
                                    const image::ImageGray& original,
                                    const image::ImageGray& normalized,
                                    const ModelConfig& cfg) {
  const int s = cfg.image_size;
  if (original.width != s || original.height != s || normalized.width != s ||
      normalized.height != s) {
    throw ShapeMismatch("raster size does not match model image_size");
  }
  TrainingSample t;
  // Center and amplify: the face blob is a large static pedestal, the
  // gaze-dependent detail rides on top of it at ~1% amplitude.
  const auto to_vec = [s](const image::ImageGray& img) {
    Vec v(s * s);
    for (int i = 0; i < s * s; ++i) {
      v(i) = (img.data[static_cast<size_t>(i)] / 255.0 - 0.35) * 4.0;
    }
    return v;
  };
  t.image_original = to_vec(original);
  t.image_normalized = to_vec(normalized);
  t.face_center = rec.face_center;
  if (rec.has_ext && rec.ext.has_norm) {
    t.norm_rotation = rec.ext.norm_rotation;
  } else {
    t.norm_rotation = normalize::normalization_rotation(rec.face_center).matrix();
  }
  t.yaw_o = rec.gaze.yaw_deg;
  t.pitch_o = rec.gaze.pitch_deg;
  const geom::Vec3 g_n = (t.norm_rotation * rec.gaze.direction).normalized();
  std::tie(t.yaw_n, t.pitch_n) = annotate::yawpitch_from_vec(g_n);
  t.zone = static_cast<int>(rec.zone);
  return t;
}

void TrainingConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (l2_weight < 0.0) throw ConfigError("l2_weight must be non-negative");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be non-negative");
}

TrainingCurve fit(GazeModel& model, const std::vector<TrainingSample>& dataset,
                  const TrainingConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw EmptySet("training dataset is empty");
  const LossMask mask{1.0, cfg.l2_weight};
  std::mt19937_64 rng(cfg.seed);
  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Vec velocity = Vec::Zero(model.layout().total);

  TrainingCurve curve;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    double err_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      Vec gsum = Vec::Zero(model.layout().total);
      for (size_t k = start; k < end; ++k) {
        const TrainingSample& sample = dataset[order[k]];
        const auto res = model.forward(sample);
        const auto lb = model.loss_breakdown(res, sample);
        const double loss = lb.total(mask);
        if (!std::isfinite(loss)) {
          throw DivergenceDetected("training loss is not finite at epoch " +
                                   std::to_string(epoch));
        }
        loss_sum += loss;
        err_sum += metrics::angular_error_deg(
            res.gaze_o, annotate::vec_from_yawpitch(sample.yaw_o, sample.pitch_o));
        gsum += model.backward(res, sample, mask);
      }
      gsum /= static_cast<double>(end - start);
      if (cfg.clip_norm > 0.0) {
        const double gn = gsum.norm();
        if (gn > cfg.clip_norm) gsum *= cfg.clip_norm / gn;
      }
      velocity = cfg.momentum * velocity - cfg.lr * gsum;
      model.params() += velocity;
    }
    EpochStats stats;
    stats.mean_loss = loss_sum / static_cast<double>(dataset.size());
    stats.mean_angular_error_deg = err_sum / static_cast<double>(dataset.size());
    curve.epochs.push_back(stats);
  }

  double final_err = 0.0;
  for (const auto& sample : dataset) {
    const auto res = model.forward(sample);
    final_err += metrics::angular_error_deg(
        res.gaze_o, annotate::vec_from_yawpitch(sample.yaw_o, sample.pitch_o));
  }
  curve.final_mean_angular_error_deg = final_err / static_cast<double>(dataset.size());
  return curve;
}

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"image_size", c.image_size},
          {"width", c.width},
          {"heads", c.heads},
          {"stream_layers", c.stream_layers},
          {"fusion_layers", c.fusion_layers},
          {"positional_layers", c.positional_layers},
          {"zone_fusion_layers", c.zone_fusion_layers},
          {"ff_mult", c.ff_mult},
          {"head_hidden", c.head_hidden},
          {"triplane_bands", c.triplane_bands},
          {"triplane_scale", c.triplane_scale},
          {"triplane_forward_only", c.triplane_forward_only},
          {"pose_bands", c.pose_bands},
          {"pose_scale", c.pose_scale}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.width = j.at("width").get<int>();
  c.heads = j.at("heads").get<int>();
  c.stream_layers = j.at("stream_layers").get<int>();
  c.fusion_layers = j.at("fusion_layers").get<int>();
  c.positional_layers = j.at("positional_layers").get<int>();
  c.zone_fusion_layers = j.at("zone_fusion_layers").get<int>();
  c.ff_mult = j.at("ff_mult").get<int>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.triplane_bands = j.at("triplane_bands").get<int>();
  c.triplane_scale = j.at("triplane_scale").get<double>();
  c.triplane_forward_only = j.at("triplane_forward_only").get<bool>();
  c.pose_bands = j.at("pose_bands").get<int>();
  c.pose_scale = j.at("pose_scale").get<double>();
  return c;
}

std::string sibling_bin_path(const std::string& json_path) {
  std::filesystem::path p(json_path);
  p.replace_extension(".bin");
  return p.string();
}

}  // namespace

void save_checkpoint(const std::string& json_path, const GazeModel& model) {
  const std::string bin_path = sibling_bin_path(json_path);
  nlohmann::json j;
  j["config"] = config_to_json(model.config());
  j["seed"] = model.seed();
  j["param_count"] = model.layout().total;
  j["data_file"] = std::filesystem::path(bin_path).filename().string();
  std::ofstream out(json_path);
  if (!out) throw IoError("cannot open " + json_path + " for writing");
  out << j.dump(2) << "\n";

  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open " + bin_path + " for writing");
  bin.write(reinterpret_cast<const char*>(model.params().data()),
            static_cast<std::streamsize>(sizeof(double) * model.params().size()));
}

GazeModel load_checkpoint(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoError("cannot open " + json_path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw IoError("malformed checkpoint header " + json_path);
  ModelConfig cfg;
  uint64_t seed = 0;
  int count = 0;
  std::string data_file;
  try {
    cfg = config_from_json(j.at("config"));
    seed = j.at("seed").get<uint64_t>();
    count = j.at("param_count").get<int>();
    data_file = j.at("data_file").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint header: ") + e.what());
  }
  GazeModel model(cfg, seed);
  if (model.layout().total != count) {
    throw IoError("checkpoint parameter count does not match its config");
  }
  const auto bin_path = std::filesystem::path(json_path).parent_path() / data_file;
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open " + bin_path.string());
  bin.read(reinterpret_cast<char*>(model.params().data()),
           static_cast<std::streamsize>(sizeof(double) * count));
  if (bin.gcount() != static_cast<std::streamsize>(sizeof(double) * count)) {
    throw IoError("checkpoint data truncated: " + bin_path.string());
  }
  return model;
}

GradCheckReport gradcheck(const GazeModel& model, const TrainingSample& sample,
                          int n_params, uint64_t seed) {
  const auto result = model.forward(sample);
  const Vec analytic = model.backward(result, sample, LossMask{1.0, 1.0});

  GazeModel work = model;
  const auto frozen_loss = [&]() {
    const auto r = work.forward(sample, &result.hits);
    return work.loss_breakdown(r, sample).total(LossMask{1.0, 1.0});
  };

  // One scalar per tensor guarantees class coverage; extra uniform draws top
  // up the requested count.
  std::mt19937_64 rng(seed);
  std::vector<int> indices;
  for (const auto& e : model.layout().entries) {
    std::uniform_int_distribution<int> pick(0, e.rows * e.cols - 1);
    indices.push_back(e.offset + pick(rng));
  }
  std::uniform_int_distribution<int> any(0, model.layout().total - 1);
  while (static_cast<int>(indices.size()) < n_params) indices.push_back(any(rng));

  GradCheckReport rep;
  const double h = 1e-5;
  for (const int idx : indices) {
    const double orig = work.params()(idx);
    work.params()(idx) = orig + h;
    const double lp = frozen_loss();
    work.params()(idx) = orig - h;
    const double lm = frozen_loss();
    work.params()(idx) = orig;
    const double fd = (lp - lm) / (2.0 * h);
    const double rel = std::abs(fd - analytic(idx)) /
                       std::max({1.0, std::abs(fd), std::abs(analytic(idx))});
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      // Locate the entry that owns this flat index.
      for (const auto& e : model.layout().entries) {
        if (idx >= e.offset && idx < e.offset + e.rows * e.cols) {
          rep.worst_param = e.name;
          break;
        }
      }
    }
  }
  rep.params_checked = static_cast<int>(indices.size());

  // With the gaze terms masked out, everything that reaches the loss only
  // through the tri-plane coordinates must receive an exactly zero gradient.
  const Vec l2_grad = model.backward(result, sample, LossMask{0.0, 1.0});
  for (const int id : model.stopped_entry_ids()) {
    const auto& e = model.layout().entry(id);
    const double m = l2_grad.segment(e.offset, e.rows * e.cols).cwiseAbs().maxCoeff();
    rep.max_stopped_abs = std::max(rep.max_stopped_abs, m);
  }
  rep.stop_grad_exact = rep.max_stopped_abs == 0.0;

  // The blocked dependence is real: an unfrozen finite difference through the
  // fused head moves the zone losses.
  {
    const int idx = model.layout().entry(model.layout().id("head.gaze.fused.l2.b")).offset;
    const double hh = 1e-3;
    const auto unfrozen_l2 = [&]() {
      const auto r = work.forward(sample);
      return work.loss_breakdown(r, sample).total(LossMask{0.0, 1.0});
    };
    const double orig = work.params()(idx);
    work.params()(idx) = orig + hh;
    const double lp = unfrozen_l2();
    work.params()(idx) = orig - hh;
    const double lm = unfrozen_l2();
    work.params()(idx) = orig;
    rep.unfrozen_fd_abs = std::abs((lp - lm) / (2.0 * hh));
  }
  return rep;
}

std::string gradcheck_report_json(const GradCheckReport& report) {
  nlohmann::json j;
  j["params_checked"] = report.params_checked;
  j["max_rel_error"] = report.max_rel_error;
  j["worst_param"] = report.worst_param;
  j["max_stopped_abs"] = report.max_stopped_abs;
  j["unfrozen_fd_abs"] = report.unfrozen_fd_abs;
  j["stop_grad_exact"] = report.stop_grad_exact;
  return j.dump(2) + "\n";
}

}  // namespace cabingaze::model
