#include "auber/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "auber/errors.hpp"

namespace auber {

namespace {

constexpr double kLayerNormEps = 1e-5;

void add_colsum(const Matrix& m, std::vector<double>& out) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += m(i, j);
}

// ds for a = softmax(s) applied rowwise: ds = a * (da - <da, a>_row)
Matrix softmax_rows_backward(const Matrix& da, const Matrix& a) {
  Matrix ds(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) dot += da(i, j) * a(i, j);
    for (std::size_t j = 0; j < a.cols(); ++j) ds(i, j) = a(i, j) * (da(i, j) - dot);
  }
  return ds;
}

Matrix layernorm_backward(const Matrix& dy, const LayerNormCache& cache, const LayerNorm& ln,
                          LayerNorm& grads) {
  const std::size_t rows = dy.rows();
  const std::size_t d = dy.cols();
  Matrix dx(rows, d);
  for (std::size_t r = 0; r < rows; ++r) {
    double m1 = 0.0;
    double m2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double g = dy(r, j);
      const double xh = cache.xhat(r, j);
      grads.gain[j] += g * xh;
      grads.bias[j] += g;
      const double dxh = g * ln.gain[j];
      m1 += dxh;
      m2 += dxh * xh;
    }
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    const double inv = cache.inv_sigma[r];
    for (std::size_t j = 0; j < d; ++j) {
      const double dxh = dy(r, j) * ln.gain[j];
      dx(r, j) = inv * (dxh - m1 - cache.xhat(r, j) * m2);
    }
  }
  return dx;
}

Matrix sinusoidal_table(std::size_t max_len, std::size_t d) {
  Matrix pe(max_len, d);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t j = 0; j < d; ++j) {
      const double exponent = static_cast<double>(2 * (j / 2)) / static_cast<double>(d);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      pe(pos, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

// dinput for one layer; parameter gradients are accumulated into g.
Matrix layer_backward(const EncoderLayer& layer, const LayerCache& c, const Matrix& dout,
                      LayerGrads& g) {
  const std::size_t m = layer.heads[0].wv.cols();
  const std::size_t n = layer.heads[0].wq.cols();
  const std::size_t rows = c.input.rows();

  Matrix dsum_ffn = layernorm_backward(dout, c.ln_ffn, layer.ln_ffn, g.ln_ffn);

  // sum_ffn = y1 + ffn(y1); both branches receive dsum_ffn
  Matrix dy1 = dsum_ffn;
  const Matrix& dffn = dsum_ffn;

  Matrix w2_grad = matmul_tn(c.a1, dffn);
  for (std::size_t i = 0; i < w2_grad.size(); ++i) g.ffn_w2.storage()[i] += w2_grad.storage()[i];
  add_colsum(dffn, g.ffn_b2);

  Matrix da1 = matmul_nt(dffn, layer.ffn_w2);
  Matrix dz1(da1.rows(), da1.cols());
  for (std::size_t i = 0; i < da1.size(); ++i)
    dz1.storage()[i] = c.z1.storage()[i] > 0.0 ? da1.storage()[i] : 0.0;

  Matrix w1_grad = matmul_tn(c.y1, dz1);
  for (std::size_t i = 0; i < w1_grad.size(); ++i) g.ffn_w1.storage()[i] += w1_grad.storage()[i];
  add_colsum(dz1, g.ffn_b1);

  Matrix dy1_ffn = matmul_nt(dz1, layer.ffn_w1);
  for (std::size_t i = 0; i < dy1.size(); ++i) dy1.storage()[i] += dy1_ffn.storage()[i];

  Matrix dsum_att = layernorm_backward(dy1, c.ln_att, layer.ln_att, g.ln_att);

  // sum_att = input + mha
  Matrix dx = dsum_att;
  const Matrix& dmha = dsum_att;

  Matrix wo_grad = matmul_tn(c.concat, dmha);
  for (std::size_t i = 0; i < wo_grad.size(); ++i) g.wo.storage()[i] += wo_grad.storage()[i];
  Matrix dconcat = matmul_nt(dmha, layer.wo);

  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
  for (std::size_t h = 0; h < layer.heads.size(); ++h) {
    const HeadActivations& act = c.heads[h];
    Matrix dblock(rows, m);
    double dgate = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < m; ++j) {
        const double d = dconcat(r, h * m + j);
        dblock(r, j) = d;
        dgate += d * act.out(r, j);
      }
    }
    g.gates[h] += dgate;

    const double gate = layer.gates[h];
    Matrix dout_h(rows, m);
    for (std::size_t i = 0; i < dout_h.size(); ++i)
      dout_h.storage()[i] = gate * dblock.storage()[i];

    Matrix datt = matmul_nt(dout_h, act.v);
    Matrix dv = matmul_tn(act.att, dout_h);
    Matrix ds = softmax_rows_backward(datt, act.att);
    for (double& val : ds.storage()) val *= inv_sqrt_n;

    Matrix dq = matmul(ds, act.k);
    Matrix dk = matmul_tn(ds, act.q);

    Matrix wq_grad = matmul_tn(c.input, dq);
    Matrix wk_grad = matmul_tn(c.input, dk);
    Matrix wv_grad = matmul_tn(c.input, dv);
    HeadGrads& hg = g.heads[h];
    for (std::size_t i = 0; i < wq_grad.size(); ++i) hg.wq.storage()[i] += wq_grad.storage()[i];
    for (std::size_t i = 0; i < wk_grad.size(); ++i) hg.wk.storage()[i] += wk_grad.storage()[i];
    for (std::size_t i = 0; i < wv_grad.size(); ++i) hg.wv.storage()[i] += wv_grad.storage()[i];

    Matrix dx_q = matmul_nt(dq, layer.heads[h].wq);
    Matrix dx_k = matmul_nt(dk, layer.heads[h].wk);
    Matrix dx_v = matmul_nt(dv, layer.heads[h].wv);
    for (std::size_t i = 0; i < dx.size(); ++i)
      dx.storage()[i] += dx_q.storage()[i] + dx_k.storage()[i] + dx_v.storage()[i];
  }
  return dx;
}

}  // namespace

void validate(const ModelDims& d) {
  if (d.layers < 1) throw InputError("model needs at least 1 layer");
  if (d.heads < 2) throw InputError("model needs at least 2 heads per layer");
  if (d.embed_dim < 1 || d.qk_dim < 1 || d.value_dim < 1 || d.ffn_dim < 1)
    throw InputError("model dimensions must be positive");
  if (d.max_len < 1) throw InputError("max_len must be positive");
  if (d.vocab < 2) throw InputError("vocab must be at least 2");
  if (d.classes < 2) throw InputError("classifier needs at least 2 classes");
}

EncoderModel make_model(const ModelDims& dims, Rng& rng) {
  validate(dims);
  EncoderModel model;
  model.dims = dims;
  model.embed = Matrix(dims.vocab, dims.embed_dim);
  fill_xavier(model.embed, rng);
  model.positional = sinusoidal_table(dims.max_len, dims.embed_dim);
  model.layers.resize(dims.layers);
  for (EncoderLayer& layer : model.layers) {
    layer.heads.resize(dims.heads);
    for (AttentionHead& head : layer.heads) {
      head.wq = Matrix(dims.embed_dim, dims.qk_dim);
      head.wk = Matrix(dims.embed_dim, dims.qk_dim);
      head.wv = Matrix(dims.embed_dim, dims.value_dim);
      fill_xavier(head.wq, rng);
      fill_xavier(head.wk, rng);
      fill_xavier(head.wv, rng);
    }
    layer.wo = Matrix(dims.heads * dims.value_dim, dims.embed_dim);
    fill_xavier(layer.wo, rng);
    layer.gates.assign(dims.heads, 1.0);
    layer.ffn_w1 = Matrix(dims.embed_dim, dims.ffn_dim);
    fill_xavier(layer.ffn_w1, rng);
    layer.ffn_b1.assign(dims.ffn_dim, 0.0);
    layer.ffn_w2 = Matrix(dims.ffn_dim, dims.embed_dim);
    fill_xavier(layer.ffn_w2, rng);
    layer.ffn_b2.assign(dims.embed_dim, 0.0);
    layer.ln_att.gain.assign(dims.embed_dim, 1.0);
    layer.ln_att.bias.assign(dims.embed_dim, 0.0);
    layer.ln_ffn.gain.assign(dims.embed_dim, 1.0);
    layer.ln_ffn.bias.assign(dims.embed_dim, 0.0);
  }
  model.classifier = Matrix(dims.embed_dim, dims.classes);
  fill_xavier(model.classifier, rng);
  model.classifier_bias.assign(dims.classes, 0.0);
  return model;
}

HeadActivations head_forward(const AttentionHead& head, const Matrix& x) {
  if (x.cols() != head.wq.rows()) {
    throw ShapeError("head_forward: input has " + std::to_string(x.cols()) +
                     " columns, weights expect " + std::to_string(head.wq.rows()));
  }
  HeadActivations act;
  act.q = matmul(x, head.wq);
  act.k = matmul(x, head.wk);
  act.v = matmul(x, head.wv);
  Matrix scores = matmul_nt(act.q, act.k);
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(head.wq.cols()));
  for (double& s : scores.storage()) s *= inv_sqrt_n;
  act.att = row_softmax(scores);
  act.out = matmul(act.att, act.v);
  return act;
}

Matrix layernorm_forward(const Matrix& x, const LayerNorm& ln, LayerNormCache* cache) {
  if (x.cols() != ln.gain.size()) {
    throw ShapeError("layernorm over " + std::to_string(x.cols()) + " columns with " +
                     std::to_string(ln.gain.size()) + " gains");
  }
  const std::size_t d = x.cols();
  Matrix y(x.rows(), d);
  Matrix xhat(x.rows(), d);
  std::vector<double> inv_sigma(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x(r, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x(r, j) - mean) * (x(r, j) - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_sigma[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (x(r, j) - mean) * inv;
      xhat(r, j) = xh;
      y(r, j) = ln.gain[j] * xh + ln.bias[j];
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_sigma = std::move(inv_sigma);
  }
  return y;
}

Matrix layer_forward(const EncoderLayer& layer, const Matrix& x, LayerCache* cache) {
  const std::size_t H = layer.heads.size();
  const std::size_t m = layer.heads[0].wv.cols();
  const std::size_t rows = x.rows();

  std::vector<HeadActivations> acts;
  acts.reserve(H);
  Matrix concat(rows, H * m);
  for (std::size_t h = 0; h < H; ++h) {
    acts.push_back(head_forward(layer.heads[h], x));
    const double gate = layer.gates[h];
    const Matrix& out = acts.back().out;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < m; ++j) concat(r, h * m + j) = gate * out(r, j);
  }

  Matrix mha = matmul(concat, layer.wo);
  Matrix sum_att = add(x, mha);
  LayerNormCache ln_att_cache;
  Matrix y1 = layernorm_forward(sum_att, layer.ln_att, &ln_att_cache);

  Matrix z1 = matmul(y1, layer.ffn_w1);
  for (std::size_t r = 0; r < z1.rows(); ++r)
    for (std::size_t j = 0; j < z1.cols(); ++j) z1(r, j) += layer.ffn_b1[j];
  Matrix a1(z1.rows(), z1.cols());
  for (std::size_t i = 0; i < z1.size(); ++i)
    a1.storage()[i] = std::max(0.0, z1.storage()[i]);

  Matrix ffn = matmul(a1, layer.ffn_w2);
  for (std::size_t r = 0; r < ffn.rows(); ++r)
    for (std::size_t j = 0; j < ffn.cols(); ++j) ffn(r, j) += layer.ffn_b2[j];

  Matrix sum_ffn = add(y1, ffn);
  LayerNormCache ln_ffn_cache;
  Matrix out = layernorm_forward(sum_ffn, layer.ln_ffn, &ln_ffn_cache);

  if (cache) {
    cache->input = x;
    cache->heads = std::move(acts);
    cache->concat = std::move(concat);
    cache->sum_att = std::move(sum_att);
    cache->ln_att = std::move(ln_att_cache);
    cache->y1 = std::move(y1);
    cache->z1 = std::move(z1);
    cache->a1 = std::move(a1);
    cache->sum_ffn = std::move(sum_ffn);
    cache->ln_ffn = std::move(ln_ffn_cache);
    cache->output = out;
  }
  return out;
}

ForwardResult model_forward(const EncoderModel& model, std::span<const int> tokens) {
  const ModelDims& dims = model.dims;
  if (tokens.empty()) throw InputError("model_forward needs at least one token");
  if (tokens.size() > dims.max_len) {
    throw InputError("sequence length " + std::to_string(tokens.size()) + " exceeds max_len " +
                     std::to_string(dims.max_len));
  }
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= dims.vocab) {
      throw InputError("token id " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(dims.vocab));
    }
  }

  const std::size_t N = tokens.size();
  ForwardResult result;
  Matrix x(N, dims.embed_dim);
  for (std::size_t r = 0; r < N; ++r) {
    const std::size_t tok = static_cast<std::size_t>(tokens[r]);
    for (std::size_t j = 0; j < dims.embed_dim; ++j)
      x(r, j) = model.embed(tok, j) + model.positional(r, j);
  }
  result.cache.x0 = x;

  result.cache.layers.resize(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    x = layer_forward(model.layers[l], x, &result.cache.layers[l]);
  }

  std::vector<double> pooled(dims.embed_dim, 0.0);
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t j = 0; j < dims.embed_dim; ++j) pooled[j] += x(r, j);
  for (double& p : pooled) p /= static_cast<double>(N);
  result.cache.pooled = pooled;

  result.logits.assign(dims.classes, 0.0);
  for (std::size_t c = 0; c < dims.classes; ++c) {
    double s = model.classifier_bias[c];
    for (std::size_t j = 0; j < dims.embed_dim; ++j) s += pooled[j] * model.classifier(j, c);
    result.logits[c] = s;
  }
  return result;
}

GradientSet make_gradient_set(const EncoderModel& model) {
  const ModelDims& d = model.dims;
  GradientSet g;
  g.embed = Matrix(d.vocab, d.embed_dim);
  g.layers.resize(d.layers);
  for (LayerGrads& lg : g.layers) {
    lg.heads.resize(d.heads);
    for (HeadGrads& hg : lg.heads) {
      hg.wq = Matrix(d.embed_dim, d.qk_dim);
      hg.wk = Matrix(d.embed_dim, d.qk_dim);
      hg.wv = Matrix(d.embed_dim, d.value_dim);
    }
    lg.wo = Matrix(d.heads * d.value_dim, d.embed_dim);
    lg.gates.assign(d.heads, 0.0);
    lg.ffn_w1 = Matrix(d.embed_dim, d.ffn_dim);
    lg.ffn_b1.assign(d.ffn_dim, 0.0);
    lg.ffn_w2 = Matrix(d.ffn_dim, d.embed_dim);
    lg.ffn_b2.assign(d.embed_dim, 0.0);
    lg.ln_att.gain.assign(d.embed_dim, 0.0);
    lg.ln_att.bias.assign(d.embed_dim, 0.0);
    lg.ln_ffn.gain.assign(d.embed_dim, 0.0);
    lg.ln_ffn.bias.assign(d.embed_dim, 0.0);
  }
  g.classifier = Matrix(d.embed_dim, d.classes);
  g.classifier_bias.assign(d.classes, 0.0);
  return g;
}

SoftmaxXent softmax_xent(const std::vector<double>& logits, int label) {
  if (logits.empty()) throw InputError("softmax_xent on empty logits");
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw InputError("label " + std::to_string(label) + " outside " +
                     std::to_string(logits.size()) + " classes");
  }
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  SoftmaxXent out;
  out.probs.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.probs[i] = std::exp(logits[i] - mx);
    sum += out.probs[i];
  }
  for (double& p : out.probs) p /= sum;
  out.loss = std::log(sum) + mx - logits[static_cast<std::size_t>(label)];
  out.dlogits = out.probs;
  out.dlogits[static_cast<std::size_t>(label)] -= 1.0;
  return out;
}

BackwardResult model_backward(const EncoderModel& model, std::span<const int> tokens, int label) {
  const ModelDims& dims = model.dims;
  if (label < 0 || static_cast<std::size_t>(label) >= dims.classes) {
    throw InputError("label " + std::to_string(label) + " outside " +
                     std::to_string(dims.classes) + " classes");
  }
  ForwardResult fwd = model_forward(model, tokens);
  SoftmaxXent xent = softmax_xent(fwd.logits, label);

  BackwardResult result;
  result.loss = xent.loss;
  result.grads = make_gradient_set(model);
  GradientSet& g = result.grads;

  const std::vector<double>& pooled = fwd.cache.pooled;
  std::vector<double> dpooled(dims.embed_dim, 0.0);
  for (std::size_t c = 0; c < dims.classes; ++c) {
    const double dl = xent.dlogits[c];
    g.classifier_bias[c] += dl;
    for (std::size_t j = 0; j < dims.embed_dim; ++j) {
      g.classifier(j, c) += pooled[j] * dl;
      dpooled[j] += model.classifier(j, c) * dl;
    }
  }

  const std::size_t N = tokens.size();
  Matrix dx(N, dims.embed_dim);
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t j = 0; j < dims.embed_dim; ++j)
      dx(r, j) = dpooled[j] / static_cast<double>(N);

  for (std::size_t l = model.layers.size(); l-- > 0;) {
    dx = layer_backward(model.layers[l], fwd.cache.layers[l], dx, g.layers[l]);
  }

  for (std::size_t r = 0; r < N; ++r) {
    const std::size_t tok = static_cast<std::size_t>(tokens[r]);
    for (std::size_t j = 0; j < dims.embed_dim; ++j) g.embed(tok, j) += dx(r, j);
  }
  return result;
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw InputError("argmax of empty span");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::size_t live_heads(const EncoderLayer& layer) {
  std::size_t n = 0;
  for (double g : layer.gates)
    if (g != 0.0) ++n;
  return n;
}

void prune_head(EncoderModel& model, std::size_t layer, std::size_t head) {
  if (layer >= model.layers.size()) {
    throw InputError("layer index " + std::to_string(layer) + " outside " +
                     std::to_string(model.layers.size()) + " layers");
  }
  EncoderLayer& l = model.layers[layer];
  if (head >= l.gates.size()) {
    throw InputError("head index " + std::to_string(head) + " outside " +
                     std::to_string(l.gates.size()) + " heads");
  }
  if (l.gates[head] == 0.0) {
    throw PolicyError("head " + std::to_string(head) + " of layer " + std::to_string(layer) +
                      " is already pruned");
  }
  if (live_heads(l) <= 1) {
    throw PolicyError("layer " + std::to_string(layer) + " must keep at least one live head");
  }
  l.gates[head] = 0.0;
}

void reset_gates(EncoderModel& model, std::size_t layer) {
  if (layer >= model.layers.size()) {
    throw InputError("layer index " + std::to_string(layer) + " outside " +
                     std::to_string(model.layers.size()) + " layers");
  }
  std::fill(model.layers[layer].gates.begin(), model.layers[layer].gates.end(), 1.0);
}

namespace {

// EncoderModel and GradientSet expose the same field names, so one
// walker defines the canonical block order for both.
template <typename SpanT, typename T>
std::vector<SpanT> collect_blocks(T& m) {
  std::vector<SpanT> blocks;
  blocks.push_back(SpanT(m.embed.storage()));
  for (auto& layer : m.layers) {
    for (auto& head : layer.heads) {
      blocks.push_back(SpanT(head.wq.storage()));
      blocks.push_back(SpanT(head.wk.storage()));
      blocks.push_back(SpanT(head.wv.storage()));
    }
    blocks.push_back(SpanT(layer.wo.storage()));
    blocks.push_back(SpanT(layer.ffn_w1.storage()));
    blocks.push_back(SpanT(layer.ffn_b1));
    blocks.push_back(SpanT(layer.ffn_w2.storage()));
    blocks.push_back(SpanT(layer.ffn_b2));
    blocks.push_back(SpanT(layer.ln_att.gain));
    blocks.push_back(SpanT(layer.ln_att.bias));
    blocks.push_back(SpanT(layer.ln_ffn.gain));
    blocks.push_back(SpanT(layer.ln_ffn.bias));
  }
  blocks.push_back(SpanT(m.classifier.storage()));
  blocks.push_back(SpanT(m.classifier_bias));
  return blocks;
}

}  // namespace

std::vector<std::span<double>> parameter_blocks(EncoderModel& model) {
  return collect_blocks<std::span<double>>(model);
}

std::vector<std::span<const double>> parameter_blocks(const EncoderModel& model) {
  return collect_blocks<std::span<const double>>(model);
}

std::vector<std::span<double>> gradient_blocks(GradientSet& grads) {
  return collect_blocks<std::span<double>>(grads);
}

std::vector<std::span<const double>> gradient_blocks(const GradientSet& grads) {
  return collect_blocks<std::span<const double>>(grads);
}

}  // namespace auber
