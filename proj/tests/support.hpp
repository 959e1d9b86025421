#pragma once

// Shared helpers for the test binaries: a scalar reference forward
// pass, a finite-difference gradient checker, and small fixtures. The
// reference code sticks to nested vectors and plain loops on purpose,
// so it shares nothing with the library's linear algebra.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "auber/model.hpp"
#include "auber/rng.hpp"
#include "auber/trainer.hpp"

namespace testsupport {

using Grid = std::vector<std::vector<double>>;

inline Grid to_grid(const auber::Matrix& m) {
  Grid g(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
  return g;
}

inline Grid ref_matmul(const Grid& a, const Grid& b) {
  Grid c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline std::vector<double> ref_softmax(const std::vector<double>& v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  std::vector<double> e(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    e[i] = std::exp(v[i] - mx);
    sum += e[i];
  }
  for (double& x : e) x /= sum;
  return e;
}

inline std::vector<double> ref_layernorm_row(const std::vector<double>& x,
                                             const std::vector<double>& gain,
                                             const std::vector<double>& bias) {
  const double d = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= d;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= d;
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  std::vector<double> y(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) y[j] = gain[j] * (x[j] - mean) * inv + bias[j];
  return y;
}

// Scalar re-derivation of the whole classifier forward pass.
inline std::vector<double> ref_model_logits(const auber::EncoderModel& model,
                                            std::span<const int> tokens) {
  const auber::ModelDims& dims = model.dims;
  const std::size_t N = tokens.size();
  const std::size_t d = dims.embed_dim;

  Grid x(N, std::vector<double>(d));
  for (std::size_t r = 0; r < N; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      const double expo = static_cast<double>(2 * (j / 2)) / static_cast<double>(d);
      const double angle = static_cast<double>(r) / std::pow(10000.0, expo);
      const double pos = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
      x[r][j] = model.embed(static_cast<std::size_t>(tokens[r]), j) + pos;
    }
  }

  for (const auber::EncoderLayer& layer : model.layers) {
    const std::size_t H = layer.heads.size();
    const std::size_t n = layer.heads[0].wq.cols();
    const std::size_t m = layer.heads[0].wv.cols();

    Grid concat(N, std::vector<double>(H * m, 0.0));
    for (std::size_t h = 0; h < H; ++h) {
      const auber::AttentionHead& head = layer.heads[h];
      Grid q = ref_matmul(x, to_grid(head.wq));
      Grid k = ref_matmul(x, to_grid(head.wk));
      Grid v = ref_matmul(x, to_grid(head.wv));
      for (std::size_t r = 0; r < N; ++r) {
        std::vector<double> scores(N, 0.0);
        for (std::size_t c = 0; c < N; ++c) {
          for (std::size_t a = 0; a < n; ++a) scores[c] += q[r][a] * k[c][a];
          scores[c] /= std::sqrt(static_cast<double>(n));
        }
        const std::vector<double> att = ref_softmax(scores);
        for (std::size_t j = 0; j < m; ++j) {
          double o = 0.0;
          for (std::size_t c = 0; c < N; ++c) o += att[c] * v[c][j];
          concat[r][h * m + j] = layer.gates[h] * o;
        }
      }
    }

    Grid mha = ref_matmul(concat, to_grid(layer.wo));
    Grid y1(N);
    for (std::size_t r = 0; r < N; ++r) {
      std::vector<double> s(d);
      for (std::size_t j = 0; j < d; ++j) s[j] = x[r][j] + mha[r][j];
      y1[r] = ref_layernorm_row(s, layer.ln_att.gain, layer.ln_att.bias);
    }

    for (std::size_t r = 0; r < N; ++r) {
      std::vector<double> hid(layer.ffn_b1.size());
      for (std::size_t j = 0; j < hid.size(); ++j) {
        double z = layer.ffn_b1[j];
        for (std::size_t a = 0; a < d; ++a) z += y1[r][a] * layer.ffn_w1(a, j);
        hid[j] = std::max(0.0, z);
      }
      std::vector<double> s(d);
      for (std::size_t j = 0; j < d; ++j) {
        double f = layer.ffn_b2[j];
        for (std::size_t a = 0; a < hid.size(); ++a) f += hid[a] * layer.ffn_w2(a, j);
        s[j] = y1[r][j] + f;
      }
      x[r] = ref_layernorm_row(s, layer.ln_ffn.gain, layer.ln_ffn.bias);
    }
  }

  std::vector<double> pooled(d, 0.0);
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t j = 0; j < d; ++j) pooled[j] += x[r][j];
  for (double& p : pooled) p /= static_cast<double>(N);

  std::vector<double> logits(dims.classes);
  for (std::size_t c = 0; c < dims.classes; ++c) {
    double s = model.classifier_bias[c];
    for (std::size_t j = 0; j < d; ++j) s += pooled[j] * model.classifier(j, c);
    logits[c] = s;
  }
  return logits;
}

struct GradCheck {
  bool ok = true;
  double worst = 0.0;
  std::string where;
};

// Central differences over every trained parameter and every gate.
inline GradCheck gradcheck_model(auber::EncoderModel& model, std::span<const int> tokens,
                                 int label, double step = 1e-5, double rtol = 1e-4,
                                 double atol = 1e-8) {
  const auber::BackwardResult bwd = auber::model_backward(model, tokens, label);
  const auto analytic_blocks = auber::gradient_blocks(bwd.grads);

  auto loss_at = [&]() {
    const auto fwd = auber::model_forward(model, tokens);
    return auber::softmax_xent(fwd.logits, label).loss;
  };
  GradCheck result;
  auto check_coord = [&](double& coord, double analytic, const std::string& name) {
    const double saved = coord;
    coord = saved + step;
    const double lp = loss_at();
    coord = saved - step;
    const double lm = loss_at();
    coord = saved;
    const double numeric = (lp - lm) / (2.0 * step);
    const double err = std::abs(analytic - numeric);
    const double tol = atol + rtol * std::max(std::abs(analytic), std::abs(numeric));
    const double rel = err / std::max(1e-300, std::max(std::abs(analytic), std::abs(numeric)));
    if (err > tol) {
      result.ok = false;
      if (rel > result.worst) {
        result.worst = rel;
        result.where = name;
      }
    }
  };

  auto param_blocks = auber::parameter_blocks(model);
  for (std::size_t b = 0; b < param_blocks.size(); ++b) {
    for (std::size_t i = 0; i < param_blocks[b].size(); ++i) {
      check_coord(param_blocks[b][i], analytic_blocks[b][i],
                  "block " + std::to_string(b) + "[" + std::to_string(i) + "]");
    }
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    for (std::size_t h = 0; h < model.layers[l].gates.size(); ++h) {
      check_coord(model.layers[l].gates[h], bwd.grads.layers[l].gates[h],
                  "gate " + std::to_string(l) + "/" + std::to_string(h));
    }
  }
  return result;
}

inline auber::ModelDims tiny_dims() {
  auber::ModelDims d;
  d.layers = 2;
  d.heads = 2;
  d.embed_dim = 6;
  d.qk_dim = 3;
  d.value_dim = 3;
  d.ffn_dim = 8;
  d.max_len = 6;
  d.vocab = 10;
  d.classes = 2;
  return d;
}

inline auber::Dataset random_dataset(std::size_t count, std::size_t seq_len, std::size_t vocab,
                                     auber::Rng& rng) {
  auber::Dataset data;
  data.num_classes = 2;
  for (std::size_t i = 0; i < count; ++i) {
    auber::TrainExample ex;
    for (std::size_t t = 0; t < seq_len; ++t)
      ex.tokens.push_back(static_cast<int>(rng.index(vocab)));
    ex.label = static_cast<int>(rng.index(2));
    data.examples.push_back(std::move(ex));
  }
  return data;
}

inline auber::Dataset random_dataset(const auber::ModelDims& dims, std::size_t count,
                                     std::uint64_t seed) {
  auber::Rng rng(seed);
  const std::size_t seq_len = dims.max_len < 4 ? dims.max_len : 4;
  return random_dataset(count, seq_len, dims.vocab, rng);
}

}  // namespace testsupport
