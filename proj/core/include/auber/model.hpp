#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "auber/matrix.hpp"
#include "auber/rng.hpp"

namespace auber {

// Projection weights of one attention head.
struct AttentionHead {
  Matrix wq;  // d x n
  Matrix wk;  // d x n
  Matrix wv;  // d x m
};

struct LayerNorm {
  std::vector<double> gain;
  std::vector<double> bias;
};

struct EncoderLayer {
  std::vector<AttentionHead> heads;
  Matrix wo;  // (H*m) x d
  // One multiplicative gate per head, 0 or 1 in every pruning flow.
  // Kept as doubles so gate gradients fall out of the usual backward.
  std::vector<double> gates;
  Matrix ffn_w1;  // d x f
  std::vector<double> ffn_b1;
  Matrix ffn_w2;  // f x d
  std::vector<double> ffn_b2;
  LayerNorm ln_att;
  LayerNorm ln_ffn;
};

struct ModelDims {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t embed_dim = 32;
  std::size_t qk_dim = 8;
  std::size_t value_dim = 8;
  std::size_t ffn_dim = 64;
  std::size_t max_len = 16;
  std::size_t vocab = 64;
  std::size_t classes = 2;
};

void validate(const ModelDims& dims);

struct EncoderModel {
  ModelDims dims;
  Matrix embed;       // vocab x d
  Matrix positional;  // max_len x d, sinusoidal, never trained
  std::vector<EncoderLayer> layers;
  Matrix classifier;  // d x classes
  std::vector<double> classifier_bias;
};

// Xavier-uniform weights, zero biases, unit layer-norm gains, all gates
// open. Draw order is fixed: embed, then per layer per head wq/wk/wv,
// then wo, ffn_w1, ffn_w2, then the classifier.
EncoderModel make_model(const ModelDims& dims, Rng& rng);

struct HeadActivations {
  Matrix q;    // N x n
  Matrix k;    // N x n
  Matrix att;  // N x N, rows sum to 1
  Matrix v;    // N x m
  Matrix out;  // N x m
};

// Scaled dot-product self-attention of one head over input x (N x d).
HeadActivations head_forward(const AttentionHead& head, const Matrix& x);

struct LayerNormCache {
  Matrix xhat;
  std::vector<double> inv_sigma;  // per row
};

Matrix layernorm_forward(const Matrix& x, const LayerNorm& ln, LayerNormCache* cache);

struct LayerCache {
  Matrix input;
  std::vector<HeadActivations> heads;
  Matrix concat;  // gated head outputs side by side, N x (H*m)
  Matrix sum_att;
  LayerNormCache ln_att;
  Matrix y1;  // output of the first layer norm
  Matrix z1;  // pre-activation of the hidden FFN layer
  Matrix a1;  // relu(z1)
  Matrix sum_ffn;
  LayerNormCache ln_ffn;
  Matrix output;
};

Matrix layer_forward(const EncoderLayer& layer, const Matrix& x, LayerCache* cache);

struct ForwardCache {
  Matrix x0;
  std::vector<LayerCache> layers;
  std::vector<double> pooled;
};

struct ForwardResult {
  std::vector<double> logits;
  ForwardCache cache;
};

// Embedding + positional encoding, L encoder layers, mean pooling over
// positions, linear classifier.
ForwardResult model_forward(const EncoderModel& model, std::span<const int> tokens);

struct HeadGrads {
  Matrix wq;
  Matrix wk;
  Matrix wv;
};

struct LayerGrads {
  std::vector<HeadGrads> heads;
  Matrix wo;
  std::vector<double> gates;
  Matrix ffn_w1;
  std::vector<double> ffn_b1;
  Matrix ffn_w2;
  std::vector<double> ffn_b2;
  LayerNorm ln_att;
  LayerNorm ln_ffn;
};

struct GradientSet {
  Matrix embed;
  std::vector<LayerGrads> layers;
  Matrix classifier;
  std::vector<double> classifier_bias;
};

GradientSet make_gradient_set(const EncoderModel& model);

struct BackwardResult {
  double loss;
  GradientSet grads;
};

// Cross-entropy loss and exact gradients for every trained parameter
// plus the head gates.
BackwardResult model_backward(const EncoderModel& model, std::span<const int> tokens, int label);

struct SoftmaxXent {
  double loss;
  std::vector<double> probs;
  std::vector<double> dlogits;
};

SoftmaxXent softmax_xent(const std::vector<double>& logits, int label);

// Argmax with ties resolved to the lowest index.
std::size_t argmax(std::span<const double> v);

std::size_t live_heads(const EncoderLayer& layer);

// Close one gate. Refuses to close a closed gate or the layer's last
// open one.
void prune_head(EncoderModel& model, std::size_t layer, std::size_t head);

void reset_gates(EncoderModel& model, std::size_t layer);

// Views over every trained parameter, in checkpoint order. Gates and
// the positional table are excluded.
std::vector<std::span<double>> parameter_blocks(EncoderModel& model);
std::vector<std::span<const double>> parameter_blocks(const EncoderModel& model);
std::vector<std::span<double>> gradient_blocks(GradientSet& grads);
std::vector<std::span<const double>> gradient_blocks(const GradientSet& grads);

}  // namespace auber
