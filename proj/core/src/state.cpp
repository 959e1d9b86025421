#include "auber/state.hpp"

#include <string>

#include "auber/errors.hpp"

namespace auber {

LayerState layer_state(const EncoderModel& model, std::size_t layer, const StateRecipe& recipe) {
  if (layer >= model.layers.size()) {
    throw InputError("layer index " + std::to_string(layer) + " outside " +
                     std::to_string(model.layers.size()) + " layers");
  }
  const EncoderLayer& l = model.layers[layer];
  if (live_heads(l) != l.gates.size()) {
    throw StateError("layer " + std::to_string(layer) +
                     " has pruned heads; fresh state needs all gates open");
  }

  const int p = recipe.norm == NormKind::L1 ? 1 : 2;
  std::vector<double> norms;
  norms.reserve(l.heads.size());
  for (const AttentionHead& head : l.heads) {
    const Matrix* w = &head.wv;
    if (recipe.matrix == MatrixKind::Query) w = &head.wq;
    if (recipe.matrix == MatrixKind::Key) w = &head.wk;
    norms.push_back(entrywise_norm(*w, p));
  }

  LayerState state;
  state.values = softmax(standardize(norms));
  state.pruned.assign(l.heads.size(), false);
  return state;
}

void mark_pruned(LayerState& state, std::size_t head) {
  if (head >= state.values.size()) {
    throw InputError("head index " + std::to_string(head) + " outside state of " +
                     std::to_string(state.values.size()) + " heads");
  }
  if (state.pruned[head]) {
    throw StateError("head " + std::to_string(head) + " already marked pruned in state");
  }
  state.pruned[head] = true;
  state.values[head] = 0.0;
}

Lemma1Result lemma1_check(const AttentionHead& head, const Matrix& x) {
  HeadActivations act = head_forward(head, x);
  Lemma1Result r;
  r.lhs = entrywise_norm(act.out, 1);
  r.bound = static_cast<double>(x.rows()) * entrywise_norm(x, 1) * entrywise_norm(head.wv, 1);
  r.ok = r.lhs <= r.bound * (1.0 + 1e-9) + 1e-12;
  return r;
}

}  // namespace auber
