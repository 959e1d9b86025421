#pragma once

#include <cstddef>
#include <vector>

#include "auber/model.hpp"

namespace auber {

// Which projection matrix feeds the per-head feature.
enum class MatrixKind { Value, Query, Key };
// Which entrywise norm reduces it.
enum class NormKind { L1, L2 };

struct StateRecipe {
  MatrixKind matrix = MatrixKind::Value;
  NormKind norm = NormKind::L1;
};

// Agent observation for one layer: softmax over the standardized
// per-head norms, with pruned slots held at zero.
struct LayerState {
  std::vector<double> values;
  std::vector<bool> pruned;
};

// Norms are taken over all heads of the layer; requires every gate
// open, since a half-pruned layer has no well-defined fresh state.
LayerState layer_state(const EncoderModel& model, std::size_t layer, const StateRecipe& recipe);

// Zero the slot of a newly pruned head. The remaining entries are left
// as they are, not renormalized.
void mark_pruned(LayerState& state, std::size_t head);

struct Lemma1Result {
  bool ok;
  double lhs;    // entrywise L1 of the head output
  double bound;  // N * ||X||_1 * ||Wv||_1
};

// Checks ||att(X) X Wv||_1 <= N ||X||_1 ||Wv||_1 for one head, with a
// 1e-9 relative slack for rounding.
Lemma1Result lemma1_check(const AttentionHead& head, const Matrix& x);

}  // namespace auber
