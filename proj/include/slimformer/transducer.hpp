#ifndef SLIMFORMER_TRANSDUCER_HPP
#define SLIMFORMER_TRANSDUCER_HPP

#include <vector>

#include "slimformer/models.hpp"

namespace slimformer {

// Prediction network: a single gated recurrent layer over the embedded label
// prefix, seeded by a start token. Emits U+1 states for a prefix of length U.
template <typename T>
struct Predictor {
  Tensor<T> embed;  // (vocab_size + 1) x dim; last row is the start token
  Tensor<T> w_gx, w_gh, b_g;
  Tensor<T> w_cx, w_ch, b_c;
  int64_t dim = 0;
  int64_t vocab_size = 0;

  std::vector<NamedParam<T>> named_params();
};

template <typename T>
Predictor<T> make_predictor(const ConformerConfig& cfg, RngKey key);

template <typename T>
Val predictor_forward(Graph<T>& g, Predictor<T>& p, const std::vector<int>& labels);

// One recurrence step: state [1 x dim] + one label (or the start token) -> new state.
template <typename T>
Val predictor_step(Graph<T>& g, Predictor<T>& p, Val state, int label_or_start);

// Joint network: additive combination of an encoder frame and a predictor
// state, a nonlinearity, then a projection to vocab_size + 1 logits (blank last).
template <typename T>
struct Joint {
  Tensor<T> w_enc, w_pred, b;
  Tensor<T> w_out, b_out;
  int64_t joint_dim = 0;
  int64_t vocab_size = 0;

  std::vector<NamedParam<T>> named_params();
};

template <typename T>
Joint<T> make_joint(const ConformerConfig& cfg, RngKey key);

// Full logit lattice [frames x (U+1) x (vocab+1)].
template <typename T>
Val joint_forward_all(Graph<T>& g, Joint<T>& j, Val enc, Val pred);

// Logits for a single (frame, state) pair: [1 x (vocab+1)].
template <typename T>
Val joint_forward_one(Graph<T>& g, Joint<T>& j, Val enc_frame, Val pred_state);

// Forward/backward lattice for the transducer negative log-likelihood.
// Alignments are the interleavings of T blank emissions and U label
// emissions; a label emitted after the final blank reads the last frame's
// distribution, so the tables run over an augmented (T+1) x (U+1) grid.
struct TransducerLattice {
  Tensor<double> log_probs;  // T x (U+1) x (V+1), log-softmax over the last axis
  Tensor<double> alpha;      // (T+1) x (U+1)
  Tensor<double> beta;       // (T+1) x (U+1)
  double loss = 0;           // -alpha[T][U]; equals -beta[0][0]
};

template <typename T>
TransducerLattice rnnt_lattice(const Tensor<T>& logits, const std::vector<int>& targets,
                               int blank);

// Lattice loss as a graph node; gradient w.r.t. the logits is the exact
// occupancy-weighted softmax gradient.
template <typename T>
Val transducer_nll(Graph<T>& g, Val logits, const std::vector<int>& targets, int blank);

// Convenience: encoder tap + label sequence -> scalar loss.
template <typename T>
Val transducer_loss(Graph<T>& g, Joint<T>& joint, Predictor<T>& pred, Val enc_out,
                    const std::vector<int>& targets);

}  // namespace slimformer

#endif  // SLIMFORMER_TRANSDUCER_HPP
