#include "slimformer/transducer.hpp"

#include <cmath>
#include <limits>

namespace slimformer {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logadd(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(-std::abs(a - b)));
}

template <typename T>
Tensor<T> init_weight(int64_t in, int64_t out, const RngKey& key, const std::string& name) {
  Tensor<T> w = Tensor<T>::randn({in, out}, key.derive(name),
                                 1.0 / std::sqrt(static_cast<double>(in)));
  w.requires_grad = true;
  return w;
}

template <typename T>
Tensor<T> zero_param(Shape s) {
  Tensor<T> t = Tensor<T>::zeros(std::move(s));
  t.requires_grad = true;
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Predictor
// ---------------------------------------------------------------------------

template <typename T>
Predictor<T> make_predictor(const ConformerConfig& cfg, RngKey key) {
  Predictor<T> p;
  p.dim = cfg.predictor_dim;
  p.vocab_size = cfg.vocab_size;
  p.embed = init_weight<T>(cfg.vocab_size + 1, p.dim, key, "predictor/embed");
  p.w_gx = init_weight<T>(p.dim, p.dim, key, "predictor/w_gx");
  p.w_gh = init_weight<T>(p.dim, p.dim, key, "predictor/w_gh");
  p.b_g = zero_param<T>({p.dim});
  p.w_cx = init_weight<T>(p.dim, p.dim, key, "predictor/w_cx");
  p.w_ch = init_weight<T>(p.dim, p.dim, key, "predictor/w_ch");
  p.b_c = zero_param<T>({p.dim});
  return p;
}

template <typename T>
Val predictor_step(Graph<T>& g, Predictor<T>& p, Val state, int label_or_start) {
  SF_CHECK_CONTRACT(label_or_start >= 0 && label_or_start <= p.vocab_size,
                    "label ", label_or_start, " out of vocabulary [0, ", p.vocab_size, "]");
  Val x = g.gather_rows(g.leaf(&p.embed), {label_or_start});
  Val gate = g.sigmoid(g.add(
      g.add(g.matmul(x, g.leaf(&p.w_gx)), g.matmul(state, g.leaf(&p.w_gh))), g.leaf(&p.b_g)));
  Val cand = tanh_via_sigmoid(
      g, g.add(g.add(g.matmul(x, g.leaf(&p.w_cx)), g.matmul(state, g.leaf(&p.w_ch))),
               g.leaf(&p.b_c)));
  // state + gate * (cand - state)
  return g.add(state, g.mul(gate, g.sub(cand, state)));
}

template <typename T>
Val predictor_forward(Graph<T>& g, Predictor<T>& p, const std::vector<int>& labels) {
  Val state = g.zeros({1, p.dim});
  state = predictor_step(g, p, state, static_cast<int>(p.vocab_size));  // start token
  std::vector<Val> states = {state};
  for (int label : labels) {
    SF_CHECK_CONTRACT(label >= 0 && label < p.vocab_size, "label ", label,
                      " out of vocabulary [0, ", p.vocab_size, ")");
    state = predictor_step(g, p, state, label);
    states.push_back(state);
  }
  return states.size() == 1 ? states[0] : g.concat(states, 0);
}

// ---------------------------------------------------------------------------
// Joint
// ---------------------------------------------------------------------------

template <typename T>
Joint<T> make_joint(const ConformerConfig& cfg, RngKey key) {
  Joint<T> j;
  j.joint_dim = cfg.joint_dim;
  j.vocab_size = cfg.vocab_size;
  j.w_enc = init_weight<T>(cfg.model_dim, j.joint_dim, key, "joint/w_enc");
  j.w_pred = init_weight<T>(cfg.predictor_dim, j.joint_dim, key, "joint/w_pred");
  j.b = zero_param<T>({j.joint_dim});
  j.w_out = init_weight<T>(j.joint_dim, cfg.vocab_size + 1, key, "joint/w_out");
  j.b_out = zero_param<T>({cfg.vocab_size + 1});
  return j;
}

template <typename T>
Val joint_forward_all(Graph<T>& g, Joint<T>& j, Val enc, Val pred) {
  const int64_t frames = g.value(enc).dim(0);
  const int64_t states = g.value(pred).dim(0);
  Val he = g.add(g.matmul(enc, g.leaf(&j.w_enc)), g.leaf(&j.b));
  Val hp = g.matmul(pred, g.leaf(&j.w_pred));
  std::vector<Val> per_state;
  per_state.reserve(static_cast<size_t>(states));
  for (int64_t u = 0; u < states; ++u) {
    Val row = g.reshape(g.slice(hp, 0, u, 1), {j.joint_dim});
    Val act = g.swish(g.add(he, row));
    Val logits = g.add(g.matmul(act, g.leaf(&j.w_out)), g.leaf(&j.b_out));
    per_state.push_back(g.reshape(logits, {frames, 1, j.vocab_size + 1}));
  }
  return per_state.size() == 1 ? per_state[0] : g.concat(per_state, 1);
}

template <typename T>
Val joint_forward_one(Graph<T>& g, Joint<T>& j, Val enc_frame, Val pred_state) {
  Val he = g.add(g.matmul(enc_frame, g.leaf(&j.w_enc)), g.leaf(&j.b));
  Val hp = g.matmul(pred_state, g.leaf(&j.w_pred));
  Val act = g.swish(g.add(he, hp));
  return g.add(g.matmul(act, g.leaf(&j.w_out)), g.leaf(&j.b_out));
}

// ---------------------------------------------------------------------------
// Lattice
// ---------------------------------------------------------------------------

template <typename T>
TransducerLattice rnnt_lattice(const Tensor<T>& logits, const std::vector<int>& targets,
                               int blank) {
  SF_CHECK_SHAPE(logits.rank() == 3, "transducer logits must be [frames x states x labels], got ",
                 shape_str(logits.shape));
  const int64_t frames = logits.dim(0);
  const int64_t states = logits.dim(1);
  const int64_t labels = logits.dim(2);
  const int64_t u_len = static_cast<int64_t>(targets.size());
  SF_CHECK_CONTRACT(frames >= 1, "transducer needs at least one frame");
  SF_CHECK_CONTRACT(states == u_len + 1, "lattice has ", states, " states for ", u_len,
                    " target labels");
  SF_CHECK_CONTRACT(blank >= 0 && blank < labels, "blank id out of range");
  for (int y : targets) {
    SF_CHECK_CONTRACT(y >= 0 && y < labels && y != blank, "target label ", y, " out of range");
  }

  TransducerLattice lat;
  lat.log_probs = Tensor<double>({frames, states, labels});
  for (int64_t t = 0; t < frames; ++t) {
    for (int64_t u = 0; u < states; ++u) {
      const int64_t base = (t * states + u) * labels;
      double mx = static_cast<double>(logits.at(base));
      for (int64_t kk = 1; kk < labels; ++kk) {
        mx = std::max(mx, static_cast<double>(logits.at(base + kk)));
      }
      double denom = 0;
      for (int64_t kk = 0; kk < labels; ++kk) {
        denom += std::exp(static_cast<double>(logits.at(base + kk)) - mx);
      }
      const double log_denom = mx + std::log(denom);
      for (int64_t kk = 0; kk < labels; ++kk) {
        lat.log_probs.at(base + kk) = static_cast<double>(logits.at(base + kk)) - log_denom;
      }
    }
  }

  auto lp = [&](int64_t t, int64_t u, int64_t kk) -> double {
    return lat.log_probs.at((t * states + u) * labels + kk);
  };
  // Label emissions clamp the frame index: labels trailing the final blank
  // read the last frame's distribution.
  auto lp_label = [&](int64_t t, int64_t u) -> double {
    return lp(std::min(t, frames - 1), u, targets[static_cast<size_t>(u)]);
  };

  lat.alpha = Tensor<double>::full({frames + 1, states}, kNegInf);
  lat.beta = Tensor<double>::full({frames + 1, states}, kNegInf);
  lat.alpha.at(0, 0) = 0.0;
  for (int64_t t = 0; t <= frames; ++t) {
    for (int64_t u = 0; u < states; ++u) {
      if (t == 0 && u == 0) continue;
      double acc = kNegInf;
      if (t >= 1) acc = logadd(acc, lat.alpha.at(t - 1, u) + lp(t - 1, u, blank));
      if (u >= 1) acc = logadd(acc, lat.alpha.at(t, u - 1) + lp_label(t, u - 1));
      lat.alpha.at(t, u) = acc;
    }
  }
  lat.beta.at(frames, states - 1) = 0.0;
  for (int64_t t = frames; t >= 0; --t) {
    for (int64_t u = states - 1; u >= 0; --u) {
      if (t == frames && u == states - 1) continue;
      double acc = kNegInf;
      if (t <= frames - 1) acc = logadd(acc, lp(t, u, blank) + lat.beta.at(t + 1, u));
      if (u <= states - 2) acc = logadd(acc, lp_label(t, u) + lat.beta.at(t, u + 1));
      lat.beta.at(t, u) = acc;
    }
  }
  lat.loss = -lat.alpha.at(frames, states - 1);
  return lat;
}

template <typename T>
Val transducer_nll(Graph<T>& g, Val logits, const std::vector<int>& targets, int blank) {
  const Tensor<T>& lv = g.value(logits);
  TransducerLattice lat = rnnt_lattice(lv, targets, blank);
  const int64_t frames = lv.dim(0), states = lv.dim(1), labels = lv.dim(2);
  const double log_z = -lat.loss;

  // d(-logZ)/d log_prob: minus the posterior probability of traversing each
  // emission edge. Label edges at t = frames-1 and the trailing t = frames
  // both read lattice entry (frames-1, u).
  Tensor<double> dlp({frames, states, labels});
  for (int64_t t = 0; t <= frames; ++t) {
    for (int64_t u = 0; u < states; ++u) {
      const double a = lat.alpha.at(t, u);
      if (a == kNegInf) continue;
      if (t <= frames - 1) {
        const double edge =
            a + lat.log_probs.at((t * states + u) * labels + blank) + lat.beta.at(t + 1, u) - log_z;
        dlp.at((t * states + u) * labels + blank) -= std::exp(edge);
      }
      if (u <= states - 2) {
        const int64_t tc = std::min(t, frames - 1);
        const int64_t idx = (tc * states + u) * labels + targets[static_cast<size_t>(u)];
        const double edge = a + lat.log_probs.at(idx) + lat.beta.at(t, u + 1) - log_z;
        dlp.at(idx) -= std::exp(edge);
      }
    }
  }

  // Through the log-softmax: dlogit = dlp - softmax * sum(dlp) per row.
  Tensor<T> dlogits({frames, states, labels});
  for (int64_t t = 0; t < frames; ++t) {
    for (int64_t u = 0; u < states; ++u) {
      const int64_t base = (t * states + u) * labels;
      double row_sum = 0;
      for (int64_t kk = 0; kk < labels; ++kk) row_sum += dlp.at(base + kk);
      for (int64_t kk = 0; kk < labels; ++kk) {
        const double p = std::exp(lat.log_probs.at(base + kk));
        dlogits.at(base + kk) = static_cast<T>(dlp.at(base + kk) - p * row_sum);
      }
    }
  }

  return g.make_node(
      Tensor<T>::scalar(static_cast<T>(lat.loss)), {logits},
      [dlogits](Graph<T>& gg, int id) {
        auto& n = gg.node(id);
        const int ia = n.inputs[0];
        if (!gg.node(ia).needs_grad) return;
        const T g0 = n.grad[0];
        std::vector<T>& da = gg.grad_buf(ia);
        for (int64_t i = 0; i < dlogits.size(); ++i) {
          da[static_cast<size_t>(i)] += g0 * dlogits.at(i);
        }
      },
      "transducer_nll");
}

template <typename T>
Val transducer_loss(Graph<T>& g, Joint<T>& joint, Predictor<T>& pred, Val enc_out,
                    const std::vector<int>& targets) {
  Val pred_states = predictor_forward(g, pred, targets);
  Val logits = joint_forward_all(g, joint, enc_out, pred_states);
  return transducer_nll(g, logits, targets, static_cast<int>(joint.vocab_size));
}

// ---------------------------------------------------------------------------
// Parameter registries
// ---------------------------------------------------------------------------

template <typename T>
std::vector<NamedParam<T>> Predictor<T>::named_params() {
  return {{"predictor/embed", &embed, "predictor"}, {"predictor/w_gx", &w_gx, "predictor"},
          {"predictor/w_gh", &w_gh, "predictor"},   {"predictor/b_g", &b_g, "predictor"},
          {"predictor/w_cx", &w_cx, "predictor"},   {"predictor/w_ch", &w_ch, "predictor"},
          {"predictor/b_c", &b_c, "predictor"}};
}

template <typename T>
std::vector<NamedParam<T>> Joint<T>::named_params() {
  return {{"joint/w_enc", &w_enc, "joint"},
          {"joint/w_pred", &w_pred, "joint"},
          {"joint/b", &b, "joint"},
          {"joint/w_out", &w_out, "joint"},
          {"joint/b_out", &b_out, "joint"}};
}

#define SF_INSTANTIATE_TRANSDUCER(T)                                                         \
  template Predictor<T> make_predictor<T>(const ConformerConfig&, RngKey);                   \
  template Val predictor_step<T>(Graph<T>&, Predictor<T>&, Val, int);                        \
  template Val predictor_forward<T>(Graph<T>&, Predictor<T>&, const std::vector<int>&);      \
  template Joint<T> make_joint<T>(const ConformerConfig&, RngKey);                           \
  template Val joint_forward_all<T>(Graph<T>&, Joint<T>&, Val, Val);                         \
  template Val joint_forward_one<T>(Graph<T>&, Joint<T>&, Val, Val);                         \
  template TransducerLattice rnnt_lattice<T>(const Tensor<T>&, const std::vector<int>&, int); \
  template Val transducer_nll<T>(Graph<T>&, Val, const std::vector<int>&, int);              \
  template Val transducer_loss<T>(Graph<T>&, Joint<T>&, Predictor<T>&, Val,                  \
                                  const std::vector<int>&);                                  \
  template std::vector<NamedParam<T>> Predictor<T>::named_params();                          \
  template std::vector<NamedParam<T>> Joint<T>::named_params()

SF_INSTANTIATE_TRANSDUCER(float);
SF_INSTANTIATE_TRANSDUCER(double);
#undef SF_INSTANTIATE_TRANSDUCER

}  // namespace slimformer
