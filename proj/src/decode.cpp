#include "slimformer/decode.hpp"

#include <algorithm>

namespace slimformer {

template <typename T>
std::vector<int> greedy_decode(Graph<T>& g, Joint<T>& joint, Predictor<T>& pred, Val enc_out,
                               int max_symbols_per_frame) {
  SF_CHECK_CONTRACT(max_symbols_per_frame >= 1, "emission cap must be positive");
  const int64_t frames = g.value(enc_out).dim(0);
  const int blank = static_cast<int>(joint.vocab_size);

  Val state = g.zeros({1, pred.dim});
  state = predictor_step(g, pred, state, static_cast<int>(pred.vocab_size));

  std::vector<int> out;
  for (int64_t t = 0; t < frames; ++t) {
    Val frame = g.slice(enc_out, 0, t, 1);
    for (int emitted = 0; emitted < max_symbols_per_frame; ++emitted) {
      Val logits = joint_forward_one(g, joint, frame, state);
      const Tensor<T>& lv = g.value(logits);
      int best = 0;
      for (int64_t k = 1; k < lv.size(); ++k) {
        if (lv.at(k) > lv.at(best)) best = static_cast<int>(k);
      }
      if (best == blank) break;
      out.push_back(best);
      state = predictor_step(g, pred, state, best);
    }
  }
  return out;
}

int64_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int64_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double token_error_rate(const std::vector<int>& hyp, const std::vector<int>& ref) {
  const double denom = static_cast<double>(std::max<size_t>(1, ref.size()));
  return static_cast<double>(edit_distance(hyp, ref)) / denom;
}

template std::vector<int> greedy_decode<float>(Graph<float>&, Joint<float>&, Predictor<float>&,
                                               Val, int);
template std::vector<int> greedy_decode<double>(Graph<double>&, Joint<double>&,
                                                Predictor<double>&, Val, int);

}  // namespace slimformer
