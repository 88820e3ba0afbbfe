#ifndef SLIMFORMER_DECODE_HPP
#define SLIMFORMER_DECODE_HPP

#include <vector>

#include "slimformer/transducer.hpp"

namespace slimformer {

// Time-synchronous greedy transducer decoding. The per-frame emission cap
// bounds the output length and guarantees termination.
template <typename T>
std::vector<int> greedy_decode(Graph<T>& g, Joint<T>& joint, Predictor<T>& pred, Val enc_out,
                               int max_symbols_per_frame = 10);

int64_t edit_distance(const std::vector<int>& a, const std::vector<int>& b);

// Edit distance over max(1, reference length).
double token_error_rate(const std::vector<int>& hyp, const std::vector<int>& ref);

}  // namespace slimformer

#endif  // SLIMFORMER_DECODE_HPP
