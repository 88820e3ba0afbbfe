#ifndef SLIMFORMER_DATA_HPP
#define SLIMFORMER_DATA_HPP

#include <string>
#include <vector>

#include "slimformer/rng.hpp"
#include "slimformer/tensor.hpp"

namespace slimformer {

// Synthetic utterances: label sequences rendered to frames by per-label
// prototype vectors plus Gaussian noise and random time dilation. Everything
// is a pure function of (seed, split, index), so regeneration is exact.
struct DataConfig {
  int64_t feature_dim = 16;
  int64_t vocab_size = 16;
  int64_t train_utts = 200;
  int64_t dev_utts = 50;
  int64_t test_utts = 50;
  int64_t min_labels = 2;
  int64_t max_labels = 8;
  int64_t frames_per_label_min = 2;
  int64_t frames_per_label_max = 4;
  double noise_std = 0.1;
  uint64_t seed = 7;
};

struct Utterance {
  Tensor<double> features;  // frames x feature_dim
  std::vector<int> labels;
};

struct Corpus {
  std::vector<Utterance> utts;
  int64_t feature_dim = 0;
  int64_t vocab_size = 0;
};

Corpus generate_split(const DataConfig& cfg, const std::string& split);
int64_t split_size(const DataConfig& cfg, const std::string& split);

void write_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

// Deterministic batch of utterance indices for one step (with replacement).
std::vector<int64_t> batch_indices(uint64_t seed, int64_t step, int64_t batch_size,
                                   int64_t corpus_size);

}  // namespace slimformer

#endif  // SLIMFORMER_DATA_HPP
