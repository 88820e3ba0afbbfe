#include "slimformer/data.hpp"

#include <cmath>

#include "slimformer/checkpoint.hpp"
#include "slimformer/common.hpp"

namespace slimformer {

namespace {

// Unit-normalized prototype per label, scaled so frames are well separated
// relative to the noise floor.
Tensor<double> label_prototypes(const DataConfig& cfg) {
  Tensor<double> protos({cfg.vocab_size, cfg.feature_dim});
  RngKey key = RngKey(cfg.seed, 0).derive("prototypes");
  for (int64_t v = 0; v < cfg.vocab_size; ++v) {
    double norm2 = 0;
    for (int64_t d = 0; d < cfg.feature_dim; ++d) {
      const double x = key.normal(static_cast<uint64_t>(v * cfg.feature_dim + d));
      protos.at(v, d) = x;
      norm2 += x * x;
    }
    const double scale = 1.5 / std::sqrt(norm2);
    for (int64_t d = 0; d < cfg.feature_dim; ++d) protos.at(v, d) *= scale;
  }
  return protos;
}

}  // namespace

int64_t split_size(const DataConfig& cfg, const std::string& split) {
  if (split == "train") return cfg.train_utts;
  if (split == "dev") return cfg.dev_utts;
  if (split == "test") return cfg.test_utts;
  fail(ErrorCategory::kConfig, str("unknown split '", split, "'"));
}

Corpus generate_split(const DataConfig& cfg, const std::string& split) {
  SF_CHECK(cfg.min_labels >= 1 && cfg.max_labels >= cfg.min_labels, ErrorCategory::kConfig,
           "bad label-length range");
  SF_CHECK(cfg.frames_per_label_min >= 1 &&
               cfg.frames_per_label_max >= cfg.frames_per_label_min,
           ErrorCategory::kConfig, "bad dilation range");
  const int64_t count = split_size(cfg, split);
  const Tensor<double> protos = label_prototypes(cfg);

  Corpus corpus;
  corpus.feature_dim = cfg.feature_dim;
  corpus.vocab_size = cfg.vocab_size;
  corpus.utts.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    RngKey key = RngKey(cfg.seed, 0).derive(split).derive(static_cast<uint64_t>(i));
    Utterance utt;
    const int64_t n_labels =
        cfg.min_labels + static_cast<int64_t>(key.uniform_int(
                             1, static_cast<uint64_t>(cfg.max_labels - cfg.min_labels + 1)));
    std::vector<int64_t> dilation;
    int64_t frames = 0;
    for (int64_t l = 0; l < n_labels; ++l) {
      utt.labels.push_back(static_cast<int>(
          key.uniform_int(100 + static_cast<uint64_t>(l), static_cast<uint64_t>(cfg.vocab_size))));
      const int64_t reps =
          cfg.frames_per_label_min +
          static_cast<int64_t>(key.uniform_int(
              1000 + static_cast<uint64_t>(l),
              static_cast<uint64_t>(cfg.frames_per_label_max - cfg.frames_per_label_min + 1)));
      dilation.push_back(reps);
      frames += reps;
    }
    utt.features = Tensor<double>({frames, cfg.feature_dim});
    RngKey noise = key.derive("noise");
    int64_t t = 0;
    uint64_t nctr = 0;
    for (int64_t l = 0; l < n_labels; ++l) {
      for (int64_t r = 0; r < dilation[static_cast<size_t>(l)]; ++r, ++t) {
        for (int64_t d = 0; d < cfg.feature_dim; ++d) {
          utt.features.at(t, d) =
              protos.at(utt.labels[static_cast<size_t>(l)], d) + cfg.noise_std * noise.normal(nctr++);
        }
      }
    }
    corpus.utts.push_back(std::move(utt));
  }
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::string& path) {
  Container c;
  c.meta["kind"] = "corpus";
  c.meta["num_utts"] = corpus.utts.size();
  c.meta["feature_dim"] = corpus.feature_dim;
  c.meta["vocab_size"] = corpus.vocab_size;
  char name[32];
  for (size_t i = 0; i < corpus.utts.size(); ++i) {
    std::snprintf(name, sizeof(name), "utt%06zu", i);
    const Utterance& u = corpus.utts[i];
    c.put_tensor(std::string(name) + "/feat", u.features);
    std::vector<int32_t> lab(u.labels.begin(), u.labels.end());
    c.put_ints(std::string(name) + "/labels", {static_cast<int64_t>(lab.size())}, lab);
  }
  c.save(path);
}

Corpus load_corpus(const std::string& path) {
  Container c = Container::load(path);
  SF_CHECK(c.meta.value("kind", "") == "corpus", ErrorCategory::kIo, "'", path,
           "' is not a corpus file");
  Corpus corpus;
  corpus.feature_dim = c.meta.at("feature_dim").get<int64_t>();
  corpus.vocab_size = c.meta.at("vocab_size").get<int64_t>();
  const size_t n = c.meta.at("num_utts").get<size_t>();
  char name[32];
  for (size_t i = 0; i < n; ++i) {
    std::snprintf(name, sizeof(name), "utt%06zu", i);
    Utterance u;
    u.features = c.get_tensor<double>(std::string(name) + "/feat");
    for (int32_t l : c.get_ints(std::string(name) + "/labels")) u.labels.push_back(l);
    corpus.utts.push_back(std::move(u));
  }
  return corpus;
}

std::vector<int64_t> batch_indices(uint64_t seed, int64_t step, int64_t batch_size,
                                   int64_t corpus_size) {
  SF_CHECK_CONTRACT(corpus_size >= 1, "empty corpus");
  RngKey key = RngKey(seed, 0).derive("batch").derive(static_cast<uint64_t>(step));
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(batch_size));
  for (int64_t b = 0; b < batch_size; ++b) {
    out.push_back(static_cast<int64_t>(
        key.uniform_int(static_cast<uint64_t>(b), static_cast<uint64_t>(corpus_size))));
  }
  return out;
}

}  // namespace slimformer
