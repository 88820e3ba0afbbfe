#ifndef SLIMFORMER_CENSUS_HPP
#define SLIMFORMER_CENSUS_HPP

#include <map>
#include <string>

#include "slimformer/models.hpp"
#include "slimformer/transducer.hpp"

namespace slimformer {

struct CensusReport {
  std::map<std::string, int64_t> params_by_block;  // causal, noncausal, frontend, ...
  int64_t total_params = 0;
  int64_t prunable_params = 0;  // covered by prune groups
  std::map<std::string, int64_t> flops_by_block;  // per encoder forward at reference length
  int64_t encoder_flops = 0;
  int64_t reference_frames = 0;
};

// Exact parameter counts per block plus analytic FLOPs for one encoder
// forward at `reference_frames`, counting one multiply-add of the dense and
// convolution maps as 2 FLOPs (elementwise and normalization work excluded).
template <typename T>
CensusReport census_and_flops(CascadedEncoder<T>& enc, int64_t reference_frames);

// Prune-group census as CSV: group id, kind, owner, param_count.
void write_group_census_csv(const GateLayout& layout, const std::string& path);

// Adds predictor/joint parameter counts into an existing report.
template <typename T>
void add_asr_head_census(CensusReport& report, Predictor<T>& pred, Joint<T>& joint);

}  // namespace slimformer

#endif  // SLIMFORMER_CENSUS_HPP
