#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mycobow/error.hpp"
#include "mycobow/species.hpp"
#include "mycobow/svm.hpp"

namespace mycobow {

enum class AggregationMode { sum, vote };

inline AggregationMode parse_aggregation(const std::string& s) {
  if (s == "sum") return AggregationMode::sum;
  if (s == "vote") return AggregationMode::vote;
  throw usage_error("unknown aggregation mode '" + s + "' (expected sum or vote)");
}

inline std::string to_string(AggregationMode m) { return m == AggregationMode::sum ? "sum" : "vote"; }

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(const ScoreVector& s) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] > s[best]) best = i;
  return best;
}

struct ScanPrediction {
  Species predicted = Species::CA;
  ScoreVector aggregated{};
};

/// Sum of patch score vectors (or per-class counts of patch argmaxes in vote
/// mode); the prediction is its argmax.
inline ScanPrediction aggregate_scan(const std::vector<ScoreVector>& patch_scores,
                                     AggregationMode mode = AggregationMode::sum) {
  if (patch_scores.empty()) throw data_error("aggregate_scan: no patches");
  ScanPrediction out;
  out.aggregated.fill(0.0);
  for (const auto& s : patch_scores) {
    if (mode == AggregationMode::sum) {
      for (std::size_t c = 0; c < kNumSpecies; ++c) out.aggregated[c] += s[c];
    } else {
      out.aggregated[argmax(s)] += 1.0;
    }
  }
  out.predicted = species_at(argmax(out.aggregated));
  return out;
}

inline double accuracy(const std::vector<Species>& predictions, const std::vector<Species>& truths) {
  if (predictions.size() != truths.size()) throw data_error("accuracy: length mismatch");
  if (predictions.empty()) throw data_error("accuracy: empty input");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) ok += predictions[i] == truths[i] ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(predictions.size());
}

}  // namespace mycobow
