#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ecor/ablations.hpp"
#include "ecor/encoder.hpp"
#include "ecor/joint.hpp"
#include "ecor/world.hpp"

namespace ecor {

// Evaluation harness default for the number of top pairs fed into the vote.
inline constexpr int kHarnessTopK = 5;

struct RankedPair {
    int category = -1;   // global category id
    int set_index = -1;  // row in the source table's rationale sets
    std::vector<int> rationale_set;
    double joint = 0.0;
};

struct Prediction {
    int image_id = -1;
    std::vector<RankedPair> ranked;  // descending joint; ties by category, then set
    std::vector<std::pair<int, int>> vote_counts;  // (category, count), category asc
    int voted_category = -1;
    std::vector<int> predicted_set;
};

struct MetricsQuad {
    int rr_count = 0;  // right category, right rationale set
    int rw_count = 0;  // right category, wrong rationale set
    int wr_count = 0;
    int ww_count = 0;

    int n() const { return rr_count + rw_count + wr_count + ww_count; }
    double rr() const;
    double rw() const;
    double wr() const;
    double ww() const;
};

/// Mean rationale count per example, rounded half away from zero, floored at 1.
int default_k(const std::vector<Example>& examples);

/// Top-k pairs by joint score, plurality vote over their categories (vote
/// ties: highest summed joint, then lowest category id), predicted set from
/// the best-ranked pair carrying the voted category.
Prediction predict(const JointTable& table, int top_k);

/// Gold example i is matched to the prediction with image_id == i.
MetricsQuad evaluate(const std::vector<Prediction>& predictions,
                     const std::vector<Example>& gold);

JointTable build_table(TableKind kind, const ScoreFn& score, const Vocabulary& vocab,
                       const std::vector<int>& categories,
                       const std::vector<std::vector<int>>& observed_sets,
                       ConditionalNorm norm = ConditionalNorm::PerRationaleRow,
                       int context_len = kDefaultContextLen, int image_id = -1);

/// Distinct gold rationale sets across train and test, lexicographic order.
std::vector<std::vector<int>> observed_rationale_sets(const World& world);

/// Scores every held-out image, predicts, and tallies the metric quad.
MetricsQuad evaluate_world(DualEncoderParams& params, const World& world,
                           Ablation ablation, int top_k = kHarnessTopK,
                           ConditionalNorm norm = ConditionalNorm::PerRationaleRow);

/// Transfer evaluation: categories and normalization sets are rebuilt from
/// the transfer world while the parameters stay frozen.
MetricsQuad zero_shot_evaluate(DualEncoderParams& params, const World& transfer_world,
                               Ablation ablation, int top_k = kHarnessTopK,
                               ConditionalNorm norm = ConditionalNorm::PerRationaleRow);

std::string results_csv_header();
std::string results_csv_row(const std::string& run_id, const std::string& dataset,
                            Ablation ablation, const MetricsQuad& quad, uint64_t seed);

}  // namespace ecor
