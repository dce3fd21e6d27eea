#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ecor/encoder.hpp"
#include "ecor/prompts.hpp"

namespace ecor {

/// Scores one rendered prompt against an implicit image. The real
/// implementation wraps the dual encoder; tests inject closed-form stubs.
using ScoreFn = std::function<double(const RenderedPrompt&)>;

// How the category-given-rationales softmax normalizes: per rationale row
// (a proper conditional) or over the full category x set cross product.
enum class ConditionalNorm { PerRationaleRow, CrossProduct };

const char* to_string(ConditionalNorm norm);
ConditionalNorm conditional_norm_from_string(const std::string& s);

struct JointTable {
    int image_id = -1;
    std::vector<std::vector<int>> rationale_sets;
    std::vector<int> categories;      // global ids
    std::vector<double> p_r;          // [S]
    std::vector<double> p_c_given_r;  // [S x C], row-major
    std::vector<double> joint;        // [S x C]
    ConditionalNorm norm = ConditionalNorm::PerRationaleRow;

    int num_sets() const { return static_cast<int>(rationale_sets.size()); }
    int num_categories() const { return static_cast<int>(categories.size()); }
    double mass() const;
};

/// Max-subtracted softmax over plain values.
std::vector<double> softmax_values(std::vector<double> scores);

std::vector<double> rationale_distribution(const ScoreFn& score, const Vocabulary& vocab,
                                           const std::vector<std::vector<int>>& observed_sets,
                                           int context_len = kDefaultContextLen);

std::vector<double> category_given_rationales(const ScoreFn& score, const Vocabulary& vocab,
                                              const std::vector<int>& rationale_set,
                                              const std::vector<int>& categories,
                                              int context_len = kDefaultContextLen,
                                              PromptKind conditional_kind = PromptKind::CGivenR);

// conditional_kind selects the surface used for the conditional factor;
// CGivenR is the standard form, RBecauseC the inverted-surface variant.
JointTable joint_table(const ScoreFn& score, const Vocabulary& vocab,
                       const std::vector<int>& categories,
                       const std::vector<std::vector<int>>& observed_sets,
                       ConditionalNorm norm = ConditionalNorm::PerRationaleRow,
                       int context_len = kDefaultContextLen, int image_id = -1,
                       PromptKind conditional_kind = PromptKind::CGivenR);

/// Rationales and category scored independently; joint is the outer product.
JointTable ab5_independent_table(const ScoreFn& score, const Vocabulary& vocab,
                                 const std::vector<int>& categories,
                                 const std::vector<std::vector<int>>& observed_sets,
                                 int context_len = kDefaultContextLen, int image_id = -1);

/// Category first, then rationales given the category; stored with the same
/// [set x category] layout, p_r and p_c_given_r derived from the joint.
JointTable ab6_inverse_table(const ScoreFn& score, const Vocabulary& vocab,
                             const std::vector<int>& categories,
                             const std::vector<std::vector<int>>& observed_sets,
                             int context_len = kDefaultContextLen, int image_id = -1);

std::string joint_table_csv(const JointTable& table);

/// Grad-free encoder scoring with text embeddings cached per token sequence;
/// one instance serves a whole evaluation pass.
class EmbeddingScorer {
public:
    explicit EmbeddingScorer(DualEncoderParams& params);

    const std::vector<double>& text_embedding(const RenderedPrompt& prompt);
    std::vector<double> image_embedding(const std::vector<double>& patches);
    ScoreFn for_image(const std::vector<double>& patches);
    int context_len() const { return params_->config.context_len; }

private:
    DualEncoderParams* params_;
    std::map<std::vector<int>, std::vector<double>> text_cache_;
};

}  // namespace ecor
