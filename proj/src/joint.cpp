#include "ecor/joint.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace ecor {

const char* to_string(ConditionalNorm norm) {
    return norm == ConditionalNorm::PerRationaleRow ? "row" : "cross_product";
}

ConditionalNorm conditional_norm_from_string(const std::string& s) {
    if (s == "row") return ConditionalNorm::PerRationaleRow;
    if (s == "cross_product") return ConditionalNorm::CrossProduct;
    throw config_error("unknown conditional normalization '" + s +
                       "' (expected row|cross_product)");
}

double JointTable::mass() const {
    double m = 0.0;
    for (double v : joint) m += v;
    return m;
}

std::vector<double> softmax_values(std::vector<double> scores) {
    if (scores.empty()) {
        throw contract_error("softmax_values: empty input");
    }
    double mx = scores[0];
    for (double s : scores) {
        if (!std::isfinite(s)) throw numeric_error("softmax_values: non-finite score");
        mx = std::max(mx, s);
    }
    double denom = 0.0;
    for (double& s : scores) {
        s = std::exp(s - mx);
        denom += s;
    }
    for (double& s : scores) s /= denom;
    return scores;
}

namespace {

void check_inputs(const std::vector<int>& categories,
                  const std::vector<std::vector<int>>& observed_sets, const char* op) {
    if (observed_sets.empty()) {
        throw contract_error(std::string(op) + ": no observed rationale sets");
    }
    if (categories.empty()) {
        throw contract_error(std::string(op) + ": no categories");
    }
}

void check_table(const JointTable& t, const char* op) {
    const int S = t.num_sets(), C = t.num_categories();
    double pr_sum = 0.0;
    for (double v : t.p_r) pr_sum += v;
    if (std::abs(pr_sum - 1.0) > 1e-6) {
        throw numeric_error(std::string(op) + ": p_r sums to " + std::to_string(pr_sum));
    }
    if (t.norm == ConditionalNorm::PerRationaleRow) {
        for (int s = 0; s < S; ++s) {
            double row = 0.0;
            for (int c = 0; c < C; ++c) row += t.p_c_given_r[s * C + c];
            if (std::abs(row - 1.0) > 1e-6) {
                throw numeric_error(std::string(op) + ": conditional row " +
                                    std::to_string(s) + " sums to " + std::to_string(row));
            }
        }
    }
    if (t.mass() > 1.0 + 1e-6) {
        throw numeric_error(std::string(op) + ": joint mass " + std::to_string(t.mass()) +
                            " exceeds 1");
    }
}

}  // namespace

std::vector<double> rationale_distribution(const ScoreFn& score, const Vocabulary& vocab,
                                           const std::vector<std::vector<int>>& observed_sets,
                                           int context_len) {
    if (observed_sets.empty()) {
        throw contract_error("rationale_distribution: no observed rationale sets");
    }
    std::vector<double> scores;
    scores.reserve(observed_sets.size());
    for (const auto& set : observed_sets) {
        scores.push_back(score(render_prompt_R(vocab, set, context_len)));
    }
    return softmax_values(std::move(scores));
}

std::vector<double> category_given_rationales(const ScoreFn& score, const Vocabulary& vocab,
                                              const std::vector<int>& rationale_set,
                                              const std::vector<int>& categories,
                                              int context_len, PromptKind conditional_kind) {
    if (categories.empty()) {
        throw contract_error("category_given_rationales: no categories");
    }
    std::vector<double> scores;
    scores.reserve(categories.size());
    for (int c : categories) {
        scores.push_back(
            score(render_ablation(vocab, conditional_kind, c, rationale_set, context_len)));
    }
    return softmax_values(std::move(scores));
}

JointTable joint_table(const ScoreFn& score, const Vocabulary& vocab,
                       const std::vector<int>& categories,
                       const std::vector<std::vector<int>>& observed_sets,
                       ConditionalNorm norm, int context_len, int image_id,
                       PromptKind conditional_kind) {
    check_inputs(categories, observed_sets, "joint_table");
    JointTable t;
    t.image_id = image_id;
    t.rationale_sets = observed_sets;
    t.categories = categories;
    t.norm = norm;
    t.p_r = rationale_distribution(score, vocab, observed_sets, context_len);

    const int S = t.num_sets(), C = t.num_categories();
    t.p_c_given_r.resize(static_cast<size_t>(S) * C);
    if (norm == ConditionalNorm::PerRationaleRow) {
        for (int s = 0; s < S; ++s) {
            auto row = category_given_rationales(score, vocab, observed_sets[s], categories,
                                                 context_len, conditional_kind);
            std::copy(row.begin(), row.end(), t.p_c_given_r.begin() + s * C);
        }
    } else {
        std::vector<double> scores(static_cast<size_t>(S) * C);
        for (int s = 0; s < S; ++s) {
            for (int c = 0; c < C; ++c) {
                scores[s * C + c] = score(render_ablation(
                    vocab, conditional_kind, categories[c], observed_sets[s], context_len));
            }
        }
        t.p_c_given_r = softmax_values(std::move(scores));
    }
    t.joint.resize(t.p_c_given_r.size());
    for (int s = 0; s < S; ++s) {
        for (int c = 0; c < C; ++c) {
            t.joint[s * C + c] = t.p_r[s] * t.p_c_given_r[s * C + c];
        }
    }
    check_table(t, "joint_table");
    return t;
}

namespace {

std::vector<double> category_only_distribution(const ScoreFn& score, const Vocabulary& vocab,
                                               const std::vector<int>& categories,
                                               int context_len) {
    std::vector<double> scores;
    scores.reserve(categories.size());
    for (int c : categories) {
        scores.push_back(score(render_ablation(vocab, PromptKind::COnly, c, {}, context_len)));
    }
    return softmax_values(std::move(scores));
}

}  // namespace

JointTable ab5_independent_table(const ScoreFn& score, const Vocabulary& vocab,
                                 const std::vector<int>& categories,
                                 const std::vector<std::vector<int>>& observed_sets,
                                 int context_len, int image_id) {
    check_inputs(categories, observed_sets, "ab5_independent_table");
    JointTable t;
    t.image_id = image_id;
    t.rationale_sets = observed_sets;
    t.categories = categories;
    t.p_r = rationale_distribution(score, vocab, observed_sets, context_len);
    auto p_c = category_only_distribution(score, vocab, categories, context_len);

    const int S = t.num_sets(), C = t.num_categories();
    t.p_c_given_r.resize(static_cast<size_t>(S) * C);
    t.joint.resize(t.p_c_given_r.size());
    for (int s = 0; s < S; ++s) {
        for (int c = 0; c < C; ++c) {
            t.p_c_given_r[s * C + c] = p_c[c];
            t.joint[s * C + c] = t.p_r[s] * p_c[c];
        }
    }
    check_table(t, "ab5_independent_table");
    return t;
}

JointTable ab6_inverse_table(const ScoreFn& score, const Vocabulary& vocab,
                             const std::vector<int>& categories,
                             const std::vector<std::vector<int>>& observed_sets,
                             int context_len, int image_id) {
    check_inputs(categories, observed_sets, "ab6_inverse_table");
    JointTable t;
    t.image_id = image_id;
    t.rationale_sets = observed_sets;
    t.categories = categories;
    auto p_c = category_only_distribution(score, vocab, categories, context_len);

    const int S = t.num_sets(), C = t.num_categories();
    t.joint.resize(static_cast<size_t>(S) * C);
    for (int c = 0; c < C; ++c) {
        std::vector<double> scores;
        scores.reserve(S);
        for (int s = 0; s < S; ++s) {
            scores.push_back(score(render_ablation(vocab, PromptKind::RGivenC, categories[c],
                                                   observed_sets[s], context_len)));
        }
        auto p_r_given_c = softmax_values(std::move(scores));
        for (int s = 0; s < S; ++s) {
            t.joint[s * C + c] = p_c[c] * p_r_given_c[s];
        }
    }
    // p_r and the conditional are read off the joint so the table keeps its
    // product invariant in the set-major layout.
    t.p_r.assign(S, 0.0);
    for (int s = 0; s < S; ++s) {
        for (int c = 0; c < C; ++c) t.p_r[s] += t.joint[s * C + c];
    }
    t.p_c_given_r.resize(t.joint.size());
    for (int s = 0; s < S; ++s) {
        for (int c = 0; c < C; ++c) {
            t.p_c_given_r[s * C + c] = t.joint[s * C + c] / t.p_r[s];
        }
    }
    check_table(t, "ab6_inverse_table");
    return t;
}

std::string joint_table_csv(const JointTable& t) {
    std::string out = "image_id,rationale_set,category,p_r,p_c_given_r,joint\n";
    char buf[160];
    const int S = t.num_sets(), C = t.num_categories();
    for (int s = 0; s < S; ++s) {
        std::string set_str;
        for (size_t i = 0; i < t.rationale_sets[s].size(); ++i) {
            if (i > 0) set_str += '|';
            set_str += std::to_string(t.rationale_sets[s][i]);
        }
        for (int c = 0; c < C; ++c) {
            std::snprintf(buf, sizeof(buf), "%d,%s,%d,%.12g,%.12g,%.12g\n", t.image_id,
                          set_str.c_str(), t.categories[c], t.p_r[s],
                          t.p_c_given_r[s * C + c], t.joint[s * C + c]);
            out += buf;
        }
    }
    return out;
}

EmbeddingScorer::EmbeddingScorer(DualEncoderParams& params) : params_(&params) {
    params.config.validate();
}

const std::vector<double>& EmbeddingScorer::text_embedding(const RenderedPrompt& prompt) {
    auto it = text_cache_.find(prompt.tokens);
    if (it == text_cache_.end()) {
        Graph g(false);
        BoundEncoder enc = bind(g, *params_, TuneScope::PromptsOnly);
        it = text_cache_.emplace(prompt.tokens, encode_text(enc, prompt).data()).first;
    }
    return it->second;
}

std::vector<double> EmbeddingScorer::image_embedding(const std::vector<double>& patches) {
    Graph g(false);
    BoundEncoder enc = bind(g, *params_, TuneScope::PromptsOnly);
    return encode_image(enc, patches).data();
}

ScoreFn EmbeddingScorer::for_image(const std::vector<double>& patches) {
    return [this, img = image_embedding(patches),
            s = std::exp(params_->logit_scale[0])](const RenderedPrompt& prompt) {
        const auto& txt = text_embedding(prompt);
        double dot = 0.0;
        for (size_t j = 0; j < img.size(); ++j) dot += txt[j] * img[j];
        return s * dot;
    };
}

}  // namespace ecor
