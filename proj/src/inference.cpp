#include "ecor/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "ecor/errors.hpp"

namespace ecor {

namespace {

double fraction(int count, int n) {
    if (n == 0) throw contract_error("metrics quad is empty");
    return static_cast<double>(count) / n;
}

}  // namespace

double MetricsQuad::rr() const { return fraction(rr_count, n()); }
double MetricsQuad::rw() const { return fraction(rw_count, n()); }
double MetricsQuad::wr() const { return fraction(wr_count, n()); }
double MetricsQuad::ww() const { return fraction(ww_count, n()); }

int default_k(const std::vector<Example>& examples) {
    if (examples.empty()) throw contract_error("default_k: empty dataset");
    double total = 0.0;
    for (const auto& ex : examples) total += static_cast<double>(ex.rationales.size());
    long k = std::lround(total / static_cast<double>(examples.size()));
    return k < 1 ? 1 : static_cast<int>(k);
}

Prediction predict(const JointTable& table, int top_k) {
    const int S = table.num_sets(), C = table.num_categories();
    if (S == 0 || C == 0) throw contract_error("predict: empty joint table");
    if (table.joint.size() != static_cast<size_t>(S) * C) {
        throw contract_error("predict: joint table size mismatch");
    }
    if (top_k < 1) throw contract_error("predict: top_k must be >= 1");

    std::vector<RankedPair> pairs;
    pairs.reserve(static_cast<size_t>(S) * C);
    for (int s = 0; s < S; ++s) {
        for (int c = 0; c < C; ++c) {
            pairs.push_back({table.categories[c], s, table.rationale_sets[s],
                             table.joint[s * C + c]});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const RankedPair& a, const RankedPair& b) {
        if (a.joint != b.joint) return a.joint > b.joint;
        if (a.category != b.category) return a.category < b.category;
        return a.set_index < b.set_index;
    });
    const int k = std::min<int>(top_k, static_cast<int>(pairs.size()));
    pairs.resize(k);

    // count and summed score per category over the kept pairs
    std::map<int, std::pair<int, double>> tally;
    for (const auto& p : pairs) {
        auto& t = tally[p.category];
        t.first += 1;
        t.second += p.joint;
    }
    Prediction out;
    out.image_id = table.image_id;
    int best = -1, best_count = -1;
    double best_sum = 0.0;
    for (const auto& [cat, t] : tally) {
        out.vote_counts.emplace_back(cat, t.first);
        // map order is category-ascending, so strict > keeps the lowest id
        if (t.first > best_count || (t.first == best_count && t.second > best_sum)) {
            best = cat;
            best_count = t.first;
            best_sum = t.second;
        }
    }
    out.voted_category = best;
    for (const auto& p : pairs) {
        if (p.category == best) {
            out.predicted_set = p.rationale_set;
            break;
        }
    }
    out.ranked = std::move(pairs);
    return out;
}

MetricsQuad evaluate(const std::vector<Prediction>& predictions,
                     const std::vector<Example>& gold) {
    if (gold.empty()) throw contract_error("evaluate: empty gold set");
    std::map<int, const Prediction*> by_id;
    for (const auto& p : predictions) {
        if (!by_id.emplace(p.image_id, &p).second) {
            throw contract_error("evaluate: duplicate prediction for image id " +
                                 std::to_string(p.image_id));
        }
    }
    std::vector<int> missing;
    MetricsQuad quad;
    for (size_t i = 0; i < gold.size(); ++i) {
        auto it = by_id.find(static_cast<int>(i));
        if (it == by_id.end()) {
            missing.push_back(static_cast<int>(i));
            continue;
        }
        const Prediction& p = *it->second;
        const bool cat_right = p.voted_category == gold[i].category;
        const bool rat_right = p.predicted_set == gold[i].rationales;
        if (cat_right && rat_right) ++quad.rr_count;
        else if (cat_right) ++quad.rw_count;
        else if (rat_right) ++quad.wr_count;
        else ++quad.ww_count;
    }
    if (!missing.empty()) {
        std::ostringstream msg;
        msg << "evaluate: missing predictions for image ids:";
        for (int id : missing) msg << ' ' << id;
        throw lookup_error(msg.str());
    }
    return quad;
}

JointTable build_table(TableKind kind, const ScoreFn& score, const Vocabulary& vocab,
                       const std::vector<int>& categories,
                       const std::vector<std::vector<int>>& observed_sets,
                       ConditionalNorm norm, int context_len, int image_id) {
    switch (kind) {
        case TableKind::Forward:
            return joint_table(score, vocab, categories, observed_sets, norm, context_len,
                               image_id);
        case TableKind::ForwardInvertedConditional:
            return joint_table(score, vocab, categories, observed_sets, norm, context_len,
                               image_id, PromptKind::RBecauseC);
        case TableKind::Independent:
            return ab5_independent_table(score, vocab, categories, observed_sets,
                                         context_len, image_id);
        case TableKind::Inverse:
            return ab6_inverse_table(score, vocab, categories, observed_sets, context_len,
                                     image_id);
    }
    throw contract_error("build_table: unknown table kind");
}

std::vector<std::vector<int>> observed_rationale_sets(const World& world) {
    std::set<std::vector<int>> uniq;
    for (const auto* split : {&world.train, &world.test}) {
        for (const auto& ex : *split) uniq.insert(ex.rationales);
    }
    return {uniq.begin(), uniq.end()};
}

MetricsQuad evaluate_world(DualEncoderParams& params, const World& world,
                           Ablation ablation, int top_k, ConditionalNorm norm) {
    if (world.test.empty()) throw contract_error("evaluate_world: world has no test split");
    const auto sets = observed_rationale_sets(world);
    const TableKind kind = table_kind(ablation);
    EmbeddingScorer scorer(params);
    std::vector<Prediction> preds;
    preds.reserve(world.test.size());
    for (size_t i = 0; i < world.test.size(); ++i) {
        auto score = scorer.for_image(world.test[i].patches);
        auto table = build_table(kind, score, world.vocabulary, world.categories, sets,
                                 norm, scorer.context_len(), static_cast<int>(i));
        preds.push_back(predict(table, top_k));
    }
    return evaluate(preds, world.test);
}

MetricsQuad zero_shot_evaluate(DualEncoderParams& params, const World& transfer_world,
                               Ablation ablation, int top_k, ConditionalNorm norm) {
    return evaluate_world(params, transfer_world, ablation, top_k, norm);
}

std::string results_csv_header() {
    return "run_id,dataset,ablation,rr,rw,wr,ww,n,seed\n";
}

std::string results_csv_row(const std::string& run_id, const std::string& dataset,
                            Ablation ablation, const MetricsQuad& quad, uint64_t seed) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%d,%llu", quad.rr(), quad.rw(),
                  quad.wr(), quad.ww(), quad.n(),
                  static_cast<unsigned long long>(seed));
    return run_id + "," + dataset + "," + to_string(ablation) + "," + buf + "\n";
}

}  // namespace ecor
