#pragma once

#include <string>
#include <vector>

#include "ecor/errors.hpp"
#include "ecor/prompts.hpp"

namespace ecor {

// The main method plus its six ablations: rationales only, categories only,
// conditional only, inverted conditional surface, independence, and the
// category-first inverse factorization.
enum class Ablation { ECOR, AB1, AB2, AB3, AB4, AB5, AB6 };

inline const char* to_string(Ablation a) {
    switch (a) {
        case Ablation::ECOR: return "ECOR";
        case Ablation::AB1: return "AB1";
        case Ablation::AB2: return "AB2";
        case Ablation::AB3: return "AB3";
        case Ablation::AB4: return "AB4";
        case Ablation::AB5: return "AB5";
        case Ablation::AB6: return "AB6";
    }
    return "?";
}

inline Ablation ablation_from_string(const std::string& s) {
    for (Ablation a : {Ablation::ECOR, Ablation::AB1, Ablation::AB2, Ablation::AB3,
                       Ablation::AB4, Ablation::AB5, Ablation::AB6}) {
        if (s == to_string(a)) return a;
    }
    throw config_error("unknown ablation '" + s + "' (expected ECOR|AB1|...|AB6)");
}

// One contrastive loss term: the prompt kind that spans the normalization
// set and which gold bindings a prompt must match to count as a positive.
struct TermSpec {
    PromptKind kind;
    bool match_category;
    bool match_set;
    double weight;
};

inline std::vector<TermSpec> loss_terms(Ablation a, double w1 = 1.0, double w2 = 1.0) {
    switch (a) {
        case Ablation::ECOR:
            return {{PromptKind::R, false, true, w1}, {PromptKind::CGivenR, true, true, w2}};
        case Ablation::AB1:
            return {{PromptKind::R, false, true, w1}};
        case Ablation::AB2:
            return {{PromptKind::COnly, true, false, w1}};
        case Ablation::AB3:
            return {{PromptKind::CGivenR, true, true, w1}};
        case Ablation::AB4:
            return {{PromptKind::R, false, true, w1},
                    {PromptKind::RBecauseC, true, true, w2}};
        case Ablation::AB5:
            return {{PromptKind::R, false, true, w1}, {PromptKind::COnly, true, false, w2}};
        case Ablation::AB6:
            return {{PromptKind::COnly, true, false, w1},
                    {PromptKind::RGivenC, true, true, w2}};
    }
    throw contract_error("loss_terms: unknown ablation");
}

// How evaluation assembles the joint table. Forward is the rationale-first
// factorization; AB4 swaps in its inverted conditional surface; AB5 and AB6
// use the independent and inverse factorizations.
enum class TableKind { Forward, ForwardInvertedConditional, Independent, Inverse };

inline TableKind table_kind(Ablation a) {
    switch (a) {
        case Ablation::ECOR:
        case Ablation::AB1:
        case Ablation::AB2:
        case Ablation::AB3:
            return TableKind::Forward;
        case Ablation::AB4:
            return TableKind::ForwardInvertedConditional;
        case Ablation::AB5:
            return TableKind::Independent;
        case Ablation::AB6:
            return TableKind::Inverse;
    }
    throw contract_error("table_kind: unknown ablation");
}

}  // namespace ecor
