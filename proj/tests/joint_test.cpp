#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "ecor/joint.hpp"
#include "ecor/world.hpp"

using namespace ecor;

namespace {

Vocabulary numbered_vocab(int categories, int rationales) {
    std::vector<std::string> cats, rats;
    for (int i = 0; i < categories; ++i) cats.push_back("cat_" + std::to_string(i));
    for (int i = 0; i < rationales; ++i) rats.push_back("rat_" + std::to_string(i));
    return Vocabulary(std::move(cats), std::move(rats));
}

std::vector<std::vector<int>> singleton_sets(int n) {
    std::vector<std::vector<int>> sets;
    for (int i = 0; i < n; ++i) sets.push_back({i});
    return sets;
}

// Deterministic pseudo-random scores keyed by the prompt text.
ScoreFn random_stub(uint64_t salt) {
    return [salt](const RenderedPrompt& p) {
        const uint64_t h = fnv1a64(p.text + "#" + std::to_string(salt));
        return 4.0 * (static_cast<double>(h >> 11) * 0x1.0p-53) - 2.0;
    };
}

int argmax_index(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST_CASE("rationale distribution closed forms") {
    Vocabulary v = numbered_vocab(2, 3);
    ScoreFn unused = [](const RenderedPrompt&) { return 0.42; };
    CHECK(rationale_distribution(unused, v, {{0}}) == std::vector<double>{1.0});

    ScoreFn logs = [](const RenderedPrompt& p) {
        return std::log(static_cast<double>(p.rationales[0] + 1));
    };
    auto p = rationale_distribution(logs, v, singleton_sets(3));
    CHECK(p[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
    CHECK(p[2] == doctest::Approx(3.0 / 6.0).epsilon(1e-12));

    CHECK_THROWS_AS(rationale_distribution(unused, v, {}), contract_error);
}

TEST_CASE("rationale distribution from untrained encoders is a proper distribution") {
    Vocabulary v = numbered_vocab(2, 3);
    EncoderConfig c;
    c.vocab_size = v.vocab_size();
    c.context_len = 16;
    c.d_model = 8;
    c.d = 8;
    c.n_text = 1;
    c.n_img = 1;
    c.n_heads = 2;
    c.d_ff = 16;
    c.num_patches = 4;
    c.d_in = 4;
    c.num_prompts = 2;
    Rng rng(0);
    DualEncoderParams params = DualEncoderParams::init(c, rng);
    std::vector<double> patches(static_cast<size_t>(c.num_patches) * c.d_in);
    for (double& x : patches) x = rng.normal(0.0, 1.0);

    EmbeddingScorer scorer(params);
    auto p = rationale_distribution(scorer.for_image(patches), v, singleton_sets(3),
                                    c.context_len);
    double total = 0.0;
    for (double x : p) {
        CHECK(x > 0.0);
        CHECK(x < 1.0);
        total += x;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("conditional rows: closed forms") {
    Vocabulary v = numbered_vocab(2, 2);
    ScoreFn unused = [](const RenderedPrompt&) { return -1.0; };
    CHECK(category_given_rationales(unused, v, {0}, {0}) == std::vector<double>{1.0});

    ScoreFn symmetric = [](const RenderedPrompt&) { return 0.3; };
    auto row = category_given_rationales(symmetric, v, {0}, {0, 1});
    CHECK(row[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(row[1] == doctest::Approx(0.5).epsilon(1e-12));

    ScoreFn split = [](const RenderedPrompt& p) { return *p.category == 0 ? 2.0 : 0.0; };
    row = category_given_rationales(split, v, {0}, {0, 1});
    CHECK(row[0] == doctest::Approx(0.8808).epsilon(1e-4));
    CHECK(row[1] == doctest::Approx(0.1192).epsilon(1e-4));
}

TEST_CASE("joint table is the product of its factors") {
    Vocabulary v = numbered_vocab(2, 2);
    // Scores inverting softmax to p_r=[0.7,0.3], rows [[0.9,0.1],[0.2,0.8]].
    ScoreFn stub = [](const RenderedPrompt& p) {
        if (p.kind == PromptKind::R) return std::log(p.rationales[0] == 0 ? 0.7 : 0.3);
        const double table[2][2] = {{0.9, 0.1}, {0.2, 0.8}};
        return std::log(table[p.rationales[0]][*p.category]);
    };
    JointTable t = joint_table(stub, v, {0, 1}, singleton_sets(2));
    CHECK(t.joint[0] == doctest::Approx(0.63).epsilon(1e-12));
    CHECK(t.joint[1] == doctest::Approx(0.07).epsilon(1e-12));
    CHECK(t.joint[2] == doctest::Approx(0.06).epsilon(1e-12));
    CHECK(t.joint[3] == doctest::Approx(0.24).epsilon(1e-12));
    CHECK(argmax_index(t.joint) == 0);  // set 0, category 0
    CHECK(t.mass() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("joint table matches brute-force enumeration on a 5x8 world") {
    Vocabulary v = numbered_vocab(5, 8);
    auto sets = singleton_sets(8);
    std::vector<int> cats = {0, 1, 2, 3, 4};
    ScoreFn stub = random_stub(17);
    JointTable t = joint_table(stub, v, cats, sets, ConditionalNorm::PerRationaleRow, 32, 3);
    CHECK(t.image_id == 3);

    auto p_r = softmax_values([&] {
        std::vector<double> s;
        for (auto& set : sets) s.push_back(stub(render_prompt_R(v, set)));
        return s;
    }());
    for (int s = 0; s < 8; ++s) {
        std::vector<double> row;
        for (int c : cats) row.push_back(stub(render_prompt_c_given_R(v, c, sets[s])));
        row = softmax_values(std::move(row));
        for (int c = 0; c < 5; ++c) {
            CHECK(t.joint[s * 5 + c] == doctest::Approx(p_r[s] * row[c]).epsilon(1e-12));
        }
    }
}

TEST_CASE("cross-product conditional keeps mass at most one") {
    Vocabulary v = numbered_vocab(4, 6);
    JointTable t = joint_table(random_stub(5), v, {0, 1, 2, 3}, singleton_sets(6),
                               ConditionalNorm::CrossProduct);
    double cond_total = 0.0;
    for (double x : t.p_c_given_r) cond_total += x;
    CHECK(cond_total == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(t.mass() <= 1.0 + 1e-6);
    CHECK(t.mass() < 1.0);  // strictly, since p_r reweights the rows
}

TEST_CASE("row-normalized joints are shift invariant per rationale set") {
    Vocabulary v = numbered_vocab(3, 4);
    ScoreFn base = random_stub(29);
    ScoreFn shifted = [&base](const RenderedPrompt& p) {
        double s = base(p);
        // Constant offset on every conditional logit of rationale set {1}.
        if (p.kind == PromptKind::CGivenR && p.rationales == std::vector<int>{1}) s += 7.5;
        return s;
    };
    JointTable a = joint_table(base, v, {0, 1, 2}, singleton_sets(4));
    JointTable b = joint_table(shifted, v, {0, 1, 2}, singleton_sets(4));
    for (size_t i = 0; i < a.joint.size(); ++i) {
        CHECK(a.joint[i] == doctest::Approx(b.joint[i]).epsilon(1e-9));
    }
}

TEST_CASE("argmax is equivariant under category relabeling") {
    Vocabulary v = numbered_vocab(4, 5);
    ScoreFn stub = random_stub(31);
    std::vector<int> cats = {0, 1, 2, 3};
    std::vector<int> perm = {2, 0, 3, 1};
    JointTable a = joint_table(stub, v, cats, singleton_sets(5));
    JointTable b = joint_table(stub, v, perm, singleton_sets(5));

    const int ia = argmax_index(a.joint);
    const int ib = argmax_index(b.joint);
    CHECK(ia / 4 == ib / 4);                       // same rationale set
    CHECK(a.categories[ia % 4] == b.categories[ib % 4]);  // same category id
}

TEST_CASE("independent factorization is an outer product") {
    Vocabulary v = numbered_vocab(3, 4);
    JointTable t = ab5_independent_table(random_stub(41), v, {0, 1, 2}, singleton_sets(4));
    CHECK(t.mass() == doctest::Approx(1.0).epsilon(1e-9));
    // Every conditional row is the same category distribution.
    for (int s = 1; s < t.num_sets(); ++s) {
        for (int c = 0; c < t.num_categories(); ++c) {
            CHECK(t.p_c_given_r[s * 3 + c] ==
                  doctest::Approx(t.p_c_given_r[c]).epsilon(1e-12));
        }
    }
    for (int s = 0; s < t.num_sets(); ++s) {
        for (int c = 0; c < t.num_categories(); ++c) {
            CHECK(t.joint[s * 3 + c] ==
                  doctest::Approx(t.p_r[s] * t.p_c_given_r[c]).epsilon(1e-12));
        }
    }
}

TEST_CASE("inverse factorization keeps the product invariant and differs from forward") {
    Vocabulary v = numbered_vocab(3, 4);
    ScoreFn stub = random_stub(43);
    JointTable inv = ab6_inverse_table(stub, v, {0, 1, 2}, singleton_sets(4));
    CHECK(inv.mass() == doctest::Approx(1.0).epsilon(1e-9));
    for (int s = 0; s < inv.num_sets(); ++s) {
        for (int c = 0; c < inv.num_categories(); ++c) {
            CHECK(inv.joint[s * 3 + c] ==
                  doctest::Approx(inv.p_r[s] * inv.p_c_given_r[s * 3 + c]).epsilon(1e-12));
        }
    }
    JointTable fwd = joint_table(stub, v, {0, 1, 2}, singleton_sets(4));
    double max_diff = 0.0;
    for (size_t i = 0; i < fwd.joint.size(); ++i) {
        max_diff = std::max(max_diff, std::abs(fwd.joint[i] - inv.joint[i]));
    }
    CHECK(max_diff > 1e-4);
}

TEST_CASE("csv dump is stable and set-major") {
    Vocabulary v = numbered_vocab(2, 2);
    ScoreFn stub = [](const RenderedPrompt&) { return 0.0; };
    JointTable t = joint_table(stub, v, {0, 1}, {{0, 1}, {1}}, ConditionalNorm::PerRationaleRow,
                               32, 9);
    const std::string csv = joint_table_csv(t);
    CHECK(csv.rfind("image_id,rationale_set,category,p_r,p_c_given_r,joint\n", 0) == 0);
    CHECK(csv.find("9,0|1,0,0.5,0.5,0.25") != std::string::npos);
    CHECK(csv.find("9,1,1,0.5,0.5,0.25") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 2);
    CHECK(joint_table_csv(t) == csv);
}

TEST_CASE("embedding scorer agrees with the graph score and caches stably") {
    World w = generate_world(preset_spec("tiny"));
    EncoderConfig c;
    c.vocab_size = w.vocabulary.vocab_size();
    c.context_len = 32;
    c.d_model = 16;
    c.d = 8;
    c.n_text = 1;
    c.n_img = 1;
    c.n_heads = 2;
    c.d_ff = 32;
    c.num_patches = w.spec.num_patches;
    c.d_in = w.spec.d_in;
    c.num_prompts = 2;
    Rng rng(3);
    DualEncoderParams params = DualEncoderParams::init(c, rng);
    EmbeddingScorer scorer(params);

    const Example& ex = w.train.front();
    RenderedPrompt prompt = render_prompt_R(w.vocabulary, ex.rationales, c.context_len);
    ScoreFn fn = scorer.for_image(ex.patches);
    Graph g;
    BoundEncoder enc = bind(g, params, TuneScope::PromptsOnly);
    CHECK(fn(prompt) ==
          doctest::Approx(score(enc, ex.patches, prompt).scalar()).epsilon(1e-12));
    CHECK(fn(prompt) == fn(prompt));
}
