#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "doctest.h"
#include "ecor/world.hpp"

using namespace ecor;

namespace {

WorldSpec small_spec() {
    WorldSpec s;
    s.n_categories = 10;
    s.n_rationales = 20;
    s.signature_size = 2;
    s.rationales_per_image = 1;
    s.seed = 0;
    return s;
}

// Top-m patches by best evidence dot product, reported as a sorted set.
std::vector<int> nearest_evidence_decode(const Example& ex, const World& w, size_t m) {
    const int L = w.spec.num_patches, d = w.spec.d_in;
    std::vector<std::pair<double, int>> patch_best;
    for (int p = 0; p < L; ++p) {
        double best_dot = -1e300;
        int best_r = -1;
        for (int r = 0; r < w.spec.n_rationales; ++r) {
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += ex.patches[p * d + j] * w.evidence[r][j];
            if (dot > best_dot) {
                best_dot = dot;
                best_r = r;
            }
        }
        patch_best.push_back({best_dot, best_r});
    }
    std::sort(patch_best.begin(), patch_best.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<int> out;
    for (size_t i = 0; i < m; ++i) out.push_back(patch_best[i].second);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_CASE("noise-free worlds are perfectly decodable") {
    WorldSpec s;
    s.n_categories = 6;
    s.n_rationales = 12;
    s.signature_size = 2;
    s.rationales_per_image = 2;
    s.num_patches = 8;
    s.d_in = 8;
    s.noise_sigma = 0.0;
    s.distractor_rate = 0.0;
    s.train_per_category = 4;
    s.test_per_category = 2;
    World w = generate_world(s);
    for (const auto* split : {&w.train, &w.test}) {
        for (const Example& ex : *split) {
            CHECK(nearest_evidence_decode(ex, w, ex.rationales.size()) == ex.rationales);
        }
    }
}

TEST_CASE("generation is byte-identical per seed") {
    World a = generate_world(small_spec());
    World b = generate_world(small_spec());
    CHECK(world_manifest_json(a) == world_manifest_json(b));
    CHECK(examples_jsonl(a.train) == examples_jsonl(b.train));
    CHECK(examples_jsonl(a.test) == examples_jsonl(b.test));
    CHECK(world_hash(a) == world_hash(b));

    WorldSpec other = small_spec();
    other.seed = 1;
    CHECK(world_hash(generate_world(other)) != world_hash(a));
}

TEST_CASE("signatures are pairwise distinct and cover gold rationales") {
    World w = generate_world(small_spec());
    REQUIRE(w.signatures.size() == 10);
    for (size_t i = 0; i < w.signatures.size(); ++i) {
        CHECK(w.signatures[i].size() == 2);
        for (size_t j = 0; j < i; ++j) {
            CHECK(w.signatures[i] != w.signatures[j]);
        }
    }
    for (const Example& ex : w.train) {
        for (int r : ex.rationales) {
            const auto& sig = w.signatures[ex.category];
            CHECK(std::binary_search(sig.begin(), sig.end(), r));
        }
    }
}

TEST_CASE("infeasible signature demands fail loudly") {
    WorldSpec s;
    s.n_categories = 2;
    s.n_rationales = 2;
    s.signature_size = 2;
    s.rationales_per_image = 1;
    s.num_patches = 4;
    s.d_in = 4;
    CHECK_THROWS_AS(generate_world(s), config_error);
}

TEST_CASE("distractors are skipped when every rationale is gold") {
    // one rationale total: there is nothing to inject, generation must finish
    WorldSpec s;
    s.n_categories = 1;
    s.n_rationales = 1;
    s.signature_size = 1;
    s.num_patches = 4;
    s.d_in = 4;
    s.distractor_rate = 1.0;
    s.train_per_category = 2;
    s.test_per_category = 1;
    World w = generate_world(s);
    CHECK(w.train.size() == 2);
    CHECK(w.train[0].rationales == std::vector<int>{0});
}

TEST_CASE("zero-shot split separates categories over a shared vocabulary") {
    auto [a, b] = split_zero_shot(preset_spec("zeroshot"));
    CHECK(a.categories.size() == 10);
    CHECK(b.categories.size() == 5);
    CHECK(a.categories.size() >= b.categories.size());

    std::set<int> a_set(a.categories.begin(), a.categories.end());
    for (int c : b.categories) CHECK(a_set.count(c) == 0);

    CHECK(a.vocabulary.rationale_names() == b.vocabulary.rationale_names());
    CHECK(a.vocabulary.category_names() == b.vocabulary.category_names());
    CHECK(a.evidence == b.evidence);

    for (int cb : b.categories) {
        for (int ca : a.categories) {
            CHECK(a.signatures[cb] != a.signatures[ca]);
        }
    }
    for (const Example& ex : a.train) CHECK(a_set.count(ex.category) == 1);
    for (const Example& ex : b.test) CHECK(a_set.count(ex.category) == 0);
    CHECK(a.train.size() == 10 * 50);
    CHECK(b.test.size() == 5 * 10);

    // every transfer-world rationale stays visible in the training world,
    // otherwise the frozen model has nothing to recognize it by
    std::set<int> a_rationales;
    for (int ca : a.categories) {
        a_rationales.insert(a.signatures[ca].begin(), a.signatures[ca].end());
    }
    for (int cb : b.categories) {
        for (int r : b.signatures[cb]) CHECK(a_rationales.count(r) == 1);
    }
}

TEST_CASE("zero-shot split refuses worlds whose signatures cannot overlap") {
    WorldSpec s = preset_spec("zeroshot");
    s.n_rationales = 30;  // 15 categories x 2 slots: signatures partition
    s.train_per_category = 2;
    s.test_per_category = 1;
    CHECK_THROWS_AS(split_zero_shot(s), config_error);
}

TEST_CASE("dataset stats summarize counts and observed sets") {
    World w = generate_world(small_spec());
    DatasetStats stats = dataset_stats(w.train);
    CHECK(stats.mean_rationales == 1.0);
    REQUIRE(stats.per_category.size() == 10);
    for (const auto& [cat, count] : stats.per_category) CHECK(count == 20);

    std::set<std::vector<int>> rescanned;
    for (const Example& ex : w.train) rescanned.insert(ex.rationales);
    REQUIRE(stats.observed_sets.size() == rescanned.size());
    size_t i = 0;
    for (const auto& set : rescanned) {
        CHECK(stats.observed_sets[i] == set);
        if (i > 0) CHECK(stats.observed_sets[i - 1] < stats.observed_sets[i]);
        ++i;
    }
}

TEST_CASE("worlds save and load with integrity checking") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "ecor_world_test";
    fs::remove_all(dir);

    World w = generate_world(preset_spec("tiny"));
    save_world(w, dir.string());
    World back = load_world(dir.string());
    CHECK(world_hash(back) == world_hash(w));
    CHECK(back.categories == w.categories);
    CHECK(back.signatures == w.signatures);
    CHECK(examples_jsonl(back.train) == examples_jsonl(w.train));

    // Flip one digit in the stored training data: the hash must catch it.
    std::string body;
    {
        std::ifstream f(dir / "train.jsonl");
        body.assign(std::istreambuf_iterator<char>(f), {});
    }
    const auto pos = body.find("\"category\":0");
    REQUIRE(pos != std::string::npos);
    body[pos + 11] = '1';
    {
        std::ofstream f(dir / "train.jsonl");
        f << body;
    }
    CHECK_THROWS_AS(load_world(dir.string()), io_error);
    fs::remove_all(dir);
}

TEST_CASE("presets validate and unknown names are rejected") {
    for (const char* name : {"tiny", "small", "large", "zeroshot"}) {
        WorldSpec s = preset_spec(name);
        s.validate();
    }
    CHECK_THROWS_AS(preset_spec("huge"), config_error);
    CHECK(preset_spec("large").rationales_per_image == 2);
}

TEST_CASE("spec validation rejects inconsistent fields") {
    WorldSpec s = small_spec();
    s.rationales_per_image = 3;  // exceeds signature size
    CHECK_THROWS_AS(s.validate(), config_error);
    s = small_spec();
    s.signature_size = 21;
    CHECK_THROWS_AS(s.validate(), config_error);
    s = small_spec();
    s.distractor_rate = 1.5;
    CHECK_THROWS_AS(s.validate(), config_error);
}

TEST_CASE("hash function matches reference values") {
    // FNV-1a 64 published test vectors.
    CHECK(fnv1a64("") == 14695981039346656037ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}
