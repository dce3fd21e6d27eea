#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ecor/prompts.hpp"
#include "ecor/rng.hpp"

namespace ecor {

struct WorldSpec {
    int n_categories = 10;
    int n_rationales = 20;
    int signature_size = 2;      // rationales defining a category
    int rationales_per_image = 1;
    int num_patches = 16;
    int d_in = 16;
    double evidence_strength = 3.0;
    double noise_sigma = 0.1;
    double distractor_rate = 0.05;
    int train_per_category = 20;
    int test_per_category = 10;
    uint64_t seed = 0;

    void validate() const;
};

struct Example {
    std::vector<double> patches;  // num_patches x d_in, row-major
    int category = -1;            // global category id
    std::vector<int> rationales;  // sorted, subset of the category signature
};

struct DatasetStats {
    double mean_rationales = 0.0;
    std::map<int, int> per_category;
    std::vector<std::vector<int>> observed_sets;  // sorted sets, lexicographic
};

// A recognition world. `categories` lists the global ids this world covers;
// vocabulary, signatures and evidence are shared across a zero-shot pair, so
// they are indexed by global id and may extend beyond `categories`.
struct World {
    WorldSpec spec;
    Vocabulary vocabulary;
    std::vector<int> categories;
    std::vector<std::vector<int>> signatures;   // per global category id
    std::vector<std::vector<double>> evidence;  // per rationale, unit vectors in R^{d_in}
    std::vector<Example> train;
    std::vector<Example> test;
};

World generate_world(const WorldSpec& spec);

/// Splits the generated categories into a larger train world A and a
/// disjoint transfer world B over the same rationale vocabulary.
std::pair<World, World> split_zero_shot(const WorldSpec& spec);

DatasetStats dataset_stats(const std::vector<Example>& examples);

/// Named benchmark specs: tiny, small, large, zeroshot.
WorldSpec preset_spec(const std::string& name);

uint64_t fnv1a64(std::string_view bytes);
uint64_t world_hash(const World& world);

std::string world_manifest_json(const World& world);
std::string examples_jsonl(const std::vector<Example>& examples);
void save_world(const World& world, const std::string& dir);
World load_world(const std::string& dir);

}  // namespace ecor
