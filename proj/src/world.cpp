#include "ecor/world.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ecor {

void WorldSpec::validate() const {
    if (n_categories < 1 || n_rationales < 1) {
        throw config_error("world: need at least one category and one rationale");
    }
    if (signature_size < 1 || signature_size > n_rationales) {
        throw config_error("world: signature size must be in [1, n_rationales]");
    }
    if (rationales_per_image < 1 || rationales_per_image > signature_size) {
        throw config_error("world: rationales per image must be in [1, signature size]");
    }
    if (num_patches < rationales_per_image) {
        throw config_error("world: patch grid smaller than rationales per image");
    }
    if (d_in < 1) throw config_error("world: d_in must be positive");
    if (evidence_strength <= 0.0) throw config_error("world: evidence strength must be positive");
    if (noise_sigma < 0.0 || distractor_rate < 0.0 || distractor_rate > 1.0) {
        throw config_error("world: noise sigma must be >= 0 and distractor rate in [0,1]");
    }
    if (train_per_category < 1 || test_per_category < 1) {
        throw config_error("world: per-category example counts must be positive");
    }
}

namespace {

std::string padded_name(const char* prefix, int id, int count) {
    const size_t width = std::max<size_t>(2, std::to_string(count - 1).size());
    std::string num = std::to_string(id);
    return std::string(prefix) + "_" + std::string(width - std::min(width, num.size()), '0') +
           num;
}

// Signatures are a disjoint partition of the rationales whenever they fit;
// that makes the category a deterministic function of any nonempty rationale
// subset. Otherwise fall back to rejection-sampled distinct subsets.
std::vector<std::vector<int>> draw_signatures(const WorldSpec& spec, Rng& rng) {
    std::vector<std::vector<int>> sigs(spec.n_categories);
    if (int64_t{spec.n_categories} * spec.signature_size <= spec.n_rationales) {
        std::vector<int> pool(spec.n_rationales);
        for (int i = 0; i < spec.n_rationales; ++i) pool[i] = i;
        rng.shuffle(pool);
        for (int c = 0; c < spec.n_categories; ++c) {
            sigs[c].assign(pool.begin() + int64_t{c} * spec.signature_size,
                           pool.begin() + int64_t{c + 1} * spec.signature_size);
            std::sort(sigs[c].begin(), sigs[c].end());
        }
        return sigs;
    }
    std::set<std::vector<int>> seen;
    for (int c = 0; c < spec.n_categories; ++c) {
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            auto pick = rng.sample_without_replacement(spec.n_rationales, spec.signature_size);
            std::vector<int> sig(pick.begin(), pick.end());
            std::sort(sig.begin(), sig.end());
            if (seen.insert(sig).second) {
                sigs[c] = std::move(sig);
                placed = true;
            }
        }
        if (!placed) {
            throw config_error("world: cannot draw pairwise distinct signatures for category " +
                               std::to_string(c));
        }
    }
    return sigs;
}

Example make_example(const WorldSpec& spec, int category, const std::vector<int>& signature,
                     const std::vector<std::vector<double>>& evidence, Rng& rng) {
    Example ex;
    ex.category = category;
    auto pick = rng.sample_without_replacement(signature.size(),
                                               static_cast<size_t>(spec.rationales_per_image));
    for (size_t i : pick) ex.rationales.push_back(signature[i]);
    std::sort(ex.rationales.begin(), ex.rationales.end());

    auto slots = rng.sample_without_replacement(static_cast<size_t>(spec.num_patches),
                                                ex.rationales.size());
    std::vector<char> is_gold(spec.num_patches, 0);
    for (size_t s : slots) is_gold[s] = 1;

    ex.patches.assign(static_cast<size_t>(spec.num_patches) * spec.d_in, 0.0);
    for (int p = 0; p < spec.num_patches; ++p) {
        if (is_gold[p]) continue;
        for (int j = 0; j < spec.d_in; ++j) {
            ex.patches[p * spec.d_in + j] = rng.normal(0.0, spec.noise_sigma);
        }
        if (spec.distractor_rate > 0.0 &&
            ex.rationales.size() < static_cast<size_t>(spec.n_rationales) &&
            rng.uniform() < spec.distractor_rate) {
            // A non-gold rationale posing as evidence.
            int r;
            do {
                r = static_cast<int>(rng.uniform_int(spec.n_rationales));
            } while (std::binary_search(ex.rationales.begin(), ex.rationales.end(), r));
            for (int j = 0; j < spec.d_in; ++j) {
                ex.patches[p * spec.d_in + j] += spec.evidence_strength * evidence[r][j];
            }
        }
    }
    for (size_t i = 0; i < slots.size(); ++i) {
        const auto& e = evidence[ex.rationales[i]];
        for (int j = 0; j < spec.d_in; ++j) {
            ex.patches[slots[i] * spec.d_in + j] = spec.evidence_strength * e[j];
        }
    }
    return ex;
}

World build_world(const WorldSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    std::vector<std::string> cat_names, rat_names;
    for (int c = 0; c < spec.n_categories; ++c) {
        cat_names.push_back(padded_name("cat", c, spec.n_categories));
    }
    for (int r = 0; r < spec.n_rationales; ++r) {
        rat_names.push_back(padded_name("rat", r, spec.n_rationales));
    }

    World w{spec, Vocabulary(std::move(cat_names), std::move(rat_names)), {}, {}, {}, {}, {}};
    for (int c = 0; c < spec.n_categories; ++c) w.categories.push_back(c);
    w.signatures = draw_signatures(spec, rng);

    for (int r = 0; r < spec.n_rationales; ++r) {
        std::vector<double> e(spec.d_in);
        double norm = 0.0;
        do {
            norm = 0.0;
            for (double& x : e) {
                x = rng.normal(0.0, 1.0);
                norm += x * x;
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (double& x : e) x /= norm;
        w.evidence.push_back(std::move(e));
    }

    for (auto [list, count] : {std::pair{&w.train, spec.train_per_category},
                               std::pair{&w.test, spec.test_per_category}}) {
        for (int c = 0; c < spec.n_categories; ++c) {
            for (int i = 0; i < count; ++i) {
                list->push_back(make_example(spec, c, w.signatures[c], w.evidence, rng));
            }
        }
    }
    return w;
}

}  // namespace

World generate_world(const WorldSpec& spec) { return build_world(spec); }

std::pair<World, World> split_zero_shot(const WorldSpec& spec) {
    if (spec.n_categories < 2) {
        throw config_error("zero-shot split needs at least 2 categories");
    }
    World full = build_world(spec);
    const int n_b = std::max(1, spec.n_categories / 3);

    // Transfer is only measurable when the held-out categories are built
    // from rationales the training world still exhibits, so a category may
    // move to B only while every rationale in its signature keeps at least
    // one owner in A. Scan from the back for a deterministic pick.
    std::vector<int> owners(spec.n_rationales, 0);
    for (const auto& sig : full.signatures) {
        for (int r : sig) ++owners[r];
    }
    std::vector<char> in_b(spec.n_categories, 0);
    int picked = 0;
    for (int c = spec.n_categories - 1; c >= 0 && picked < n_b; --c) {
        bool covered = true;
        for (int r : full.signatures[c]) covered = covered && owners[r] >= 2;
        if (!covered) continue;
        in_b[c] = 1;
        ++picked;
        for (int r : full.signatures[c]) --owners[r];
    }
    if (picked < n_b) {
        throw config_error(
            "zero-shot split: only " + std::to_string(picked) + " of " +
            std::to_string(n_b) +
            " transfer categories can reuse training-world rationales; "
            "signatures overlap too little (needs n_categories * signature_size "
            "> n_rationales)");
    }

    auto restrict_to = [&](bool b_side) {
        World w{full.spec, full.vocabulary, {}, full.signatures, full.evidence, {}, {}};
        for (int c = 0; c < spec.n_categories; ++c) {
            if (static_cast<bool>(in_b[c]) == b_side) w.categories.push_back(c);
        }
        for (const auto* src : {&full.train, &full.test}) {
            auto* dst = src == &full.train ? &w.train : &w.test;
            for (const Example& ex : *src) {
                if (static_cast<bool>(in_b[ex.category]) == b_side) dst->push_back(ex);
            }
        }
        return w;
    };
    return {restrict_to(false), restrict_to(true)};
}

DatasetStats dataset_stats(const std::vector<Example>& examples) {
    DatasetStats stats;
    std::set<std::vector<int>> sets;
    size_t total = 0;
    for (const Example& ex : examples) {
        total += ex.rationales.size();
        stats.per_category[ex.category] += 1;
        sets.insert(ex.rationales);
    }
    stats.mean_rationales =
        examples.empty() ? 0.0 : static_cast<double>(total) / examples.size();
    stats.observed_sets.assign(sets.begin(), sets.end());
    return stats;
}

WorldSpec preset_spec(const std::string& name) {
    WorldSpec s;
    if (name == "tiny") {
        s.n_categories = 4;
        s.n_rationales = 6;
        s.signature_size = 1;
        s.rationales_per_image = 1;
        s.num_patches = 8;
        s.d_in = 8;
        s.train_per_category = 8;
        s.test_per_category = 4;
    } else if (name == "small") {
        s.n_categories = 10;
        s.n_rationales = 20;
        s.signature_size = 2;
        // Full signatures per image: a lone distractor can then never
        // outvote the two gold rationales, so the benchmark measures
        // recognition rather than luck on ambiguous evidence.
        s.rationales_per_image = 2;
        // Sized so a from-scratch encoder generalizes instead of memorizing.
        s.distractor_rate = 0.02;
        s.train_per_category = 50;
        s.test_per_category = 10;
    } else if (name == "large") {
        s.n_categories = 50;
        s.n_rationales = 100;
        s.signature_size = 2;
        s.rationales_per_image = 2;
        s.train_per_category = 16;
        s.test_per_category = 8;
    } else if (name == "zeroshot") {
        s.n_categories = 15;
        // Fewer rationales than signature slots, so categories must share
        // them; the held-out split then reuses trained rationales in novel
        // combinations, which is what transfer measures.
        s.n_rationales = 10;
        s.signature_size = 2;
        s.rationales_per_image = 1;
        s.distractor_rate = 0.02;
        s.train_per_category = 50;
        s.test_per_category = 10;
    } else {
        throw config_error("unknown world preset '" + name +
                           "' (expected tiny|small|large|zeroshot)");
    }
    return s;
}

uint64_t fnv1a64(std::string_view bytes) {
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

nlohmann::json spec_to_json(const WorldSpec& s) {
    return {{"n_categories", s.n_categories},
            {"n_rationales", s.n_rationales},
            {"signature_size", s.signature_size},
            {"rationales_per_image", s.rationales_per_image},
            {"num_patches", s.num_patches},
            {"d_in", s.d_in},
            {"evidence_strength", s.evidence_strength},
            {"noise_sigma", s.noise_sigma},
            {"distractor_rate", s.distractor_rate},
            {"train_per_category", s.train_per_category},
            {"test_per_category", s.test_per_category},
            {"seed", s.seed}};
}

WorldSpec spec_from_json(const nlohmann::json& j) {
    WorldSpec s;
    s.n_categories = j.at("n_categories").get<int>();
    s.n_rationales = j.at("n_rationales").get<int>();
    s.signature_size = j.at("signature_size").get<int>();
    s.rationales_per_image = j.at("rationales_per_image").get<int>();
    s.num_patches = j.at("num_patches").get<int>();
    s.d_in = j.at("d_in").get<int>();
    s.evidence_strength = j.at("evidence_strength").get<double>();
    s.noise_sigma = j.at("noise_sigma").get<double>();
    s.distractor_rate = j.at("distractor_rate").get<double>();
    s.train_per_category = j.at("train_per_category").get<int>();
    s.test_per_category = j.at("test_per_category").get<int>();
    s.seed = j.at("seed").get<uint64_t>();
    return s;
}

std::string manifest_without_hash(const World& w) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["spec"] = spec_to_json(w.spec);
    j["categories"] = w.categories;
    j["signatures"] = w.signatures;
    j["evidence"] = w.evidence;
    j["vocabulary"] = nlohmann::json::parse(w.vocabulary.to_json());
    return j.dump(2);
}

}  // namespace

std::string examples_jsonl(const std::vector<Example>& examples) {
    std::string out;
    for (const Example& ex : examples) {
        nlohmann::json j{{"category", ex.category},
                         {"rationales", ex.rationales},
                         {"patches", ex.patches}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

uint64_t world_hash(const World& w) {
    std::string blob = manifest_without_hash(w);
    blob += '\n';
    blob += examples_jsonl(w.train);
    blob += '\n';
    blob += examples_jsonl(w.test);
    return fnv1a64(blob);
}

std::string world_manifest_json(const World& w) {
    nlohmann::json j = nlohmann::json::parse(manifest_without_hash(w));
    std::ostringstream hex;
    hex << std::hex << world_hash(w);
    j["hash"] = hex.str();
    return j.dump(2);
}

void save_world(const World& w, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create directory '" + dir + "': " + ec.message());
    auto write = [&](const std::string& name, const std::string& body) {
        std::ofstream f(fs::path(dir) / name, std::ios::binary);
        f << body;
        if (!f) throw io_error("cannot write '" + (fs::path(dir) / name).string() + "'");
    };
    write("manifest.json", world_manifest_json(w));
    write("train.jsonl", examples_jsonl(w.train));
    write("test.jsonl", examples_jsonl(w.test));
}

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot read '" + path.string() + "'");
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

std::vector<Example> parse_jsonl(const std::string& body, const WorldSpec& spec) {
    std::vector<Example> out;
    std::istringstream is(body);
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw io_error("examples line " + std::to_string(lineno) + ": " + e.what());
        }
        Example ex;
        ex.category = j.at("category").get<int>();
        ex.rationales = j.at("rationales").get<std::vector<int>>();
        ex.patches = j.at("patches").get<std::vector<double>>();
        if (ex.patches.size() != static_cast<size_t>(spec.num_patches) * spec.d_in) {
            throw io_error("examples line " + std::to_string(lineno) +
                           ": patch array length mismatch");
        }
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace

World load_world(const std::string& dir) {
    namespace fs = std::filesystem;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(fs::path(dir) / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("manifest.json: ") + e.what());
    }
    if (!j.contains("format_version") || j["format_version"].get<int>() != 1) {
        throw io_error("manifest.json: unsupported format_version");
    }
    WorldSpec spec = spec_from_json(j.at("spec"));
    World w{spec, Vocabulary::from_json(j.at("vocabulary").dump()),
            j.at("categories").get<std::vector<int>>(),
            j.at("signatures").get<std::vector<std::vector<int>>>(),
            j.at("evidence").get<std::vector<std::vector<double>>>(),
            parse_jsonl(read_file(fs::path(dir) / "train.jsonl"), spec),
            parse_jsonl(read_file(fs::path(dir) / "test.jsonl"), spec)};
    std::ostringstream hex;
    hex << std::hex << world_hash(w);
    if (j.at("hash").get<std::string>() != hex.str()) {
        throw io_error("world in '" + dir + "' fails its integrity hash");
    }
    return w;
}

}  // namespace ecor
