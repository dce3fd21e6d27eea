// Release gate: one check per shipped guarantee, each printed as a single
// [PASS]/[FAIL] line. Tolerances and training budgets are pinned here, not
// configurable, so a green run means the same thing everywhere.
//
// Usage: acceptance_main <path-to-ecor-binary>
// The binary path feeds the determinism check, which replays the full
// command line pipeline twice and compares artifacts byte for byte.
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ecor/checkpoint.hpp"
#include "ecor/gradcheck.hpp"
#include "ecor/inference.hpp"
#include "ecor/trainer.hpp"
#include "ecor/world.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace ecor;

namespace {

// ------------------------------------------------------------- tolerances

constexpr double kGradEps = 1e-5;          // finite-difference step
constexpr double kGradTolerance = 1e-3;    // max relative error, every array
constexpr double kGradTimeLimit = 60.0;    // seconds
constexpr int kGradProbesPerArray = 2;

constexpr int kStubTables = 1000;          // distribution-contract trials
constexpr double kMassTolerance = 1e-6;

constexpr int kOracleTables = 100;         // prediction-oracle trials
constexpr int kOracleMaxCategories = 20;
constexpr int kOracleMaxSets = 30;

constexpr double kLearnRR = 0.80;          // small-world held-out target
constexpr int kLearnEpochs = 30;
constexpr double kLearnTimeLimit = 300.0;  // seconds, all three seeds

constexpr double kAblationMargin = 0.15;   // ECOR over categories-only

constexpr double kZeroShotFactor = 5.0;    // trained RR over chance
constexpr double kZeroShotSigmas = 3.0;    // untrained RR around chance

// ------------------------------------------------------------- reporting

int g_failures = 0;

void report(const char* name, bool pass, const std::string& detail) {
    std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", name, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot read '" + path.string() + "'");
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

// ------------------------------------------------- C1: gradient correctness

void check_gradients() {
    auto t0 = std::chrono::steady_clock::now();
    WorldSpec spec = preset_spec("tiny");
    World world = generate_world(spec);

    EncoderConfig config;  // stock architecture on the tiny world's geometry
    config.vocab_size = world.vocabulary.vocab_size();
    config.num_patches = world.spec.num_patches;
    config.d_in = world.spec.d_in;
    Rng rng(0);
    DualEncoderParams params = DualEncoderParams::init(config, rng);
    auto contexts = build_term_contexts(Ablation::ECOR, world.vocabulary, world.categories,
                                        dataset_stats(world.train).observed_sets, 1.0, 1.0,
                                        config.context_len);

    auto eval = [&]() {
        Graph g;
        BoundEncoder enc = bind(g, params, TuneScope::All);
        return dataset_loss(enc, world.train, contexts).scalar();
    };
    Graph g;
    BoundEncoder enc = bind(g, params, TuneScope::All);
    Tensor loss = dataset_loss(enc, world.train, contexts);
    g.backward(loss);

    auto refs = param_refs(params);
    std::vector<FdSpec> specs;
    for (size_t i = 0; i < refs.size(); ++i) {
        specs.push_back({refs[i].name, refs[i].value, enc.ordered[i].grad()});
    }
    Rng probe_rng(1234);
    FdReport fd = fd_check(specs, eval, kGradEps, kGradProbesPerArray, &probe_rng);
    const double elapsed = seconds_since(t0);

    char detail[256];
    std::snprintf(detail, sizeof(detail),
                  "max rel err %.3e over %zu coords across %zu arrays (worst %s), %.1fs",
                  fd.max_rel_err, fd.checked, specs.size(), fd.worst_name.c_str(), elapsed);
    report("C1 gradient correctness", fd.max_rel_err <= kGradTolerance &&
                                          elapsed < kGradTimeLimit, detail);
}

// --------------------------------------------- C2: distribution contracts

// Deterministic stub: every prompt text gets one fixed standard normal score.
ScoreFn stub_scorer(Rng& rng, std::map<std::string, double>& memo) {
    return [&rng, &memo](const RenderedPrompt& prompt) {
        auto it = memo.find(prompt.text);
        if (it == memo.end()) it = memo.emplace(prompt.text, rng.normal()).first;
        return it->second;
    };
}

void check_distribution_contracts() {
    std::vector<std::string> cat_names, rat_names;
    for (int i = 0; i < 10; ++i) cat_names.push_back("cat_" + std::to_string(i));
    for (int i = 0; i < 12; ++i) rat_names.push_back("rat_" + std::to_string(i));
    Vocabulary vocab(cat_names, rat_names);

    Rng rng(7);
    int bad_tables = 0;
    int bad_quads = 0;
    const TableKind kinds[] = {TableKind::Forward, TableKind::ForwardInvertedConditional,
                               TableKind::Independent, TableKind::Inverse};
    for (int trial = 0; trial < kStubTables; ++trial) {
        const int n_cats = 1 + static_cast<int>(rng.uniform_int(10));
        std::vector<int> categories(n_cats);
        for (int c = 0; c < n_cats; ++c) categories[c] = c;
        const int n_sets = 1 + static_cast<int>(rng.uniform_int(12));
        std::set<std::vector<int>> distinct;
        while (static_cast<int>(distinct.size()) < n_sets) {
            std::vector<int> s;
            for (int r = 0; r < 12; ++r) {
                if (rng.uniform() < 0.25) s.push_back(r);
            }
            if (!s.empty()) distinct.insert(s);
        }
        std::vector<std::vector<int>> sets(distinct.begin(), distinct.end());

        std::map<std::string, double> memo;
        ScoreFn score = stub_scorer(rng, memo);
        TableKind kind = kinds[trial % 4];
        ConditionalNorm norm = (trial % 8 < 4) ? ConditionalNorm::PerRationaleRow
                                               : ConditionalNorm::CrossProduct;
        JointTable table = build_table(kind, score, vocab, categories, sets, norm);

        double pr_sum = 0.0;
        for (double p : table.p_r) pr_sum += p;
        bool ok = std::abs(pr_sum - 1.0) <= kMassTolerance;
        ok = ok && std::abs(table.mass() - 1.0) <= kMassTolerance;
        if (table.norm == ConditionalNorm::PerRationaleRow) {
            for (int s = 0; s < table.num_sets(); ++s) {
                double row = 0.0;
                for (int c = 0; c < table.num_categories(); ++c) {
                    row += table.p_c_given_r[s * table.num_categories() + c];
                }
                ok = ok && std::abs(row - 1.0) <= kMassTolerance;
            }
        } else {
            double total = 0.0;
            for (double p : table.p_c_given_r) total += p;
            ok = ok && std::abs(total - 1.0) <= kMassTolerance;
        }
        if (!ok) ++bad_tables;

        // Metric quads partition their sample exactly, in integers.
        const int n = 1 + static_cast<int>(rng.uniform_int(50));
        std::vector<Prediction> preds;
        std::vector<Example> gold;
        for (int i = 0; i < n; ++i) {
            JointTable t2 = table;
            t2.image_id = i;
            preds.push_back(predict(t2, 1 + static_cast<int>(rng.uniform_int(5))));
            Example ex;
            ex.category = categories[rng.uniform_int(n_cats)];
            ex.rationales = sets[rng.uniform_int(sets.size())];
            gold.push_back(ex);
        }
        MetricsQuad quad = evaluate(preds, gold);
        if (quad.rr_count + quad.rw_count + quad.wr_count + quad.ww_count != n) ++bad_quads;
    }

    char detail[192];
    std::snprintf(detail, sizeof(detail),
                  "%d tables: %d mass violations (tol %.0e), %d quad-count violations",
                  kStubTables, bad_tables, kMassTolerance, bad_quads);
    report("C2 distribution contracts", bad_tables == 0 && bad_quads == 0, detail);
}

// ------------------------------------------------ C3: prediction vs oracle

// Brute-force reference: enumerate every (category, set) pair, order by
// score desc with ties broken by category id then set index, keep k, vote
// by count then summed score then lowest id.
Prediction oracle_predict(const JointTable& table, int top_k) {
    struct Pair {
        int cat_index, set_index;
        double joint;
    };
    std::vector<Pair> pairs;
    for (int s = 0; s < table.num_sets(); ++s) {
        for (int c = 0; c < table.num_categories(); ++c) {
            pairs.push_back({c, s, table.joint[s * table.num_categories() + c]});
        }
    }
    std::stable_sort(pairs.begin(), pairs.end(), [&](const Pair& a, const Pair& b) {
        if (a.joint != b.joint) return a.joint > b.joint;
        if (table.categories[a.cat_index] != table.categories[b.cat_index]) {
            return table.categories[a.cat_index] < table.categories[b.cat_index];
        }
        return a.set_index < b.set_index;
    });
    const int k = std::min<int>(top_k, static_cast<int>(pairs.size()));
    pairs.resize(k);

    std::map<int, std::pair<int, double>> votes;  // category -> (count, mass)
    for (const Pair& p : pairs) {
        auto& v = votes[table.categories[p.cat_index]];
        v.first += 1;
        v.second += p.joint;
    }
    int winner = -1;
    std::pair<int, double> best{-1, 0.0};
    for (const auto& [cat, v] : votes) {
        if (v.first > best.first || (v.first == best.first && v.second > best.second)) {
            best = v;
            winner = cat;
        }
    }
    Prediction out;
    out.image_id = table.image_id;
    out.voted_category = winner;
    for (const Pair& p : pairs) {
        out.ranked.push_back({table.categories[p.cat_index], p.set_index,
                              table.rationale_sets[p.set_index], p.joint});
        if (out.predicted_set.empty() && table.categories[p.cat_index] == winner) {
            out.predicted_set = table.rationale_sets[p.set_index];
        }
    }
    for (const auto& [cat, v] : votes) out.vote_counts.emplace_back(cat, v.first);
    return out;
}

void check_prediction_oracle() {
    Rng rng(99);
    int mismatches = 0;
    for (int trial = 0; trial < kOracleTables; ++trial) {
        const int n_cats = 1 + static_cast<int>(rng.uniform_int(kOracleMaxCategories));
        const int n_sets = 1 + static_cast<int>(rng.uniform_int(kOracleMaxSets));
        JointTable table;
        table.image_id = trial;
        for (int c = 0; c < n_cats; ++c) table.categories.push_back(c * 3 + 1);
        for (int s = 0; s < n_sets; ++s) table.rationale_sets.push_back({s, s + n_sets});
        std::vector<double> scores(static_cast<size_t>(n_cats) * n_sets);
        for (double& x : scores) {
            x = rng.normal();
            // half the trials quantize scores so exact ties actually occur
            if (trial % 2 == 1) x = std::round(x * 4.0) / 4.0;
        }
        table.joint = softmax_values(scores);
        table.p_r.assign(n_sets, 1.0 / n_sets);
        table.p_c_given_r.assign(scores.size(), 1.0 / n_cats);

        const int k = 1 + static_cast<int>(rng.uniform_int(n_cats * n_sets + 2));
        Prediction got = predict(table, k);
        Prediction want = oracle_predict(table, k);

        bool same = got.image_id == want.image_id &&
                    got.voted_category == want.voted_category &&
                    got.predicted_set == want.predicted_set &&
                    got.vote_counts == want.vote_counts &&
                    got.ranked.size() == want.ranked.size();
        if (same) {
            for (size_t i = 0; i < got.ranked.size(); ++i) {
                same = same && got.ranked[i].category == want.ranked[i].category &&
                       got.ranked[i].set_index == want.ranked[i].set_index &&
                       got.ranked[i].rationale_set == want.ranked[i].rationale_set &&
                       got.ranked[i].joint == want.ranked[i].joint;
            }
        }
        if (!same) ++mismatches;
    }
    char detail[128];
    std::snprintf(detail, sizeof(detail), "%d random tables up to %dx%d: %d mismatches",
                  kOracleTables, kOracleMaxCategories, kOracleMaxSets, mismatches);
    report("C3 prediction matches oracle", mismatches == 0, detail);
}

// ------------------------------------------------------ C4: learnability

// Training recipe used by the quantitative gates. The backbone is random
// rather than pretrained, so tuning must reach it; prompts stay shallow
// with three tokens.
TrainConfig gate_train_config(uint64_t seed, int epochs, Ablation ablation) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 64;
    cfg.lr = 1e-2;
    cfg.seed = seed;
    cfg.mode = PromptMode::Shallow;
    cfg.num_prompts = 3;
    cfg.scope = TuneScope::All;
    cfg.ablation = ablation;
    return cfg;
}

EncoderConfig gate_encoder_config(const World& world) {
    EncoderConfig config;  // stock architecture
    config.vocab_size = world.vocabulary.vocab_size();
    config.num_patches = world.spec.num_patches;
    config.d_in = world.spec.d_in;
    return config;
}

MetricsQuad train_and_eval(const World& world, const TrainConfig& cfg) {
    EncoderConfig enc = gate_encoder_config(world);
    Rng rng(cfg.seed);
    DualEncoderParams params = DualEncoderParams::init(enc, rng);
    TrainStart start{0, {}, rng.serialize()};
    train(params, world, cfg, nullptr, {}, start);
    return evaluate_world(params, world, cfg.ablation);
}

void check_learnability() {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<double> rrs;
    bool pass = true;
    for (uint64_t seed = 0; seed <= 2; ++seed) {
        WorldSpec spec = preset_spec("small");
        spec.seed = seed;
        World world = generate_world(spec);
        MetricsQuad quad = train_and_eval(world, gate_train_config(seed, kLearnEpochs,
                                                                   Ablation::ECOR));
        rrs.push_back(quad.rr());
        pass = pass && quad.rr() >= kLearnRR;
    }
    const double elapsed = seconds_since(t0);
    pass = pass && elapsed < kLearnTimeLimit;
    char detail[192];
    std::snprintf(detail, sizeof(detail),
                  "held-out RR by seed %.3f/%.3f/%.3f (target %.2f within %d epochs), %.0fs",
                  rrs[0], rrs[1], rrs[2], kLearnRR, kLearnEpochs, elapsed);
    report("C4 learnability on the small world", pass, detail);
}

// -------------------------------------------------- C5: ablation ordering

void check_ablation_ordering() {
    auto t0 = std::chrono::steady_clock::now();
    int majority = 0;
    std::ostringstream lines;
    for (uint64_t seed = 0; seed <= 2; ++seed) {
        WorldSpec spec = preset_spec("large");
        spec.seed = seed;
        World world = generate_world(spec);
        double ecor = train_and_eval(world, gate_train_config(seed, kLearnEpochs,
                                                              Ablation::ECOR)).rr();
        double ab2 = train_and_eval(world, gate_train_config(seed, kLearnEpochs,
                                                             Ablation::AB2)).rr();
        double ab6 = train_and_eval(world, gate_train_config(seed, kLearnEpochs,
                                                             Ablation::AB6)).rr();
        const bool ok = (ecor - ab2 >= kAblationMargin) && (ecor > ab6);
        if (ok) ++majority;
        lines << (seed ? " " : "") << "s" << seed << ":" << (ok ? "ok" : "no")
              << "(ECOR " << ecor << ", AB2 " << ab2 << ", AB6 " << ab6 << ")";
    }
    char detail[256];
    std::snprintf(detail, sizeof(detail), "%s; margin %.2f, majority %d/3, %.0fs",
                  lines.str().c_str(), kAblationMargin, majority, seconds_since(t0));
    report("C5 ablation ordering on the large world", majority >= 2, detail);
}

// -------------------------------------------------- C6: zero-shot transfer

void check_zero_shot() {
    auto t0 = std::chrono::steady_clock::now();
    WorldSpec spec = preset_spec("zeroshot");
    auto [world_a, world_b] = split_zero_shot(spec);

    // Chance: one correct (category, set) pair among all scored pairs.
    auto sets_b = observed_rationale_sets(world_b);
    const double chance = 1.0 / (static_cast<double>(world_b.categories.size()) *
                                 static_cast<double>(sets_b.size()));
    const int n_test = static_cast<int>(world_b.test.size());
    const double sigma = std::sqrt(chance * (1.0 - chance) / n_test);

    EncoderConfig enc = gate_encoder_config(world_a);
    Rng rng(0);
    DualEncoderParams trained = DualEncoderParams::init(enc, rng);
    TrainStart start{0, {}, rng.serialize()};
    TrainConfig cfg = gate_train_config(0, kLearnEpochs, Ablation::ECOR);
    train(trained, world_a, cfg, nullptr, {}, start);
    const double trained_rr = zero_shot_evaluate(trained, world_b, Ablation::ECOR).rr();
    const bool trained_ok = trained_rr >= kZeroShotFactor * chance;

    bool untrained_ok = true;
    std::ostringstream untrained_list;
    for (uint64_t seed = 0; seed <= 4; ++seed) {
        Rng r2(seed);
        DualEncoderParams blank = DualEncoderParams::init(enc, r2);
        const double rr = zero_shot_evaluate(blank, world_b, Ablation::ECOR).rr();
        untrained_ok = untrained_ok && std::abs(rr - chance) <= kZeroShotSigmas * sigma;
        untrained_list << (seed ? "/" : "") << rr;
    }
    char detail[256];
    std::snprintf(detail, sizeof(detail),
                  "trained RR %.3f vs %.1fx chance %.3f; untrained RR %s within %.0f sigma "
                  "(%.3f) of chance, %.0fs",
                  trained_rr, kZeroShotFactor, kZeroShotFactor * chance,
                  untrained_list.str().c_str(), kZeroShotSigmas, kZeroShotSigmas * sigma,
                  seconds_since(t0));
    report("C6 zero-shot transfer", trained_ok && untrained_ok, detail);
}

// ------------------------------------------------------ C7: determinism

int run_shell(const std::string& cmd) {
    int rc = std::system(cmd.c_str());
    return (rc == -1 || !WIFEXITED(rc)) ? -1 : WEXITSTATUS(rc);
}

// One full pipeline: generate the tiny world, train briefly, evaluate.
bool run_pipeline(const std::string& cli, const fs::path& root) {
    fs::create_directories(root);
    const std::string base = "cd '" + root.string() + "' && '" + cli + "' ";
    const std::string quiet = " > /dev/null 2>&1";
    if (run_shell(base + "generate --preset tiny --seed 4 --out world" + quiet) != 0)
        return false;
    if (run_shell(base +
                  "train --dataset world --seed 1 --epochs 3 --d-model 16 --embed-dim 8 "
                  "--text-layers 1 --image-layers 1 --heads 2 --ffn 32 --prompts 2 "
                  "--batch 16 --out run" +
                  quiet) != 0)
        return false;
    return run_shell(base + "eval --checkpoint run/checkpoint.json --dataset world --k 3 "
                            "--out eval" +
                     quiet) == 0;
}

// Epoch records with the timing field (physical, not semantic) removed.
std::string stable_log(const fs::path& path) {
    std::istringstream is(slurp(path));
    std::string line, out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::ordered_json j = nlohmann::ordered_json::parse(line);
        j.erase("wall_ms");
        out += j.dump();
        out += '\n';
    }
    return out;
}

void check_determinism(const std::string& cli) {
    fs::path scratch = fs::temp_directory_path() / ("ecor_accept_" + std::to_string(getpid()));
    fs::path a = scratch / "a";
    fs::path b = scratch / "b";
    bool ran = run_pipeline(cli, a) && run_pipeline(cli, b);
    bool pass = ran;
    std::string diff = ran ? "" : "pipeline run failed";
    if (ran) {
        const char* byte_identical[] = {"world/manifest.json", "world/train.jsonl",
                                        "world/test.jsonl",    "run/checkpoint.json",
                                        "run/effective_config.json", "eval/report.csv",
                                        "eval/report.txt"};
        for (const char* rel : byte_identical) {
            if (slurp(a / rel) != slurp(b / rel)) {
                pass = false;
                diff += std::string(diff.empty() ? "" : ", ") + rel;
            }
        }
        if (stable_log(a / "run/train_log.ndjson") != stable_log(b / "run/train_log.ndjson")) {
            pass = false;
            diff += std::string(diff.empty() ? "" : ", ") + "run/train_log.ndjson";
        }
    }
    std::error_code ec;
    fs::remove_all(scratch, ec);
    report("C7 determinism of the full pipeline", pass,
           pass ? "two pipeline replays: datasets, checkpoints, logs (timing masked) and "
                  "reports byte-identical"
                : "differs: " + diff);
}

}  // namespace

int main(int argc, char** argv) {
    std::string cli;
    if (argc > 1) cli = argv[1];
    if (cli.empty() || !fs::exists(cli)) {
        std::fprintf(stderr, "usage: acceptance_main <path-to-ecor-binary>\n");
        return 2;
    }
    cli = fs::absolute(cli).string();

    check_gradients();
    check_distribution_contracts();
    check_prediction_oracle();
    check_learnability();
    check_ablation_ordering();
    check_zero_shot();
    check_determinism(cli);

    std::printf("%d of 7 criteria failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
