// Command line entry point: world generation, training, evaluation, the
// ablation matrix, zero-shot grids and gradient checking, with declarative
// JSON configs (flags override file fields) and reproducible run directories.
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ecor/checkpoint.hpp"
#include "ecor/gradcheck.hpp"
#include "ecor/inference.hpp"
#include "ecor/report.hpp"
#include "ecor/trainer.hpp"
#include "ecor/world.hpp"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace ecor;

constexpr Ablation kAllAblations[] = {Ablation::ECOR, Ablation::AB1, Ablation::AB2,
                                      Ablation::AB3, Ablation::AB4, Ablation::AB5,
                                      Ablation::AB6};

std::string hex64(uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

std::string slurp(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot read '" + path.string() + "'");
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void spit(const fs::path& path, const std::string& body) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) {
            throw io_error("cannot create directory '" + path.parent_path().string() +
                           "': " + ec.message());
        }
    }
    std::ofstream f(path, std::ios::binary);
    f << body;
    if (!f) throw io_error("cannot write '" + path.string() + "'");
}

// Values from a --config file fill any slot whose flag was not given on the
// command line: flags override the file, the file overrides defaults. Keys
// are flag names with '-' spelled '_'. Unconsumed keys are typos.
class FileConfig {
public:
    FileConfig(CLI::App* cmd, const std::string& path) : cmd_(cmd) {
        if (path.empty()) return;
        try {
            values_ = nlohmann::json::parse(slurp(path));
        } catch (const nlohmann::json::exception& e) {
            throw config_error("config file '" + path + "': " + e.what());
        }
        if (!values_.is_object()) {
            throw config_error("config file '" + path + "' must hold a JSON object");
        }
    }

    template <class T>
    void merge(const std::string& key, T& slot) {
        seen_.insert(key);
        if (!values_.contains(key)) return;
        std::string flag = "--" + key;
        for (char& ch : flag) {
            if (ch == '_') ch = '-';
        }
        // Keys without a registered flag (file-only settings) cannot have
        // been overridden on the command line.
        const CLI::Option* opt = cmd_->get_option_no_throw(flag);
        if (opt && opt->count() > 0) return;
        try {
            slot = values_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw config_error("config key '" + key + "': " + e.what());
        }
    }

    void finish() const {
        for (const auto& item : values_.items()) {
            if (!seen_.count(item.key())) {
                throw config_error("unknown config key '" + item.key() + "'");
            }
        }
    }

private:
    CLI::App* cmd_;
    nlohmann::json values_ = nlohmann::json::object();
    std::set<std::string> seen_;
};

struct CommonOpts {
    std::string config_file;
    std::string out;
    uint64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_file,
                    "JSON config file; command line flags override its fields");
    cmd->add_option("--out", o.out,
                    "output directory (default $ECOR_OUT_ROOT/<command>_<run_id>)");
    cmd->add_option("--seed", o.seed, "rng seed");
}

struct EncoderOpts {
    int d_model = 32;
    int embed_dim = 16;
    int text_layers = 2;
    int image_layers = 2;
    int heads = 4;
    int ffn = 128;
    int prompts = 3;
    int context = 32;
    std::string mode = "shallow";
};

void add_encoder(CLI::App* cmd, EncoderOpts& e) {
    cmd->add_option("--d-model", e.d_model, "transformer width");
    cmd->add_option("--embed-dim", e.embed_dim, "shared embedding dimension");
    cmd->add_option("--text-layers", e.text_layers, "text encoder blocks");
    cmd->add_option("--image-layers", e.image_layers, "image encoder blocks");
    cmd->add_option("--heads", e.heads, "attention heads");
    cmd->add_option("--ffn", e.ffn, "feed-forward width");
    cmd->add_option("--prompts", e.prompts, "learnable visual prompt tokens per table");
    cmd->add_option("--context", e.context, "text context length in tokens");
    cmd->add_option("--mode", e.mode, "prompt mode: shallow|deep");
}

void merge_encoder(FileConfig& file, EncoderOpts& e) {
    file.merge("d_model", e.d_model);
    file.merge("embed_dim", e.embed_dim);
    file.merge("text_layers", e.text_layers);
    file.merge("image_layers", e.image_layers);
    file.merge("heads", e.heads);
    file.merge("ffn", e.ffn);
    file.merge("prompts", e.prompts);
    file.merge("context", e.context);
    file.merge("mode", e.mode);
}

EncoderConfig encoder_config_for(const World& world, const EncoderOpts& e) {
    EncoderConfig c;
    c.vocab_size = world.vocabulary.vocab_size();
    c.d_model = e.d_model;
    c.d = e.embed_dim;
    c.n_text = e.text_layers;
    c.n_img = e.image_layers;
    c.n_heads = e.heads;
    c.d_ff = e.ffn;
    c.num_patches = world.spec.num_patches;
    c.d_in = world.spec.d_in;
    c.num_prompts = e.prompts;
    c.context_len = e.context;
    c.mode = prompt_mode_from_string(e.mode);
    c.validate();
    return c;
}

ordered_json encoder_json(const EncoderOpts& e) {
    return {{"d_model", e.d_model},       {"embed_dim", e.embed_dim},
            {"text_layers", e.text_layers}, {"image_layers", e.image_layers},
            {"heads", e.heads},           {"ffn", e.ffn},
            {"prompts", e.prompts},       {"context", e.context},
            {"mode", e.mode}};
}

struct TrainOpts {
    int epochs = 30;
    int batch = 64;
    double lr = 5e-3;
    int warmup = 0;
    std::string lr_decay = "none";
    std::string optimizer = "adam";
    std::string ablation = "ECOR";
    std::string scope = "prompts+projections";
    double w1 = 1.0;
    double w2 = 1.0;
    int eval_every = 0;
};

void add_train(CLI::App* cmd, TrainOpts& t, bool with_ablation) {
    cmd->add_option("--epochs", t.epochs, "training epochs");
    cmd->add_option("--batch", t.batch, "minibatch size");
    cmd->add_option("--lr", t.lr, "learning rate (0 leaves parameters untouched)");
    cmd->add_option("--warmup", t.warmup, "optimizer steps of linear lr ramp");
    cmd->add_option("--lr-decay", t.lr_decay, "schedule after warmup: none|cosine");
    cmd->add_option("--optimizer", t.optimizer, "adam|sgd");
    if (with_ablation) cmd->add_option("--ablation", t.ablation, "ECOR or AB1..AB6");
    cmd->add_option("--scope", t.scope, "tuned parameters: prompts|prompts+projections|all");
    cmd->add_option("--w1", t.w1, "weight of the first loss term");
    cmd->add_option("--w2", t.w2, "weight of the second loss term");
    cmd->add_option("--eval-every", t.eval_every,
                    "epochs between held-out evaluations (0 disables)");
}

void merge_train(FileConfig& file, TrainOpts& t, bool with_ablation) {
    file.merge("epochs", t.epochs);
    file.merge("batch", t.batch);
    file.merge("lr", t.lr);
    file.merge("warmup", t.warmup);
    file.merge("lr_decay", t.lr_decay);
    file.merge("optimizer", t.optimizer);
    if (with_ablation) file.merge("ablation", t.ablation);
    file.merge("scope", t.scope);
    file.merge("w1", t.w1);
    file.merge("w2", t.w2);
    file.merge("eval_every", t.eval_every);
}

TrainConfig train_config_for(const TrainOpts& t, const EncoderOpts& e, uint64_t seed) {
    TrainConfig cfg;
    cfg.epochs = t.epochs;
    cfg.batch_size = t.batch;
    cfg.lr = t.lr;
    cfg.warmup_steps = t.warmup;
    cfg.lr_decay = t.lr_decay;
    cfg.optimizer = t.optimizer;
    cfg.seed = seed;
    cfg.mode = prompt_mode_from_string(e.mode);
    cfg.num_prompts = e.prompts;
    cfg.scope = tune_scope_from_string(t.scope);
    cfg.w1 = t.w1;
    cfg.w2 = t.w2;
    cfg.ablation = ablation_from_string(t.ablation);
    cfg.eval_every = t.eval_every;
    cfg.validate();
    return cfg;
}

ordered_json train_json(const TrainOpts& t) {
    return {{"epochs", t.epochs}, {"batch", t.batch},
            {"lr", t.lr},         {"warmup", t.warmup},
            {"lr_decay", t.lr_decay},
            {"optimizer", t.optimizer},
            {"ablation", t.ablation},
            {"scope", t.scope},   {"w1", t.w1},
            {"w2", t.w2},         {"eval_every", t.eval_every}};
}

// Run directory with a config-derived id; the effective (merged) config is
// persisted before any work happens so every artifact can be reproduced.
struct RunContext {
    std::string run_id;
    fs::path dir;
    ordered_json effective;
};

RunContext open_run(const std::string& command, const CommonOpts& common,
                    ordered_json effective) {
    RunContext ctx;
    ctx.run_id = hex64(fnv1a64(effective.dump()));
    if (!common.out.empty()) {
        ctx.dir = common.out;
    } else {
        const char* root = std::getenv("ECOR_OUT_ROOT");
        ctx.dir = fs::path(root && *root ? root : "runs") / (command + "_" + ctx.run_id);
    }
    effective["run_id"] = ctx.run_id;
    effective["out"] = ctx.dir.string();
    ctx.effective = std::move(effective);
    std::error_code ec;
    fs::create_directories(ctx.dir, ec);
    if (ec) throw io_error("cannot create directory '" + ctx.dir.string() + "': " + ec.message());
    spit(ctx.dir / "effective_config.json", ctx.effective.dump(2) + "\n");
    return ctx;
}

std::string dataset_label(const std::string& path) {
    fs::path p(path);
    std::string name = p.filename().string();
    if (name.empty()) name = p.parent_path().filename().string();
    return name.empty() ? path : name;
}

int parse_k(const std::string& text, const World& world) {
    if (text == "auto") return default_k(world.train);
    try {
        size_t pos = 0;
        int k = std::stoi(text, &pos);
        if (pos != text.size() || k <= 0) throw std::invalid_argument(text);
        return k;
    } catch (const std::exception&) {
        throw config_error("--k must be a positive integer or 'auto', got '" + text + "'");
    }
}

ordered_json quad_json(const MetricsQuad& q) {
    return {{"rr", q.rr()},           {"rw", q.rw()},
            {"wr", q.wr()},           {"ww", q.ww()},
            {"rr_count", q.rr_count}, {"rw_count", q.rw_count},
            {"wr_count", q.wr_count}, {"ww_count", q.ww_count},
            {"n", q.n()}};
}

ordered_json curve_json(const std::vector<EpochRecord>& curve) {
    ordered_json arr = ordered_json::array();
    for (const EpochRecord& r : curve) {
        arr.push_back({{"epoch", r.epoch},
                       {"term1", r.term1},
                       {"term2", r.term2},
                       {"total", r.total},
                       {"wall_ms", r.wall_ms},
                       {"seed", r.seed}});
    }
    return arr;
}

ordered_json cells_json(const std::vector<ReportRow>& rows) {
    ordered_json arr = ordered_json::array();
    for (const ReportRow& r : rows) {
        arr.push_back({{"run_id", r.run_id},
                       {"dataset", r.dataset},
                       {"ablation", to_string(r.ablation)},
                       {"metrics", quad_json(r.quad)},
                       {"seed", r.seed}});
    }
    return arr;
}

void write_run_report(const RunContext& ctx, const std::vector<ReportRow>& rows,
                      const std::vector<EpochRecord>* curve,
                      const std::vector<std::pair<int, MetricsQuad>>* evals,
                      double wall_seconds, const std::vector<std::string>& artifacts) {
    ordered_json j;
    j["format_version"] = 1;
    j["config"] = ctx.effective;
    if (curve) j["curve"] = curve_json(*curve);
    if (evals && !evals->empty()) {
        ordered_json arr = ordered_json::array();
        for (const auto& [epoch, quad] : *evals) {
            arr.push_back({{"epoch", epoch}, {"metrics", quad_json(quad)}});
        }
        j["evals"] = arr;
    }
    j["cells"] = cells_json(rows);
    j["wall_seconds"] = wall_seconds;
    ordered_json hashes = ordered_json::object();
    for (const std::string& name : artifacts) {
        hashes[name] = hex64(fnv1a64(slurp(ctx.dir / name)));
    }
    j["artifact_hashes"] = hashes;
    spit(ctx.dir / "run_report.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------- generate

struct GenerateOpts {
    std::string preset = "tiny";
    bool split = false;
};

void cmd_generate(CLI::App* cmd, CommonOpts& common, GenerateOpts& g) {
    FileConfig file(cmd, common.config_file);
    file.merge("preset", g.preset);
    file.merge("seed", common.seed);
    file.merge("split", g.split);
    file.merge("out", common.out);
    WorldSpec spec = preset_spec(g.preset);
    spec.seed = common.seed;
    file.merge("n_categories", spec.n_categories);
    file.merge("n_rationales", spec.n_rationales);
    file.merge("signature_size", spec.signature_size);
    file.merge("rationales_per_image", spec.rationales_per_image);
    file.merge("num_patches", spec.num_patches);
    file.merge("d_in", spec.d_in);
    file.merge("evidence_strength", spec.evidence_strength);
    file.merge("noise_sigma", spec.noise_sigma);
    file.merge("distractor_rate", spec.distractor_rate);
    file.merge("train_per_category", spec.train_per_category);
    file.merge("test_per_category", spec.test_per_category);
    file.finish();
    spec.validate();
    const bool do_split = g.split || g.preset == "zeroshot";

    ordered_json ej;
    ej["command"] = "generate";
    ej["preset"] = g.preset;
    ej["split"] = do_split;
    ej["seed"] = common.seed;
    ej["spec"] = {{"n_categories", spec.n_categories},
                  {"n_rationales", spec.n_rationales},
                  {"signature_size", spec.signature_size},
                  {"rationales_per_image", spec.rationales_per_image},
                  {"num_patches", spec.num_patches},
                  {"d_in", spec.d_in},
                  {"evidence_strength", spec.evidence_strength},
                  {"noise_sigma", spec.noise_sigma},
                  {"distractor_rate", spec.distractor_rate},
                  {"train_per_category", spec.train_per_category},
                  {"test_per_category", spec.test_per_category},
                  {"seed", spec.seed}};
    RunContext ctx = open_run("generate", common, std::move(ej));

    if (do_split) {
        auto [a, b] = split_zero_shot(spec);
        save_world(a, (ctx.dir / "A").string());
        save_world(b, (ctx.dir / "B").string());
        std::cout << "dataset A " << (ctx.dir / "A").string() << " hash " << hex64(world_hash(a))
                  << "\n";
        std::cout << "dataset B " << (ctx.dir / "B").string() << " hash " << hex64(world_hash(b))
                  << "\n";
    } else {
        World w = generate_world(spec);
        save_world(w, ctx.dir.string());
        std::cout << "dataset " << ctx.dir.string() << " hash " << hex64(world_hash(w)) << "\n";
    }
}

// ------------------------------------------------------------------- train

struct TrainCmdOpts {
    std::string dataset;
    std::string resume;
    bool keep_checkpoints = false;
};

EpochCallback checkpoint_writer(const fs::path& dir, const TrainConfig& cfg,
                                const World& world, bool keep) {
    return [&dir, &cfg, &world, keep](const DualEncoderParams& p, const OptimizerState& opt,
                                      const Rng& rng, int epoch) {
        Checkpoint ckpt{epoch, cfg.ablation, world.vocabulary.to_json(), p, opt,
                        rng.serialize()};
        save_checkpoint(ckpt, (dir / "checkpoint.json").string());
        if (keep) {
            save_checkpoint(ckpt,
                            (dir / ("checkpoint_epoch" + std::to_string(epoch) + ".json"))
                                .string());
        }
    };
}

void cmd_train(CLI::App* cmd, CommonOpts& common, EncoderOpts& e, TrainOpts& t,
               TrainCmdOpts& o) {
    FileConfig file(cmd, common.config_file);
    file.merge("dataset", o.dataset);
    file.merge("resume", o.resume);
    file.merge("keep_checkpoints", o.keep_checkpoints);
    file.merge("seed", common.seed);
    file.merge("out", common.out);
    merge_encoder(file, e);
    merge_train(file, t, true);
    file.finish();
    if (o.dataset.empty()) throw config_error("train: --dataset is required");

    World world = load_world(o.dataset);
    EncoderConfig enc = encoder_config_for(world, e);
    TrainConfig cfg = train_config_for(t, e, common.seed);

    ordered_json ej;
    ej["command"] = "train";
    ej["dataset"] = o.dataset;
    ej["seed"] = common.seed;
    ej["resume"] = o.resume;
    ej["keep_checkpoints"] = o.keep_checkpoints;
    ej["encoder"] = encoder_json(e);
    ej["train"] = train_json(t);
    RunContext ctx = open_run("train", common, std::move(ej));

    DualEncoderParams params;
    TrainStart start;
    if (!o.resume.empty()) {
        Checkpoint ckpt = load_checkpoint(o.resume);
        require_same_config(ckpt.params.config, enc);
        require_same_vocabulary(ckpt, world.vocabulary);
        if (ckpt.ablation != cfg.ablation) {
            throw config_error("checkpoint was trained for " +
                               std::string(to_string(ckpt.ablation)) +
                               ", not " + to_string(cfg.ablation));
        }
        if (ckpt.epoch >= cfg.epochs) {
            throw config_error("checkpoint already covers " + std::to_string(ckpt.epoch) +
                               " epochs; raise --epochs past it to resume");
        }
        params = std::move(ckpt.params);
        start = train_start_from(ckpt);
    } else {
        // One stream drives initialization and the epoch shuffles, so the
        // whole run is a function of (config, seed).
        Rng rng(cfg.seed);
        params = DualEncoderParams::init(enc, rng);
        start = TrainStart{0, {}, rng.serialize()};
    }

    std::ofstream log(ctx.dir / "train_log.ndjson", std::ios::binary | std::ios::trunc);
    if (!log) throw io_error("cannot write '" + (ctx.dir / "train_log.ndjson").string() + "'");
    auto t0 = std::chrono::steady_clock::now();
    TrainResult result = train(params, world, cfg, &log,
                               checkpoint_writer(ctx.dir, cfg, world, o.keep_checkpoints),
                               start);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.close();

    std::vector<ReportRow> rows;
    for (const auto& [epoch, quad] : result.evals) {
        rows.push_back({ctx.run_id + "@" + std::to_string(epoch), dataset_label(o.dataset),
                        cfg.ablation, quad, cfg.seed});
    }
    write_run_report(ctx, rows, &result.curve, &result.evals, wall,
                     {"effective_config.json", "train_log.ndjson", "checkpoint.json"});

    const EpochRecord& last = result.curve.empty() ? EpochRecord{} : result.curve.back();
    std::cout << "run " << ctx.run_id << ": epochs " << start.epoch + 1 << ".." << cfg.epochs
              << ", final loss " << last.total << "\n";
    std::cout << "checkpoint " << (ctx.dir / "checkpoint.json").string() << "\n";
}

// -------------------------------------------------------------------- eval

struct EvalOpts {
    std::string checkpoint;
    std::string dataset;
    std::string k = "5";
    std::string split = "test";
    std::string ablation;  // empty: use the checkpoint's
};

void cmd_eval(CLI::App* cmd, CommonOpts& common, EvalOpts& o) {
    FileConfig file(cmd, common.config_file);
    file.merge("checkpoint", o.checkpoint);
    file.merge("dataset", o.dataset);
    file.merge("k", o.k);
    file.merge("split", o.split);
    file.merge("ablation", o.ablation);
    file.merge("seed", common.seed);
    file.merge("out", common.out);
    file.finish();
    if (o.checkpoint.empty()) throw config_error("eval: --checkpoint is required");
    if (o.dataset.empty()) throw config_error("eval: --dataset is required");
    if (o.split != "test" && o.split != "train") {
        throw config_error("eval: --split must be test or train, got '" + o.split + "'");
    }

    World world = load_world(o.dataset);
    Checkpoint ckpt = load_checkpoint(o.checkpoint);
    require_same_vocabulary(ckpt, world.vocabulary);
    if (ckpt.params.config.num_patches != world.spec.num_patches ||
        ckpt.params.config.d_in != world.spec.d_in) {
        throw config_error("checkpoint encoder reads " +
                           std::to_string(ckpt.params.config.num_patches) +
                           " patches of dim " + std::to_string(ckpt.params.config.d_in) +
                           "; dataset provides " + std::to_string(world.spec.num_patches) +
                           " of dim " + std::to_string(world.spec.d_in));
    }
    Ablation ablation =
        o.ablation.empty() ? ckpt.ablation : ablation_from_string(o.ablation);
    const int k = parse_k(o.k, world);
    if (o.split == "train") world.test = world.train;

    ordered_json ej;
    ej["command"] = "eval";
    ej["checkpoint"] = o.checkpoint;
    ej["dataset"] = o.dataset;
    ej["k"] = o.k;
    ej["split"] = o.split;
    ej["ablation"] = to_string(ablation);
    ej["seed"] = common.seed;
    RunContext ctx = open_run("eval", common, std::move(ej));

    auto t0 = std::chrono::steady_clock::now();
    MetricsQuad quad = evaluate_world(ckpt.params, world, ablation, k);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::vector<ReportRow> rows{
        {ctx.run_id, dataset_label(o.dataset), ablation, quad, common.seed}};
    spit(ctx.dir / "report.csv", report_csv(rows));
    spit(ctx.dir / "report.txt", report_table(rows));
    write_run_report(ctx, rows, nullptr, nullptr, wall,
                     {"effective_config.json", "report.csv", "report.txt"});
    std::cout << report_table(rows);
}

// ------------------------------------------------------------------ ablate

struct AblateOpts {
    std::string dataset;
    std::string k = "5";
};

void cmd_ablate(CLI::App* cmd, CommonOpts& common, EncoderOpts& e, TrainOpts& t,
                AblateOpts& o) {
    FileConfig file(cmd, common.config_file);
    file.merge("dataset", o.dataset);
    file.merge("k", o.k);
    file.merge("seed", common.seed);
    file.merge("out", common.out);
    merge_encoder(file, e);
    merge_train(file, t, false);
    file.finish();
    if (o.dataset.empty()) throw config_error("ablate: --dataset is required");

    World world = load_world(o.dataset);
    EncoderConfig enc = encoder_config_for(world, e);
    const int k = parse_k(o.k, world);

    ordered_json ej;
    ej["command"] = "ablate";
    ej["dataset"] = o.dataset;
    ej["k"] = o.k;
    ej["seed"] = common.seed;
    ej["encoder"] = encoder_json(e);
    ordered_json tj = train_json(t);
    tj.erase("ablation");  // the matrix spans all of them
    ej["train"] = tj;
    RunContext ctx = open_run("ablate", common, std::move(ej));

    auto t0 = std::chrono::steady_clock::now();
    std::vector<ReportRow> rows;
    std::vector<std::string> artifacts{"effective_config.json"};
    for (Ablation ablation : kAllAblations) {
        TrainConfig cfg = train_config_for(t, e, common.seed);
        cfg.ablation = ablation;
        // Every row starts from the same initialization: same seed, same
        // architecture, so the prompt design is the only difference.
        Rng rng(cfg.seed);
        DualEncoderParams params = DualEncoderParams::init(enc, rng);
        TrainStart start{0, {}, rng.serialize()};

        fs::path sub = ctx.dir / to_string(ablation);
        std::error_code ec;
        fs::create_directories(sub, ec);
        if (ec) throw io_error("cannot create directory '" + sub.string() + "'");
        std::ofstream log(sub / "train_log.ndjson", std::ios::binary | std::ios::trunc);
        if (!log) throw io_error("cannot write '" + (sub / "train_log.ndjson").string() + "'");
        TrainResult result =
            train(params, world, cfg, &log, checkpoint_writer(sub, cfg, world, false), start);
        log.close();

        ordered_json audit = ordered_json::array();
        for (const TermAudit& a : result.audit) {
            audit.push_back({{"prompt_kind", a.prompt_kind},
                             {"full_size", a.full_size},
                             {"subsampled", a.subsampled},
                             {"max_subsample", a.max_subsample}});
        }
        spit(sub / "audit.json", audit.dump(2) + "\n");

        rows.push_back({ctx.run_id, dataset_label(o.dataset), ablation,
                        evaluate_world(params, world, ablation, k), cfg.seed});
        std::string name = to_string(ablation);
        artifacts.push_back(name + "/train_log.ndjson");
        artifacts.push_back(name + "/audit.json");
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    spit(ctx.dir / "ablation_report.csv", report_csv(rows));
    spit(ctx.dir / "ablation_report.txt", report_table(rows));
    artifacts.push_back("ablation_report.csv");
    artifacts.push_back("ablation_report.txt");
    write_run_report(ctx, rows, nullptr, nullptr, wall, artifacts);
    std::cout << report_table(rows);
}

// ---------------------------------------------------------------- zeroshot

struct ZeroShotOpts {
    std::string dataset_a;
    std::string dataset_b;
    std::string k = "5";
};

void cmd_zeroshot(CLI::App* cmd, CommonOpts& common, EncoderOpts& e, TrainOpts& t,
                  ZeroShotOpts& o) {
    FileConfig file(cmd, common.config_file);
    file.merge("dataset_a", o.dataset_a);
    file.merge("dataset_b", o.dataset_b);
    file.merge("k", o.k);
    file.merge("seed", common.seed);
    file.merge("out", common.out);
    merge_encoder(file, e);
    merge_train(file, t, true);
    file.finish();
    if (o.dataset_a.empty() || o.dataset_b.empty()) {
        throw config_error("zeroshot: --dataset-a and --dataset-b are required");
    }

    World a = load_world(o.dataset_a);
    World b = load_world(o.dataset_b);
    if (nlohmann::json::parse(a.vocabulary.to_json()) !=
        nlohmann::json::parse(b.vocabulary.to_json())) {
        throw config_error("zeroshot: the two worlds do not share a vocabulary");
    }
    if (a.spec.num_patches != b.spec.num_patches || a.spec.d_in != b.spec.d_in) {
        throw config_error("zeroshot: the two worlds disagree on image geometry");
    }
    EncoderConfig enc = encoder_config_for(a, e);
    TrainConfig cfg = train_config_for(t, e, common.seed);
    const int k = parse_k(o.k, a);

    ordered_json ej;
    ej["command"] = "zeroshot";
    ej["dataset_a"] = o.dataset_a;
    ej["dataset_b"] = o.dataset_b;
    ej["k"] = o.k;
    ej["seed"] = common.seed;
    ej["encoder"] = encoder_json(e);
    ej["train"] = train_json(t);
    RunContext ctx = open_run("zeroshot", common, std::move(ej));

    auto t0 = std::chrono::steady_clock::now();
    Rng rng(cfg.seed);
    DualEncoderParams trained = DualEncoderParams::init(enc, rng);
    TrainStart start{0, {}, rng.serialize()};
    // The baseline shares the trained model's exact initialization.
    DualEncoderParams untrained = trained;

    std::ofstream log(ctx.dir / "train_log.ndjson", std::ios::binary | std::ios::trunc);
    if (!log) throw io_error("cannot write '" + (ctx.dir / "train_log.ndjson").string() + "'");
    train(trained, a, cfg, &log, checkpoint_writer(ctx.dir, cfg, a, false), start);
    log.close();

    const std::string la = dataset_label(o.dataset_a);
    const std::string lb = dataset_label(o.dataset_b);
    std::vector<ReportRow> rows{
        {ctx.run_id, la, cfg.ablation, evaluate_world(trained, a, cfg.ablation, k), cfg.seed},
        {ctx.run_id, lb, cfg.ablation, zero_shot_evaluate(trained, b, cfg.ablation, k),
         cfg.seed},
        {ctx.run_id + "-untrained", la, cfg.ablation,
         evaluate_world(untrained, a, cfg.ablation, k), cfg.seed},
        {ctx.run_id + "-untrained", lb, cfg.ablation,
         zero_shot_evaluate(untrained, b, cfg.ablation, k), cfg.seed}};
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    spit(ctx.dir / "zeroshot_report.csv", report_csv(rows));
    spit(ctx.dir / "zeroshot_report.txt", report_table(rows));
    write_run_report(ctx, rows, nullptr, nullptr, wall,
                     {"effective_config.json", "train_log.ndjson", "zeroshot_report.csv",
                      "zeroshot_report.txt"});
    std::cout << report_table(rows);
}

// --------------------------------------------------------------- gradcheck

struct GradcheckOpts {
    std::string preset = "tiny";
    std::string ablation = "ECOR";
    int examples = 4;
    int probes = 4;
    double eps = 1e-5;
    double tolerance = 1e-3;
};

void cmd_gradcheck(CLI::App* cmd, CommonOpts& common, EncoderOpts& e, GradcheckOpts& o) {
    FileConfig file(cmd, common.config_file);
    file.merge("preset", o.preset);
    file.merge("ablation", o.ablation);
    file.merge("examples", o.examples);
    file.merge("probes", o.probes);
    file.merge("eps", o.eps);
    file.merge("tolerance", o.tolerance);
    file.merge("seed", common.seed);
    file.merge("out", common.out);
    merge_encoder(file, e);
    file.finish();
    if (o.examples <= 0) throw config_error("gradcheck: --examples must be positive");

    WorldSpec spec = preset_spec(o.preset);
    spec.seed = common.seed;
    World world = generate_world(spec);
    if (o.examples < static_cast<int>(world.train.size())) {
        world.train.resize(o.examples);
    }
    EncoderConfig enc_config = encoder_config_for(world, e);
    Ablation ablation = ablation_from_string(o.ablation);

    ordered_json ej;
    ej["command"] = "gradcheck";
    ej["preset"] = o.preset;
    ej["ablation"] = o.ablation;
    ej["examples"] = o.examples;
    ej["probes"] = o.probes;
    ej["eps"] = o.eps;
    ej["tolerance"] = o.tolerance;
    ej["seed"] = common.seed;
    ej["encoder"] = encoder_json(e);
    RunContext ctx = open_run("gradcheck", common, std::move(ej));

    Rng rng(common.seed);
    DualEncoderParams params = DualEncoderParams::init(enc_config, rng);
    auto contexts = build_term_contexts(ablation, world.vocabulary, world.categories,
                                        dataset_stats(world.train).observed_sets, 1.0, 1.0,
                                        enc_config.context_len);
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
    Rng probe_rng(common.seed + 1);
    FdReport report = fd_check(specs, eval, o.eps,
                               o.probes <= 0 ? SIZE_MAX : static_cast<size_t>(o.probes),
                               &probe_rng);

    ordered_json rj;
    rj["format_version"] = 1;
    rj["checked"] = report.checked;
    rj["max_rel_err"] = report.max_rel_err;
    rj["worst_name"] = report.worst_name;
    rj["worst_index"] = report.worst_index;
    rj["worst_analytic"] = report.worst_analytic;
    rj["worst_numeric"] = report.worst_numeric;
    rj["tolerance"] = o.tolerance;
    rj["pass"] = report.max_rel_err <= o.tolerance;
    spit(ctx.dir / "gradcheck_report.json", rj.dump(2) + "\n");

    std::printf("checked %zu coordinates; max relative error %.3e at %s[%zu] "
                "(analytic %.6e, numeric %.6e)\n",
                report.checked, report.max_rel_err, report.worst_name.c_str(),
                report.worst_index, report.worst_analytic, report.worst_numeric);
    if (report.max_rel_err > o.tolerance) {
        char msg[128];
        std::snprintf(msg, sizeof(msg),
                      "gradient check failed: max relative error %.3e exceeds %.3e",
                      report.max_rel_err, o.tolerance);
        throw numeric_error(msg);
    }
    std::cout << "gradient check passed (tolerance " << o.tolerance << ")\n";
}

int run(int argc, char** argv) {
    CLI::App app{"explainable recognition workbench: synthetic worlds, prompt-scored "
                 "joint categories and rationales, ablations and zero-shot transfer"};
    app.require_subcommand(1);

    CommonOpts gen_common;
    GenerateOpts gen;
    CLI::App* cgen = app.add_subcommand("generate", "generate a synthetic world");
    add_common(cgen, gen_common);
    cgen->add_option("--preset", gen.preset, "world preset: tiny|small|large|zeroshot");
    cgen->add_flag("--split", gen.split,
                   "emit a disjoint train/transfer pair (implied by --preset zeroshot)");
    cgen->callback([&] { cmd_generate(cgen, gen_common, gen); });

    CommonOpts train_common;
    EncoderOpts train_enc;
    TrainOpts train_opts;
    TrainCmdOpts train_cmd;
    CLI::App* ctrain = app.add_subcommand("train", "train prompts against a world");
    add_common(ctrain, train_common);
    add_encoder(ctrain, train_enc);
    add_train(ctrain, train_opts, true);
    ctrain->add_option("--dataset", train_cmd.dataset, "world directory");
    ctrain->add_option("--resume", train_cmd.resume, "checkpoint to continue from");
    ctrain->add_flag("--keep-checkpoints", train_cmd.keep_checkpoints,
                     "keep one checkpoint per epoch instead of a rolling one");
    ctrain->callback([&] { cmd_train(ctrain, train_common, train_enc, train_opts, train_cmd); });

    CommonOpts eval_common;
    EvalOpts eval_opts;
    CLI::App* ceval = app.add_subcommand("eval", "evaluate a checkpoint on a world");
    add_common(ceval, eval_common);
    ceval->add_option("--checkpoint", eval_opts.checkpoint, "checkpoint file");
    ceval->add_option("--dataset", eval_opts.dataset, "world directory");
    ceval->add_option("--k", eval_opts.k, "top pairs kept before voting, or 'auto'");
    ceval->add_option("--split", eval_opts.split, "evaluated split: test|train");
    ceval->add_option("--ablation", eval_opts.ablation,
                      "score-table layout (default: the checkpoint's)");
    ceval->callback([&] { cmd_eval(ceval, eval_common, eval_opts); });

    CommonOpts ab_common;
    EncoderOpts ab_enc;
    TrainOpts ab_train;
    AblateOpts ab_opts;
    CLI::App* cab = app.add_subcommand("ablate", "train and evaluate all prompt designs");
    add_common(cab, ab_common);
    add_encoder(cab, ab_enc);
    add_train(cab, ab_train, false);
    cab->add_option("--dataset", ab_opts.dataset, "world directory");
    cab->add_option("--k", ab_opts.k, "top pairs kept before voting, or 'auto'");
    cab->callback([&] { cmd_ablate(cab, ab_common, ab_enc, ab_train, ab_opts); });

    CommonOpts zs_common;
    EncoderOpts zs_enc;
    TrainOpts zs_train;
    ZeroShotOpts zs_opts;
    CLI::App* czs = app.add_subcommand("zeroshot", "train on one world, transfer to another");
    add_common(czs, zs_common);
    add_encoder(czs, zs_enc);
    add_train(czs, zs_train, true);
    czs->add_option("--dataset-a", zs_opts.dataset_a, "training world directory");
    czs->add_option("--dataset-b", zs_opts.dataset_b, "transfer world directory");
    czs->add_option("--k", zs_opts.k, "top pairs kept before voting, or 'auto'");
    czs->callback([&] { cmd_zeroshot(czs, zs_common, zs_enc, zs_train, zs_opts); });

    CommonOpts gc_common;
    EncoderOpts gc_enc;
    gc_enc.d_model = 16;
    gc_enc.embed_dim = 8;
    gc_enc.text_layers = 1;
    gc_enc.image_layers = 1;
    gc_enc.heads = 2;
    gc_enc.ffn = 32;
    gc_enc.prompts = 2;
    GradcheckOpts gc_opts;
    CLI::App* cgc = app.add_subcommand("gradcheck",
                                       "compare analytic gradients of the training loss "
                                       "against finite differences");
    add_common(cgc, gc_common);
    add_encoder(cgc, gc_enc);
    cgc->add_option("--preset", gc_opts.preset, "world preset to probe on");
    cgc->add_option("--ablation", gc_opts.ablation, "loss variant to check");
    cgc->add_option("--examples", gc_opts.examples, "training examples in the probe loss");
    cgc->add_option("--probes", gc_opts.probes, "checked coordinates per array (0 = all)");
    cgc->add_option("--eps", gc_opts.eps, "finite-difference step");
    cgc->add_option("--tolerance", gc_opts.tolerance, "max relative error accepted");
    cgc->callback([&] { cmd_gradcheck(cgc, gc_common, gc_enc, gc_opts); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const error& e) {
        // Remaining library errors (shape, contract, lookup) signal an
        // invalid combination of inputs.
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}
