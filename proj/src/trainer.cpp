#include "ecor/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace ecor {

void TrainConfig::validate() const {
    if (epochs <= 0) throw config_error("train config: epochs must be positive");
    if (batch_size <= 0) throw config_error("train config: batch size must be positive");
    if (lr < 0.0 || !std::isfinite(lr)) {
        throw config_error("train config: learning rate must be finite and >= 0");
    }
    if (warmup_steps < 0) throw config_error("train config: warmup steps must be >= 0");
    if (lr_decay != "none" && lr_decay != "cosine") {
        throw config_error("train config: lr decay must be none or cosine, got '" +
                           lr_decay + "'");
    }
    if (optimizer != "adam" && optimizer != "sgd") {
        throw config_error("train config: optimizer must be adam or sgd, got '" + optimizer +
                           "'");
    }
    if (num_prompts < 0) throw config_error("train config: prompt count must be >= 0");
    if (!std::isfinite(w1) || !std::isfinite(w2)) {
        throw config_error("train config: loss weights must be finite");
    }
    if (eval_every < 0) throw config_error("train config: eval_every must be >= 0");
}

std::vector<TermContext> build_term_contexts(Ablation ablation, const Vocabulary& vocab,
                                             const std::vector<int>& categories,
                                             const std::vector<std::vector<int>>& observed_sets,
                                             double w1, double w2, int context_len) {
    std::vector<TermContext> out;
    for (const TermSpec& spec : loss_terms(ablation, w1, w2)) {
        out.push_back({spec, enumerate_normalization_set(spec.kind, vocab, categories,
                                                         observed_sets, context_len)});
    }
    return out;
}

void Batch::validate() const {
    const size_t n = patches.size(), p = prompts.size();
    if (n == 0 || p == 0) throw contract_error("batch: no images or no prompts");
    if (image_ids.size() != n) throw contract_error("batch: id/image count mismatch");
    if (y.size() != n * p) throw contract_error("batch: match matrix size mismatch");
    for (size_t i = 0; i < n; ++i) {
        int positives = 0;
        for (size_t j = 0; j < p; ++j) positives += y[i * p + j];
        if (positives == 0) {
            throw contract_error("batch: image " + std::to_string(image_ids[i]) +
                                 " matches no prompt (gold labels missing from the "
                                 "normalization set)");
        }
    }
}

bool prompt_matches(const RenderedPrompt& prompt, const Example& example,
                    const TermSpec& spec) {
    if (spec.match_category &&
        (!prompt.category || *prompt.category != example.category)) {
        return false;
    }
    if (spec.match_set && prompt.rationales != example.rationales) return false;
    return true;
}

Batch make_batch(const std::vector<Example>& dataset, const std::vector<int>& ids,
                 const std::vector<RenderedPrompt>& prompts, const TermSpec& spec) {
    Batch b;
    b.image_ids = ids;
    b.patches.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || static_cast<size_t>(id) >= dataset.size()) {
            throw contract_error("make_batch: image id " + std::to_string(id) +
                                 " outside the dataset");
        }
        b.patches.push_back(&dataset[id].patches);
    }
    b.prompts.reserve(prompts.size());
    for (const auto& p : prompts) b.prompts.push_back(&p);
    b.y.assign(ids.size() * prompts.size(), 0);
    for (size_t i = 0; i < ids.size(); ++i) {
        for (size_t j = 0; j < prompts.size(); ++j) {
            b.y[i * prompts.size() + j] =
                prompt_matches(prompts[j], dataset[ids[i]], spec) ? 1 : 0;
        }
    }
    b.validate();
    return b;
}

Batch subsample_prompts(const Batch& full, int cap, Rng& rng) {
    const int n = full.num_images(), p = full.num_prompts();
    if (p <= cap) return full;

    std::vector<uint8_t> is_positive(p, 0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) is_positive[j] |= full.y[i * p + j];
    }
    std::vector<int> keep, negatives;
    for (int j = 0; j < p; ++j) (is_positive[j] ? keep : negatives).push_back(j);
    const int room = cap - static_cast<int>(keep.size());
    if (room > 0) {
        for (size_t idx : rng.sample_without_replacement(negatives.size(),
                                                         static_cast<size_t>(room))) {
            keep.push_back(negatives[idx]);
        }
    }
    std::sort(keep.begin(), keep.end());

    Batch out;
    out.image_ids = full.image_ids;
    out.patches = full.patches;
    out.prompts.reserve(keep.size());
    for (int j : keep) out.prompts.push_back(full.prompts[j]);
    out.y.resize(static_cast<size_t>(n) * keep.size());
    for (int i = 0; i < n; ++i) {
        for (size_t jj = 0; jj < keep.size(); ++jj) {
            out.y[i * keep.size() + jj] = full.y[i * p + keep[jj]];
        }
    }
    out.validate();
    return out;
}

Tensor TextFeatureCache::pooled(const BoundEncoder& enc, const RenderedPrompt& prompt) {
    if (!enabled_) return encode_text_pooled(enc, prompt.tokens);
    auto it = pooled_.find(prompt.tokens);
    if (it == pooled_.end()) {
        Tensor fresh = encode_text_pooled(enc, prompt.tokens);
        pooled_.emplace(prompt.tokens, fresh.data());
        return fresh;
    }
    Graph* g = enc.logit_scale.graph();
    return g->leaf(1, static_cast<int64_t>(it->second.size()), it->second);
}

Tensor image_matrix(const BoundEncoder& enc,
                    const std::vector<const std::vector<double>*>& patches) {
    if (patches.empty()) throw contract_error("image_matrix: no images");
    std::vector<Tensor> rows;
    rows.reserve(patches.size());
    for (const auto* p : patches) rows.push_back(encode_image(enc, *p));
    return concat_rows(rows);
}

Tensor text_matrix(const BoundEncoder& enc, const std::vector<const RenderedPrompt*>& prompts,
                   TextFeatureCache* cache) {
    if (prompts.empty()) throw contract_error("text_matrix: no prompts");
    std::vector<Tensor> rows;
    rows.reserve(prompts.size());
    for (const auto* p : prompts) {
        Tensor pooled = cache ? cache->pooled(enc, *p) : encode_text_pooled(enc, p->tokens);
        rows.push_back(finish_text(enc, pooled));
    }
    return concat_rows(rows);
}

Tensor clip_logits(const BoundEncoder& enc, const Tensor& images, const Tensor& texts) {
    return mul_scalar(matmul(images, transpose(texts)), exp_elem(enc.logit_scale));
}

Tensor clip_loss(const Tensor& logits, const std::vector<uint8_t>& y) {
    const int64_t n = logits.rows(), p = logits.cols();
    if (y.size() != static_cast<size_t>(n) * p) {
        throw contract_error("clip_loss: match matrix does not fit the logits");
    }
    std::vector<std::vector<double>> targets(n, std::vector<double>(p, 0.0));
    for (int64_t i = 0; i < n; ++i) {
        int positives = 0;
        for (int64_t j = 0; j < p; ++j) positives += y[i * p + j];
        if (positives == 0) {
            throw contract_error("clip_loss: row " + std::to_string(i) +
                                 " has no positive prompt");
        }
        const double w = 1.0 / positives;
        for (int64_t j = 0; j < p; ++j) targets[i][j] = y[i * p + j] ? w : 0.0;
    }
    return cross_entropy_rows(logits, targets);
}

Tensor clip_loss(const BoundEncoder& enc, const Batch& batch, TextFeatureCache* cache) {
    batch.validate();
    Tensor m = image_matrix(enc, batch.patches);
    Tensor t = text_matrix(enc, batch.prompts, cache);
    return clip_loss(clip_logits(enc, m, t), batch.y);
}

namespace {

Tensor terms_loss(const BoundEncoder& enc, const std::vector<Example>& dataset,
                  const std::vector<int>& ids, const std::vector<TermContext>& terms,
                  TextFeatureCache* cache, LossBreakdown* breakdown,
                  const std::vector<const Batch*>* prepared) {
    if (terms.empty()) throw contract_error("batch_loss: no loss terms");
    std::vector<const std::vector<double>*> patches;
    patches.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || static_cast<size_t>(id) >= dataset.size()) {
            throw contract_error("batch_loss: image id outside the dataset");
        }
        patches.push_back(&dataset[id].patches);
    }
    Tensor images = image_matrix(enc, patches);

    if (breakdown) {
        breakdown->terms.assign(terms.size(), 0.0);
        breakdown->total = 0.0;
    }
    Tensor total;
    for (size_t k = 0; k < terms.size(); ++k) {
        Batch local;
        const Batch* b;
        if (prepared) {
            b = (*prepared)[k];
        } else {
            local = make_batch(dataset, ids, terms[k].prompts, terms[k].spec);
            b = &local;
        }
        Tensor texts = text_matrix(enc, b->prompts, cache);
        Tensor term = clip_loss(clip_logits(enc, images, texts), b->y);
        if (breakdown) breakdown->terms[k] = term.scalar();
        Tensor weighted = scale(term, terms[k].spec.weight);
        total = k == 0 ? weighted : add(total, weighted);
    }
    if (breakdown) breakdown->total = total.scalar();
    return total;
}

}  // namespace

Tensor batch_loss(const BoundEncoder& enc, const std::vector<Example>& dataset,
                  const std::vector<int>& ids, const std::vector<TermContext>& terms,
                  TextFeatureCache* cache, LossBreakdown* breakdown) {
    return terms_loss(enc, dataset, ids, terms, cache, breakdown, nullptr);
}

Tensor dataset_loss(const BoundEncoder& enc, const std::vector<Example>& dataset,
                    const std::vector<TermContext>& terms, TextFeatureCache* cache,
                    LossBreakdown* breakdown) {
    std::vector<int> ids(dataset.size());
    std::iota(ids.begin(), ids.end(), 0);
    return terms_loss(enc, dataset, ids, terms, cache, breakdown, nullptr);
}

std::string to_ndjson(const EpochRecord& r) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["term1"] = r.term1;
    j["term2"] = r.term2;
    j["total"] = r.total;
    j["wall_ms"] = r.wall_ms;
    j["seed"] = r.seed;
    return j.dump();
}

namespace {

void apply_update(std::vector<ParamRef>& refs, const std::vector<std::vector<double>>& grads,
                  const TrainConfig& config, OptimizerState& opt, TuneScope scope,
                  int64_t total_steps) {
    const bool adam = config.optimizer == "adam";
    ++opt.t;
    double lr = config.lr;
    if (config.warmup_steps > 0 && opt.t < config.warmup_steps) {
        lr *= static_cast<double>(opt.t) / config.warmup_steps;
    } else if (config.lr_decay == "cosine") {
        const int64_t done = opt.t - 1 - config.warmup_steps;
        const int64_t span = total_steps - 1 - config.warmup_steps;
        const double p = span > 0 ? std::clamp(static_cast<double>(done) / span, 0.0, 1.0)
                                  : 0.0;
        lr *= 0.5 * (1.0 + std::cos(3.14159265358979323846 * p));
    }
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (size_t a = 0; a < refs.size(); ++a) {
        if (!trainable(refs[a].role, scope)) continue;
        auto& p = *refs[a].value;
        const auto& g = grads[a];
        if (!adam) {
            for (size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
            continue;
        }
        auto& m = opt.m[a];
        auto& v = opt.v[a];
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(opt.t));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(opt.t));
        for (size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
}

void check_finite(const std::vector<ParamRef>& refs, TuneScope scope, int epoch) {
    for (const auto& r : refs) {
        if (!trainable(r.role, scope)) continue;
        for (double x : *r.value) {
            if (!std::isfinite(x)) {
                throw numeric_error("epoch " + std::to_string(epoch) +
                                    ": parameter '" + r.name + "' became non-finite");
            }
        }
    }
}

std::string ids_to_string(const std::vector<int>& ids) {
    std::ostringstream os;
    for (size_t i = 0; i < ids.size(); ++i) os << (i ? " " : "") << ids[i];
    return os.str();
}

}  // namespace

TrainResult train(DualEncoderParams& params, const World& world, const TrainConfig& config,
                  std::ostream* log, const EpochCallback& per_epoch,
                  const TrainStart& start) {
    config.validate();
    if (params.config.mode != config.mode || params.config.num_prompts != config.num_prompts) {
        throw config_error("train: parameter prompt mode/count disagrees with the config");
    }
    if (world.train.empty()) throw contract_error("train: world has no training examples");

    const auto observed = dataset_stats(world.train).observed_sets;
    auto contexts = build_term_contexts(config.ablation, world.vocabulary, world.categories,
                                        observed, config.w1, config.w2,
                                        params.config.context_len);

    TrainResult result;
    for (const auto& ctx : contexts) {
        result.audit.push_back(
            {to_string(ctx.spec.kind), static_cast<int>(ctx.prompts.size()), false, 0});
    }

    auto refs = param_refs(params);
    OptimizerState opt = start.opt;
    if (opt.m.empty()) {
        opt.m.resize(refs.size());
        opt.v.resize(refs.size());
        for (size_t a = 0; a < refs.size(); ++a) {
            opt.m[a].assign(refs[a].value->size(), 0.0);
            opt.v[a].assign(refs[a].value->size(), 0.0);
        }
    }
    Rng rng(config.seed);
    if (!start.rng_state.empty()) rng.deserialize(start.rng_state);

    TextFeatureCache cache(config.scope != TuneScope::All);
    const int n_train = static_cast<int>(world.train.size());
    const int64_t steps_per_epoch = (n_train + config.batch_size - 1) / config.batch_size;
    const int64_t total_steps = steps_per_epoch * config.epochs;

    for (int epoch = start.epoch + 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        // the epoch order must be a pure function of the rng state so that a
        // resumed run sees the same batches
        std::vector<int> order(n_train);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);

        std::vector<double> term_sums(contexts.size(), 0.0);
        for (int begin = 0; begin < n_train; begin += config.batch_size) {
            const int end = std::min(begin + config.batch_size, n_train);
            std::vector<int> ids(order.begin() + begin, order.begin() + end);

            std::vector<Batch> batches;
            std::vector<const Batch*> prepared;
            batches.reserve(contexts.size());
            for (size_t k = 0; k < contexts.size(); ++k) {
                Batch full = make_batch(world.train, ids, contexts[k].prompts,
                                        contexts[k].spec);
                Batch b = subsample_prompts(full, kMaxPromptsPerBatch, rng);
                if (b.num_prompts() < full.num_prompts()) {
                    result.audit[k].subsampled = true;
                    result.audit[k].max_subsample =
                        std::max(result.audit[k].max_subsample, b.num_prompts());
                }
                batches.push_back(std::move(b));
            }
            for (const auto& b : batches) prepared.push_back(&b);

            Graph g;
            BoundEncoder enc = bind(g, params, config.scope);
            LossBreakdown breakdown;
            Tensor loss;
            try {
                loss = terms_loss(enc, world.train, ids, contexts, &cache, &breakdown,
                                  &prepared);
            } catch (const numeric_error& e) {
                throw numeric_error(std::string(e.what()) + " (epoch " +
                                    std::to_string(epoch) + ", image ids: " +
                                    ids_to_string(ids) + ")");
            }
            if (!std::isfinite(breakdown.total)) {
                throw numeric_error("epoch " + std::to_string(epoch) +
                                    ": non-finite loss on image ids: " + ids_to_string(ids));
            }
            for (size_t k = 0; k < contexts.size(); ++k) {
                term_sums[k] += breakdown.terms[k] * static_cast<double>(ids.size());
            }

            g.backward(loss);
            std::vector<std::vector<double>> grads(refs.size());
            for (size_t a = 0; a < refs.size(); ++a) {
                if (trainable(refs[a].role, config.scope)) grads[a] = enc.ordered[a].grad();
            }
            apply_update(refs, grads, config, opt, config.scope, total_steps);
            if (params.logit_scale[0] > kLogitScaleMax) {
                params.logit_scale[0] = kLogitScaleMax;
            }
            check_finite(refs, config.scope, epoch);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.seed = config.seed;
        rec.term1 = term_sums[0] / n_train;
        rec.term2 = contexts.size() > 1 ? term_sums[1] / n_train : 0.0;
        rec.total = 0.0;
        for (size_t k = 0; k < contexts.size(); ++k) {
            rec.total += contexts[k].spec.weight * term_sums[k] / n_train;
        }
        rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        result.curve.push_back(rec);
        if (log) *log << to_ndjson(rec) << '\n';

        if (config.eval_every > 0 &&
            (epoch % config.eval_every == 0 || epoch == config.epochs)) {
            result.evals.emplace_back(epoch,
                                      evaluate_world(params, world, config.ablation));
        }
        if (per_epoch) per_epoch(params, opt, rng, epoch);
    }
    return result;
}

}  // namespace ecor
