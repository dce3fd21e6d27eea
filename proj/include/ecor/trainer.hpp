#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ecor/ablations.hpp"
#include "ecor/encoder.hpp"
#include "ecor/inference.hpp"
#include "ecor/rng.hpp"
#include "ecor/tensor.hpp"
#include "ecor/world.hpp"

namespace ecor {

// Up to this many prompts a batch keeps the full normalization set; above it
// every positive is kept and negatives are sampled uniformly to the cap.
inline constexpr int kMaxPromptsPerBatch = 512;

struct TrainConfig {
    int epochs = 30;
    int batch_size = 64;
    double lr = 5e-3;  // zero is allowed: the run is then evaluation only
    // Steps of linear lr ramp from 0 to lr; counted by optimizer step, so a
    // resumed run continues the ramp where it stopped.
    int warmup_steps = 0;
    // none | cosine. Cosine anneals the post-warmup lr to zero across the
    // run's total step budget (epochs x batches per epoch).
    std::string lr_decay = "none";
    std::string optimizer = "adam";  // adam | sgd
    uint64_t seed = 0;
    PromptMode mode = PromptMode::Shallow;
    int num_prompts = 3;
    TuneScope scope = TuneScope::PromptsAndProjections;
    double w1 = 1.0;
    double w2 = 1.0;
    Ablation ablation = Ablation::ECOR;
    int eval_every = 0;  // epochs between held-out evaluations, 0 disables

    void validate() const;
};

// One contrastive loss term bound to its full deduplicated prompt set.
struct TermContext {
    TermSpec spec;
    std::vector<RenderedPrompt> prompts;
};

std::vector<TermContext> build_term_contexts(Ablation ablation, const Vocabulary& vocab,
                                             const std::vector<int>& categories,
                                             const std::vector<std::vector<int>>& observed_sets,
                                             double w1 = 1.0, double w2 = 1.0,
                                             int context_len = kDefaultContextLen);

// Minibatch for one loss term: images, candidate prompts and the 0/1 match
// matrix between them. Prompt and patch storage is borrowed from the term
// context and dataset, which must outlive the batch.
struct Batch {
    std::vector<int> image_ids;
    std::vector<const std::vector<double>*> patches;
    std::vector<const RenderedPrompt*> prompts;
    std::vector<uint8_t> y;  // row-major [images x prompts]

    int num_images() const { return static_cast<int>(patches.size()); }
    int num_prompts() const { return static_cast<int>(prompts.size()); }
    void validate() const;
};

bool prompt_matches(const RenderedPrompt& prompt, const Example& example,
                    const TermSpec& spec);

Batch make_batch(const std::vector<Example>& dataset, const std::vector<int>& ids,
                 const std::vector<RenderedPrompt>& prompts, const TermSpec& spec);

/// Keeps all positive columns and a uniform sample of negatives so the batch
/// carries at most `cap` prompts (more when the positives alone exceed it).
Batch subsample_prompts(const Batch& full, int cap, Rng& rng);

/// Pooled pre-projection text features keyed by token sequence. Valid only
/// while the text backbone is frozen, so enable it for non-All scopes.
class TextFeatureCache {
public:
    explicit TextFeatureCache(bool enabled) : enabled_(enabled) {}

    bool enabled() const { return enabled_; }
    size_t size() const { return pooled_.size(); }
    Tensor pooled(const BoundEncoder& enc, const RenderedPrompt& prompt);

private:
    bool enabled_;
    std::map<std::vector<int>, std::vector<double>> pooled_;
};

Tensor image_matrix(const BoundEncoder& enc,
                    const std::vector<const std::vector<double>*>& patches);
Tensor text_matrix(const BoundEncoder& enc, const std::vector<const RenderedPrompt*>& prompts,
                   TextFeatureCache* cache = nullptr);

/// exp(logit_scale) * cosine similarities, [images x prompts].
Tensor clip_logits(const BoundEncoder& enc, const Tensor& images, const Tensor& texts);

/// -(1/N) sum_ij yhat_ij log softmax_j(logits_i), with yhat the row-normalized
/// match matrix. A row with no positive is a contract violation.
Tensor clip_loss(const Tensor& logits, const std::vector<uint8_t>& y);

Tensor clip_loss(const BoundEncoder& enc, const Batch& batch,
                 TextFeatureCache* cache = nullptr);

struct LossBreakdown {
    std::vector<double> terms;  // unweighted per-term values
    double total = 0.0;         // weighted sum
};

/// Weighted multi-term loss over one image set; returns the graph scalar and
/// fills the plain-value breakdown.
Tensor batch_loss(const BoundEncoder& enc, const std::vector<Example>& dataset,
                  const std::vector<int>& ids, const std::vector<TermContext>& terms,
                  TextFeatureCache* cache = nullptr, LossBreakdown* breakdown = nullptr);

/// Full-dataset loss in a single batch, for probes and gradient checks.
Tensor dataset_loss(const BoundEncoder& enc, const std::vector<Example>& dataset,
                    const std::vector<TermContext>& terms,
                    TextFeatureCache* cache = nullptr, LossBreakdown* breakdown = nullptr);

// Adam moments, parallel to param_refs order. t counts optimizer steps.
struct OptimizerState {
    std::vector<std::vector<double>> m, v;
    int64_t t = 0;
};

struct TermAudit {
    std::string prompt_kind;
    int full_size = 0;  // deduplicated normalization-set size
    bool subsampled = false;
    int max_subsample = 0;  // largest per-batch prompt count when subsampled
};

struct EpochRecord {
    int epoch = 0;
    double term1 = 0.0;
    double term2 = 0.0;  // zero for single-term ablations
    double total = 0.0;
    long long wall_ms = 0;
    uint64_t seed = 0;
};

std::string to_ndjson(const EpochRecord& record);

struct TrainResult {
    std::vector<EpochRecord> curve;
    std::vector<TermAudit> audit;
    std::vector<std::pair<int, MetricsQuad>> evals;  // (epoch, held-out quad)
};

/// Everything a checkpoint must capture to resume a run bit-exactly.
using EpochCallback = std::function<void(const DualEncoderParams& params,
                                         const OptimizerState& opt, const Rng& rng,
                                         int epoch)>;

// Resume point; a default-constructed value starts a fresh run.
struct TrainStart {
    int epoch = 0;  // epochs already completed
    OptimizerState opt;
    std::string rng_state;  // empty seeds a new stream from the config
};

/// Minibatch training of the term losses over world.train. Deterministic for
/// a fixed seed; `log` receives one NDJSON record per epoch.
TrainResult train(DualEncoderParams& params, const World& world, const TrainConfig& config,
                  std::ostream* log = nullptr, const EpochCallback& per_epoch = {},
                  const TrainStart& start = {});

}  // namespace ecor
