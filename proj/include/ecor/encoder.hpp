#pragma once

#include <string>
#include <vector>

#include "ecor/prompts.hpp"
#include "ecor/rng.hpp"
#include "ecor/tensor.hpp"

namespace ecor {

// Shallow appends K learnable rows to the patch sequence at the input only;
// deep replaces those K rows with a fresh per-layer table before every block
// after the first.
enum class PromptMode { Shallow, Deep };

// Which parameter groups the optimizer may move.
enum class TuneScope { PromptsOnly, PromptsAndProjections, All };

enum class ParamRole { VisualPrompt, Projection, LogitScale, Backbone };

const char* to_string(PromptMode mode);
const char* to_string(TuneScope scope);
PromptMode prompt_mode_from_string(const std::string& s);
TuneScope tune_scope_from_string(const std::string& s);

struct EncoderConfig {
    int vocab_size = 0;
    int context_len = kDefaultContextLen;
    int d_model = 32;
    int d = 16;  // shared embedding dim
    int n_text = 2;
    int n_img = 2;
    int n_heads = 4;
    int d_ff = 128;
    int num_patches = 16;  // L
    int d_in = 16;
    int num_prompts = 3;  // K
    PromptMode mode = PromptMode::Shallow;

    void validate() const;
    int image_rows() const { return num_patches + num_prompts; }
};

struct BlockParams {
    std::vector<double> ln1_gamma, ln1_beta;
    std::vector<double> wq, bq, wk, bk, wv, bv, wo, bo;
    std::vector<double> ln2_gamma, ln2_beta;
    std::vector<double> w1, b1, w2, b2;
};

struct DualEncoderParams {
    EncoderConfig config;
    std::vector<double> token_embedding;  // [vocab x d_model]
    std::vector<double> text_pos;         // [context_len x d_model]
    std::vector<BlockParams> text_blocks;
    std::vector<double> text_proj;  // [d_model x d]
    std::vector<double> patch_proj;  // [d_in x d_model]
    std::vector<double> image_pos;   // [(L+K) x d_model]
    std::vector<BlockParams> image_blocks;
    std::vector<double> image_proj;  // [d_model x d]
    // One [K x d_model] table in shallow mode, n_img of them in deep mode.
    std::vector<std::vector<double>> visual_prompts;
    std::vector<double> logit_scale;  // [1], log-temperature

    static DualEncoderParams init(const EncoderConfig& config, Rng& rng);
    int64_t prompt_param_count() const;
};

inline constexpr double kLogitScaleInit = 2.6592600369327783;  // ln(1/0.07)
inline constexpr double kLogitScaleMax = 4.605170185988092;    // ln(100)

struct ParamRef {
    std::string name;
    int64_t rows = 0;
    int64_t cols = 0;
    ParamRole role = ParamRole::Backbone;
    std::vector<double>* value = nullptr;
};

/// All parameter arrays in one fixed order; optimizer state, checkpoints and
/// bound graphs all index by position in this list.
std::vector<ParamRef> param_refs(DualEncoderParams& params);

bool trainable(ParamRole role, TuneScope scope);

struct BoundBlock {
    Tensor ln1_gamma, ln1_beta;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gamma, ln2_beta;
    Tensor w1, b1, w2, b2;
};

struct BoundEncoder {
    const EncoderConfig* config = nullptr;
    Tensor token_embedding, text_pos, text_proj;
    std::vector<BoundBlock> text_blocks;
    Tensor patch_proj, image_pos, image_proj;
    std::vector<BoundBlock> image_blocks;
    std::vector<Tensor> visual_prompts;
    Tensor logit_scale;
    std::vector<Tensor> ordered;  // parallel to param_refs
};

/// Mirrors the parameter arrays onto graph leaves; arrays whose role is
/// trainable under the scope require gradients.
BoundEncoder bind(Graph& g, DualEncoderParams& params, TuneScope scope);

/// Pre-norm residual block: x + attn(ln1(x)), then + mlp(ln2(.)).
Tensor transformer_block(const BoundBlock& block, const Tensor& x, int n_heads);

/// Mean-pooled pre-projection text features [1 x d_model]. Splitting here
/// lets a frozen text tower be cached per token sequence.
Tensor encode_text_pooled(const BoundEncoder& enc, const std::vector<int>& tokens);
Tensor finish_text(const BoundEncoder& enc, const Tensor& pooled);
Tensor encode_text(const BoundEncoder& enc, const RenderedPrompt& prompt);

Tensor encode_image(const BoundEncoder& enc, const std::vector<double>& patches);

/// exp(logit_scale) * cosine(text, image), a 1x1 tensor.
Tensor score(const BoundEncoder& enc, const std::vector<double>& patches,
             const RenderedPrompt& prompt);

}  // namespace ecor
