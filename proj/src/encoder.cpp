#include "ecor/encoder.hpp"

#include <cmath>

namespace ecor {

const char* to_string(PromptMode mode) {
    return mode == PromptMode::Shallow ? "shallow" : "deep";
}

const char* to_string(TuneScope scope) {
    switch (scope) {
        case TuneScope::PromptsOnly: return "prompts";
        case TuneScope::PromptsAndProjections: return "prompts+projections";
        case TuneScope::All: return "all";
    }
    return "?";
}

PromptMode prompt_mode_from_string(const std::string& s) {
    if (s == "shallow") return PromptMode::Shallow;
    if (s == "deep") return PromptMode::Deep;
    throw config_error("unknown prompt mode '" + s + "' (expected shallow|deep)");
}

TuneScope tune_scope_from_string(const std::string& s) {
    if (s == "prompts") return TuneScope::PromptsOnly;
    if (s == "prompts+projections") return TuneScope::PromptsAndProjections;
    if (s == "all") return TuneScope::All;
    throw config_error("unknown tune scope '" + s +
                       "' (expected prompts|prompts+projections|all)");
}

void EncoderConfig::validate() const {
    if (vocab_size < 3) throw config_error("encoder: vocab_size must cover marker tokens");
    if (context_len < 2) throw config_error("encoder: context_len must be at least 2");
    for (int v : {d_model, d, n_text, n_img, n_heads, d_ff, num_patches, d_in}) {
        if (v <= 0) throw config_error("encoder: dims and depths must be positive");
    }
    if (num_prompts < 0) throw config_error("encoder: num_prompts must be nonnegative");
    if (d_model % n_heads != 0) {
        throw config_error("encoder: d_model must be divisible by n_heads");
    }
    if (mode == PromptMode::Deep && n_img < 2) {
        throw config_error("encoder: deep prompt mode requires at least 2 image blocks");
    }
}

namespace {

std::vector<double> normal_vec(Rng& rng, size_t n, double stddev) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0.0, stddev);
    return v;
}

BlockParams init_block(Rng& rng, int d_model, int d_ff) {
    BlockParams b;
    const size_t dm = static_cast<size_t>(d_model);
    const size_t df = static_cast<size_t>(d_ff);
    const double w_std = 1.0 / std::sqrt(static_cast<double>(d_model));
    b.ln1_gamma.assign(dm, 1.0);
    b.ln1_beta.assign(dm, 0.0);
    b.wq = normal_vec(rng, dm * dm, w_std);
    b.bq.assign(dm, 0.0);
    b.wk = normal_vec(rng, dm * dm, w_std);
    b.bk.assign(dm, 0.0);
    b.wv = normal_vec(rng, dm * dm, w_std);
    b.bv.assign(dm, 0.0);
    b.wo = normal_vec(rng, dm * dm, w_std);
    b.bo.assign(dm, 0.0);
    b.ln2_gamma.assign(dm, 1.0);
    b.ln2_beta.assign(dm, 0.0);
    b.w1 = normal_vec(rng, dm * df, w_std);
    b.b1.assign(df, 0.0);
    b.w2 = normal_vec(rng, df * dm, 1.0 / std::sqrt(static_cast<double>(d_ff)));
    b.b2.assign(dm, 0.0);
    return b;
}

}  // namespace

DualEncoderParams DualEncoderParams::init(const EncoderConfig& config, Rng& rng) {
    config.validate();
    DualEncoderParams p;
    p.config = config;
    const size_t dm = static_cast<size_t>(config.d_model);
    // Kept small relative to the positional table so that untrained prompts
    // sharing a template score near-uniformly under the temperature.
    p.token_embedding = normal_vec(rng, config.vocab_size * dm, 0.01);
    p.text_pos = normal_vec(rng, config.context_len * dm, 0.02);
    for (int l = 0; l < config.n_text; ++l) {
        p.text_blocks.push_back(init_block(rng, config.d_model, config.d_ff));
    }
    p.text_proj = normal_vec(rng, dm * config.d, 1.0 / std::sqrt(static_cast<double>(config.d_model)));
    p.patch_proj = normal_vec(rng, config.d_in * dm, 1.0 / std::sqrt(static_cast<double>(config.d_in)));
    p.image_pos = normal_vec(rng, config.image_rows() * dm, 0.02);
    for (int l = 0; l < config.n_img; ++l) {
        p.image_blocks.push_back(init_block(rng, config.d_model, config.d_ff));
    }
    p.image_proj = normal_vec(rng, dm * config.d, 1.0 / std::sqrt(static_cast<double>(config.d_model)));
    const int tables = config.mode == PromptMode::Deep ? config.n_img : 1;
    for (int t = 0; t < tables; ++t) {
        p.visual_prompts.push_back(normal_vec(rng, config.num_prompts * dm, 0.02));
    }
    p.logit_scale = {kLogitScaleInit};

    const int64_t expect = config.mode == PromptMode::Deep
                               ? int64_t{config.n_img} * config.num_prompts * config.d_model
                               : int64_t{config.num_prompts} * config.d_model;
    if (p.prompt_param_count() != expect) {
        throw contract_error("encoder init: prompt parameter count " +
                             std::to_string(p.prompt_param_count()) + " != expected " +
                             std::to_string(expect));
    }
    return p;
}

int64_t DualEncoderParams::prompt_param_count() const {
    int64_t n = 0;
    for (const auto& t : visual_prompts) n += static_cast<int64_t>(t.size());
    return n;
}

namespace {

void block_refs(std::vector<ParamRef>& out, BlockParams& b, const std::string& prefix,
                int d_model, int d_ff) {
    auto push = [&](const char* name, int64_t r, int64_t c, std::vector<double>* v) {
        out.push_back({prefix + name, r, c, ParamRole::Backbone, v});
    };
    push("ln1_gamma", 1, d_model, &b.ln1_gamma);
    push("ln1_beta", 1, d_model, &b.ln1_beta);
    push("wq", d_model, d_model, &b.wq);
    push("bq", 1, d_model, &b.bq);
    push("wk", d_model, d_model, &b.wk);
    push("bk", 1, d_model, &b.bk);
    push("wv", d_model, d_model, &b.wv);
    push("bv", 1, d_model, &b.bv);
    push("wo", d_model, d_model, &b.wo);
    push("bo", 1, d_model, &b.bo);
    push("ln2_gamma", 1, d_model, &b.ln2_gamma);
    push("ln2_beta", 1, d_model, &b.ln2_beta);
    push("w1", d_model, d_ff, &b.w1);
    push("b1", 1, d_ff, &b.b1);
    push("w2", d_ff, d_model, &b.w2);
    push("b2", 1, d_model, &b.b2);
}

}  // namespace

std::vector<ParamRef> param_refs(DualEncoderParams& p) {
    const EncoderConfig& c = p.config;
    std::vector<ParamRef> out;
    out.push_back({"token_embedding", c.vocab_size, c.d_model, ParamRole::Backbone,
                   &p.token_embedding});
    out.push_back({"text_pos", c.context_len, c.d_model, ParamRole::Backbone, &p.text_pos});
    for (int l = 0; l < c.n_text; ++l) {
        block_refs(out, p.text_blocks[l], "text_block" + std::to_string(l) + ".", c.d_model,
                   c.d_ff);
    }
    out.push_back({"text_proj", c.d_model, c.d, ParamRole::Projection, &p.text_proj});
    out.push_back({"patch_proj", c.d_in, c.d_model, ParamRole::Projection, &p.patch_proj});
    out.push_back({"image_pos", c.image_rows(), c.d_model, ParamRole::Backbone, &p.image_pos});
    for (int l = 0; l < c.n_img; ++l) {
        block_refs(out, p.image_blocks[l], "image_block" + std::to_string(l) + ".", c.d_model,
                   c.d_ff);
    }
    out.push_back({"image_proj", c.d_model, c.d, ParamRole::Projection, &p.image_proj});
    for (size_t t = 0; t < p.visual_prompts.size(); ++t) {
        out.push_back({"visual_prompts" + std::to_string(t), c.num_prompts, c.d_model,
                       ParamRole::VisualPrompt, &p.visual_prompts[t]});
    }
    out.push_back({"logit_scale", 1, 1, ParamRole::LogitScale, &p.logit_scale});
    return out;
}

bool trainable(ParamRole role, TuneScope scope) {
    switch (scope) {
        case TuneScope::PromptsOnly:
            return role == ParamRole::VisualPrompt;
        case TuneScope::PromptsAndProjections:
            return role != ParamRole::Backbone;
        case TuneScope::All:
            return true;
    }
    return false;
}

BoundEncoder bind(Graph& g, DualEncoderParams& p, TuneScope scope) {
    p.config.validate();
    BoundEncoder b;
    b.config = &p.config;
    for (const ParamRef& ref : param_refs(p)) {
        b.ordered.push_back(g.leaf(ref.rows, ref.cols, *ref.value,
                                   trainable(ref.role, scope)));
    }
    // Structured view over `ordered`; the cursor walk mirrors param_refs.
    size_t cur = 0;
    auto next = [&] { return b.ordered[cur++]; };
    auto next_block = [&] {
        BoundBlock blk;
        blk.ln1_gamma = next();
        blk.ln1_beta = next();
        blk.wq = next();
        blk.bq = next();
        blk.wk = next();
        blk.bk = next();
        blk.wv = next();
        blk.bv = next();
        blk.wo = next();
        blk.bo = next();
        blk.ln2_gamma = next();
        blk.ln2_beta = next();
        blk.w1 = next();
        blk.b1 = next();
        blk.w2 = next();
        blk.b2 = next();
        return blk;
    };
    b.token_embedding = next();
    b.text_pos = next();
    for (int l = 0; l < p.config.n_text; ++l) b.text_blocks.push_back(next_block());
    b.text_proj = next();
    b.patch_proj = next();
    b.image_pos = next();
    for (int l = 0; l < p.config.n_img; ++l) b.image_blocks.push_back(next_block());
    b.image_proj = next();
    for (size_t t = 0; t < p.visual_prompts.size(); ++t) b.visual_prompts.push_back(next());
    b.logit_scale = next();
    if (cur != b.ordered.size()) {
        throw contract_error("bind: parameter cursor mismatch");
    }
    return b;
}

namespace {

Tensor attention_heads(const BoundBlock& blk, const Tensor& x, int n_heads) {
    Tensor q = add_bias(matmul(x, blk.wq), blk.bq);
    Tensor k = add_bias(matmul(x, blk.wk), blk.bk);
    Tensor v = add_bias(matmul(x, blk.wv), blk.bv);
    const int64_t d_model = q.cols();
    const int64_t d_head = d_model / n_heads;
    std::vector<Tensor> heads;
    heads.reserve(n_heads);
    for (int h = 0; h < n_heads; ++h) {
        const int64_t c0 = h * d_head, c1 = (h + 1) * d_head;
        heads.push_back(attention(slice_cols(q, c0, c1), slice_cols(k, c0, c1),
                                  slice_cols(v, c0, c1)));
    }
    return add_bias(matmul(concat_cols(heads), blk.wo), blk.bo);
}

}  // namespace

Tensor transformer_block(const BoundBlock& blk, const Tensor& x, int n_heads) {
    Tensor h = add(x, attention_heads(blk, layer_norm(x, blk.ln1_gamma, blk.ln1_beta), n_heads));
    Tensor m = add_bias(matmul(layer_norm(h, blk.ln2_gamma, blk.ln2_beta), blk.w1), blk.b1);
    return add(h, add_bias(matmul(gelu(m), blk.w2), blk.b2));
}

Tensor encode_text_pooled(const BoundEncoder& enc, const std::vector<int>& tokens) {
    const EncoderConfig& c = *enc.config;
    if (static_cast<int>(tokens.size()) != c.context_len) {
        throw shape_error("encode_text: got " + std::to_string(tokens.size()) +
                          " tokens, context length is " + std::to_string(c.context_len));
    }
    Tensor x = add(embedding(enc.token_embedding, tokens), enc.text_pos);
    for (int l = 0; l < c.n_text; ++l) {
        x = transformer_block(enc.text_blocks[l], x, c.n_heads);
    }
    std::vector<double> mask(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) {
        mask[i] = tokens[i] == Vocabulary::kPad ? 0.0 : 1.0;
    }
    return mean_pool(x, mask);
}

Tensor finish_text(const BoundEncoder& enc, const Tensor& pooled) {
    return l2_normalize(matmul(pooled, enc.text_proj));
}

Tensor encode_text(const BoundEncoder& enc, const RenderedPrompt& prompt) {
    return finish_text(enc, encode_text_pooled(enc, prompt.tokens));
}

Tensor encode_image(const BoundEncoder& enc, const std::vector<double>& patches) {
    const EncoderConfig& c = *enc.config;
    if (static_cast<int>(patches.size()) != c.num_patches * c.d_in) {
        throw shape_error("encode_image: got " + std::to_string(patches.size()) +
                          " values, expected " + std::to_string(c.num_patches * c.d_in) +
                          " for [" + std::to_string(c.num_patches) + "x" +
                          std::to_string(c.d_in) + "] patches");
    }
    Graph& g = *enc.patch_proj.graph();
    Tensor x = matmul(g.leaf(c.num_patches, c.d_in, patches), enc.patch_proj);
    if (c.num_prompts > 0) {
        x = concat_rows({x, enc.visual_prompts[0]});
    }
    x = add(x, enc.image_pos);
    for (int l = 0; l < c.n_img; ++l) {
        // Deep mode feeds a fresh prompt table to every block after the
        // first; the previous block's outputs at those rows are discarded.
        if (c.mode == PromptMode::Deep && l > 0 && c.num_prompts > 0) {
            x = concat_rows({slice_rows(x, 0, c.num_patches), enc.visual_prompts[l]});
        }
        x = transformer_block(enc.image_blocks[l], x, c.n_heads);
    }
    return l2_normalize(matmul(mean_pool(x), enc.image_proj));
}

Tensor score(const BoundEncoder& enc, const std::vector<double>& patches,
             const RenderedPrompt& prompt) {
    Tensor t = encode_text(enc, prompt);
    Tensor i = encode_image(enc, patches);
    return mul(matmul(t, transpose(i)), exp_elem(enc.logit_scale));
}

}  // namespace ecor
