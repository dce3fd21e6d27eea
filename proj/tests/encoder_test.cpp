#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "ecor/encoder.hpp"
#include "ecor/gradcheck.hpp"
#include "ecor/prompts.hpp"
#include "ecor/rng.hpp"

using namespace ecor;

namespace {

Vocabulary tiny_vocab() { return Vocabulary({"keep", "drum"}, {"fur", "spots", "horn"}); }

EncoderConfig tiny_config(const Vocabulary& v) {
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
    return c;
}

std::vector<double> random_patches(Rng& rng, const EncoderConfig& c) {
    std::vector<double> p(static_cast<size_t>(c.num_patches) * c.d_in);
    for (double& x : p) x = rng.normal(0.0, 1.0);
    return p;
}

double unit_norm_error(const Tensor& t) {
    double sq = 0.0;
    for (double v : t.data()) sq += v * v;
    return std::abs(std::sqrt(sq) - 1.0);
}

}  // namespace

TEST_CASE("both encoders emit unit vectors") {
    Vocabulary v = tiny_vocab();
    EncoderConfig c = tiny_config(v);
    Rng rng(0);
    DualEncoderParams params = DualEncoderParams::init(c, rng);
    Graph g;
    BoundEncoder enc = bind(g, params, TuneScope::All);
    RenderedPrompt prompt = render_prompt_R(v, {0, 2}, c.context_len);
    CHECK(unit_norm_error(encode_text(enc, prompt)) <= 1e-9);
    CHECK(unit_norm_error(encode_image(enc, random_patches(rng, c))) <= 1e-9);
}

TEST_CASE("identical prompts encode identically across graphs") {
    Vocabulary v = tiny_vocab();
    EncoderConfig c = tiny_config(v);
    Rng rng(1);
    DualEncoderParams params = DualEncoderParams::init(c, rng);
    RenderedPrompt prompt = render_prompt_c_given_R(v, 1, {1}, c.context_len);
    auto run = [&]() {
        Graph g;
        BoundEncoder enc = bind(g, params, TuneScope::PromptsOnly);
        return encode_text(enc, prompt).data();
    };
    CHECK(run() == run());
}

TEST_CASE("zeroed blocks with identity projection separate prompts by token") {
    Vocabulary v = tiny_vocab();
    EncoderConfig c = tiny_config(v);
    Rng rng(2);
    DualEncoderParams params = DualEncoderParams::init(c, rng);
    for (BlockParams& b : params.text_blocks) {
        for (auto* w : {&b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.w1, &b.b1,
                        &b.w2, &b.b2}) {
            std::fill(w->begin(), w->end(), 0.0);
        }
    }
    std::fill(params.text_proj.begin(), params.text_proj.end(), 0.0);
    for (int i = 0; i < c.d_model; ++i) params.text_proj[i * c.d + i] = 1.0;

    Graph g;
    BoundEncoder enc = bind(g, params, TuneScope::All);
    Tensor a = encode_text(enc, render_prompt_R(v, {0}, c.context_len));
    Tensor b = encode_text(enc, render_prompt_R(v, {1}, c.context_len));
    double max_diff = 0.0;
    for (int j = 0; j < c.d; ++j) {
        max_diff = std::max(max_diff, std::abs(a.at(0, j) - b.at(0, j)));
    }
    CHECK(max_diff > 1e-6);
}

TEST_CASE("prompt-free image path is identical in shallow and deep modes") {
    Vocabulary v = tiny_vocab();
    EncoderConfig c = tiny_config(v);
    c.num_prompts = 0;
    c.n_img = 2;
    Rng rng(3);
    DualEncoderParams shallow = DualEncoderParams::init(c, rng);
    DualEncoderParams deep = shallow;
    deep.config.mode = PromptMode::Deep;
    deep.visual_prompts.assign(c.n_img, {});

    std::vector<double> patches = random_patches(rng, c);
    Graph g1, g2;
    Tensor a = encode_image(bind(g1, shallow, TuneScope::All), patches);
    Tensor b = encode_image(bind(g2, deep, TuneScope::All), patches);
    CHECK(a.data() == b.data());
}

TEST_CASE("prompt parameter counts match mode") {
    Vocabulary v = tiny_vocab();
    EncoderConfig c = tiny_config(v);
    c.num_prompts = 3;
    Rng rng(4);
    CHECK(DualEncoderParams::init(c, rng).prompt_param_count() == 3 * c.d_model);

    c.mode = PromptMode::Deep;
    c.n_img = 2;
    CHECK(DualEncoderParams::init(c, rng).prompt_param_count() ==
          int64_t{2} * 3 * c.d_model);

    EncoderConfig bad = c;
    bad.n_img = 1;
    CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("score is the scaled cosine of the two embeddings") {
    Vocabulary v = tiny_vocab();
    EncoderConfig c = tiny_config(v);
    Rng rng(5);
    DualEncoderParams params = DualEncoderParams::init(c, rng);
    RenderedPrompt prompt = render_prompt_R(v, {1}, c.context_len);
    std::vector<double> patches = random_patches(rng, c);

    Graph g;
    BoundEncoder enc = bind(g, params, TuneScope::All);
    const double s = score(enc, patches, prompt).scalar();
    Tensor t = encode_text(enc, prompt);
    Tensor i = encode_image(enc, patches);
    double dot = 0.0;
    for (int j = 0; j < c.d; ++j) dot += t.at(0, j) * i.at(0, j);
    CHECK(s == doctest::Approx(std::exp(params.logit_scale[0]) * dot).epsilon(1e-12));
    CHECK(std::abs(dot) <= 1.0 + 1e-12);
}

TEST_CASE("scaled cosine hand cases") {
    Graph g;
    Tensor ls = g.leaf(1, 1, {kLogitScaleInit});
    Tensor t = l2_normalize(g.leaf(1, 2, {3.0, 4.0}));
    CHECK(mul(matmul(t, transpose(t)), exp_elem(ls)).scalar() ==
          doctest::Approx(std::exp(kLogitScaleInit)).epsilon(1e-12));
    Tensor u = g.leaf(1, 2, {0.0, 1.0});
    Tensor w = g.leaf(1, 2, {1.0, 0.0});
    CHECK(mul(matmul(u, transpose(w)), exp_elem(ls)).scalar() == 0.0);
}

TEST_CASE("cosine ignores positive rescaling of pooled features") {
    Vocabulary v = tiny_vocab();
    EncoderConfig c = tiny_config(v);
    Rng rng(6);
    DualEncoderParams params = DualEncoderParams::init(c, rng);
    Graph g;
    BoundEncoder enc = bind(g, params, TuneScope::All);
    Tensor pooled = encode_text_pooled(enc, render_prompt_R(v, {2}, c.context_len).tokens);
    Tensor base = finish_text(enc, pooled);
    Tensor scaled = finish_text(enc, scale(pooled, 3.7));
    for (int j = 0; j < c.d; ++j) {
        CHECK(base.at(0, j) == doctest::Approx(scaled.at(0, j)).epsilon(1e-12));
    }
}

TEST_CASE("score gradient reaches every visual prompt row") {
    Vocabulary v = tiny_vocab();
    EncoderConfig c = tiny_config(v);
    c.num_prompts = 3;
    Rng rng(7);
    DualEncoderParams params = DualEncoderParams::init(c, rng);
    RenderedPrompt prompt = render_prompt_R(v, {1}, c.context_len);
    std::vector<double> patches = random_patches(rng, c);

    Graph g;
    BoundEncoder enc = bind(g, params, TuneScope::PromptsOnly);
    g.backward(score(enc, patches, prompt));
    const auto& grad = enc.visual_prompts[0].grad();
    for (int k = 0; k < c.num_prompts; ++k) {
        double row_max = 0.0;
        for (int j = 0; j < c.d_model; ++j) {
            row_max = std::max(row_max, std::abs(grad[k * c.d_model + j]));
        }
        CHECK(row_max > 0.0);
    }
}

namespace {

void fd_score_all_params(DualEncoderParams& params, const Vocabulary& v,
                         size_t max_probes, uint64_t probe_seed) {
    const EncoderConfig& c = params.config;
    Rng data_rng(11);
    RenderedPrompt prompt = render_prompt_c_given_R(v, 0, {0, 1}, c.context_len);
    std::vector<double> patches = random_patches(data_rng, c);

    std::vector<FdSpec> specs;
    {
        Graph g;
        BoundEncoder enc = bind(g, params, TuneScope::All);
        g.backward(score(enc, patches, prompt));
        auto refs = param_refs(params);
        for (size_t i = 0; i < refs.size(); ++i) {
            specs.push_back({refs[i].name, refs[i].value, enc.ordered[i].grad()});
        }
    }
    auto eval = [&]() {
        Graph g(false);
        BoundEncoder enc = bind(g, params, TuneScope::All);
        return score(enc, patches, prompt).scalar();
    };
    Rng probe_rng(probe_seed);
    FdReport rep = fd_check(specs, eval, 1e-5, max_probes, &probe_rng);
    INFO("worst " << rep.worst_name << "[" << rep.worst_index << "] analytic "
                  << rep.worst_analytic << " numeric " << rep.worst_numeric);
    CHECK(rep.max_rel_err <= 1e-3);
}

}  // namespace

TEST_CASE("finite differences validate the score end to end (shallow)") {
    Vocabulary v = tiny_vocab();
    EncoderConfig c = tiny_config(v);
    Rng rng(8);
    DualEncoderParams params = DualEncoderParams::init(c, rng);
    fd_score_all_params(params, v, SIZE_MAX, 0);
}

TEST_CASE("finite differences validate the score end to end (deep)") {
    Vocabulary v = tiny_vocab();
    EncoderConfig c = tiny_config(v);
    c.mode = PromptMode::Deep;
    c.n_img = 2;
    Rng rng(9);
    DualEncoderParams params = DualEncoderParams::init(c, rng);
    fd_score_all_params(params, v, 48, 1);
}

TEST_CASE("shape and lookup errors") {
    Vocabulary v = tiny_vocab();
    EncoderConfig c = tiny_config(v);
    Rng rng(10);
    DualEncoderParams params = DualEncoderParams::init(c, rng);
    Graph g;
    BoundEncoder enc = bind(g, params, TuneScope::All);

    CHECK_THROWS_AS(encode_image(enc, std::vector<double>(3, 0.0)), shape_error);
    CHECK_THROWS_AS(encode_text_pooled(enc, std::vector<int>(4, 0)), shape_error);
    std::vector<int> bad(c.context_len, 0);
    bad[0] = Vocabulary::kStart;
    bad[1] = c.vocab_size + 5;
    CHECK_THROWS_AS(encode_text_pooled(enc, bad), lookup_error);
}
