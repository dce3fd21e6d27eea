// Python bindings for the core operations: world generation, prompt
// rendering, the dual encoder, training, joint-table inference and the
// metric quad. Heavy state (World, DualEncoderParams) stays in C++; Python
// sees plain structs, lists and floats.
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "ecor/ablations.hpp"
#include "ecor/checkpoint.hpp"
#include "ecor/encoder.hpp"
#include "ecor/gradcheck.hpp"
#include "ecor/inference.hpp"
#include "ecor/joint.hpp"
#include "ecor/prompts.hpp"
#include "ecor/report.hpp"
#include "ecor/trainer.hpp"
#include "ecor/world.hpp"

namespace py = pybind11;
using namespace ecor;

namespace {

// Single forward+backward over the given train subset, then central
// differences on every trainable array. Exposed so Python scripts can
// sanity-check custom configurations without writing graph code.
py::dict gradient_check(DualEncoderParams& params, const World& world, Ablation ablation,
                        int examples, double eps, int probes_per_array, uint64_t probe_seed) {
    std::vector<Example> subset = world.train;
    if (examples > 0 && examples < static_cast<int>(subset.size())) {
        subset.resize(examples);
    }
    auto contexts = build_term_contexts(ablation, world.vocabulary, world.categories,
                                        dataset_stats(world.train).observed_sets, 1.0, 1.0,
                                        params.config.context_len);
    auto eval = [&]() {
        Graph g;
        BoundEncoder enc = bind(g, params, TuneScope::All);
        return dataset_loss(enc, subset, contexts).scalar();
    };
    Graph g;
    BoundEncoder enc = bind(g, params, TuneScope::All);
    Tensor loss = dataset_loss(enc, subset, contexts);
    g.backward(loss);

    auto refs = param_refs(params);
    std::vector<FdSpec> specs;
    for (size_t i = 0; i < refs.size(); ++i) {
        specs.push_back({refs[i].name, refs[i].value, enc.ordered[i].grad()});
    }
    Rng probe_rng(probe_seed);
    FdReport fd = fd_check(specs, eval, eps,
                           probes_per_array > 0 ? static_cast<size_t>(probes_per_array)
                                                : SIZE_MAX,
                           &probe_rng);
    py::dict out;
    out["max_rel_err"] = fd.max_rel_err;
    out["worst_name"] = fd.worst_name;
    out["worst_index"] = fd.worst_index;
    out["worst_analytic"] = fd.worst_analytic;
    out["worst_numeric"] = fd.worst_numeric;
    out["checked"] = fd.checked;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Explainable recognition core: worlds, prompts, dual encoder, "
              "joint-table inference and training.";

    py::register_exception<config_error>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<numeric_error>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<io_error>(m, "IOError", PyExc_OSError);

    // ------------------------------------------------------------- enums
    py::enum_<Ablation>(m, "Ablation")
        .value("ECOR", Ablation::ECOR)
        .value("AB1", Ablation::AB1)
        .value("AB2", Ablation::AB2)
        .value("AB3", Ablation::AB3)
        .value("AB4", Ablation::AB4)
        .value("AB5", Ablation::AB5)
        .value("AB6", Ablation::AB6);
    py::enum_<PromptMode>(m, "PromptMode")
        .value("SHALLOW", PromptMode::Shallow)
        .value("DEEP", PromptMode::Deep);
    py::enum_<TuneScope>(m, "TuneScope")
        .value("PROMPTS_ONLY", TuneScope::PromptsOnly)
        .value("PROMPTS_AND_PROJECTIONS", TuneScope::PromptsAndProjections)
        .value("ALL", TuneScope::All);
    py::enum_<PromptKind>(m, "PromptKind")
        .value("R", PromptKind::R)
        .value("C_GIVEN_R", PromptKind::CGivenR)
        .value("C_ONLY", PromptKind::COnly)
        .value("R_BECAUSE_C", PromptKind::RBecauseC)
        .value("R_GIVEN_C", PromptKind::RGivenC);
    py::enum_<ConditionalNorm>(m, "ConditionalNorm")
        .value("PER_RATIONALE_ROW", ConditionalNorm::PerRationaleRow)
        .value("CROSS_PRODUCT", ConditionalNorm::CrossProduct);

    // ------------------------------------------------------------- worlds
    py::class_<WorldSpec>(m, "WorldSpec")
        .def(py::init<>())
        .def_readwrite("n_categories", &WorldSpec::n_categories)
        .def_readwrite("n_rationales", &WorldSpec::n_rationales)
        .def_readwrite("signature_size", &WorldSpec::signature_size)
        .def_readwrite("rationales_per_image", &WorldSpec::rationales_per_image)
        .def_readwrite("num_patches", &WorldSpec::num_patches)
        .def_readwrite("d_in", &WorldSpec::d_in)
        .def_readwrite("evidence_strength", &WorldSpec::evidence_strength)
        .def_readwrite("noise_sigma", &WorldSpec::noise_sigma)
        .def_readwrite("distractor_rate", &WorldSpec::distractor_rate)
        .def_readwrite("train_per_category", &WorldSpec::train_per_category)
        .def_readwrite("test_per_category", &WorldSpec::test_per_category)
        .def_readwrite("seed", &WorldSpec::seed)
        .def("validate", &WorldSpec::validate);

    py::class_<Example>(m, "Example")
        .def_readonly("patches", &Example::patches)
        .def_readonly("category", &Example::category)
        .def_readonly("rationales", &Example::rationales);

    py::class_<Vocabulary>(m, "Vocabulary")
        .def(py::init<std::vector<std::string>, std::vector<std::string>>(),
             py::arg("category_names"), py::arg("rationale_names"))
        .def("vocab_size", &Vocabulary::vocab_size)
        .def("num_categories", &Vocabulary::num_categories)
        .def("num_rationales", &Vocabulary::num_rationales)
        .def("category_names", &Vocabulary::category_names)
        .def("rationale_names", &Vocabulary::rationale_names)
        .def("category_name", &Vocabulary::category_name)
        .def("rationale_name", &Vocabulary::rationale_name)
        .def("tokenize",
             [](const Vocabulary& v, const std::string& text, int context_len) {
                 return v.tokenize(text, context_len);
             },
             py::arg("text"), py::arg("context_len") = kDefaultContextLen)
        .def("detokenize", &Vocabulary::detokenize)
        .def("to_json", &Vocabulary::to_json)
        .def_static("from_json", &Vocabulary::from_json);

    py::class_<World>(m, "World")
        .def_readonly("spec", &World::spec)
        .def_readonly("vocabulary", &World::vocabulary)
        .def_readonly("categories", &World::categories)
        .def_readonly("signatures", &World::signatures)
        .def_readonly("train", &World::train)
        .def_readonly("test", &World::test);

    m.def("preset_spec", &preset_spec, py::arg("name"),
          "Named benchmark specs: tiny, small, large, zeroshot.");
    m.def("generate_world", &generate_world, py::arg("spec"));
    m.def("split_zero_shot", &split_zero_shot, py::arg("spec"),
          "Disjoint category split (train world, transfer world) over one "
          "shared rationale vocabulary.");
    m.def("save_world", &save_world, py::arg("world"), py::arg("dir"));
    m.def("load_world", &load_world, py::arg("dir"));
    m.def("world_hash", &world_hash, py::arg("world"));
    m.def("observed_rationale_sets", &observed_rationale_sets, py::arg("world"));

    // ------------------------------------------------------------ prompts
    py::class_<RenderedPrompt>(m, "RenderedPrompt")
        .def_readonly("kind", &RenderedPrompt::kind)
        .def_readonly("category", &RenderedPrompt::category)
        .def_readonly("rationales", &RenderedPrompt::rationales)
        .def_readonly("text", &RenderedPrompt::text)
        .def_readonly("tokens", &RenderedPrompt::tokens)
        .def_readonly("truncated", &RenderedPrompt::truncated);

    m.def("render_prompt_R", &render_prompt_R, py::arg("vocab"), py::arg("rationales"),
          py::arg("context_len") = kDefaultContextLen);
    m.def("render_prompt_c_given_R", &render_prompt_c_given_R, py::arg("vocab"),
          py::arg("category"), py::arg("rationales"),
          py::arg("context_len") = kDefaultContextLen);

    // ------------------------------------------------------------ encoder
    py::class_<EncoderConfig>(m, "EncoderConfig")
        .def(py::init<>())
        .def_readwrite("vocab_size", &EncoderConfig::vocab_size)
        .def_readwrite("context_len", &EncoderConfig::context_len)
        .def_readwrite("d_model", &EncoderConfig::d_model)
        .def_readwrite("d", &EncoderConfig::d)
        .def_readwrite("n_text", &EncoderConfig::n_text)
        .def_readwrite("n_img", &EncoderConfig::n_img)
        .def_readwrite("n_heads", &EncoderConfig::n_heads)
        .def_readwrite("d_ff", &EncoderConfig::d_ff)
        .def_readwrite("num_patches", &EncoderConfig::num_patches)
        .def_readwrite("d_in", &EncoderConfig::d_in)
        .def_readwrite("num_prompts", &EncoderConfig::num_prompts)
        .def_readwrite("mode", &EncoderConfig::mode)
        .def("validate", &EncoderConfig::validate);

    py::class_<DualEncoderParams>(m, "DualEncoderParams")
        .def_property_readonly("config",
                               [](const DualEncoderParams& p) { return p.config; })
        .def("prompt_param_count", &DualEncoderParams::prompt_param_count)
        .def("param_shapes", [](DualEncoderParams& p) {
            py::dict shapes;
            for (const auto& ref : param_refs(p)) {
                shapes[py::str(ref.name)] = py::make_tuple(ref.rows, ref.cols);
            }
            return shapes;
        });

    m.def("init_params",
          [](const EncoderConfig& config, uint64_t seed) {
              Rng rng(seed);
              return DualEncoderParams::init(config, rng);
          },
          py::arg("config"), py::arg("seed") = 0);
    m.def("encoder_config_for",
          [](const World& world) {
              EncoderConfig config;
              config.vocab_size = world.vocabulary.vocab_size();
              config.num_patches = world.spec.num_patches;
              config.d_in = world.spec.d_in;
              return config;
          },
          py::arg("world"),
          "Stock architecture sized to a world's vocabulary and patch grid.");

    // ----------------------------------------------------------- training
    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("optimizer", &TrainConfig::optimizer)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("mode", &TrainConfig::mode)
        .def_readwrite("num_prompts", &TrainConfig::num_prompts)
        .def_readwrite("scope", &TrainConfig::scope)
        .def_readwrite("w1", &TrainConfig::w1)
        .def_readwrite("w2", &TrainConfig::w2)
        .def_readwrite("ablation", &TrainConfig::ablation)
        .def_readwrite("eval_every", &TrainConfig::eval_every)
        .def("validate", &TrainConfig::validate);

    py::class_<EpochRecord>(m, "EpochRecord")
        .def_readonly("epoch", &EpochRecord::epoch)
        .def_readonly("term1", &EpochRecord::term1)
        .def_readonly("term2", &EpochRecord::term2)
        .def_readonly("total", &EpochRecord::total)
        .def_readonly("wall_ms", &EpochRecord::wall_ms)
        .def_readonly("seed", &EpochRecord::seed);

    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("curve", &TrainResult::curve)
        .def_readonly("evals", &TrainResult::evals);

    m.def("train",
          [](DualEncoderParams& params, const World& world, const TrainConfig& config) {
              Rng rng(config.seed);
              TrainStart start{0, {}, rng.serialize()};
              return train(params, world, config, nullptr, {}, start);
          },
          py::arg("params"), py::arg("world"), py::arg("config"),
          "Fresh minibatch training run; params must come from init_params with "
          "the same seed for the run to be a pure function of (config, seed).");

    // ---------------------------------------------------------- inference
    py::class_<JointTable>(m, "JointTable")
        .def_readonly("image_id", &JointTable::image_id)
        .def_readonly("rationale_sets", &JointTable::rationale_sets)
        .def_readonly("categories", &JointTable::categories)
        .def_readonly("p_r", &JointTable::p_r)
        .def_readonly("p_c_given_r", &JointTable::p_c_given_r)
        .def_readonly("joint", &JointTable::joint)
        .def_readonly("norm", &JointTable::norm)
        .def("num_sets", &JointTable::num_sets)
        .def("num_categories", &JointTable::num_categories)
        .def("mass", &JointTable::mass)
        .def("csv", [](const JointTable& t) { return joint_table_csv(t); });

    py::class_<RankedPair>(m, "RankedPair")
        .def_readonly("category", &RankedPair::category)
        .def_readonly("set_index", &RankedPair::set_index)
        .def_readonly("rationale_set", &RankedPair::rationale_set)
        .def_readonly("joint", &RankedPair::joint);

    py::class_<Prediction>(m, "Prediction")
        .def_readonly("image_id", &Prediction::image_id)
        .def_readonly("ranked", &Prediction::ranked)
        .def_readonly("vote_counts", &Prediction::vote_counts)
        .def_readonly("voted_category", &Prediction::voted_category)
        .def_readonly("predicted_set", &Prediction::predicted_set);

    py::class_<MetricsQuad>(m, "MetricsQuad")
        .def_readonly("rr_count", &MetricsQuad::rr_count)
        .def_readonly("rw_count", &MetricsQuad::rw_count)
        .def_readonly("wr_count", &MetricsQuad::wr_count)
        .def_readonly("ww_count", &MetricsQuad::ww_count)
        .def("n", &MetricsQuad::n)
        .def("rr", &MetricsQuad::rr)
        .def("rw", &MetricsQuad::rw)
        .def("wr", &MetricsQuad::wr)
        .def("ww", &MetricsQuad::ww)
        .def("__repr__", [](const MetricsQuad& q) {
            std::ostringstream os;
            os << "MetricsQuad(rr=" << q.rr_count << ", rw=" << q.rw_count
               << ", wr=" << q.wr_count << ", ww=" << q.ww_count << ")";
            return os.str();
        });

    m.def("default_k", &default_k, py::arg("examples"),
          "Mean rationale count per example, rounded, floored at 1.");
    m.def("predict", &predict, py::arg("table"), py::arg("top_k"));
    m.def("evaluate", &evaluate, py::arg("predictions"), py::arg("gold"));
    m.def("score_image",
          [](DualEncoderParams& params, const World& world,
             const std::vector<double>& patches, Ablation ablation, int image_id,
             ConditionalNorm norm) {
              EmbeddingScorer scorer(params);
              auto sets = observed_rationale_sets(world);
              return build_table(table_kind(ablation), scorer.for_image(patches),
                                 world.vocabulary, world.categories, sets, norm,
                                 params.config.context_len, image_id);
          },
          py::arg("params"), py::arg("world"), py::arg("patches"),
          py::arg("ablation") = Ablation::ECOR, py::arg("image_id") = -1,
          py::arg("norm") = ConditionalNorm::PerRationaleRow,
          "Joint table for one image over the world's categories and its "
          "observed rationale sets.");
    m.def("evaluate_world", &evaluate_world, py::arg("params"), py::arg("world"),
          py::arg("ablation") = Ablation::ECOR, py::arg("top_k") = kHarnessTopK,
          py::arg("norm") = ConditionalNorm::PerRationaleRow,
          "Score and predict every held-out image, tally the metric quad.");
    m.def("zero_shot_evaluate", &zero_shot_evaluate, py::arg("params"),
          py::arg("transfer_world"), py::arg("ablation") = Ablation::ECOR,
          py::arg("top_k") = kHarnessTopK,
          py::arg("norm") = ConditionalNorm::PerRationaleRow);

    // -------------------------------------------------------- persistence
    m.def("save_checkpoint",
          [](const std::string& path, DualEncoderParams& params, const World& world,
             int epoch, Ablation ablation) {
              Checkpoint ckpt;
              ckpt.epoch = epoch;
              ckpt.ablation = ablation;
              ckpt.vocab_json = world.vocabulary.to_json();
              ckpt.params = params;
              save_checkpoint(ckpt, path);
          },
          py::arg("path"), py::arg("params"), py::arg("world"), py::arg("epoch") = 0,
          py::arg("ablation") = Ablation::ECOR);
    m.def("load_checkpoint",
          [](const std::string& path) {
              Checkpoint ckpt = load_checkpoint(path);
              return py::make_tuple(ckpt.params, ckpt.epoch, ckpt.ablation);
          },
          py::arg("path"), "Returns (params, epoch, ablation).");

    m.def("gradient_check", &gradient_check, py::arg("params"), py::arg("world"),
          py::arg("ablation") = Ablation::ECOR, py::arg("examples") = 0,
          py::arg("eps") = 1e-5, py::arg("probes_per_array") = 2,
          py::arg("probe_seed") = 1234,
          "Finite-difference probe of the full loss; returns the worst "
          "relative error and where it occurred.");
}
