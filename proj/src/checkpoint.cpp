#include "ecor/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ecor/world.hpp"
#include "json.hpp"

namespace ecor {

namespace {

nlohmann::json config_json(const EncoderConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"context_len", c.context_len},
            {"d_model", c.d_model},       {"d", c.d},
            {"n_text", c.n_text},         {"n_img", c.n_img},
            {"n_heads", c.n_heads},       {"d_ff", c.d_ff},
            {"num_patches", c.num_patches},
            {"d_in", c.d_in},
            {"num_prompts", c.num_prompts},
            {"mode", to_string(c.mode)}};
}

EncoderConfig config_from(const nlohmann::json& j) {
    EncoderConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.context_len = j.at("context_len").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d = j.at("d").get<int>();
    c.n_text = j.at("n_text").get<int>();
    c.n_img = j.at("n_img").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.num_patches = j.at("num_patches").get<int>();
    c.d_in = j.at("d_in").get<int>();
    c.num_prompts = j.at("num_prompts").get<int>();
    c.mode = prompt_mode_from_string(j.at("mode").get<std::string>());
    return c;
}

// Body without the trailing hash field; the stored hash covers exactly this.
std::string body_without_hash(const Checkpoint& ckpt) {
    // param_refs takes a mutable reference only to hand out array pointers.
    auto& params = const_cast<DualEncoderParams&>(ckpt.params);
    nlohmann::ordered_json j;
    j["format_version"] = kCheckpointFormatVersion;
    j["epoch"] = ckpt.epoch;
    j["ablation"] = to_string(ckpt.ablation);
    j["config"] = config_json(ckpt.params.config);
    j["vocabulary"] = nlohmann::json::parse(ckpt.vocab_json);
    nlohmann::ordered_json arrays = nlohmann::ordered_json::object();
    for (const ParamRef& ref : param_refs(params)) arrays[ref.name] = *ref.value;
    j["params"] = std::move(arrays);
    j["optimizer"] = {{"t", ckpt.opt.t}, {"m", ckpt.opt.m}, {"v", ckpt.opt.v}};
    j["rng"] = ckpt.rng_state;
    return j.dump();
}

}  // namespace

std::string checkpoint_json(const Checkpoint& ckpt) {
    std::string body = body_without_hash(ckpt);
    std::ostringstream hex;
    hex << std::hex << fnv1a64(body);
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(body);
    j["hash"] = hex.str();
    return j.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("checkpoint: ") + e.what());
    }
    try {
        if (!j.contains("format_version") ||
            j["format_version"].get<int>() != kCheckpointFormatVersion) {
            throw io_error("checkpoint: unsupported format_version");
        }
        Checkpoint ckpt;
        ckpt.epoch = j.at("epoch").get<int>();
        ckpt.ablation = ablation_from_string(j.at("ablation").get<std::string>());
        ckpt.vocab_json = j.at("vocabulary").dump();
        EncoderConfig config = config_from(j.at("config"));
        config.validate();
        // Build correctly shaped arrays, then overwrite every one of them.
        Rng scratch(0);
        ckpt.params = DualEncoderParams::init(config, scratch);
        const nlohmann::json& arrays = j.at("params");
        std::vector<ParamRef> refs = param_refs(ckpt.params);
        if (arrays.size() != refs.size()) {
            throw io_error("checkpoint: expected " + std::to_string(refs.size()) +
                           " parameter arrays, found " + std::to_string(arrays.size()));
        }
        for (const ParamRef& ref : refs) {
            if (!arrays.contains(ref.name)) {
                throw io_error("checkpoint: missing parameter array '" + ref.name + "'");
            }
            auto values = arrays.at(ref.name).get<std::vector<double>>();
            if (static_cast<int64_t>(values.size()) != ref.rows * ref.cols) {
                throw io_error("checkpoint: parameter '" + ref.name + "' has " +
                               std::to_string(values.size()) + " values, expected " +
                               std::to_string(ref.rows * ref.cols));
            }
            *ref.value = std::move(values);
        }
        const nlohmann::json& opt = j.at("optimizer");
        ckpt.opt.t = opt.at("t").get<int64_t>();
        ckpt.opt.m = opt.at("m").get<std::vector<std::vector<double>>>();
        ckpt.opt.v = opt.at("v").get<std::vector<std::vector<double>>>();
        for (const auto* moments : {&ckpt.opt.m, &ckpt.opt.v}) {
            if (moments->empty()) continue;
            if (moments->size() != refs.size()) {
                throw io_error("checkpoint: optimizer state does not match the parameter list");
            }
            for (size_t i = 0; i < refs.size(); ++i) {
                if (static_cast<int64_t>((*moments)[i].size()) != refs[i].rows * refs[i].cols) {
                    throw io_error("checkpoint: optimizer moments for '" + refs[i].name +
                                   "' have the wrong size");
                }
            }
        }
        ckpt.rng_state = j.at("rng").get<std::string>();

        std::ostringstream hex;
        hex << std::hex << fnv1a64(body_without_hash(ckpt));
        if (j.at("hash").get<std::string>() != hex.str()) {
            throw io_error("checkpoint fails its integrity hash");
        }
        return ckpt;
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("checkpoint: ") + e.what());
    }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    namespace fs = std::filesystem;
    fs::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
        if (ec) {
            throw io_error("cannot create directory '" + p.parent_path().string() +
                           "': " + ec.message());
        }
    }
    std::ofstream f(p, std::ios::binary);
    f << checkpoint_json(ckpt) << '\n';
    if (!f) throw io_error("cannot write '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot read '" + path + "'");
    std::ostringstream os;
    os << f.rdbuf();
    return checkpoint_from_json(os.str());
}

void require_same_config(const EncoderConfig& stored, const EncoderConfig& target) {
    auto differ = [](const std::string& field) {
        throw config_error("checkpoint encoder config differs from the requested one in '" +
                           field + "'");
    };
    if (stored.vocab_size != target.vocab_size) differ("vocab_size");
    if (stored.context_len != target.context_len) differ("context_len");
    if (stored.d_model != target.d_model) differ("d_model");
    if (stored.d != target.d) differ("d");
    if (stored.n_text != target.n_text) differ("n_text");
    if (stored.n_img != target.n_img) differ("n_img");
    if (stored.n_heads != target.n_heads) differ("n_heads");
    if (stored.d_ff != target.d_ff) differ("d_ff");
    if (stored.num_patches != target.num_patches) differ("num_patches");
    if (stored.d_in != target.d_in) differ("d_in");
    if (stored.num_prompts != target.num_prompts) differ("num_prompts");
    if (stored.mode != target.mode) differ("mode");
}

void require_same_vocabulary(const Checkpoint& ckpt, const Vocabulary& vocab) {
    // Compare through the canonical JSON form; word order is part of identity
    // because token ids are positional.
    if (nlohmann::json::parse(ckpt.vocab_json) != nlohmann::json::parse(vocab.to_json())) {
        throw config_error(
            "checkpoint vocabulary does not match the dataset vocabulary; "
            "the model was trained against different word ids");
    }
}

TrainStart train_start_from(const Checkpoint& ckpt) {
    if (ckpt.rng_state.empty()) {
        throw config_error("checkpoint carries no rng state; it cannot seed a resumed run");
    }
    return TrainStart{ckpt.epoch, ckpt.opt, ckpt.rng_state};
}

}  // namespace ecor
