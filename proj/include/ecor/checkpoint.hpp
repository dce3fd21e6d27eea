#pragma once

#include <string>

#include "ecor/ablations.hpp"
#include "ecor/encoder.hpp"
#include "ecor/trainer.hpp"

namespace ecor {

inline constexpr int kCheckpointFormatVersion = 1;

// Full training state at an epoch boundary: parameters plus optimizer moments
// and the rng stream, so a resumed run replays the original bit for bit. The
// vocabulary snapshot ties the parameters to the word ids they were trained
// against; the ablation records which factorization the model was tuned for.
struct Checkpoint {
    int epoch = 0;  // epochs completed when the state was captured
    Ablation ablation = Ablation::ECOR;
    std::string vocab_json;
    DualEncoderParams params;
    OptimizerState opt;
    std::string rng_state;
};

std::string checkpoint_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const std::string& body);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Throws config_error naming the first differing field. Restoring into a
/// differently configured encoder must fail even when array shapes happen
/// to coincide.
void require_same_config(const EncoderConfig& stored, const EncoderConfig& target);

/// Throws config_error when the checkpoint was trained against a different
/// vocabulary than the dataset provides.
void require_same_vocabulary(const Checkpoint& ckpt, const Vocabulary& vocab);

/// The resume handle consumed by train(): completed epochs, optimizer
/// moments and the serialized rng stream.
TrainStart train_start_from(const Checkpoint& ckpt);

}  // namespace ecor
