#pragma once
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "nexus/attention.hpp"
#include "nexus/autodiff.hpp"
#include "nexus/matrix.hpp"
#include "nexus/rng.hpp"

namespace nexus {

struct ModelConfig {
    int vocab_size = 256; // byte-level
    int d_model = 64;
    int num_layers = 2;
    int num_heads = 2;
    int context_length = 64;
    int mlp_mult = 4;
    NexusConfig attention; // order / ho / sharing / formulation / causal
    std::uint64_t seed = 0;

    // Copies d_model / num_heads / d_k into the attention config.
    void sync_attention();
    void validate() const;
};

struct Batch {
    std::size_t batch = 0, n = 0;
    std::vector<int> inputs, targets; // row-major batch x n; targets shifted by one
};

struct TrainState {
    ModelConfig config;
    std::map<std::string, Matrix> params;
    std::map<std::string, Matrix> adam_m, adam_v;
    std::uint64_t step = 0;
    Rng rng{0};
};

struct TrainOptions {
    std::uint64_t steps = 2000;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    int warmup_steps = 100; // linear warmup, then constant
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double clip_norm = 1.0; // global-norm gradient clip; 0 disables
};

struct MetricsRow {
    std::uint64_t step;
    double loss;
    double lr;
    double elapsed_ms; // wall time since train() entry
};

std::vector<int> tokenize_bytes(std::string_view text);
std::string detokenize_bytes(const std::vector<int>& ids);

// Fresh parameters and zeroed moments for cfg, deterministically from
// cfg.seed. Tensor layout (and therefore checkpoint content) depends only on
// the config.
TrainState init_state(const ModelConfig& cfg);

// Sample batch_size windows of context_length+1 bytes uniformly from corpus.
Batch sample_batch(const std::vector<int>& corpus_ids, std::size_t batch_size,
                   std::size_t context_length, Rng& rng);

struct LmOut {
    std::vector<Matrix> logits; // one n x vocab matrix per batch item
    double loss = 0.0;          // mean token cross-entropy over the batch
};

// Tape-free forward pass. traces (optional) requires batch == 1 and receives
// one AttentionTrace per [layer][head].
LmOut forward_lm(const TrainState& st, const Batch& batch,
                 std::vector<std::vector<AttentionTrace>>* traces = nullptr);

// Autodiff forward for training; bit-identical loss to forward_lm. leaves
// receives the parameter name -> tape leaf mapping.
Var build_lm_loss(Tape& t, const TrainState& st, const Batch& batch,
                  std::map<std::string, Var>& leaves);

// Bias-corrected Adam on every gradient present in grads; `lr` is the
// already-scheduled rate for this step. Increments st.step. Throws
// NumericalError on non-finite gradients.
void adam_step(TrainState& st, const std::map<std::string, Matrix>& grads,
               const TrainOptions& opts, double lr);

double lr_at(const TrainOptions& opts, std::uint64_t step); // 1-based step

// Deterministic training loop; appends one MetricsRow per step. Throws
// NumericalError if the loss goes non-finite.
void train(TrainState& st, const std::string& corpus, const TrainOptions& opts,
           std::vector<MetricsRow>& metrics);

// Mean loss over `windows` random context windows (tape-free).
double eval_loss(const TrainState& st, const std::string& corpus, std::size_t windows, Rng& rng);

std::vector<int> greedy_sample(const TrainState& st, std::vector<int> prompt, std::size_t count);

void save_checkpoint(const TrainState& st, const std::string& path);
// Starts from init_state(cfg) and overwrites tensors found in the file, so a
// checkpoint with a subset of cfg's tensors (retrofit) leaves the rest at
// their fresh initialization. Unknown tensor names or shape mismatches are
// format errors.
TrainState load_checkpoint(const std::string& path, const ModelConfig& cfg);

std::string metrics_csv(const std::vector<MetricsRow>& rows);

} // namespace nexus
