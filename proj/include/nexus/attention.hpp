#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nexus/matrix.hpp"
#include "nexus/rng.hpp"

namespace nexus {

enum class Proj { Q, K, V };

// Which projections get higher-order refinement.
struct ProjSet {
    bool q = false, k = false, v = false;

    bool contains(Proj p) const { return p == Proj::Q ? q : (p == Proj::K ? k : v); }
    int count() const { return int(q) + int(k) + int(v); }
    int count_qk() const { return int(q) + int(k); }
    bool empty() const { return !q && !k && !v; }

    static ProjSet parse(const std::string& s); // e.g. "qk", "QKV", "" for none
    std::string str() const;                    // canonical lower-case, e.g. "qk"
};

// SELF_ON_PROJECTION: the refined projection is self-attention over the
// projected vectors themselves (softmax(P P^T/sqrt(d_k)) P with P = x W).
// FULL_THEN_PROJECT: full attention over x first, then the projection
// ((A x) W). Weight-shared mode forces the latter; unshared mode defaults to
// the former. The two are mathematically different; both are kept.
enum class InnerFormulation { SELF_ON_PROJECTION, FULL_THEN_PROJECT };

struct NexusConfig {
    int order = 1;           // 1 = standard attention
    ProjSet ho;              // refined projections; empty iff order == 1
    bool weight_shared = true;
    InnerFormulation inner_formulation = InnerFormulation::FULL_THEN_PROJECT;
    bool causal = true;
    int num_heads = 1;
    int d_model = 0;
    int d_k = 0;             // num_heads * d_k == d_model

    void validate() const;   // throws ContractError on inconsistency
};

// One extra projection set used by an unshared inner mechanism. `level` is
// the recursion depth below the outer attention (1-based); `proj` is which
// outer projection's refinement branch it parameterizes.
struct InnerTheta {
    int level = 1;
    Proj proj = Proj::Q;
    Matrix w_q, w_k, w_v;
};

struct AttentionParams {
    Matrix w_q, w_k, w_v;           // d_model x d_k
    std::optional<Matrix> w_o;      // d_k x d_model; unused by single-head ops
    std::vector<InnerTheta> inner;  // populated only for unshared configs

    const InnerTheta& inner_at(int level, Proj proj) const;
};

// Attention matrices recorded during one forward pass. The inner lists walk
// one branch of the recursion tree from the outer attention downward (the
// all-queries branch for inner_q, etc.), one matrix per recursion level, so
// each has length order-1 whenever the corresponding projection is refined
// and the refinement actually recurses (ho intersects {Q,K}); a projection
// outside ho_projections contributes an empty list.
struct AttentionTrace {
    Matrix outer;
    std::vector<Matrix> inner_q, inner_k, inner_v;
};

struct CausalMask {
    std::size_t n = 0;
    bool allowed(std::size_t i, std::size_t j) const { return j <= i; }
};

// Counts n x n logits+softmax evaluations inside nexus/standard attention;
// the unit of the recursive cost analysis. Thread-local.
void score_counter_reset();
std::uint64_t score_counter_read();

std::pair<Matrix, AttentionTrace> standard_attention(const Matrix& x, const AttentionParams& p,
                                                     bool causal);

// Refined replacement for projection `which`, recursion budget `depth`
// (1 refines once; cfg.order - 1 is the full budget). Returns the n x d_k
// refined projection and appends the branch's attention matrices to chain
// (outermost level first) when chain is non-null.
Matrix inner_refine(const Matrix& x, const AttentionParams& p, Proj which,
                    const NexusConfig& cfg, int depth, std::vector<Matrix>* chain = nullptr);

std::pair<Matrix, AttentionTrace> nexus_attention(const Matrix& x, const AttentionParams& p,
                                                  const NexusConfig& cfg);

// Per-head nexus attention, concatenate along features, project with w_out
// (d_model x d_model). Traces per head are written to *traces when non-null.
Matrix multi_head_nexus(const Matrix& x, const std::vector<AttentionParams>& heads,
                        const NexusConfig& cfg, const Matrix& w_out,
                        std::vector<AttentionTrace>* traces = nullptr);

// Weight accounting for a full multi-head attention layer under cfg. Shared
// configs count one theta set per head regardless of order; unshared configs
// add one full theta set per recursion level per refined projection (the
// formulation does not change the accounting).
std::uint64_t param_count(const NexusConfig& cfg, bool include_w_out);

// True iff rows 0..i of the output are unchanged (max-abs < 1e-12) when row
// j > i of x is perturbed. Test utility valid for any order.
bool causal_check(const Matrix& x, const AttentionParams& p, const NexusConfig& cfg,
                  std::size_t i, std::size_t j, Rng& rng);

// Random parameters for cfg (inner sets allocated for unshared configs).
AttentionParams init_attention_params(const NexusConfig& cfg, Rng& rng, double stddev);

} // namespace nexus
