#pragma once
#include <vector>

#include "nexus/attention.hpp"
#include "nexus/autodiff.hpp"

namespace nexus {

// Tape-side handles for one head's parameters. Weight sharing is leaf
// aliasing: the shared configuration reuses the same Var at every recursion
// level, so gradients accumulate across levels automatically.
struct TapedAttentionParams {
    Var w_q, w_k, w_v;
    struct Inner {
        int level = 1;
        Proj proj = Proj::Q;
        Var w_q, w_k, w_v;
    };
    std::vector<Inner> inner;

    const Inner& inner_at(int level, Proj proj) const;
};

// One leaf per tensor in p (inner sets included).
TapedAttentionParams tape_attention_leaves(Tape& t, const AttentionParams& p);

// Same recursion as nexus_attention, expressed as tape operations in the
// identical kernel-call order, so forward values match the plain path bit
// for bit.
Var taped_nexus_attention(Tape& t, Var x, const TapedAttentionParams& p, const NexusConfig& cfg);

Var taped_multi_head_nexus(Tape& t, Var x, const std::vector<TapedAttentionParams>& heads,
                           const NexusConfig& cfg, Var w_out);

} // namespace nexus
