#include "nexus/taped_attention.hpp"

#include <cmath>

namespace nexus {

namespace {

Var scores_softmax_taped(Tape& t, Var q_in, Var k_in, int d_k, bool causal) {
    Var s = t.scale(t.matmul_nt(q_in, k_in), 1.0 / std::sqrt(static_cast<double>(d_k)));
    return t.softmax_rows(s, causal);
}

Var refine_stream_taped(Tape& t, Var p, const NexusConfig& cfg, int budget) {
    if (budget == 0) return p;
    Var q_side = cfg.ho.q ? refine_stream_taped(t, p, cfg, budget - 1) : p;
    Var k_side = cfg.ho.k ? refine_stream_taped(t, p, cfg, budget - 1) : p;
    Var a = scores_softmax_taped(t, q_side, k_side, cfg.d_k, cfg.causal);
    return t.matmul(a, p);
}

void mech_theta_taped(const TapedAttentionParams& par, const NexusConfig& cfg, int level,
                      Proj proj, Var& wq, Var& wk) {
    if (cfg.weight_shared) {
        wq = par.w_q;
        wk = par.w_k;
        return;
    }
    const auto& t = par.inner_at(level, proj);
    wq = t.w_q;
    wk = t.w_k;
}

Var full_mech_matrix_taped(Tape& t, Var x, const TapedAttentionParams& par,
                           const NexusConfig& cfg, int budget, int level, Var wq, Var wk) {
    Var q_in, k_in;
    if (budget > 1 && cfg.ho.q) {
        Var cwq, cwk;
        mech_theta_taped(par, cfg, level + 1, Proj::Q, cwq, cwk);
        Var a = full_mech_matrix_taped(t, x, par, cfg, budget - 1, level + 1, cwq, cwk);
        q_in = t.matmul(t.matmul(a, x), wq);
    } else {
        q_in = t.matmul(x, wq);
    }
    if (budget > 1 && cfg.ho.k) {
        Var cwq, cwk;
        mech_theta_taped(par, cfg, level + 1, Proj::K, cwq, cwk);
        Var a = full_mech_matrix_taped(t, x, par, cfg, budget - 1, level + 1, cwq, cwk);
        k_in = t.matmul(t.matmul(a, x), wk);
    } else {
        k_in = t.matmul(x, wk);
    }
    return scores_softmax_taped(t, q_in, k_in, cfg.d_k, cfg.causal);
}

Var inner_refine_taped(Tape& t, Var x, const TapedAttentionParams& p, Proj which,
                       const NexusConfig& cfg, int depth) {
    Var w = which == Proj::Q ? p.w_q : which == Proj::K ? p.w_k : p.w_v;
    if (cfg.inner_formulation == InnerFormulation::SELF_ON_PROJECTION) {
        Var proj = t.matmul(x, w);
        return refine_stream_taped(t, proj, cfg, depth);
    }
    Var wq, wk;
    mech_theta_taped(p, cfg, 1, which, wq, wk);
    Var a = full_mech_matrix_taped(t, x, p, cfg, depth, 1, wq, wk);
    return t.matmul(t.matmul(a, x), w);
}

} // namespace

const TapedAttentionParams::Inner& TapedAttentionParams::inner_at(int level, Proj proj) const {
    for (const Inner& i : inner)
        if (i.level == level && i.proj == proj) return i;
    throw ContractError("taped attention: missing inner parameter set for level " +
                        std::to_string(level));
}

TapedAttentionParams tape_attention_leaves(Tape& t, const AttentionParams& p) {
    TapedAttentionParams out;
    out.w_q = t.leaf(p.w_q);
    out.w_k = t.leaf(p.w_k);
    out.w_v = t.leaf(p.w_v);
    for (const InnerTheta& it : p.inner) {
        TapedAttentionParams::Inner i;
        i.level = it.level;
        i.proj = it.proj;
        i.w_q = t.leaf(it.w_q);
        i.w_k = t.leaf(it.w_k);
        i.w_v = t.leaf(it.w_v);
        out.inner.push_back(i);
    }
    return out;
}

Var taped_nexus_attention(Tape& t, Var x, const TapedAttentionParams& p,
                          const NexusConfig& cfg) {
    cfg.validate();
    Var q_in, k_in, v_in;
    if (cfg.order == 1) {
        q_in = t.matmul(x, p.w_q);
        k_in = t.matmul(x, p.w_k);
        v_in = t.matmul(x, p.w_v);
    } else {
        const int dep = cfg.order - 1;
        q_in = cfg.ho.q ? inner_refine_taped(t, x, p, Proj::Q, cfg, dep) : t.matmul(x, p.w_q);
        k_in = cfg.ho.k ? inner_refine_taped(t, x, p, Proj::K, cfg, dep) : t.matmul(x, p.w_k);
        v_in = cfg.ho.v ? inner_refine_taped(t, x, p, Proj::V, cfg, dep) : t.matmul(x, p.w_v);
    }
    Var a = scores_softmax_taped(t, q_in, k_in, cfg.d_k, cfg.causal);
    return t.matmul(a, v_in);
}

Var taped_multi_head_nexus(Tape& t, Var x, const std::vector<TapedAttentionParams>& heads,
                           const NexusConfig& cfg, Var w_out) {
    cfg.validate();
    contract(static_cast<int>(heads.size()) == cfg.num_heads,
             "taped_multi_head_nexus: head count mismatch");
    Var concat;
    for (std::size_t h = 0; h < heads.size(); ++h) {
        Var y = taped_nexus_attention(t, x, heads[h], cfg);
        concat = h == 0 ? y : t.concat_cols(concat, y);
    }
    return t.matmul(concat, w_out);
}

} // namespace nexus
