#include "nexus/attention.hpp"

#include <cctype>
#include <cmath>

#include "nexus/kernels.hpp"

namespace nexus {

namespace {
thread_local std::uint64_t g_scores = 0;

// The single choke point for score evaluation: scaled logits, optional causal
// mask, softmax. Everything the recursion counter calls a "score computation"
// goes through here.
Matrix scores_softmax(const Matrix& q_in, const Matrix& k_in, int d_k, bool causal) {
    Matrix s = scaled(matmul_nt(q_in, k_in), 1.0 / std::sqrt(static_cast<double>(d_k)));
    if (causal) apply_causal_mask(s);
    ++g_scores;
    return softmax_rows(s);
}

// SELF_ON_PROJECTION recursion on a projected stream p (n x d_k). Queries and
// keys of each level are independently refined copies of the stream (two
// child evaluations per level when both Q and K participate: that doubling is
// the structural source of the 2^order growth); the attended values stay p at
// every level. chain collects this branch's attention matrices, outermost
// level first.
Matrix refine_stream(const Matrix& p, const NexusConfig& cfg, int budget,
                     std::vector<Matrix>* chain) {
    if (budget == 0) return p;
    std::vector<Matrix> sub;
    Matrix q_side = cfg.ho.q ? refine_stream(p, cfg, budget - 1, chain ? &sub : nullptr) : p;
    Matrix k_side = cfg.ho.k
                        ? refine_stream(p, cfg, budget - 1, (chain && !cfg.ho.q) ? &sub : nullptr)
                        : p;
    Matrix a = scores_softmax(q_side, k_side, cfg.d_k, cfg.causal);
    Matrix out = matmul(a, p);
    if (chain) {
        chain->push_back(std::move(a));
        for (auto& m : sub) chain->push_back(std::move(m));
    }
    return out;
}

void mech_theta(const AttentionParams& par, const NexusConfig& cfg, int level, Proj proj,
                const Matrix*& wq, const Matrix*& wk) {
    if (cfg.weight_shared) {
        wq = &par.w_q;
        wk = &par.w_k;
        return;
    }
    const InnerTheta& t = par.inner_at(level, proj);
    wq = &t.w_q;
    wk = &t.w_k;
}

// FULL_THEN_PROJECT recursion: the attention matrix of the order-`budget`
// mechanism over x. wq/wk parameterize this mechanism's scores; a refined
// side is the child mechanism's matrix applied to x before projecting, so
// each participating side spawns one full child evaluation.
Matrix full_mech_matrix(const Matrix& x, const AttentionParams& par, const NexusConfig& cfg,
                        int budget, int level, const Matrix& wq, const Matrix& wk,
                        std::vector<Matrix>* chain) {
    std::vector<Matrix> sub;
    Matrix q_in, k_in;
    if (budget > 1 && cfg.ho.q) {
        const Matrix *cwq, *cwk;
        mech_theta(par, cfg, level + 1, Proj::Q, cwq, cwk);
        Matrix a = full_mech_matrix(x, par, cfg, budget - 1, level + 1, *cwq, *cwk,
                                    chain ? &sub : nullptr);
        q_in = matmul(matmul(a, x), wq);
    } else {
        q_in = matmul(x, wq);
    }
    if (budget > 1 && cfg.ho.k) {
        const Matrix *cwq, *cwk;
        mech_theta(par, cfg, level + 1, Proj::K, cwq, cwk);
        Matrix a = full_mech_matrix(x, par, cfg, budget - 1, level + 1, *cwq, *cwk,
                                    (chain && !cfg.ho.q) ? &sub : nullptr);
        k_in = matmul(matmul(a, x), wk);
    } else {
        k_in = matmul(x, wk);
    }
    Matrix a = scores_softmax(q_in, k_in, cfg.d_k, cfg.causal);
    if (chain) {
        chain->push_back(a);
        for (auto& m : sub) chain->push_back(std::move(m));
    }
    return a;
}

void check_params(const Matrix& x, const AttentionParams& p, const NexusConfig& cfg) {
    contract(static_cast<int>(x.cols) == cfg.d_model, "attention: input width != d_model");
    contract(static_cast<int>(p.w_q.rows) == cfg.d_model &&
                 static_cast<int>(p.w_q.cols) == cfg.d_k &&
                 p.w_k.same_shape(p.w_q) && p.w_v.same_shape(p.w_q),
             "attention: projection shape mismatch");
}

} // namespace

ProjSet ProjSet::parse(const std::string& s) {
    ProjSet ps;
    for (char raw : s) {
        const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
        if (c == 'q' && !ps.q) ps.q = true;
        else if (c == 'k' && !ps.k) ps.k = true;
        else if (c == 'v' && !ps.v) ps.v = true;
        else throw ContractError("ho_projections: invalid or repeated character in '" + s + "'");
    }
    return ps;
}

std::string ProjSet::str() const {
    std::string s;
    if (q) s += 'q';
    if (k) s += 'k';
    if (v) s += 'v';
    return s;
}

void NexusConfig::validate() const {
    contract(order >= 1, "config: order must be >= 1");
    contract(ho.empty() == (order == 1), "config: ho_projections must be empty iff order == 1");
    contract(!weight_shared || inner_formulation == InnerFormulation::FULL_THEN_PROJECT,
             "config: weight_shared requires FULL_THEN_PROJECT");
    contract(num_heads >= 1 && d_model >= 1 && d_k >= 1, "config: dimensions must be positive");
    contract(num_heads * d_k == d_model, "config: num_heads * d_k must equal d_model");
}

const InnerTheta& AttentionParams::inner_at(int level, Proj proj) const {
    for (const InnerTheta& t : inner)
        if (t.level == level && t.proj == proj) return t;
    throw ContractError("attention: missing inner parameter set for level " +
                        std::to_string(level));
}

void score_counter_reset() { g_scores = 0; }
std::uint64_t score_counter_read() { return g_scores; }

std::pair<Matrix, AttentionTrace> standard_attention(const Matrix& x, const AttentionParams& p,
                                                     bool causal) {
    contract(x.rows >= 1, "attention: empty input");
    contract(x.cols == p.w_q.rows, "attention: input width mismatch");
    Matrix q = matmul(x, p.w_q);
    Matrix k = matmul(x, p.w_k);
    Matrix v = matmul(x, p.w_v);
    Matrix a = scores_softmax(q, k, static_cast<int>(p.w_q.cols), causal);
    Matrix y = matmul(a, v);
    AttentionTrace tr;
    tr.outer = std::move(a);
    return {std::move(y), std::move(tr)};
}

Matrix inner_refine(const Matrix& x, const AttentionParams& p, Proj which,
                    const NexusConfig& cfg, int depth, std::vector<Matrix>* chain) {
    cfg.validate();
    contract(depth >= 1, "inner_refine: depth must be >= 1");
    contract(depth <= cfg.order - 1, "inner_refine: depth exceeds order - 1");
    check_params(x, p, cfg);
    const Matrix& w = which == Proj::Q ? p.w_q : which == Proj::K ? p.w_k : p.w_v;
    if (cfg.inner_formulation == InnerFormulation::SELF_ON_PROJECTION) {
        Matrix proj = matmul(x, w);
        return refine_stream(proj, cfg, depth, chain);
    }
    const Matrix *wq, *wk;
    mech_theta(p, cfg, 1, which, wq, wk);
    Matrix a = full_mech_matrix(x, p, cfg, depth, 1, *wq, *wk, chain);
    return matmul(matmul(a, x), w);
}

std::pair<Matrix, AttentionTrace> nexus_attention(const Matrix& x, const AttentionParams& p,
                                                  const NexusConfig& cfg) {
    cfg.validate();
    contract(x.rows >= 1, "nexus_attention: empty input");
    contract(x.all_finite(), "nexus_attention: non-finite input");
    check_params(x, p, cfg);

    AttentionTrace tr;
    Matrix q_in, k_in, v_in;
    if (cfg.order == 1) {
        q_in = matmul(x, p.w_q);
        k_in = matmul(x, p.w_k);
        v_in = matmul(x, p.w_v);
    } else {
        const int dep = cfg.order - 1;
        q_in = cfg.ho.q ? inner_refine(x, p, Proj::Q, cfg, dep, &tr.inner_q)
                        : matmul(x, p.w_q);
        k_in = cfg.ho.k ? inner_refine(x, p, Proj::K, cfg, dep, &tr.inner_k)
                        : matmul(x, p.w_k);
        v_in = cfg.ho.v ? inner_refine(x, p, Proj::V, cfg, dep, &tr.inner_v)
                        : matmul(x, p.w_v);
    }
    Matrix a = scores_softmax(q_in, k_in, cfg.d_k, cfg.causal);
    Matrix y = matmul(a, v_in);
    tr.outer = std::move(a);
    return {std::move(y), std::move(tr)};
}

Matrix multi_head_nexus(const Matrix& x, const std::vector<AttentionParams>& heads,
                        const NexusConfig& cfg, const Matrix& w_out,
                        std::vector<AttentionTrace>* traces) {
    cfg.validate();
    contract(static_cast<int>(heads.size()) == cfg.num_heads,
             "multi_head_nexus: head count mismatch");
    contract(static_cast<int>(w_out.rows) == cfg.d_model &&
                 static_cast<int>(w_out.cols) == cfg.d_model,
             "multi_head_nexus: w_out must be d_model x d_model");
    Matrix concat;
    for (std::size_t h = 0; h < heads.size(); ++h) {
        auto [y, tr] = nexus_attention(x, heads[h], cfg);
        concat = h == 0 ? std::move(y) : hcat(concat, y);
        if (traces) traces->push_back(std::move(tr));
    }
    return matmul(concat, w_out);
}

std::uint64_t param_count(const NexusConfig& cfg, bool include_w_out) {
    cfg.validate();
    const std::uint64_t per_theta =
        3ull * static_cast<std::uint64_t>(cfg.d_model) * static_cast<std::uint64_t>(cfg.d_k);
    std::uint64_t c = static_cast<std::uint64_t>(cfg.num_heads) * per_theta;
    if (!cfg.weight_shared && cfg.order > 1)
        c += static_cast<std::uint64_t>(cfg.num_heads) *
             static_cast<std::uint64_t>(cfg.order - 1) *
             static_cast<std::uint64_t>(cfg.ho.count()) * per_theta;
    if (include_w_out)
        c += static_cast<std::uint64_t>(cfg.d_model) * static_cast<std::uint64_t>(cfg.d_model);
    return c;
}

bool causal_check(const Matrix& x, const AttentionParams& p, const NexusConfig& cfg,
                  std::size_t i, std::size_t j, Rng& rng) {
    contract(cfg.causal, "causal_check: config is not causal");
    contract(j > i && j < x.rows, "causal_check: need i < j < n");
    const Matrix y1 = nexus_attention(x, p, cfg).first;
    Matrix x2 = x;
    for (std::size_t c = 0; c < x.cols; ++c) x2(j, c) += 0.5 + rng.next_gaussian();
    const Matrix y2 = nexus_attention(x2, p, cfg).first;
    for (std::size_t r = 0; r <= i; ++r)
        for (std::size_t c = 0; c < y1.cols; ++c)
            if (std::fabs(y1(r, c) - y2(r, c)) >= 1e-12) return false;
    return true;
}

AttentionParams init_attention_params(const NexusConfig& cfg, Rng& rng, double stddev) {
    cfg.validate();
    AttentionParams p;
    p.w_q = gaussian_matrix(rng, cfg.d_model, cfg.d_k, stddev);
    p.w_k = gaussian_matrix(rng, cfg.d_model, cfg.d_k, stddev);
    p.w_v = gaussian_matrix(rng, cfg.d_model, cfg.d_k, stddev);
    if (!cfg.weight_shared && cfg.order > 1) {
        for (int level = 1; level <= cfg.order - 1; ++level) {
            for (Proj pr : {Proj::Q, Proj::K, Proj::V}) {
                if (!cfg.ho.contains(pr)) continue;
                InnerTheta t;
                t.level = level;
                t.proj = pr;
                t.w_q = gaussian_matrix(rng, cfg.d_model, cfg.d_k, stddev);
                t.w_k = gaussian_matrix(rng, cfg.d_model, cfg.d_k, stddev);
                t.w_v = gaussian_matrix(rng, cfg.d_model, cfg.d_k, stddev);
                p.inner.push_back(std::move(t));
            }
        }
    }
    return p;
}

} // namespace nexus
