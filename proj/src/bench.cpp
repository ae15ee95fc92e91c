#include "nexus/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "nexus/kernels.hpp"
#include "nexus/rng.hpp"

namespace nexus {

namespace {

struct Dims {
    std::uint64_t n, dm, dk;
    std::uint64_t score_block() const { return 2 * n * n * dk + 6 * n * n; } // QK^T + scale + softmax
    std::uint64_t proj() const { return 2 * n * dm * dk; }                   // x W
    std::uint64_t apply_dk() const { return 2 * n * n * dk; }                // A p
    std::uint64_t apply_dm() const { return 2 * n * n * dm; }                // A x
};

// Cost of refine_stream(p, budget) in the self-refinement formulation.
void self_refine_cost(const NexusConfig& cfg, const Dims& d, int budget, CostModel& c) {
    if (budget == 0) return;
    if (cfg.ho.q) self_refine_cost(cfg, d, budget - 1, c);
    if (cfg.ho.k) self_refine_cost(cfg, d, budget - 1, c);
    c.score_computations += 1;
    c.score_flops += d.score_block();
    c.mixing_flops += d.apply_dk();
}

// Cost of full_mech_matrix(budget) in the full-then-project formulation.
void full_mech_cost(const NexusConfig& cfg, const Dims& d, int budget, CostModel& c) {
    for (bool side : {cfg.ho.q, cfg.ho.k}) {
        if (budget > 1 && side) {
            full_mech_cost(cfg, d, budget - 1, c);
            c.mixing_flops += d.apply_dm(); // child matrix applied to x
            c.projection_flops += d.proj();
        } else {
            c.projection_flops += d.proj();
        }
    }
    c.score_computations += 1;
    c.score_flops += d.score_block();
}

void inner_refine_cost(const NexusConfig& cfg, const Dims& d, int depth, CostModel& c) {
    if (cfg.inner_formulation == InnerFormulation::SELF_ON_PROJECTION) {
        c.projection_flops += d.proj();
        self_refine_cost(cfg, d, depth, c);
        return;
    }
    full_mech_cost(cfg, d, depth, c);
    c.mixing_flops += d.apply_dm();
    c.projection_flops += d.proj();
}

} // namespace

std::uint64_t score_computation_count(const NexusConfig& cfg) {
    cfg.validate();
    // Normalize to the smallest legal instance; the count is structural.
    NexusConfig tiny = cfg;
    tiny.num_heads = 1;
    tiny.d_model = 2;
    tiny.d_k = 2;
    Rng rng(7);
    const AttentionParams p = init_attention_params(tiny, rng, 0.5);
    const Matrix x = gaussian_matrix(rng, 3, 2, 0.5);
    score_counter_reset();
    (void)nexus_attention(x, p, tiny);
    return score_counter_read();
}

CostModel flop_count(const NexusConfig& cfg, std::size_t n) {
    cfg.validate();
    const Dims d{n, static_cast<std::uint64_t>(cfg.d_model), static_cast<std::uint64_t>(cfg.d_k)};

    CostModel per_head;
    if (cfg.order == 1) {
        per_head.projection_flops += 3 * d.proj();
    } else {
        const int depth = cfg.order - 1;
        for (Proj pr : {Proj::Q, Proj::K, Proj::V}) {
            if (cfg.ho.contains(pr))
                inner_refine_cost(cfg, d, depth, per_head);
            else
                per_head.projection_flops += d.proj();
        }
    }
    per_head.score_computations += 1; // outer scores
    per_head.score_flops += d.score_block();
    per_head.mixing_flops += d.apply_dk();

    CostModel total;
    const std::uint64_t h = static_cast<std::uint64_t>(cfg.num_heads);
    total.score_computations = h * per_head.score_computations;
    total.score_flops = h * per_head.score_flops;
    total.projection_flops = h * per_head.projection_flops;
    total.mixing_flops = h * per_head.mixing_flops + 2 * d.n * d.dm * d.dm; // w_out
    total.flops = total.score_flops + total.projection_flops + total.mixing_flops;
    return total;
}

std::vector<BenchRow> run_bench(const std::vector<std::pair<NexusConfig, std::size_t>>& grid,
                                int repeats, std::uint64_t seed) {
    contract(repeats >= 5, "run_bench: need at least 5 repeats");
    const bool was_parallel = parallel_enabled();
    set_parallel(false); // stabilize medians and the flop counter
    std::vector<BenchRow> rows;
    Rng rng(seed);
    for (const auto& [cfg, n] : grid) {
        cfg.validate();
        std::vector<AttentionParams> heads;
        for (int h = 0; h < cfg.num_heads; ++h)
            heads.push_back(init_attention_params(cfg, rng, 0.1));
        const Matrix w_out = gaussian_matrix(rng, cfg.d_model, cfg.d_model, 0.1);
        const Matrix x = gaussian_matrix(rng, n, cfg.d_model, 0.5);

        (void)multi_head_nexus(x, heads, cfg, w_out); // warmup
        score_counter_reset();
        flop_counter_reset();
        (void)multi_head_nexus(x, heads, cfg, w_out);
        const std::uint64_t scores = score_counter_read() / cfg.num_heads;
        const std::uint64_t flops = flop_counter_read();

        std::vector<double> times;
        for (int r = 0; r < repeats; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            (void)multi_head_nexus(x, heads, cfg, w_out);
            times.push_back(
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count());
        }
        std::sort(times.begin(), times.end());
        const double median = times[times.size() / 2];

        BenchRow row;
        row.n = n;
        row.d_model = cfg.d_model;
        row.d_k = cfg.d_k;
        row.order = cfg.order;
        row.shared = cfg.weight_shared;
        row.formulation = cfg.inner_formulation;
        row.ho = cfg.ho;
        row.score_computations = scores;
        row.flops = flops;
        row.params = param_count(cfg, /*include_w_out=*/true);
        row.median_ms = median;
        rows.push_back(row);
    }
    set_parallel(was_parallel);
    return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream ss;
    ss << "n,d_model,d_k,order,shared,formulation,ho,score_computations,flops,params,median_ms\n";
    for (const BenchRow& r : rows) {
        ss << r.n << ',' << r.d_model << ',' << r.d_k << ',' << r.order << ','
           << (r.shared ? 1 : 0) << ','
           << (r.formulation == InnerFormulation::SELF_ON_PROJECTION ? "self" : "full") << ','
           << (r.ho.empty() ? "-" : r.ho.str()) << ',' << r.score_computations << ',' << r.flops
           << ',' << r.params << ',' << std::fixed << std::setprecision(3) << r.median_ms
           << std::defaultfloat << '\n';
    }
    return std::move(ss).str();
}

} // namespace nexus
