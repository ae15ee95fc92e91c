#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "nexus/attention.hpp"

namespace nexus {

// Analytic cost breakdown for one multi-head attention layer at sequence
// length n. Mirrors the kernel call tree exactly, so `flops` should agree
// with the instrumented multiply counter to the last digit.
struct CostModel {
    std::uint64_t score_computations = 0; // n x n score softmax evaluations
    std::uint64_t flops = 0;              // total counted multiply/adds
    std::uint64_t score_flops = 0;        // score blocks (QK^T + scale + softmax)
    std::uint64_t projection_flops = 0;   // x W and (A x) W projections
    std::uint64_t mixing_flops = 0;       // attention-apply and output matmuls
};

struct BenchRow {
    std::size_t n = 0;
    int d_model = 0, d_k = 0, order = 0;
    bool shared = true;
    InnerFormulation formulation = InnerFormulation::FULL_THEN_PROJECT;
    ProjSet ho;
    std::uint64_t score_computations = 0;
    std::uint64_t flops = 0;  // instrumented, one forward pass
    std::uint64_t params = 0; // param_count incl. the output projection
    double median_ms = 0.0;
};

// Number of n x n score softmax evaluations one nexus_attention call makes.
// Measured by running the mechanism on a normalized tiny instance (the count
// depends only on order / ho / formulation), not derived from a formula.
std::uint64_t score_computation_count(const NexusConfig& cfg);

// Closed-form model of the kernel calls made by multi_head_nexus (all heads
// plus the output projection) on an n-row input.
CostModel flop_count(const NexusConfig& cfg, std::size_t n);

// Runs each config on seeded Gaussian input, single-threaded, and medians
// the wall time over `repeats` passes (>= 5) after one warmup.
std::vector<BenchRow> run_bench(const std::vector<std::pair<NexusConfig, std::size_t>>& grid,
                                int repeats, std::uint64_t seed = 42);

// header: n,d_model,d_k,order,shared,formulation,ho,score_computations,flops,params,median_ms
std::string bench_csv(const std::vector<BenchRow>& rows);

} // namespace nexus
