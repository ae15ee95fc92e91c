#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "nexus/attention.hpp"
#include "nexus/autodiff.hpp"
#include "nexus/errors.hpp"
#include "nexus/kernels.hpp"
#include "nexus/matrix.hpp"
#include "nexus/rng.hpp"
#include "nexus/taped_attention.hpp"

using namespace nexus;

namespace {

NexusConfig make_cfg(int order, const std::string& ho, bool shared, InnerFormulation form,
                     int d_model, int d_k) {
    NexusConfig cfg;
    cfg.order = order;
    cfg.ho = ProjSet::parse(ho);
    cfg.weight_shared = shared;
    cfg.inner_formulation = form;
    cfg.causal = true;
    cfg.num_heads = 1;
    cfg.d_model = d_model;
    cfg.d_k = d_k;
    return cfg;
}

std::vector<Matrix> flatten_params(const AttentionParams& p) {
    std::vector<Matrix> vs{p.w_q, p.w_k, p.w_v};
    for (const InnerTheta& t : p.inner) {
        vs.push_back(t.w_q);
        vs.push_back(t.w_k);
        vs.push_back(t.w_v);
    }
    return vs;
}

TapedAttentionParams rebuild(const AttentionParams& shape, const std::vector<Var>& vs) {
    TapedAttentionParams tp;
    tp.w_q = vs[0];
    tp.w_k = vs[1];
    tp.w_v = vs[2];
    std::size_t i = 3;
    for (const InnerTheta& t : shape.inner) {
        TapedAttentionParams::Inner inner;
        inner.level = t.level;
        inner.proj = t.proj;
        inner.w_q = vs[i++];
        inner.w_k = vs[i++];
        inner.w_v = vs[i++];
        tp.inner.push_back(inner);
    }
    return tp;
}

} // namespace

TEST_CASE("adding a variable to itself doubles the gradient") {
    Tape t;
    Rng rng(1);
    Var x = t.leaf(gaussian_matrix(rng, 3, 4));
    Var loss = t.sum_all(t.add(x, x));
    auto grads = t.backward(loss);
    REQUIRE(grads.size() == 1);
    CHECK(max_abs_diff(grads[0], Matrix(3, 4, 2.0)) == 0.0);
}

TEST_CASE("matmul gradients are G B^T and A^T G") {
    Rng rng(2);
    Matrix a = gaussian_matrix(rng, 3, 4), b = gaussian_matrix(rng, 4, 5);
    Matrix g = gaussian_matrix(rng, 3, 5);

    Tape t;
    Var va = t.leaf(a), vb = t.leaf(b);
    Var loss = t.dot_const(t.matmul(va, vb), g);
    auto grads = t.backward(loss);
    CHECK(max_abs_diff(grads[0], matmul_nt(g, b)) < 1e-14);
    CHECK(max_abs_diff(grads[1], matmul_tn(a, g)) < 1e-14);

    auto rep = grad_check(
        "matmul",
        [&](Tape& tp, const std::vector<Var>& vs) {
            return tp.dot_const(tp.matmul(vs[0], vs[1]), g);
        },
        {a, b});
    CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("scaling by one is the identity in both directions") {
    Rng rng(3);
    Matrix x = gaussian_matrix(rng, 2, 3);
    Tape t;
    Var vx = t.leaf(x);
    Var s = t.scale(vx, 1.0);
    CHECK(max_abs_diff(t.value(s), x) == 0.0);
    auto grads = t.backward(t.sum_all(s));
    CHECK(max_abs_diff(grads[0], Matrix(2, 3, 1.0)) == 0.0);
}

TEST_CASE("gradient of a plain sum is all ones") {
    Tape t;
    Rng rng(4);
    Var x = t.leaf(gaussian_matrix(rng, 4, 2));
    auto grads = t.backward(t.sum_all(x));
    CHECK(max_abs_diff(grads[0], Matrix(4, 2, 1.0)) == 0.0);
}

TEST_CASE("gradient of summed softmax rows vanishes") {
    Tape t;
    Rng rng(5);
    Var x = t.leaf(gaussian_matrix(rng, 3, 5, 2.0));
    auto grads = t.backward(t.sum_all(t.softmax_rows(x, false)));
    CHECK(max_abs(grads[0]) < 1e-12);
}

TEST_CASE("per-primitive finite-difference checks") {
    Rng rng(6);
    Matrix g35 = gaussian_matrix(rng, 3, 5);
    Matrix g33 = gaussian_matrix(rng, 3, 3);
    Matrix g34 = gaussian_matrix(rng, 3, 4);
    Matrix g38 = gaussian_matrix(rng, 3, 8);

    auto rep_add = grad_check(
        "add",
        [&](Tape& t, const std::vector<Var>& vs) {
            return t.dot_const(t.add(vs[0], vs[1]), g35);
        },
        {gaussian_matrix(rng, 3, 5), gaussian_matrix(rng, 3, 5)});
    CHECK(rep_add.max_rel_err < 1e-8);

    auto rep_scale = grad_check(
        "scale",
        [&](Tape& t, const std::vector<Var>& vs) {
            return t.dot_const(t.scale(vs[0], -2.5), g35);
        },
        {gaussian_matrix(rng, 3, 5)});
    CHECK(rep_scale.max_rel_err < 1e-8);

    auto rep_nt = grad_check(
        "matmul_nt",
        [&](Tape& t, const std::vector<Var>& vs) {
            return t.dot_const(t.matmul_nt(vs[0], vs[1]), g33);
        },
        {gaussian_matrix(rng, 3, 4), gaussian_matrix(rng, 3, 4)});
    CHECK(rep_nt.max_rel_err < 1e-7);

    auto rep_soft = grad_check(
        "softmax_rows",
        [&](Tape& t, const std::vector<Var>& vs) {
            Var s = t.scale(t.matmul_nt(vs[0], vs[1]), 0.5);
            return t.dot_const(t.softmax_rows(s, true), g33);
        },
        {gaussian_matrix(rng, 3, 4), gaussian_matrix(rng, 3, 4)});
    CHECK(rep_soft.max_rel_err < 1e-5);

    auto rep_gelu = grad_check(
        "gelu",
        [&](Tape& t, const std::vector<Var>& vs) {
            return t.dot_const(t.gelu(vs[0]), g34);
        },
        {gaussian_matrix(rng, 3, 4)});
    CHECK(rep_gelu.max_rel_err < 1e-6);

    auto rep_ln = grad_check(
        "layernorm",
        [&](Tape& t, const std::vector<Var>& vs) {
            return t.dot_const(t.layernorm(vs[0], vs[1], vs[2]), g34);
        },
        {gaussian_matrix(rng, 3, 4), gaussian_matrix(rng, 1, 4, 0.5),
         gaussian_matrix(rng, 1, 4, 0.5)});
    CHECK(rep_ln.max_rel_err < 1e-5);

    auto rep_embed = grad_check(
        "embed+cross_entropy",
        [&](Tape& t, const std::vector<Var>& vs) {
            Var e = t.embed(vs[0], {1, 3, 0});
            Var logits = t.matmul(e, vs[1]);
            return t.cross_entropy_mean(logits, {0, 2, 5});
        },
        {gaussian_matrix(rng, 5, 4), gaussian_matrix(rng, 4, 6)});
    CHECK(rep_embed.max_rel_err < 1e-5);

    Matrix target = softmax_rows(gaussian_matrix(rng, 3, 3));
    auto rep_sce = grad_check(
        "soft_cross_entropy",
        [&](Tape& t, const std::vector<Var>& vs) {
            return t.soft_cross_entropy(t.scale(t.matmul_nt(vs[0], vs[1]), 0.7), target);
        },
        {gaussian_matrix(rng, 3, 4), gaussian_matrix(rng, 3, 4)});
    CHECK(rep_sce.max_rel_err < 1e-5);

    auto rep_cat = grad_check(
        "concat_cols",
        [&](Tape& t, const std::vector<Var>& vs) {
            return t.dot_const(t.concat_cols(vs[0], vs[1]), g38);
        },
        {gaussian_matrix(rng, 3, 5), gaussian_matrix(rng, 3, 3)});
    CHECK(rep_cat.max_rel_err < 1e-8);
}

TEST_CASE("a quadratic is exact under central differences") {
    Rng rng(7);
    Matrix p(4, 3);
    for (double& v : p.data) v = 0.5 + rng.next_f64(); // bounded away from zero
    auto rep = grad_check(
        "sum of squares",
        [&](Tape& t, const std::vector<Var>& vs) {
            return t.dot_const(t.matmul_nt(vs[0], vs[0]), Matrix::identity(4));
        },
        {p}, 1e-5);
    CHECK(rep.max_rel_err < 1e-9);
}

TEST_CASE("standard attention gradients pass the finite-difference oracle") {
    Rng rng(8);
    auto cfg = make_cfg(1, "", true, InnerFormulation::FULL_THEN_PROJECT, 4, 4);
    AttentionParams p = init_attention_params(cfg, rng, 0.5);
    Matrix x = gaussian_matrix(rng, 5, 4);
    auto rep = grad_check(
        "standard attention",
        [&](Tape& t, const std::vector<Var>& vs) {
            Var vx = t.leaf(x, false);
            return t.sum_all(taped_nexus_attention(t, vx, rebuild(p, vs), cfg));
        },
        flatten_params(p));
    CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("shared order-3 attention gradients pass the finite-difference oracle") {
    Rng rng(9);
    auto cfg = make_cfg(3, "qk", true, InnerFormulation::FULL_THEN_PROJECT, 4, 4);
    AttentionParams p = init_attention_params(cfg, rng, 0.5);
    Matrix x = gaussian_matrix(rng, 5, 4);
    auto rep = grad_check(
        "shared order-3 attention",
        [&](Tape& t, const std::vector<Var>& vs) {
            Var vx = t.leaf(x, false);
            return t.sum_all(taped_nexus_attention(t, vx, rebuild(p, vs), cfg));
        },
        flatten_params(p));
    CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("full configuration grid passes the finite-difference oracle") {
    Rng rng(10);
    std::vector<NexusConfig> grid;
    grid.push_back(make_cfg(1, "", true, InnerFormulation::FULL_THEN_PROJECT, 6, 6));
    for (int order : {2, 3})
        for (const char* ho : {"q", "qk", "qkv"}) {
            grid.push_back(make_cfg(order, ho, true, InnerFormulation::FULL_THEN_PROJECT, 6, 6));
            grid.push_back(
                make_cfg(order, ho, false, InnerFormulation::SELF_ON_PROJECTION, 6, 6));
            grid.push_back(make_cfg(order, ho, false, InnerFormulation::FULL_THEN_PROJECT, 6, 6));
        }
    Matrix w = gaussian_matrix(rng, 5, 6);
    for (const NexusConfig& cfg : grid) {
        AttentionParams p = init_attention_params(cfg, rng, 0.5);
        Matrix x = gaussian_matrix(rng, 5, 6);
        std::string name = "order " + std::to_string(cfg.order) + " ho=" + cfg.ho.str();
        auto rep = grad_check(
            name,
            [&](Tape& t, const std::vector<Var>& vs) {
                Var vx = t.leaf(x, false);
                return t.dot_const(taped_nexus_attention(t, vx, rebuild(p, vs), cfg), w);
            },
            flatten_params(p));
        INFO(name, " worst ", rep.max_rel_err);
        CHECK(rep.max_rel_err < 1e-5);
    }
}

TEST_CASE("shared gradient equals the sum over untied sites") {
    Rng rng(11);
    auto cfg = make_cfg(2, "qk", true, InnerFormulation::FULL_THEN_PROJECT, 4, 4);
    AttentionParams p = init_attention_params(cfg, rng, 0.6);
    Matrix x = gaussian_matrix(rng, 5, 4);
    Matrix w = gaussian_matrix(rng, 5, 4);

    Tape shared;
    Var sx = shared.leaf(x, false);
    TapedAttentionParams sp = tape_attention_leaves(shared, p);
    auto shared_grads = shared.backward(
        shared.dot_const(taped_nexus_attention(shared, sx, sp, cfg), w));
    // leaves in creation order: w_q, w_k, w_v

    // untied clone: a fresh leaf at every site the shared graph reuses
    Tape untied;
    Var ux = untied.leaf(x, false);
    Var wq_a = untied.leaf(p.w_q), wk_a = untied.leaf(p.w_k); // q-branch inner scores
    Var wq_p = untied.leaf(p.w_q);                            // q projection
    Var wq_b = untied.leaf(p.w_q), wk_b = untied.leaf(p.w_k); // k-branch inner scores
    Var wk_p = untied.leaf(p.w_k);                            // k projection
    Var wv = untied.leaf(p.w_v);
    auto scores = [&](Var q_in, Var k_in) {
        return untied.softmax_rows(untied.scale(untied.matmul_nt(q_in, k_in), 0.5), true);
    };
    Var a_q = scores(untied.matmul(ux, wq_a), untied.matmul(ux, wk_a));
    Var q_in = untied.matmul(untied.matmul(a_q, ux), wq_p);
    Var a_k = scores(untied.matmul(ux, wq_b), untied.matmul(ux, wk_b));
    Var k_in = untied.matmul(untied.matmul(a_k, ux), wk_p);
    Var y = untied.matmul(scores(q_in, k_in), untied.matmul(ux, wv));
    auto ug = untied.backward(untied.dot_const(y, w));
    // leaf order: wq_a, wk_a, wq_p, wq_b, wk_b, wk_p, wv

    Matrix sum_q = add(add(ug[0], ug[2]), ug[3]);
    Matrix sum_k = add(add(ug[1], ug[4]), ug[5]);
    CHECK(max_abs_diff(shared_grads[0], sum_q) < 1e-12);
    CHECK(max_abs_diff(shared_grads[1], sum_k) < 1e-12);
    CHECK(max_abs_diff(shared_grads[2], ug[6]) < 1e-12);
}

TEST_CASE("backward is bit-deterministic") {
    Rng rng(12);
    auto cfg = make_cfg(2, "qkv", false, InnerFormulation::SELF_ON_PROJECTION, 4, 4);
    AttentionParams p = init_attention_params(cfg, rng, 0.6);
    Matrix x = gaussian_matrix(rng, 5, 4);

    Tape t;
    Var vx = t.leaf(x, false);
    TapedAttentionParams tp = tape_attention_leaves(t, p);
    Var loss = t.sum_all(taped_nexus_attention(t, vx, tp, cfg));
    auto g1 = t.backward(loss);
    auto g2 = t.backward(loss);
    REQUIRE(g1.size() == g2.size());
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(max_abs_diff(g1[i], g2[i]) == 0.0);
}

TEST_CASE("taped forward values are bit-identical to the plain path") {
    Rng rng(13);
    for (int order : {1, 2, 3}) {
        auto cfg = make_cfg(order, order == 1 ? "" : "qk", true,
                            InnerFormulation::FULL_THEN_PROJECT, 4, 4);
        AttentionParams p = init_attention_params(cfg, rng, 0.5);
        Matrix x = gaussian_matrix(rng, 5, 4);
        Tape t;
        Var vx = t.leaf(x, false);
        TapedAttentionParams tp = tape_attention_leaves(t, p);
        Var y = taped_nexus_attention(t, vx, tp, cfg);
        CHECK(max_abs_diff(t.value(y), nexus_attention(x, p, cfg).first) == 0.0);
    }
}

TEST_CASE("shape mismatches and non-scalar losses are rejected") {
    Tape t;
    Var a = t.leaf(Matrix(2, 3, 1.0));
    Var b = t.leaf(Matrix(3, 2, 1.0));
    CHECK_THROWS_AS((void)t.add(a, b), ContractError);
    CHECK_THROWS_AS((void)t.backward(a), ContractError);
}

TEST_CASE("non-finite evaluations inside grad_check raise a numerical error") {
    Matrix p(2, 2, 2.0);
    CHECK_THROWS_AS((void)grad_check(
                        "overflow",
                        [](Tape& t, const std::vector<Var>& vs) {
                            return t.sum_all(t.scale(t.matmul_nt(vs[0], vs[0]), 1e308));
                        },
                        {p}),
                    NumericalError);
}
