#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "corpus_gen.hpp"
#include "doctest.h"
#include "nexus/attention.hpp"
#include "nexus/autodiff.hpp"
#include "nexus/errors.hpp"
#include "nexus/io.hpp"
#include "nexus/kernels.hpp"
#include "nexus/model.hpp"
#include "nexus/rng.hpp"

using namespace nexus;

namespace {

ModelConfig tiny_config(int order = 1, const std::string& ho = "", bool shared = true) {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.context_length = 8;
    cfg.mlp_mult = 2;
    cfg.seed = 7;
    cfg.attention.order = order;
    cfg.attention.ho = ProjSet::parse(ho);
    cfg.attention.weight_shared = shared;
    cfg.attention.inner_formulation =
        shared ? InnerFormulation::FULL_THEN_PROJECT : InnerFormulation::SELF_ON_PROJECTION;
    cfg.attention.causal = true;
    cfg.sync_attention();
    return cfg;
}

Batch random_batch(const ModelConfig& cfg, std::size_t batch, Rng& rng) {
    Batch b;
    b.batch = batch;
    b.n = std::size_t(cfg.context_length);
    b.inputs.resize(batch * b.n);
    b.targets.resize(batch * b.n);
    for (int& v : b.inputs) v = int(rng.next_below(std::uint64_t(cfg.vocab_size)));
    for (int& v : b.targets) v = int(rng.next_below(std::uint64_t(cfg.vocab_size)));
    return b;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("nexus_model_test_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

} // namespace

TEST_CASE("byte tokenizer round-trips") {
    auto ids = tokenize_bytes("AB");
    REQUIRE(ids.size() == 2);
    CHECK(ids[0] == 65);
    CHECK(ids[1] == 66);
    CHECK(tokenize_bytes("").empty());

    std::string text = "hello\nworld \xff\x00!";
    text[text.size() - 2] = '\0';
    CHECK(detokenize_bytes(tokenize_bytes(text)) == text);
    CHECK_THROWS_AS((void)detokenize_bytes({256}), ContractError);
}

TEST_CASE("a zeroed output head predicts uniformly") {
    ModelConfig cfg = tiny_config();
    TrainState st = init_state(cfg);
    st.params.at("head.w") = Matrix(16, 256, 0.0);
    Rng rng(1);
    Batch b = random_batch(cfg, 2, rng);
    LmOut out = forward_lm(st, b);
    CHECK(std::fabs(out.loss - std::log(256.0)) < 1e-6);
}

TEST_CASE("initialization is deterministic in the seed") {
    ModelConfig cfg = tiny_config();
    TrainState a = init_state(cfg), b = init_state(cfg);
    for (const auto& [name, m] : a.params) CHECK(max_abs_diff(m, b.params.at(name)) == 0.0);
    cfg.seed = 8;
    TrainState c = init_state(cfg);
    CHECK(max_abs_diff(a.params.at("tok_emb"), c.params.at("tok_emb")) > 0.0);
}

TEST_CASE("unshared higher-order configs allocate the inner tensors") {
    ModelConfig cfg = tiny_config(2, "qk", false);
    TrainState st = init_state(cfg);
    CHECK(st.params.count("L0.attn.h0.inner1.q.w_q") == 1);
    CHECK(st.params.count("L0.attn.h1.inner1.k.w_v") == 1);
    ModelConfig shared = tiny_config(2, "qk", true);
    CHECK(init_state(shared).params.size() == init_state(tiny_config()).params.size());
}

TEST_CASE("order-1 forward matches a hand-written transformer") {
    ModelConfig cfg = tiny_config();
    TrainState st = init_state(cfg);
    Rng rng(2);

    auto reference = [&](const Batch& b) {
        const auto& P = st.params;
        double total = 0.0;
        for (std::size_t s = 0; s < b.batch; ++s) {
            const int* ids = b.inputs.data() + s * b.n;
            const int* tgt = b.targets.data() + s * b.n;
            Matrix x(b.n, 16);
            for (std::size_t r = 0; r < b.n; ++r)
                for (std::size_t c = 0; c < 16; ++c)
                    x(r, c) = P.at("tok_emb")(std::size_t(ids[r]), c) + P.at("pos_emb")(r, c);
            Matrix h = layernorm_rows(x, P.at("L0.ln1.gamma"), P.at("L0.ln1.beta"));
            Matrix concat;
            for (int hd = 0; hd < 2; ++hd) {
                std::string hp = "L0.attn.h" + std::to_string(hd);
                AttentionParams p;
                p.w_q = P.at(hp + ".w_q");
                p.w_k = P.at(hp + ".w_k");
                p.w_v = P.at(hp + ".w_v");
                Matrix y = standard_attention(h, p, true).first;
                concat = hd == 0 ? y : hcat(concat, y);
            }
            x = add(x, matmul(concat, P.at("L0.attn.w_out")));
            Matrix h2 = layernorm_rows(x, P.at("L0.ln2.gamma"), P.at("L0.ln2.beta"));
            x = add(x, matmul(gelu(matmul(h2, P.at("L0.mlp.w1"))), P.at("L0.mlp.w2")));
            x = layernorm_rows(x, P.at("final_ln.gamma"), P.at("final_ln.beta"));
            Matrix logits = matmul(x, P.at("head.w"));
            Matrix ls = log_softmax_rows(logits);
            double ce = 0.0;
            for (std::size_t r = 0; r < b.n; ++r) ce += -ls(r, std::size_t(tgt[r]));
            double seq = ce / double(b.n);
            total = s == 0 ? seq : total + seq;
        }
        return total * (1.0 / double(b.batch));
    };

    for (int t = 0; t < 100; ++t) {
        Batch b = random_batch(cfg, 2, rng);
        CHECK(forward_lm(st, b).loss == reference(b));
    }
}

TEST_CASE("taped loss is bit-identical to the plain forward") {
    for (auto cfg : {tiny_config(), tiny_config(2, "qk", true), tiny_config(2, "qkv", false)}) {
        TrainState st = init_state(cfg);
        Rng rng(3);
        Batch b = random_batch(cfg, 3, rng);
        Tape t;
        std::map<std::string, Var> leaves;
        Var loss = build_lm_loss(t, st, b, leaves);
        CHECK(t.value(loss)(0, 0) == forward_lm(st, b).loss);
        CHECK(leaves.size() == st.params.size());
    }
}

TEST_CASE("logits are causal") {
    ModelConfig cfg = tiny_config(2, "qk", true);
    TrainState st = init_state(cfg);
    Rng rng(4);
    Batch b = random_batch(cfg, 1, rng);
    Matrix before = forward_lm(st, b).logits[0];
    Batch b2 = b;
    b2.inputs.back() = (b2.inputs.back() + 1) % 256;
    Matrix after = forward_lm(st, b2).logits[0];
    for (std::size_t r = 0; r + 1 < b.n; ++r)
        for (std::size_t c = 0; c < before.cols; ++c)
            CHECK(std::fabs(before(r, c) - after(r, c)) < 1e-12);
    double last_diff = 0.0;
    for (std::size_t c = 0; c < before.cols; ++c)
        last_diff = std::max(last_diff, std::fabs(before(b.n - 1, c) - after(b.n - 1, c)));
    CHECK(last_diff > 1e-9);
}

TEST_CASE("adam with zero gradients only advances the step counter") {
    ModelConfig cfg = tiny_config();
    TrainState st = init_state(cfg);
    TrainState before = st;
    std::map<std::string, Matrix> grads;
    for (const auto& [name, m] : st.params) grads.emplace(name, Matrix(m.rows, m.cols, 0.0));
    adam_step(st, grads, TrainOptions{}, 1e-3);
    CHECK(st.step == 1);
    for (const auto& [name, m] : st.params)
        CHECK(max_abs_diff(m, before.params.at(name)) == 0.0);
}

TEST_CASE("adam matches the update formula on a scalar") {
    ModelConfig cfg = tiny_config();
    TrainState st = init_state(cfg);
    TrainOptions opts;
    opts.clip_norm = 0.0; // isolate the moment update
    const std::string name = "final_ln.beta";
    const double g = 0.25, lr = 1e-2;
    const double p0 = st.params.at(name)(0, 0);

    std::map<std::string, Matrix> grads;
    Matrix gm(1, 16, 0.0);
    gm(0, 0) = g;
    grads.emplace(name, gm);
    adam_step(st, grads, opts, lr);

    double m = (1.0 - opts.beta1) * g;
    double v = (1.0 - opts.beta2) * g * g;
    double mhat = m / (1.0 - opts.beta1);
    double vhat = v / (1.0 - opts.beta2);
    double expect = p0 - lr * mhat / (std::sqrt(vhat) + opts.adam_eps);
    CHECK(st.params.at(name)(0, 0) == doctest::Approx(expect).epsilon(1e-15));
    // with fresh moments the bias-corrected step is lr * sign(g) up to eps
    CHECK(std::fabs((p0 - st.params.at(name)(0, 0)) - lr) < 1e-6);
}

TEST_CASE("gradient clipping rescales to the norm bound") {
    ModelConfig cfg = tiny_config();
    TrainState st = init_state(cfg);
    TrainOptions opts;
    opts.clip_norm = 1.0;
    const std::string name = "final_ln.beta";
    const double p0 = st.params.at(name)(0, 0);

    std::map<std::string, Matrix> grads;
    Matrix gm(1, 16, 0.0);
    gm(0, 0) = 10.0; // global norm 10 -> scaled to 1
    grads.emplace(name, gm);
    adam_step(st, grads, opts, 1e-2);

    TrainState st2 = init_state(cfg);
    opts.clip_norm = 0.0;
    Matrix gm2(1, 16, 0.0);
    gm2(0, 0) = 1.0;
    std::map<std::string, Matrix> grads2;
    grads2.emplace(name, gm2);
    adam_step(st2, grads2, opts, 1e-2);
    CHECK(st.params.at(name)(0, 0) == st2.params.at(name)(0, 0));
    CHECK(p0 != st.params.at(name)(0, 0));
}

TEST_CASE("non-finite gradients are a numerical error") {
    ModelConfig cfg = tiny_config();
    TrainState st = init_state(cfg);
    std::map<std::string, Matrix> grads;
    Matrix gm(1, 16, 0.0);
    gm(0, 3) = std::numeric_limits<double>::quiet_NaN();
    grads.emplace("final_ln.beta", gm);
    CHECK_THROWS_AS(adam_step(st, grads, TrainOptions{}, 1e-3), NumericalError);
}

TEST_CASE("learning-rate schedule warms up linearly then holds") {
    TrainOptions opts;
    opts.lr = 1e-3;
    opts.warmup_steps = 100;
    CHECK(lr_at(opts, 1) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(lr_at(opts, 50) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(lr_at(opts, 100) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(lr_at(opts, 101) == 1e-3);
    CHECK(lr_at(opts, 100000) == 1e-3);
}

TEST_CASE("zero training steps leave an empty log") {
    ModelConfig cfg = tiny_config();
    TrainState st = init_state(cfg);
    TrainOptions opts;
    opts.steps = 0;
    std::vector<MetricsRow> metrics;
    train(st, nexus::testing::make_corpus(4096, 1), opts, metrics);
    CHECK(metrics.empty());
    CHECK(st.step == 0);
}

TEST_CASE("training rejects a corpus shorter than ten windows") {
    ModelConfig cfg = tiny_config();
    TrainState st = init_state(cfg);
    TrainOptions opts;
    opts.steps = 1;
    std::vector<MetricsRow> metrics;
    std::string tiny(std::size_t(10 * cfg.context_length - 1), 'a');
    CHECK_THROWS_AS(train(st, tiny, opts, metrics), ContractError);
}

TEST_CASE("short training runs are deterministic and reduce the loss") {
    ModelConfig cfg = tiny_config(2, "qk", true);
    std::string corpus = nexus::testing::make_corpus(8192, 2);
    TrainOptions opts;
    opts.steps = 30;
    opts.batch_size = 4;

    TrainState a = init_state(cfg);
    std::vector<MetricsRow> ma;
    train(a, corpus, opts, ma);

    TrainState b = init_state(cfg);
    std::vector<MetricsRow> mb;
    train(b, corpus, opts, mb);

    REQUIRE(ma.size() == 30);
    REQUIRE(mb.size() == 30);
    for (std::size_t i = 0; i < 30; ++i) {
        CHECK(ma[i].loss == mb[i].loss);
        CHECK(ma[i].lr == mb[i].lr);
        CHECK(ma[i].step == i + 1);
    }
    for (const auto& [name, m] : a.params) CHECK(max_abs_diff(m, b.params.at(name)) == 0.0);
    CHECK(ma.back().loss < ma.front().loss);
}

TEST_CASE("metrics csv format") {
    std::vector<MetricsRow> rows{{1, 5.5451774444795623, 1e-5, 12.3456}};
    std::string csv = metrics_csv(rows);
    CHECK(csv.rfind("step,loss,lr,elapsed_ms\n", 0) == 0);
    CHECK(csv.find("1,5.5451774444795623,") != std::string::npos);
    CHECK(csv.find(",12.346\n") != std::string::npos); // elapsed rounded to 3 decimals
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    TempDir dir;
    ModelConfig cfg = tiny_config(2, "qkv", false);
    TrainState st = init_state(cfg);
    std::string corpus = nexus::testing::make_corpus(4096, 3);
    TrainOptions opts;
    opts.steps = 3;
    opts.batch_size = 2;
    std::vector<MetricsRow> metrics;
    train(st, corpus, opts, metrics);

    std::string path = dir.file("model.nxsc");
    save_checkpoint(st, path);
    TrainState loaded = load_checkpoint(path, cfg);
    CHECK(loaded.step == st.step);
    CHECK(loaded.rng.state == st.rng.state);
    for (const auto& [name, m] : st.params)
        CHECK(max_abs_diff(m, loaded.params.at(name)) == 0.0);
    for (const auto& [name, m] : st.adam_m)
        CHECK(max_abs_diff(m, loaded.adam_m.at(name)) == 0.0);
    for (const auto& [name, m] : st.adam_v)
        CHECK(max_abs_diff(m, loaded.adam_v.at(name)) == 0.0);

    // loading must not disturb a continued run: same next step either way
    std::vector<MetricsRow> m1, m2;
    TrainOptions one;
    one.steps = 1;
    one.batch_size = 2;
    train(st, corpus, one, m1);
    train(loaded, corpus, one, m2);
    CHECK(m1[0].loss == m2[0].loss);
}

TEST_CASE("corrupted checkpoints fail with located format errors") {
    TempDir dir;
    ModelConfig cfg = tiny_config();
    TrainState st = init_state(cfg);
    std::string path = dir.file("model.nxsc");
    save_checkpoint(st, path);
    std::string good = read_file(path);

    auto expect_error = [&](const std::string& bytes, const std::string& needle) {
        std::string p = dir.file("broken.nxsc");
        write_file_atomic(p, bytes);
        try {
            (void)load_checkpoint(p, cfg);
            FAIL_CHECK("expected a FormatError containing '", needle, "'");
        } catch (const FormatError& e) {
            INFO(e.what());
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    expect_error(bad_magic, "bad magic");

    std::string bad_version = good;
    bad_version[4] = 0x7f;
    expect_error(bad_version, "unsupported version");

    expect_error(good.substr(0, good.size() / 2), "truncated");

    std::string trailing = good + "junk";
    expect_error(trailing, "trailing bytes");

    // first tensor header begins at offset 9; break its name
    std::string bad_name = good;
    bad_name[11] = 'Z';
    expect_error(bad_name, "unknown tensor");

    // shape mismatch: same bytes, smaller context_length in the config
    ModelConfig narrow = cfg;
    narrow.context_length = 4;
    narrow.sync_attention();
    try {
        (void)load_checkpoint(path, narrow);
        FAIL_CHECK("expected a shape mismatch");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("shape mismatch") != std::string::npos);
    }
}

TEST_CASE("an order-1 checkpoint retrofits into a shared order-2 model") {
    TempDir dir;
    ModelConfig base = tiny_config();
    TrainState st = init_state(base);
    std::string corpus = nexus::testing::make_corpus(4096, 4);
    TrainOptions opts;
    opts.steps = 2;
    opts.batch_size = 2;
    std::vector<MetricsRow> metrics;
    train(st, corpus, opts, metrics);
    std::string path = dir.file("base.nxsc");
    save_checkpoint(st, path);

    ModelConfig upgraded = tiny_config(2, "qk", true);
    TrainState re = load_checkpoint(path, upgraded);
    CHECK(re.config.attention.order == 2);
    for (const auto& [name, m] : st.params)
        CHECK(max_abs_diff(m, re.params.at(name)) == 0.0);

    // the upgraded model trains further without issue
    std::vector<MetricsRow> more;
    train(re, corpus, opts, more);
    REQUIRE(more.size() == 2);
    CHECK(std::isfinite(more.back().loss));

    // unshared retrofit keeps checkpoint tensors, fresh-initializes the rest
    ModelConfig unshared = tiny_config(2, "qk", false);
    TrainState ru = load_checkpoint(path, unshared);
    CHECK(max_abs_diff(ru.params.at("L0.attn.h0.w_q"), st.params.at("L0.attn.h0.w_q")) == 0.0);
    TrainState fresh = init_state(unshared);
    CHECK(max_abs_diff(ru.params.at("L0.attn.h0.inner1.q.w_q"),
                       fresh.params.at("L0.attn.h0.inner1.q.w_q")) == 0.0);
}

TEST_CASE("eval loss is finite and greedy sampling extends the prompt") {
    ModelConfig cfg = tiny_config();
    TrainState st = init_state(cfg);
    std::string corpus = nexus::testing::make_corpus(4096, 5);
    Rng rng(9);
    double loss = eval_loss(st, corpus, 8, rng);
    CHECK(std::isfinite(loss));
    CHECK(loss > 0.0);

    auto out = greedy_sample(st, tokenize_bytes("The"), 5);
    CHECK(out.size() == 8);
    for (int id : out) CHECK((id >= 0 && id < 256));
}

TEST_CASE("batch sampling stays in range and is seed-deterministic") {
    std::vector<int> corpus = tokenize_bytes(nexus::testing::make_corpus(2048, 6));
    Rng r1(3), r2(3);
    Batch a = sample_batch(corpus, 4, 16, r1);
    Batch b = sample_batch(corpus, 4, 16, r2);
    CHECK(a.inputs == b.inputs);
    CHECK(a.targets == b.targets);
    for (std::size_t i = 0; i < a.inputs.size(); ++i) {
        CHECK(a.inputs[i] >= 0);
        CHECK(a.inputs[i] < 256);
    }
    // targets are the inputs shifted by one position
    Rng r3(4);
    Batch c = sample_batch(corpus, 1, 16, r3);
    for (std::size_t t = 0; t + 1 < c.n; ++t) CHECK(c.targets[t] == c.inputs[t + 1]);
}
